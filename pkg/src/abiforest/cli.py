"""Command-line interface: generate, fit, score, benchmark, replay.

Every output file embeds a provenance record (the resolved command
arguments plus a version string): JSON outputs under a "provenance" key,
CSV outputs as a leading '#' comment line. `replay` re-runs a command from
the provenance embedded in one of its outputs; the result is byte-identical
apart from the provenance block itself.

Exit codes: 0 success, 1 runtime failure, 2 usage/validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
from importlib import metadata
from pathlib import Path

from abiforest import attention, data as dat, evaluation as ev, forest as fr, training as tr


def version_string() -> str:
    try:
        base = metadata.version("abiforest")
    except metadata.PackageNotFoundError:
        base = "0.0.0"
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if described.returncode == 0:
            return f"abiforest {base}+g{described.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"abiforest {base}"


def _provenance(command: str, args: dict) -> dict:
    clean = {k: (str(v) if isinstance(v, Path) else v) for k, v in args.items()}
    return {"command": command, "args": clean, "version": version_string()}


def _fail(message: str, code: int = 1) -> "SystemExit":
    print(f"error: {message}", file=sys.stderr)
    return SystemExit(code)


# --------------------------------------------------------------------------
# generate
# --------------------------------------------------------------------------


def cmd_generate(args: dict) -> int:
    gen = args["generator"]
    if gen == "circle":
        ds = dat.gen_circle(args["n_norm"], args["n_anom"], args["noise"], args["seed"])
    elif gen == "normal":
        ds = dat.gen_normal(args["n_norm"], args["n_anom"], args["seed"])
    else:
        raise _fail(f"unknown generator {gen!r}", 2)
    prov = _provenance("generate", args)
    dat.save_csv(ds, args["out"], comment=json.dumps(prov, sort_keys=True))
    n_norm, n_anom = ds.class_counts()
    print(f"wrote {args['out']}: {ds.n} rows ({n_norm} normal, {n_anom} anomalous), d={ds.d}")
    return 0


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def _load_dataset(args: dict) -> dat.Dataset:
    return dat.load_csv(args["data"], args["label_column"], args["positive_label"])


def cmd_fit(args: dict) -> int:
    ds = _load_dataset(args)
    psi = args["psi"] if args["psi"] is not None else fr.default_subsample_size(ds.n)
    forest = fr.build_forest(
        ds, args["trees"], psi=min(psi, ds.n),
        height_limit=args["height_limit"], seed=args["seed"],
    )
    payload = {
        "provenance": _provenance("fit", args),
        "forest": fr.forest_to_dict(forest),
        "attention": None,
    }
    if args["mode"] == "abiforest":
        cfg = tr.FitConfig(
            epsilon=args["epsilon"], omega=args["omega"], tau=args["tau"],
            lam=args["lam"], label_source="pseudo" if args["pseudo_labels"] else "given",
        )
        try:
            result = tr.fit(forest, ds, cfg)
        except tr.ConvergenceError as exc:
            diag_path = Path(args["out"]).with_suffix(".diagnostics.json")
            diag_path.write_text(json.dumps({
                "error": str(exc),
                "w_best": None if exc.w_best is None else list(map(float, exc.w_best)),
                "provenance": _provenance("fit", args),
            }))
            raise _fail(f"training did not converge: {exc} (diagnostics in {diag_path})")
        payload["attention"] = attention.model_to_dict(result.model)
        print(f"objective={result.objective:.6g} iterations={result.iterations}")
    else:
        for name in ("epsilon", "omega", "lam"):
            if args.get(f"_{name}_set"):
                print(f"warning: --{name.replace('_', '-')} is ignored in iforest mode",
                      file=sys.stderr)
        print(f"built forest: T={forest.n_trees} psi={forest.psi} "
              f"height_limit={forest.height_limit}")
    Path(args["out"]).write_text(json.dumps(payload))
    print(f"wrote {args['out']}")
    return 0


# --------------------------------------------------------------------------
# score
# --------------------------------------------------------------------------


def cmd_score(args: dict) -> int:
    record = json.loads(Path(args["model"]).read_text())
    forest = fr.forest_from_dict(record["forest"])
    model = None
    if record.get("attention"):
        model = attention.model_from_dict(record["attention"], c_psi=forest.c_psi)

    ds = _load_dataset(args)
    if ds.d != forest.n_features:
        raise _fail(
            f"dimension mismatch: model expects d={forest.n_features}, data has d={ds.d}"
        )
    if model is None:
        scores = fr.iforest_scores(forest, ds.features)
        labels = fr.classify(scores, args["tau"])
    else:
        scores, labels = attention.abif_scores(forest, model, ds.features)

    top_m = args["explain_top"]
    if top_m and model is None:
        raise _fail("--explain-top needs an attention model", 2)

    out = Path(args["out"])
    with out.open("w", newline="") as fh:
        fh.write(f"# {json.dumps(_provenance('score', args), sort_keys=True)}\n")
        writer = csv.writer(fh)
        header = ["row", "score", "label"]
        if top_m:
            for i in range(1, top_m + 1):
                header += [f"tree_{i}", f"alpha_{i}", f"h_{i}"]
        writer.writerow(header)
        for i in range(ds.n):
            row = [i, repr(float(scores[i])), int(labels[i])]
            if top_m:
                for k, a, h in attention.explain(forest, model, ds.features[i], top_m):
                    row += [k, repr(a), repr(h)]
            writer.writerow(row)
    print(f"wrote {out}: {ds.n} rows scored")
    if ds.labels is not None:
        print(f"F1 against provided labels: {ev.f1_score(labels, ds.labels):.4f}")
    return 0


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------


def cmd_benchmark(args: dict) -> int:
    try:
        written = ev.run_experiment(
            args["experiment"], args["reps"], args["seed"],
            out_dir=args["out_dir"], data_dir=args["data_dir"],
            provenance=_provenance("benchmark", args),
        )
    except FileNotFoundError as exc:
        raise _fail(str(exc))
    for path in written:
        print(f"wrote {path}")
    return 0


# --------------------------------------------------------------------------
# replay
# --------------------------------------------------------------------------


def _read_provenance(path: Path) -> dict:
    text = path.read_text()
    if text.startswith("#"):
        return json.loads(text.splitlines()[0][1:].strip())
    record = json.loads(text)
    if "provenance" not in record:
        raise _fail(f"{path} carries no provenance block")
    return record["provenance"]


def cmd_replay(args: dict) -> int:
    prov = _read_provenance(Path(args["output_file"]))
    command = prov["command"]
    replay_args = dict(prov["args"])
    if args["out"] is not None:
        if command == "benchmark":
            replay_args["out_dir"] = args["out"]
        else:
            replay_args["out"] = args["out"]
    print(f"replaying {command} from {args['output_file']}")
    return _DISPATCH[command](replay_args)


_DISPATCH = {
    "generate": cmd_generate,
    "fit": cmd_fit,
    "score": cmd_score,
    "benchmark": cmd_benchmark,
}


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def _float_in(low, high, name, inclusive=False):
    def parse(text):
        value = float(text)
        ok = low <= value <= high if inclusive else low < value < high
        if not ok:
            bracket = "[]" if inclusive else "()"
            raise argparse.ArgumentTypeError(
                f"{name} must be in {bracket[0]}{low}, {high}{bracket[1]}, got {value}"
            )
        return value
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abiforest",
        description="Isolation forests with attention-weighted path lengths",
    )
    parser.add_argument("--version", action="version", version=version_string())
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic dataset CSV")
    p_gen.add_argument("generator", choices=["circle", "normal"])
    p_gen.add_argument("--n-norm", type=int, default=1000, dest="n_norm")
    p_gen.add_argument("--n-anom", type=int, default=200, dest="n_anom")
    p_gen.add_argument("--noise", type=float, default=0.1)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True)

    p_fit = sub.add_parser("fit", help="build a forest and optionally train attention")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--label-column", default="label", dest="label_column")
    p_fit.add_argument("--positive-label", default="1", dest="positive_label")
    p_fit.add_argument("--mode", choices=["iforest", "abiforest"], default="abiforest")
    p_fit.add_argument("--trees", type=int, default=150)
    p_fit.add_argument("--psi", type=int, default=None)
    p_fit.add_argument("--height-limit", type=int, default=None, dest="height_limit")
    p_fit.add_argument("--tau", type=_float_in(0, 1, "tau"), default=0.5)
    p_fit.add_argument("--epsilon", type=_float_in(0, 1, "epsilon", inclusive=True), default=0.5)
    p_fit.add_argument("--omega", type=float, default=20.0)
    p_fit.add_argument("--lambda", type=float, default=1e-3, dest="lam")
    p_fit.add_argument("--pseudo-labels", action="store_true", dest="pseudo_labels")
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--out", required=True)

    p_score = sub.add_parser("score", help="score a dataset with a saved model")
    p_score.add_argument("--model", required=True)
    p_score.add_argument("--data", required=True)
    p_score.add_argument("--label-column", default="label", dest="label_column")
    p_score.add_argument("--positive-label", default="1", dest="positive_label")
    p_score.add_argument("--tau", type=_float_in(0, 1, "tau"), default=0.5,
                         help="threshold for iforest models (attention models carry their own)")
    p_score.add_argument("--explain-top", type=int, default=0, dest="explain_top")
    p_score.add_argument("--out", required=True)

    p_bench = sub.add_parser("benchmark", help="run a named table/figure experiment")
    p_bench.add_argument("experiment", choices=list(ev.EXPERIMENTS))
    p_bench.add_argument("--reps", type=int, default=100)
    p_bench.add_argument("--seed", type=int, default=1)
    p_bench.add_argument("--out-dir", default="reports", dest="out_dir")
    p_bench.add_argument(
        "--data-dir", dest="data_dir",
        default=os.environ.get("ABIFOREST_DATA_DIR"),
        help="directory with fetched real datasets (env: ABIFOREST_DATA_DIR)",
    )

    p_replay = sub.add_parser("replay", help="re-run a command from an output's provenance")
    p_replay.add_argument("output_file")
    p_replay.add_argument("--out", default=None)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    args = vars(ns)
    command = args.pop("command")
    if command == "fit":
        argv_list = list(sys.argv[1:] if argv is None else argv)
        for name in ("epsilon", "omega", "lambda"):
            args[f"_{name if name != 'lambda' else 'lam'}_set"] = f"--{name}" in argv_list
    handlers = {**_DISPATCH, "replay": cmd_replay}
    try:
        return handlers[command](args)
    except SystemExit:
        raise
    except (ValueError, FileNotFoundError, KeyError, dat.DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
