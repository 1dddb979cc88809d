"""F1 benchmarking: repeated splits, hyperparameter grids, size studies.

The protocol is the same everywhere: for repetition r, split the dataset
2/3 train / 1/3 test with a stratified shuffle seeded by base_seed + r,
build the forest on the train side with the same seed, optionally fit the
attention weights on the train labels, and score the test side. Seeds are
derived only from (base_seed, r), never from the model configuration, so
runs with different configurations are paired repetition by repetition.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np

from abiforest import forest as fr
from abiforest.attention import abif_scores
from abiforest.data import Dataset, SplitSpec, gen_circle, gen_normal, load_real_dataset, split
from abiforest.training import FitConfig, fit


def f1_score(predicted: np.ndarray, truth: np.ndarray) -> float:
    """2 TP / (2 TP + FP + FN) with +1 as the positive (anomalous) class."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if predicted.shape != truth.shape:
        raise ValueError(
            f"predicted has shape {predicted.shape}, truth has shape {truth.shape}"
        )
    if not np.any(truth == 1):
        raise ValueError("truth contains no positive (anomalous) instances")
    tp = int(np.sum((predicted == 1) & (truth == 1)))
    fp = int(np.sum((predicted == 1) & (truth == -1)))
    fn = int(np.sum((predicted == -1) & (truth == 1)))
    if tp == 0:
        return 0.0
    return 2.0 * tp / (2.0 * tp + fp + fn)


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to train and score one model variant."""

    mode: str = "iforest"  # "iforest" or "abiforest"
    n_trees: int = 150
    psi: int | None = None           # default: min(n_train, 256)
    height_limit: int | None = None  # default: ceil(log2 psi)
    tau: float = 0.5
    epsilon: float = 0.5
    omega: float = 20.0
    lam: float = 1e-3
    label_source: str = "given"

    def __post_init__(self):
        if self.mode not in ("iforest", "abiforest"):
            raise ValueError(f"mode must be 'iforest' or 'abiforest', got {self.mode!r}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")


def evaluate_split(train: Dataset, test: Dataset, config: ModelConfig, seed: int) -> float:
    """Train on one split and return the test F1."""
    psi = config.psi if config.psi is not None else fr.default_subsample_size(train.n)
    psi = min(psi, train.n)
    forest = fr.build_forest(
        train, config.n_trees, psi=psi, height_limit=config.height_limit, seed=seed
    )
    if config.mode == "iforest":
        scores = fr.iforest_scores(forest, test.features)
        predicted = fr.classify(scores, config.tau)
    else:
        fit_cfg = FitConfig(
            epsilon=config.epsilon,
            omega=config.omega,
            tau=config.tau,
            lam=config.lam,
            label_source=config.label_source,
        )
        model = fit(forest, train, fit_cfg).model
        _, predicted = abif_scores(forest, model, test.features)
    return f1_score(predicted, test.labels)


@dataclass
class CellStats:
    """Mean/SD of F1 over the repetitions of one configuration."""

    mean: float
    std: float
    reps: int
    scores: list[float] = field(repr=False)
    seeds: list[int] = field(repr=False)


def repeated_eval(data: Dataset, config: ModelConfig, reps: int, base_seed: int) -> CellStats:
    """Run the split/train/score protocol reps times and aggregate."""
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    if data.labels is None:
        raise ValueError("repeated_eval needs a labeled dataset")
    scores = []
    seeds = []
    for r in range(1, reps + 1):
        seed = base_seed + r
        train, test = split(data, SplitSpec(seed=seed))
        scores.append(evaluate_split(train, test, config, seed))
        seeds.append(seed)
    arr = np.asarray(scores)
    return CellStats(
        mean=float(arr.mean()),
        std=float(arr.std()),
        reps=reps,
        scores=scores,
        seeds=seeds,
    )


@dataclass
class EvalReport:
    """Grid results: one CellStats per configuration tuple."""

    dataset: str
    mode: str
    base_seed: int
    reps: int
    axes: dict[str, list]
    cells: list[dict]  # {"config": {...}, "mean": .., "std": .., "scores": [...]}

    def best_cell(self) -> dict:
        return max(self.cells, key=lambda c: c["mean"])

    def to_json(self, path: str | Path, provenance: dict | None = None) -> None:
        payload = {
            "dataset": self.dataset,
            "mode": self.mode,
            "base_seed": self.base_seed,
            "reps": self.reps,
            "axes": self.axes,
            "best": self.best_cell(),
            "cells": self.cells,
        }
        if provenance is not None:
            payload["provenance"] = provenance
        Path(path).write_text(json.dumps(payload, indent=1))

    def to_csv(self, path: str | Path, provenance: dict | None = None) -> None:
        """One row per cell per repetition, then one aggregate row per cell."""
        axis_names = list(self.axes)
        with Path(path).open("w", newline="") as fh:
            if provenance is not None:
                fh.write(f"# {json.dumps(provenance, sort_keys=True)}\n")
            writer = csv.writer(fh)
            writer.writerow(["row_type"] + axis_names + ["rep", "f1", "mean", "std"])
            for cell in self.cells:
                cfg = cell["config"]
                key = [cfg[a] for a in axis_names]
                for i, s in enumerate(cell["scores"], start=1):
                    writer.writerow(["rep"] + key + [i, repr(s), "", ""])
                writer.writerow(
                    ["aggregate"] + key + ["", "", repr(cell["mean"]), repr(cell["std"])]
                )


_IFOREST_AXES = ("n_trees", "tau")
_ABIF_AXES = ("n_trees", "tau", "epsilon", "omega", "lam")

DEFAULT_GRIDS = {
    "n_trees": [5, 15, 25, 50, 150],
    "tau": [0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7],
    "epsilon": [0.0, 0.25, 0.5, 0.75, 1.0],
    "omega": [0.1, 10.0, 20.0, 30.0, 40.0],
    "lam": [1e-3],
}


def grid_search(
    data: Dataset,
    mode: str,
    grids: dict,
    reps: int,
    base_seed: int,
    dataset_name: str = "dataset",
    base_config: ModelConfig | None = None,
) -> EvalReport:
    """Evaluate the Cartesian product of the supplied grids.

    In iforest mode the epsilon/omega/lambda axes are ignored (collapsed to
    a single value) since they do not enter the model.
    """
    base = base_config or ModelConfig(mode=mode)
    axis_names = _IFOREST_AXES if mode == "iforest" else _ABIF_AXES
    axes = {}
    for name in axis_names:
        values = grids.get(name, DEFAULT_GRIDS.get(name))
        if values is None or len(values) == 0:
            raise ValueError(f"empty grid for axis {name!r}")
        axes[name] = list(values)
    cells = []
    for combo in itertools.product(*(axes[a] for a in axes)):
        overrides = dict(zip(axes, combo))
        config = replace(base, mode=mode, **overrides)
        stats = repeated_eval(data, config, reps, base_seed)
        cells.append({
            "config": {**{a: overrides[a] for a in axes}},
            "mean": stats.mean,
            "std": stats.std,
            "scores": stats.scores,
        })
    return EvalReport(
        dataset=dataset_name,
        mode=mode,
        base_seed=base_seed,
        reps=reps,
        axes=axes,
        cells=cells,
    )


def _scaled_counts(n_total: int, n_norm_ref: int, n_anom_ref: int) -> tuple[int, int]:
    # preserve the reference class ratio, rounding the normal count
    n_norm = round(n_total * n_norm_ref / (n_norm_ref + n_anom_ref))
    return n_norm, n_total - n_norm


def size_study(
    generator: str,
    sizes: list[int],
    configs: list[ModelConfig],
    reps: int,
    base_seed: int,
    noise_sd: float = 0.1,
) -> list[dict]:
    """F1 against dataset size for each configuration, ratio held fixed."""
    if not sizes:
        raise ValueError("sizes must be non-empty")
    rows = []
    for n_total in sizes:
        if generator == "circle":
            n_norm, n_anom = _scaled_counts(n_total, 1000, 200)
            data = gen_circle(n_norm, n_anom, noise_sd, seed=base_seed)
        elif generator == "normal":
            n_norm, n_anom = _scaled_counts(n_total, 1000, 50)
            data = gen_normal(n_norm, n_anom, seed=base_seed)
        else:
            raise ValueError(f"unknown generator {generator!r}")
        for config in configs:
            stats = repeated_eval(data, config, reps, base_seed)
            rows.append({
                "generator": generator,
                "n": n_total,
                "mode": config.mode,
                "config": asdict(config),
                "mean": stats.mean,
                "std": stats.std,
            })
    return rows


# --------------------------------------------------------------------------
# Named benchmark experiments. Subsample sizes are part of each experiment's
# configuration: the ring benchmark uses small 64-row trees (coarser trees
# give the kernel keys more informative leaves), the cluster benchmark the
# classic 256.
# --------------------------------------------------------------------------

CIRCLE_PSI = 64
CIRCLE_COUNTS = (1000, 200)
NORMAL_COUNTS = (1000, 50)
CIRCLE_SIZES = [50, 200, 800, 1200]
NORMAL_SIZES = [50, 150, 350, 550]

# Best-cell hyperparameters for the ABIForest variants of the benchmarks.
ABIF_BEST = {"epsilon": 0.5, "tau": 0.6, "omega": 20.0, "lam": 1e-3}


def _circle_config(mode: str, **kw) -> ModelConfig:
    return ModelConfig(mode=mode, psi=CIRCLE_PSI, **kw)


def _normal_config(mode: str, **kw) -> ModelConfig:
    return ModelConfig(mode=mode, **kw)


def run_experiment(
    name: str,
    reps: int,
    base_seed: int,
    out_dir: str | Path,
    data_dir: str | Path | None = None,
    provenance: dict | None = None,
) -> list[Path]:
    """Run one named benchmark and write its CSV + JSON report files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports: list[tuple[str, EvalReport]] = []

    if name == "circle-table2":
        data = gen_circle(*CIRCLE_COUNTS, seed=base_seed)
        rep = grid_search(
            data, "abiforest",
            {"n_trees": [150], "tau": [0.5, 0.6, 0.7], "epsilon": DEFAULT_GRIDS["epsilon"], "omega": [20.0]},
            reps, base_seed, "circle", base_config=_circle_config("abiforest"),
        )
        reports.append(("circle_abiforest", rep))
    elif name == "circle-table3":
        data = gen_circle(*CIRCLE_COUNTS, seed=base_seed)
        rep = grid_search(
            data, "iforest",
            {"n_trees": DEFAULT_GRIDS["n_trees"], "tau": [0.3, 0.4, 0.5, 0.6]},
            reps, base_seed, "circle", base_config=_circle_config("iforest"),
        )
        reports.append(("circle_iforest", rep))
    elif name == "normal-table4":
        data = gen_normal(*NORMAL_COUNTS, seed=base_seed)
        rep = grid_search(
            data, "abiforest",
            {"n_trees": [150], "tau": [0.5, 0.6, 0.7], "epsilon": DEFAULT_GRIDS["epsilon"], "omega": [20.0]},
            reps, base_seed, "normal",
        )
        reports.append(("normal_abiforest", rep))
    elif name == "normal-table5":
        data = gen_normal(*NORMAL_COUNTS, seed=base_seed)
        rep = grid_search(
            data, "iforest",
            {"n_trees": DEFAULT_GRIDS["n_trees"], "tau": [0.3, 0.4, 0.5, 0.6]},
            reps, base_seed, "normal",
        )
        reports.append(("normal_iforest", rep))
    elif name == "size-table6":
        rows = []
        rows += size_study(
            "circle", CIRCLE_SIZES,
            [_circle_config("iforest"), _circle_config("abiforest", **ABIF_BEST)],
            reps, base_seed,
        )
        rows += size_study(
            "normal", NORMAL_SIZES,
            [_normal_config("iforest"), _normal_config("abiforest", **ABIF_BEST)],
            reps, base_seed,
        )
        out = out_dir / f"size_study_seed{base_seed}.json"
        payload: dict = {"rows": rows, "reps": reps, "base_seed": base_seed}
        if provenance is not None:
            payload["provenance"] = provenance
        out.write_text(json.dumps(payload, indent=1))
        csv_path = out_dir / f"size_study_seed{base_seed}.csv"
        with csv_path.open("w", newline="") as fh:
            if provenance is not None:
                fh.write(f"# {json.dumps(provenance, sort_keys=True)}\n")
            writer = csv.writer(fh)
            writer.writerow(["generator", "n", "mode", "mean", "std"])
            for row in rows:
                writer.writerow([row["generator"], row["n"], row["mode"],
                                 repr(row["mean"]), repr(row["std"])])
        return [out, csv_path]
    elif name == "real-table7":
        if data_dir is None:
            raise FileNotFoundError(
                "real-table7 needs --data-dir pointing at the fetched datasets "
                "(see scripts/fetch_datasets.py and the dataset manifest)"
            )
        from abiforest.data import load_manifest

        manifest = load_manifest()
        for ds_name, entry in manifest.items():
            data = load_real_dataset(ds_name, data_dir, subsample_seed=base_seed)
            opt = entry["optimal"]
            ab_cfg = ModelConfig(
                mode="abiforest", tau=opt["tau"], epsilon=opt["epsilon"],
                omega=opt["omega"], lam=1e-3,
            )
            if_cfg = ModelConfig(mode="iforest", tau=opt["iforest_tau"])
            rep_ab = grid_search(
                data, "abiforest",
                {"n_trees": [150], "tau": [opt["tau"]], "epsilon": [opt["epsilon"]],
                 "omega": [opt["omega"]], "lam": [1e-3]},
                reps, base_seed, ds_name, base_config=ab_cfg,
            )
            rep_if = grid_search(
                data, "iforest", {"n_trees": [150], "tau": [opt["iforest_tau"]]},
                reps, base_seed, ds_name, base_config=if_cfg,
            )
            reports.append((f"{ds_name}_abiforest", rep_ab))
            reports.append((f"{ds_name}_iforest", rep_if))
    elif name == "omega-curves":
        data = gen_circle(*CIRCLE_COUNTS, seed=base_seed)
        rep = grid_search(
            data, "abiforest",
            {"n_trees": [150], "tau": [0.6], "epsilon": DEFAULT_GRIDS["epsilon"],
             "omega": DEFAULT_GRIDS["omega"]},
            reps, base_seed, "circle", base_config=_circle_config("abiforest"),
        )
        reports.append(("circle_omega_curves", rep))
    elif name == "epsilon-curves":
        data = gen_circle(*CIRCLE_COUNTS, seed=base_seed)
        rep = grid_search(
            data, "abiforest",
            {"n_trees": DEFAULT_GRIDS["n_trees"], "tau": [0.6],
             "epsilon": DEFAULT_GRIDS["epsilon"], "omega": [20.0]},
            reps, base_seed, "circle", base_config=_circle_config("abiforest"),
        )
        reports.append(("circle_epsilon_curves", rep))
    else:
        raise ValueError(f"unknown experiment {name!r}; see EXPERIMENTS")

    written = []
    for stem, rep in reports:
        json_path = out_dir / f"{stem}_seed{base_seed}.json"
        csv_path = out_dir / f"{stem}_seed{base_seed}.csv"
        rep.to_json(json_path, provenance)
        rep.to_csv(csv_path, provenance)
        written += [json_path, csv_path]
    return written


EXPERIMENTS = (
    "circle-table2",
    "circle-table3",
    "normal-table4",
    "normal-table5",
    "size-table6",
    "real-table7",
    "omega-curves",
    "epsilon-curves",
)
