"""Datasets: synthetic generators, CSV ingestion, class subsampling, splits.

Labels follow the convention +1 = anomalous, -1 = normal throughout.
All randomness is drawn from numpy Generators seeded explicitly, so every
function here is a pure function of its arguments.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

# Ring radii for the two-circles generator. The inner ring holds the normal
# mass, the sparser outer ring the anomalies. The ratio is close enough that,
# at the default noise level, the rings blur into each other and detection
# stays imperfect; a wider ratio makes the task trivial.
CIRCLE_RADIUS_NORMAL = 1.0
CIRCLE_RADIUS_ANOMALY = 1.9

# All circle coordinates are multiplied by this factor. The geometry is
# scale-free for the forest (splits are quantile-equivariant), but absolute
# units set which kernel widths are informative for the attention models;
# this value puts the benchmark width grid in the responsive range.
CIRCLE_SCALE = 12.0

# Cluster centers, spread and anomaly box of the two-Gaussians generator.
NORMAL_CLUSTER_CENTERS = ((-2.0, -2.0), (2.0, 2.0))
NORMAL_CLUSTER_SD = 0.72
NORMAL_ANOMALY_LOW = -1.0
NORMAL_ANOMALY_HIGH = 1.0


class DataFormatError(ValueError):
    """Raised for malformed input files, with row/column context."""


@dataclass
class Dataset:
    """An (n, d) feature matrix with optional +-1 anomaly labels."""

    features: np.ndarray
    labels: np.ndarray | None = None
    feature_names: list[str] | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] < 1:
            raise ValueError(
                f"features must be a non-empty 2-d matrix, got shape {self.features.shape}"
            )
        if not np.isfinite(self.features).all():
            raise ValueError("features contain non-finite values")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.n,):
                raise ValueError(
                    f"labels have shape {self.labels.shape}, expected ({self.n},)"
                )
            if not np.isin(self.labels, (-1, 1)).all():
                raise ValueError("labels must be -1 (normal) or +1 (anomalous)")
        if self.feature_names is not None and len(self.feature_names) != self.d:
            raise ValueError(
                f"{len(self.feature_names)} feature names for {self.d} features"
            )

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> tuple[int, int]:
        """(n_normal, n_anomalous); requires labels."""
        if self.labels is None:
            raise ValueError("dataset has no labels")
        return int(np.sum(self.labels == -1)), int(np.sum(self.labels == 1))

    def take(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[idx],
            None if self.labels is None else self.labels[idx],
            self.feature_names,
        )


def gen_circle(
    n_norm: int,
    n_anom: int,
    noise_sd: float = 0.1,
    seed: int = 0,
    r_norm: float = CIRCLE_RADIUS_NORMAL,
    r_anom: float = CIRCLE_RADIUS_ANOMALY,
    scale: float = CIRCLE_SCALE,
) -> Dataset:
    """Two concentric noisy rings: dense normal inner, sparse anomalous outer.

    Points are placed at uniform angles on circles of radius r_norm and
    r_anom and jittered by isotropic Gaussian noise with standard deviation
    noise_sd (in ring-radius units). All coordinates are then multiplied by
    `scale`; pass scale=1 for raw ring units.
    """
    if n_norm < 0 or n_anom < 0:
        raise ValueError("counts must be non-negative")
    if n_norm + n_anom == 0:
        raise ValueError("at least one of n_norm, n_anom must be positive")
    if noise_sd < 0:
        raise ValueError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    th_n = rng.uniform(0.0, 2.0 * np.pi, n_norm)
    th_a = rng.uniform(0.0, 2.0 * np.pi, n_anom)
    pts = np.vstack([
        r_norm * np.c_[np.cos(th_n), np.sin(th_n)],
        r_anom * np.c_[np.cos(th_a), np.sin(th_a)],
    ])
    if noise_sd:
        pts = pts + rng.normal(0.0, noise_sd, pts.shape)
    features = scale * pts
    labels = np.concatenate([np.full(n_norm, -1), np.full(n_anom, 1)])
    return Dataset(features, labels, feature_names=["x", "y"])


def gen_normal(
    n_norm: int,
    n_anom: int,
    seed: int = 0,
    cluster_sd: float = NORMAL_CLUSTER_SD,
) -> Dataset:
    """Two Gaussian clusters of normal points, anomalies uniform on a box.

    Normal points split evenly between isotropic Gaussians centered at
    (-2, -2) and (2, 2); anomalies are uniform on [-1, 1]^2, sitting in the
    low-density corridor between the clusters.
    """
    if n_norm < 0 or n_anom < 0:
        raise ValueError("counts must be non-negative")
    if n_norm + n_anom == 0:
        raise ValueError("at least one of n_norm, n_anom must be positive")
    rng = np.random.default_rng(seed)
    n_first = n_norm // 2
    centers = np.asarray(NORMAL_CLUSTER_CENTERS)
    a = rng.normal(0.0, cluster_sd, (n_first, 2)) + centers[0]
    b = rng.normal(0.0, cluster_sd, (n_norm - n_first, 2)) + centers[1]
    anom = rng.uniform(NORMAL_ANOMALY_LOW, NORMAL_ANOMALY_HIGH, (n_anom, 2))
    features = np.vstack([a, b, anom])
    labels = np.concatenate([np.full(n_norm, -1), np.full(n_anom, 1)])
    return Dataset(features, labels, feature_names=["x", "y"])


def load_csv(
    path: str | Path,
    label_column: str,
    positive_label: str,
    delimiter: str = ",",
) -> Dataset:
    """Read a headed CSV into a Dataset.

    Every non-label column is parsed as a real number in column order; the
    label column maps cells equal to positive_label to +1 and everything
    else to -1. Lines starting with '#' before the header are skipped
    (generated files carry a provenance comment there). Malformed content
    raises DataFormatError naming the offending row and column.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    # leading comment lines
    start = 0
    while start < len(rows) and rows[start] and rows[start][0].startswith("#"):
        start += 1
    rows = rows[start:]
    if not rows:
        raise DataFormatError(f"{path}: file is empty")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise DataFormatError(
            f"{path}: label column {label_column!r} not found; columns: {header}"
        )
    label_idx = header.index(label_column)
    feature_names = [h for i, h in enumerate(header) if i != label_idx]
    data_rows = rows[1:]
    if not data_rows:
        raise DataFormatError(f"{path}: no data rows after header")

    features = np.empty((len(data_rows), len(feature_names)))
    labels = np.empty(len(data_rows), dtype=np.int64)
    for r, row in enumerate(data_rows):
        if len(row) != len(header):
            raise DataFormatError(
                f"{path}: row {r + 2} has {len(row)} cells, expected {len(header)}"
            )
        j = 0
        for i, cell in enumerate(row):
            if i == label_idx:
                labels[r] = 1 if cell.strip() == positive_label else -1
                continue
            cell = cell.strip()
            if not cell:
                raise DataFormatError(
                    f"{path}: missing value at row {r + 2}, column {header[i]!r}"
                )
            try:
                features[r, j] = float(cell)
            except ValueError:
                raise DataFormatError(
                    f"{path}: non-numeric value {cell!r} at row {r + 2}, "
                    f"column {header[i]!r}"
                ) from None
            j += 1
    return Dataset(features, labels, feature_names)


def save_csv(data: Dataset, path: str | Path, comment: str | None = None) -> None:
    """Write a Dataset as CSV with header and a trailing label column."""
    path = Path(path)
    names = data.feature_names or [f"f{i}" for i in range(data.d)]
    with path.open("w", newline="") as fh:
        if comment is not None:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(names + ["label"])
        labels = data.labels if data.labels is not None else np.zeros(data.n, dtype=int)
        for row, lab in zip(data.features, labels):
            writer.writerow([repr(float(v)) for v in row] + [int(lab)])


def subsample_classes(data: Dataset, n_norm: int, n_anom: int, seed: int = 0) -> Dataset:
    """Pick n_norm normal and n_anom anomalous rows uniformly without replacement."""
    if data.labels is None:
        raise ValueError("subsample_classes needs a labeled dataset")
    have_norm, have_anom = data.class_counts()
    if n_norm > have_norm or n_anom > have_anom:
        raise ValueError(
            f"requested {n_norm} normal / {n_anom} anomalous rows but only "
            f"{have_norm} / {have_anom} are available"
        )
    rng = np.random.default_rng(seed)
    norm_ids = np.nonzero(data.labels == -1)[0]
    anom_ids = np.nonzero(data.labels == 1)[0]
    picked = np.concatenate([
        rng.choice(norm_ids, size=n_norm, replace=False),
        rng.choice(anom_ids, size=n_anom, replace=False),
    ])
    return data.take(picked)


@dataclass(frozen=True)
class SplitSpec:
    """Train/test split configuration."""

    train_fraction: float = 2.0 / 3.0
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(
                f"train_fraction must be in (0, 1), got {self.train_fraction}"
            )


def split(data: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Disjoint, exhaustive train/test partition.

    Stratified splits preserve per-class proportions to within one row.
    """
    if data.n < 3:
        raise ValueError(f"need at least 3 rows to split, got {data.n}")
    rng = np.random.default_rng(spec.seed)
    if spec.stratified and data.labels is not None:
        train_parts = []
        test_parts = []
        for cls in (-1, 1):
            ids = np.nonzero(data.labels == cls)[0]
            if ids.size == 0:
                continue
            perm = rng.permutation(ids)
            k = int(round(spec.train_fraction * ids.size))
            train_parts.append(perm[:k])
            test_parts.append(perm[k:])
        train_idx = np.concatenate(train_parts)
        test_idx = np.concatenate(test_parts)
    else:
        perm = rng.permutation(data.n)
        k = int(round(spec.train_fraction * data.n))
        train_idx, test_idx = perm[:k], perm[k:]
    return data.take(np.sort(train_idx)), data.take(np.sort(test_idx))


# --------------------------------------------------------------------------
# Real-dataset manifest. The benchmark datasets are not redistributed here;
# the manifest records where to fetch them, how to map their label columns,
# and the per-class working-set sizes. scripts/fetch_datasets.py applies it.
# --------------------------------------------------------------------------


def load_manifest() -> dict:
    text = resources.files("abiforest.datasets").joinpath("manifest.json").read_text()
    return json.loads(text)


def real_dataset_path(name: str, data_dir: str | Path) -> Path:
    entry = load_manifest()[name]
    return Path(data_dir) / entry["filename"]


def load_real_dataset(name: str, data_dir: str | Path, subsample_seed: int = 0) -> Dataset:
    """Load a benchmark dataset per its manifest entry.

    Applies the manifest's label mapping and, when the entry specifies a
    working-set size, a seeded per-class subsample.
    """
    manifest = load_manifest()
    if name not in manifest:
        raise KeyError(f"unknown dataset {name!r}; manifest has {sorted(manifest)}")
    entry = manifest[name]
    path = Path(data_dir) / entry["filename"]
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found. Fetch the {name!r} dataset first: see "
            f"scripts/fetch_datasets.py and the manifest entry (source: "
            f"{entry['source_url']})."
        )
    data = load_csv(path, entry["label_column"], entry["positive_label"])
    sub = entry.get("subsample")
    if sub:
        data = subsample_classes(data, sub["n_norm"], sub["n_anom"], seed=subsample_seed)
    return data
