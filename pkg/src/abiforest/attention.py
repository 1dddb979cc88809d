"""Attention-weighted path lengths over an isolation forest.

Each tree answers a query x with a value (its path length) and a key (the
centroid of the leaf x lands in). Tree weights mix a softmax over negative
squared key distances with a trainable simplex vector:

    alpha_k = (1 - epsilon) * softmax(-||x - A_k||^2 / omega)_k + epsilon * w_k

and the expected path length becomes sum_k alpha_k * h_k instead of the
plain mean. With epsilon = 1 and uniform w this reduces exactly to the
ordinary forest. All functions are pure; models and forests are immutable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from abiforest import forest as fr

SIMPLEX_ATOL = 1e-6


@dataclass(frozen=True)
class TreeResponse:
    """One tree's answer to a query: value, key and key distance."""

    h: float
    key: np.ndarray
    key_distance: float


@dataclass
class AttentionModel:
    """Attention parameters paired with a forest's scoring threshold.

    gamma is the path-length threshold equivalent to the score threshold
    tau: score > tau exactly when the expected path length is below gamma.
    """

    epsilon: float
    omega: float
    tau: float
    gamma: float
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.omega <= 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau must be in (0, 1), got {self.tau}")
        _check_simplex(self.w, "w")

    @property
    def n_trees(self) -> int:
        return int(self.w.shape[0])


def _check_simplex(v: np.ndarray, name: str, atol: float = SIMPLEX_ATOL) -> None:
    if v.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {v.shape}")
    if np.any(v < -atol) or abs(float(v.sum()) - 1.0) > atol:
        raise ValueError(
            f"{name} is not on the probability simplex "
            f"(sum={float(v.sum())!r}, min={float(v.min())!r})"
        )


def response_matrices(forest: fr.IsolationForest, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Path lengths and squared key distances for a batch of queries.

    Returns (H, D2), both of shape (n, T): H[i, k] is the path length of
    row i in tree k and D2[i, k] its squared distance to that leaf's
    centroid.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, T = X.shape[0], forest.n_trees
    H = np.empty((n, T))
    D2 = np.empty((n, T))
    for k, tree in enumerate(forest.trees):
        leaves = fr.leaf_indices(tree, X)
        H[:, k] = tree.leaf_path[leaves]
        diff = X - tree.centroid[leaves]
        D2[:, k] = np.einsum("ij,ij->i", diff, diff)
    return H, D2


def tree_responses(forest: fr.IsolationForest, x: np.ndarray) -> list[TreeResponse]:
    """Per-tree (path length, leaf centroid, squared distance) for one query."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != forest.n_features:
        raise ValueError(
            f"query has shape {x.shape}, forest expects ({forest.n_features},)"
        )
    out = []
    for tree in forest.trees:
        leaf = int(fr.leaf_indices(tree, x[None, :])[0])
        key = tree.centroid[leaf]
        diff = x - key
        out.append(TreeResponse(
            h=float(tree.leaf_path[leaf]),
            key=key.copy(),
            key_distance=float(diff @ diff),
        ))
    return out


def softmax_neg_distances(d2: np.ndarray, omega: float) -> np.ndarray:
    """Row-wise softmax of -d2 / omega, max-subtracted for stability."""
    if omega <= 0:
        raise ValueError(f"omega must be positive, got {omega}")
    z = -np.atleast_2d(np.asarray(d2, dtype=np.float64)) / omega
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_weights(responses: Sequence[TreeResponse], omega: float) -> np.ndarray:
    """Kernel weights over trees from their key distances."""
    d2 = np.array([r.key_distance for r in responses])
    return softmax_neg_distances(d2, omega)[0]


def attention_weights(P: np.ndarray, w: np.ndarray, epsilon: float) -> np.ndarray:
    """Contaminate the kernel distribution P with the trained distribution w."""
    P = np.asarray(P, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    if P.shape != w.shape:
        raise ValueError(f"P has shape {P.shape} but w has shape {w.shape}")
    _check_simplex(P, "P")
    _check_simplex(w, "w")
    return (1.0 - epsilon) * P + epsilon * w


def _attention_matrix(model: AttentionModel, D2: np.ndarray) -> np.ndarray:
    P = softmax_neg_distances(D2, model.omega)
    return (1.0 - model.epsilon) * P + model.epsilon * model.w


def attended_path_lengths(
    forest: fr.IsolationForest, model: AttentionModel, X: np.ndarray
) -> np.ndarray:
    """Attention-weighted expected path length per row of X."""
    if model.n_trees != forest.n_trees:
        raise ValueError(
            f"model has {model.n_trees} tree weights, forest has {forest.n_trees} trees"
        )
    H, D2 = response_matrices(forest, X)
    alpha = _attention_matrix(model, D2)
    return np.einsum("ij,ij->i", alpha, H)


def attended_path_length(forest: fr.IsolationForest, model: AttentionModel, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single query vector, got shape {x.shape}")
    return float(attended_path_lengths(forest, model, x[None, :])[0])


def abif_scores(
    forest: fr.IsolationForest, model: AttentionModel, X: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(scores, labels) for a batch under the attention model."""
    E = attended_path_lengths(forest, model, X)
    scores = fr.anomaly_scores(E, forest.c_psi)
    return scores, fr.classify(scores, model.tau)


def abif_score(forest: fr.IsolationForest, model: AttentionModel, x: np.ndarray) -> tuple[float, int]:
    """(score, label) for a single query under the attention model."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"expected a single query vector, got shape {x.shape}")
    scores, labels = abif_scores(forest, model, x[None, :])
    return float(scores[0]), int(labels[0])


def explain(
    forest: fr.IsolationForest, model: AttentionModel, x: np.ndarray, top_m: int
) -> list[tuple[int, float, float]]:
    """The top_m trees by attention weight for query x.

    Returns (tree index, alpha, path length) triples sorted by descending
    alpha; ties break toward the lower tree index.
    """
    if not 1 <= top_m <= forest.n_trees:
        raise ValueError(
            f"top_m must be in [1, {forest.n_trees}], got {top_m}"
        )
    x = np.asarray(x, dtype=np.float64)
    H, D2 = response_matrices(forest, x[None, :])
    alpha = _attention_matrix(model, D2)[0]
    order = np.argsort(-alpha, kind="stable")[:top_m]
    return [(int(k), float(alpha[k]), float(H[0, k])) for k in order]


# --------------------------------------------------------------------------
# Serialization: {"epsilon", "omega", "tau", "gamma", "w"}. The loader can
# cross-check gamma against tau given the paired forest's c(psi).
# --------------------------------------------------------------------------


def model_to_dict(model: AttentionModel) -> dict:
    return {
        "epsilon": model.epsilon,
        "omega": model.omega,
        "tau": model.tau,
        "gamma": model.gamma,
        "w": [float(v) for v in model.w],
    }


def model_from_dict(record: dict, c_psi: float | None = None) -> AttentionModel:
    model = AttentionModel(
        epsilon=float(record["epsilon"]),
        omega=float(record["omega"]),
        tau=float(record["tau"]),
        gamma=float(record["gamma"]),
        w=np.asarray(record["w"], dtype=np.float64),
    )
    _check_simplex(model.w, "w", atol=1e-9)
    if c_psi is not None:
        expected = -c_psi * np.log2(model.tau)
        if abs(model.gamma - expected) > 1e-9 * max(1.0, abs(expected)):
            raise ValueError(
                f"gamma={model.gamma} inconsistent with tau={model.tau} "
                f"and c_psi={c_psi} (expected {expected})"
            )
    return model


def save_model(model: AttentionModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model_to_dict(model)))


def load_model(path: str | Path, c_psi: float | None = None) -> AttentionModel:
    return model_from_dict(json.loads(Path(path).read_text()), c_psi)
