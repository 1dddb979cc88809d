"""Hinge-loss training of the attention simplex weights.

The decision rule "anomalous when the expected path length falls below
gamma" gives the per-sample loss max(0, y * (E[h(x)] - gamma)). Because the
attention weights are affine in the trainable vector w, the loss separates
into a constant part D_s and a linear part:

    loss_s(w) = max(0, D_s + y_s * epsilon * (H w)_s)
    D_s       = y_s * ((1 - epsilon) * sum_k p_k(x_s) h_k(x_s) - gamma)

Minimizing sum_s loss_s + lambda * ||w||^2 over the simplex is a linear
program (lambda = 0) or a quadratic program (lambda > 0) in (w, v) after
introducing slack variables v_s >= loss_s. Both are solved exactly:
the LP by HiGHS through scipy, the QP by the Clarabel interior-point
solver. Solutions are deterministic for fixed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from abiforest import forest as fr
from abiforest.attention import AttentionModel, softmax_neg_distances, response_matrices
from abiforest.data import Dataset


class ConvergenceError(RuntimeError):
    """Solver stopped before reaching its tolerance.

    Carries the best iterate found (may be None) and a residual/status
    description for diagnostics.
    """

    def __init__(self, message: str, w_best: np.ndarray | None = None, residual: float | None = None):
        super().__init__(message)
        self.w_best = w_best
        self.residual = residual


@dataclass
class TrainingProblem:
    """Data of one hinge optimization instance."""

    H: np.ndarray        # (n, T) per-sample, per-tree path lengths
    D: np.ndarray        # (n,) constant hinge offsets
    y: np.ndarray        # (n,) labels in {-1, +1}
    epsilon: float
    lam: float
    gamma: float

    def __post_init__(self):
        self.H = np.asarray(self.H, dtype=np.float64)
        self.D = np.asarray(self.D, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        n = self.H.shape[0]
        if self.D.shape != (n,) or self.y.shape != (n,):
            raise ValueError("H, D and y row counts disagree")
        if np.any(self.H < 0):
            raise ValueError("path lengths must be non-negative")
        if not np.isfinite(self.D).all():
            raise ValueError("offsets must be finite")
        if not np.isin(self.y, (-1.0, 1.0)).all():
            raise ValueError("labels must be -1 or +1")
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")

    @property
    def n(self) -> int:
        return int(self.H.shape[0])

    @property
    def n_trees(self) -> int:
        return int(self.H.shape[1])

    def dump(self, path: str | Path) -> None:
        """Write the instance as JSON for external-solver cross-checks."""
        Path(path).write_text(json.dumps({
            "H": self.H.tolist(),
            "D": self.D.tolist(),
            "y": self.y.astype(int).tolist(),
            "epsilon": self.epsilon,
            "lambda": self.lam,
            "gamma": self.gamma,
        }))


@dataclass(frozen=True)
class FitConfig:
    """Hyperparameters and solver settings for one fit."""

    epsilon: float = 0.5
    omega: float = 20.0
    tau: float = 0.5
    lam: float = 1e-3
    solver_tol: float = 1e-6
    max_iters: int = 5000
    label_source: str = "given"  # "given" or "pseudo"

    def __post_init__(self):
        if self.solver_tol <= 0:
            raise ValueError(f"solver_tol must be positive, got {self.solver_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.label_source not in ("given", "pseudo"):
            raise ValueError(f"label_source must be 'given' or 'pseudo', got {self.label_source!r}")


def gamma_from_tau(tau: float, c_psi: float) -> float:
    """Path-length threshold equivalent to score threshold tau.

    score > tau  <=>  E[h] < -c_psi * log2(tau).
    """
    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must be in (0, 1), got {tau}")
    if c_psi <= 0:
        raise ValueError(f"c_psi must be positive, got {c_psi}")
    return float(-c_psi * np.log2(tau))


def pseudo_labels(forest: fr.IsolationForest, data: Dataset, tau: float) -> np.ndarray:
    """Labels assigned by the plain forest when ground truth is absent."""
    scores = fr.iforest_scores(forest, data.features)
    return fr.classify(scores, tau)


def assemble_problem(
    forest: fr.IsolationForest,
    data: Dataset,
    labels: np.ndarray,
    epsilon: float,
    omega: float,
    tau: float,
    lam: float,
) -> TrainingProblem:
    """Precompute H and the hinge offsets D for the optimization.

    D is defined so that D_s + y_s * epsilon * (H w)_s equals
    y_s * (E[h(x_s)] - gamma) exactly for every w on the simplex.
    """
    labels = np.asarray(labels)
    if labels.shape != (data.n,):
        raise ValueError(f"labels have shape {labels.shape}, expected ({data.n},)")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must be in [0, 1], got {epsilon}")
    gamma = gamma_from_tau(tau, forest.c_psi)
    H, D2 = response_matrices(forest, data.features)
    P = softmax_neg_distances(D2, omega)
    y = labels.astype(np.float64)
    D = y * ((1.0 - epsilon) * np.einsum("ij,ij->i", P, H) - gamma)
    return TrainingProblem(H=H, D=D, y=y, epsilon=epsilon, lam=lam, gamma=gamma)


def hinge_objective(problem: TrainingProblem, w: np.ndarray) -> float:
    """sum_s max(0, D_s + y_s eps (Hw)_s) + lambda ||w||^2."""
    w = np.asarray(w, dtype=np.float64)
    margins = problem.D + problem.y * problem.epsilon * (problem.H @ w)
    return float(np.maximum(0.0, margins).sum() + problem.lam * (w @ w))


@dataclass(frozen=True)
class SolveResult:
    w: np.ndarray
    objective: float
    iterations: int


def _clean_simplex(w: np.ndarray) -> np.ndarray:
    # interior-point iterates sit a hair off the simplex; snap back
    w = np.maximum(np.asarray(w, dtype=np.float64), 0.0)
    total = w.sum()
    if total <= 0:
        raise ConvergenceError("solver returned a degenerate weight vector", w_best=w)
    return w / total


def _solve_lp(coeff: np.ndarray, D: np.ndarray, T: int, max_iters: int) -> tuple[np.ndarray, int]:
    n = D.shape[0]
    c = np.concatenate([np.zeros(T), np.ones(n)])
    A_ub = sp.hstack([sp.csc_matrix(coeff), -sp.identity(n, format="csc")], format="csc")
    A_eq = sp.csc_matrix((np.ones(T), (np.zeros(T, dtype=int), np.arange(T))), shape=(1, T + n))
    res = linprog(
        c,
        A_ub=A_ub,
        b_ub=-D,
        A_eq=A_eq,
        b_eq=[1.0],
        bounds=(0, None),
        method="highs",
        options={"maxiter": max_iters},
    )
    if res.status != 0 or res.x is None:
        best = None if res.x is None else np.asarray(res.x[:T])
        raise ConvergenceError(
            f"LP solver failed (status {res.status}: {res.message})",
            w_best=best,
        )
    return np.asarray(res.x[:T]), int(res.nit)


def _solve_qp(
    coeff: np.ndarray, D: np.ndarray, T: int, lam: float, tol: float, max_iters: int
) -> tuple[np.ndarray, int]:
    n = D.shape[0]
    P = sp.block_diag(
        [2.0 * lam * sp.identity(T), sp.csc_matrix((n, n))], format="csc"
    )
    q = np.concatenate([np.zeros(T), np.ones(n)])
    ones_row = sp.csc_matrix((np.ones(T), (np.zeros(T, dtype=int), np.arange(T))), shape=(1, T + n))
    G = sp.hstack([sp.csc_matrix(coeff), -sp.identity(n, format="csc")], format="csc")
    A = sp.vstack([ones_row, G, -sp.identity(T + n, format="csc")], format="csc")
    b = np.concatenate([[1.0], -D, np.zeros(T + n)])
    cones = [clarabel.ZeroConeT(1), clarabel.NonnegativeConeT(2 * n + T)]
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iters
    settings.tol_gap_abs = tol
    settings.tol_gap_rel = tol
    settings.tol_feas = min(1e-8, tol)
    solution = clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()
    status = str(solution.status)
    if status not in ("Solved", "SolverStatus.Solved"):
        best = np.asarray(solution.x[:T]) if solution.x is not None else None
        residual = None
        if best is not None:
            z = np.asarray(solution.x)
            gap = A @ z - b  # row 0 is the equality, the rest one-sided
            residual = float(max(abs(gap[0]), np.maximum(gap[1:], 0.0).max(initial=0.0)))
        raise ConvergenceError(
            f"QP solver stopped with status {status} after {solution.iterations} iterations",
            w_best=best,
            residual=residual,
        )
    return np.asarray(solution.x[:T]), int(solution.iterations)


def solve(problem: TrainingProblem, config: FitConfig | None = None) -> SolveResult:
    """Minimize the hinge objective over the probability simplex.

    Exact convex solve via the slack formulation: variables (w, v),
    constraints v_s >= D_s + y_s eps (Hw)_s, v >= 0, w on the simplex.
    The reported objective is recomputed from the cleaned w.
    """
    config = config or FitConfig(epsilon=problem.epsilon, lam=problem.lam)
    coeff = (problem.y * problem.epsilon)[:, None] * problem.H
    if problem.lam == 0:
        w_raw, iters = _solve_lp(coeff, problem.D, problem.n_trees, config.max_iters)
    else:
        w_raw, iters = _solve_qp(
            coeff, problem.D, problem.n_trees, problem.lam, config.solver_tol, config.max_iters
        )
    w = _clean_simplex(w_raw)
    return SolveResult(w=w, objective=hinge_objective(problem, w), iterations=iters)


@dataclass(frozen=True)
class FitResult:
    model: AttentionModel
    objective: float
    iterations: int


def fit(forest: fr.IsolationForest, data: Dataset, config: FitConfig) -> FitResult:
    """Assemble and solve the training problem; package an AttentionModel.

    With epsilon = 0 the objective does not depend on w at all, so the
    solve is skipped and uniform weights are recorded.
    """
    gamma = gamma_from_tau(config.tau, forest.c_psi)
    if config.label_source == "given":
        if data.labels is None:
            raise ValueError("label_source='given' but the dataset has no labels")
        labels = data.labels
    else:
        labels = pseudo_labels(forest, data, config.tau)
    problem = assemble_problem(
        forest, data, labels, config.epsilon, config.omega, config.tau, config.lam
    )
    if config.epsilon == 0:
        w = np.full(forest.n_trees, 1.0 / forest.n_trees)
        objective = hinge_objective(problem, w)
        iterations = 0
    else:
        result = solve(problem, config)
        w, objective, iterations = result.w, result.objective, result.iterations
    model = AttentionModel(
        epsilon=config.epsilon, omega=config.omega, tau=config.tau, gamma=gamma, w=w
    )
    return FitResult(model=model, objective=objective, iterations=iterations)
