import json
import math

import numpy as np
import pytest

from abiforest import attention as at
from abiforest import data as dat
from abiforest import training as tr

from conftest import forest_from_chains


# --------------------------------------------------------------------------
# brute-force oracle: objective minimum over a 0.01-step simplex grid
# --------------------------------------------------------------------------


def simplex_grid(T: int, steps: int = 100) -> np.ndarray:
    if T == 1:
        return np.array([[1.0]])
    if T == 2:
        a = np.arange(steps + 1) / steps
        return np.column_stack([a, 1.0 - a])
    if T == 3:
        pts = [
            (i, j, steps - i - j)
            for i in range(steps + 1)
            for j in range(steps + 1 - i)
        ]
        return np.asarray(pts, dtype=float) / steps
    raise ValueError("oracle grid only supports T <= 3")


def grid_minimum(problem: tr.TrainingProblem) -> float:
    W = simplex_grid(problem.n_trees)
    margins = problem.D[None, :] + (problem.y * problem.epsilon)[None, :] * (W @ problem.H.T)
    objs = np.maximum(0.0, margins).sum(axis=1) + problem.lam * (W * W).sum(axis=1)
    return float(objs.min())


def random_problem(rng: np.random.Generator) -> tr.TrainingProblem:
    n = int(rng.integers(1, 9))
    T = int(rng.integers(1, 4))
    H = rng.uniform(0.0, 15.0, size=(n, T))
    y = rng.choice([-1.0, 1.0], size=n)
    D = rng.uniform(-20.0, 10.0, size=n)
    lam = float(rng.choice([0.0, 1e-3, 0.1]))
    eps = float(rng.uniform(0.05, 1.0))
    return tr.TrainingProblem(H=H, D=D, y=y, epsilon=eps, lam=lam, gamma=1.0)


# --------------------------------------------------------------------------
# gamma_from_tau
# --------------------------------------------------------------------------


def test_gamma_halving_anchors():
    assert tr.gamma_from_tau(0.5, 7.3) == pytest.approx(7.3, abs=1e-12)
    assert tr.gamma_from_tau(0.25, 7.3) == pytest.approx(14.6, abs=1e-12)


def test_gamma_hand_value():
    # oracle: -10.24 * ln(0.6) / ln(2)
    expected = -10.24 * math.log(0.6) / math.log(2)
    assert tr.gamma_from_tau(0.6, 10.24) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(7.546, abs=1e-3)


def test_gamma_rejects_bad_tau():
    for tau in (0.0, 1.0, -0.2, 1.7):
        with pytest.raises(ValueError):
            tr.gamma_from_tau(tau, 10.0)


# --------------------------------------------------------------------------
# pseudo_labels
# --------------------------------------------------------------------------


def test_pseudo_labels_thresholding():
    shallow = forest_from_chains([1], psi=256)   # h = 1 ~ 0.1 c(256)
    deep = forest_from_chains([31], psi=256)     # h = 31 ~ 3 c(256)
    x = dat.Dataset(np.array([[0.0]]))
    assert tr.pseudo_labels(shallow, x, tau=0.5)[0] == 1
    assert tr.pseudo_labels(deep, x, tau=0.5)[0] == -1


def test_fit_uses_given_labels_without_pseudo(tiny_forest, small_circle):
    cfg = tr.FitConfig(epsilon=0.5, omega=20.0, tau=0.6, label_source="given")
    result = tr.fit(tiny_forest, small_circle, cfg)
    assert result.model.n_trees == tiny_forest.n_trees


def test_fit_pseudo_on_unlabeled(tiny_forest, small_circle):
    unlabeled = dat.Dataset(small_circle.features)
    cfg = tr.FitConfig(epsilon=0.5, omega=20.0, tau=0.6, label_source="pseudo")
    result = tr.fit(tiny_forest, unlabeled, cfg)
    assert result.model.w.sum() == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(ValueError):
        tr.fit(tiny_forest, unlabeled, tr.FitConfig(label_source="given"))


# --------------------------------------------------------------------------
# assemble_problem
# --------------------------------------------------------------------------


def test_assemble_epsilon_one_offsets():
    forest = forest_from_chains([4, 6], psi=2)
    data = dat.Dataset(np.array([[0.0], [0.0]]), labels=[1, -1])
    problem = tr.assemble_problem(forest, data, data.labels, epsilon=1.0,
                                  omega=5.0, tau=0.25, lam=0.0)
    gamma = tr.gamma_from_tau(0.25, forest.c_psi)
    np.testing.assert_allclose(problem.D, [-gamma, gamma], atol=1e-12)


def test_assemble_hand_value():
    # two chain trees with h = 4 and 6, equal keys so p = (1/2, 1/2);
    # psi=2 gives c=1 and tau=2^-5 gives gamma=5
    forest = forest_from_chains([4, 6], psi=2)
    data = dat.Dataset(np.array([[0.0]]), labels=[1])
    problem = tr.assemble_problem(forest, data, data.labels, epsilon=0.5,
                                  omega=3.0, tau=2.0 ** -5, lam=0.0)
    assert problem.gamma == pytest.approx(5.0, abs=1e-12)
    assert problem.D[0] == pytest.approx(-2.5, abs=1e-12)


def test_assemble_consistency_identity(tiny_forest, small_circle):
    # D_s + y_s eps (Hw)_s == y_s (E[h(x_s)] - gamma) for any simplex w
    rng = np.random.default_rng(12)
    eps, omega, tau = 0.35, 7.0, 0.55
    data = dat.Dataset(small_circle.features[:50], small_circle.labels[:50])
    problem = tr.assemble_problem(tiny_forest, data, data.labels, eps, omega, tau, 0.0)
    gamma = problem.gamma
    for _ in range(50):
        w = rng.dirichlet(np.ones(tiny_forest.n_trees))
        model = at.AttentionModel(epsilon=eps, omega=omega, tau=tau, gamma=gamma, w=w)
        E = at.attended_path_lengths(tiny_forest, model, data.features)
        lhs = problem.D + problem.y * eps * (problem.H @ w)
        rhs = problem.y * (E - gamma)
        np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_assemble_label_shape_check(tiny_forest, small_circle):
    with pytest.raises(ValueError):
        tr.assemble_problem(tiny_forest, small_circle, np.ones(3), 0.5, 5.0, 0.5, 0.0)


def test_problem_dump_schema(tmp_path):
    problem = tr.TrainingProblem(
        H=np.array([[4.0, 6.0]]), D=np.array([-2.5]), y=np.array([1.0]),
        epsilon=0.5, lam=1e-3, gamma=5.0,
    )
    path = tmp_path / "problem.json"
    problem.dump(path)
    record = json.loads(path.read_text())
    assert set(record) == {"H", "D", "y", "epsilon", "lambda", "gamma"}
    assert record["H"] == [[4.0, 6.0]]
    assert record["y"] == [1]


# --------------------------------------------------------------------------
# hinge_objective
# --------------------------------------------------------------------------


def _problem(H, D, y, eps, lam):
    return tr.TrainingProblem(H=np.asarray(H, float), D=np.asarray(D, float),
                              y=np.asarray(y, float), epsilon=eps, lam=lam, gamma=1.0)


def test_hinge_inactive_zero():
    p = _problem([[4.0, 6.0], [3.0, 9.0]], [-100.0, -100.0], [1, -1], 0.5, 0.0)
    assert tr.hinge_objective(p, np.array([0.3, 0.7])) == 0.0


def test_hinge_regularizer_only():
    T = 8
    p = _problem(np.ones((3, T)), [-50.0] * 3, [1, 1, -1], 0.5, 0.25)
    w = np.full(T, 1.0 / T)
    assert tr.hinge_objective(p, w) == pytest.approx(0.25 / T, abs=1e-15)


def test_hinge_hand_value():
    p = _problem([[4.0, 6.0]], [-2.5], [1], 0.5, 0.0)
    assert tr.hinge_objective(p, np.array([0.0, 1.0])) == pytest.approx(0.5, abs=1e-12)


def test_hinge_convexity_witness():
    rng = np.random.default_rng(13)
    for _ in range(30):
        p = random_problem(rng)
        w1 = rng.dirichlet(np.ones(p.n_trees))
        w2 = rng.dirichlet(np.ones(p.n_trees))
        t = rng.uniform(0.0, 1.0)
        mix = tr.hinge_objective(p, t * w1 + (1 - t) * w2)
        assert mix <= t * tr.hinge_objective(p, w1) + (1 - t) * tr.hinge_objective(p, w2) + 1e-9


def test_hinge_subgradient_matches_finite_difference():
    rng = np.random.default_rng(14)
    checked = 0
    while checked < 20:
        p = random_problem(rng)
        w = rng.dirichlet(np.ones(p.n_trees))
        margins = p.D + p.y * p.epsilon * (p.H @ w)
        if np.any(np.abs(margins) < 1e-3):
            continue  # not a smooth point
        active = margins > 0
        grad = p.epsilon * (p.y[active, None] * p.H[active]).sum(axis=0) + 2 * p.lam * w
        h = 1e-6
        for j in range(p.n_trees):
            e = np.zeros(p.n_trees)
            e[j] = h
            fd = (tr.hinge_objective(p, w + e) - tr.hinge_objective(p, w - e)) / (2 * h)
            assert fd == pytest.approx(grad[j], rel=1e-4, abs=1e-6)
        checked += 1


# --------------------------------------------------------------------------
# solve
# --------------------------------------------------------------------------


def test_solve_uniform_when_hinges_inactive():
    T = 6
    p = _problem(np.full((4, T), 5.0), [-100.0] * 4, [1, 1, -1, -1], 0.5, 0.01)
    result = tr.solve(p)
    np.testing.assert_allclose(result.w, np.full(T, 1.0 / T), atol=1e-5)


def test_solve_lp_zero_objective_face():
    # any w with 4 w1 + 6 w2 <= 5 has zero loss; the solver must find it
    p = _problem([[4.0, 6.0]], [-5.0], [1], 1.0, 0.0)
    result = tr.solve(p)
    assert result.objective <= 1e-9
    assert grid_minimum(p) == 0.0


def test_solve_matches_grid_oracle():
    rng = np.random.default_rng(15)
    for _ in range(40):
        p = random_problem(rng)
        result = tr.solve(p)
        assert result.objective <= grid_minimum(p) + 1e-4
        assert result.w.min() >= 0
        assert result.w.sum() == pytest.approx(1.0, abs=1e-9)


def test_solve_zero_loss_vertex_found():
    rng = np.random.default_rng(16)
    for _ in range(10):
        n, T = 6, 3
        H = rng.uniform(0, 12, size=(n, T))
        y = rng.choice([-1.0, 1.0], size=n)
        eps = 0.8
        # make vertex e_0 lossless with slack
        D = -(y * eps * H[:, 0]) - rng.uniform(0.1, 1.0, size=n)
        p = tr.TrainingProblem(H=H, D=D, y=y, epsilon=eps, lam=0.0, gamma=1.0)
        result = tr.solve(p)
        assert result.objective < 1e-6


def test_solve_deterministic():
    rng = np.random.default_rng(17)
    p = random_problem(rng)
    a = tr.solve(p)
    b = tr.solve(p)
    np.testing.assert_array_equal(a.w, b.w)
    assert a.objective == b.objective


def test_solve_iteration_budget_failure():
    rng = np.random.default_rng(18)
    H = rng.uniform(0, 15, size=(40, 10))
    y = rng.choice([-1.0, 1.0], size=40)
    D = rng.uniform(-5, 5, size=40)
    p = tr.TrainingProblem(H=H, D=D, y=y, epsilon=0.9, lam=1e-3, gamma=1.0)
    with pytest.raises(tr.ConvergenceError):
        tr.solve(p, tr.FitConfig(max_iters=1))


# --------------------------------------------------------------------------
# fit
# --------------------------------------------------------------------------


def test_fit_epsilon_zero_skips_solve(tiny_forest, small_circle):
    cfg = tr.FitConfig(epsilon=0.0, omega=10.0, tau=0.6)
    result = tr.fit(tiny_forest, small_circle, cfg)
    T = tiny_forest.n_trees
    np.testing.assert_array_equal(result.model.w, np.full(T, 1.0 / T))
    assert result.iterations == 0
    # with epsilon = 0 the weights are irrelevant to scoring
    other = at.AttentionModel(
        epsilon=0.0, omega=10.0, tau=0.6, gamma=result.model.gamma,
        w=np.random.default_rng(19).dirichlet(np.ones(T)),
    )
    a, _ = at.abif_scores(tiny_forest, result.model, small_circle.features)
    b, _ = at.abif_scores(tiny_forest, other, small_circle.features)
    np.testing.assert_array_equal(a, b)


def test_fit_deterministic(tiny_forest, small_circle):
    cfg = tr.FitConfig(epsilon=0.5, omega=20.0, tau=0.6, lam=1e-3)
    a = tr.fit(tiny_forest, small_circle, cfg)
    b = tr.fit(tiny_forest, small_circle, cfg)
    np.testing.assert_array_equal(a.model.w, b.model.w)
    assert a.objective == b.objective


def test_fit_objective_matches_manual_assembly(tiny_forest, small_circle):
    cfg = tr.FitConfig(epsilon=0.5, omega=20.0, tau=0.6, lam=1e-3)
    result = tr.fit(tiny_forest, small_circle, cfg)
    problem = tr.assemble_problem(
        tiny_forest, small_circle, small_circle.labels, 0.5, 20.0, 0.6, 1e-3
    )
    assert result.objective == pytest.approx(
        tr.hinge_objective(problem, result.model.w), abs=1e-12
    )
