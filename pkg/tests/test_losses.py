import json
import math

import numpy as np
import pytest
from conftest import make_instance
from hypothesis import given, settings
from hypothesis import strategies as st

from torusflow import Dynamics, LatticeSpec, independent_coupling, reweight
from torusflow.engine import engine_for
from torusflow.errors import InputError
from torusflow.losses import (
    LossProblem,
    TabularScore,
    epsilon_tilde,
    loss_entropy,
    loss_l2,
    loss_total,
    loss_tractable,
    model_theta,
    tractable_loss_mc,
    train_tabular,
)
from torusflow.sampler import ExactScore, PerturbedScore, build_grid

GRID = build_grid(0.2, 0.05)


@pytest.fixture(scope="module")
def problem():
    return LossProblem(make_instance("nnrw", 3, 2, "random", seed=4), GRID)


def noisy(problem, gamma, seed):
    rng = np.random.default_rng(seed)
    return TabularScore(problem.grid, np.log(problem.u) + gamma * rng.standard_normal(problem.shape))


def loop_total(problem, model):
    """Straight loops with fsum, summed in reverse order."""
    rc, grid = problem.rc, problem.grid
    eng = engine_for(rc)
    lam = rc.dynamics.rate
    theta = model.theta
    terms = []
    for k in reversed(range(grid.K)):
        t = grid.points[k]
        h = grid.points[k + 1] - t
        p, u = eng.marginal(t), eng.jump_scores(t)
        for x in reversed(range(rc.spec.size)):
            if p[x] <= 0:
                continue
            for j in reversed(range(u.shape[1])):
                a = u[x, j] / theta[k, x, j]
                ent = lam * theta[k, x, j] * ((a * math.log(a) if a > 0 else 0.0) - a + 1)
                sq = (lam * (theta[k, x, j] - u[x, j])) ** 2
                terms.append(h * p[x] * (ent + sq))
    return math.fsum(terms)


def test_total_matches_loop_oracle(problem):
    for seed in range(3):
        model = noisy(problem, 0.5, seed)
        assert problem.total(model) == pytest.approx(loop_total(problem, model), rel=1e-12)


def test_exact_score_has_zero_loss(problem):
    assert problem.total(problem.exact()) <= 1e-12
    r = problem.report(problem.exact())
    assert r.l_entropy <= 1e-12 and r.l_two <= 1e-12
    assert np.abs(problem.gradient(problem.exact())).max() <= 1e-14


def test_exact_score_is_unique_minimiser(problem):
    for gamma in (1e-3, 0.1, 1.0):
        assert problem.total(noisy(problem, gamma, 1)) > 0


def test_tractable_offset_is_constant(problem):
    offsets = [problem.tractable(noisy(problem, 0.7, s)) - problem.total(noisy(problem, 0.7, s)) for s in range(5)]
    assert max(offsets) - min(offsets) <= 1e-9


def test_tractable_offset_for_deterministic_target():
    # with a point-mass target the bridge score is a function of X_t, so the
    # offset reduces to sum_k h_k E[sum_sigma q - q log q] with q = lambda * u
    spec = LatticeSpec(3, 1)
    dyn = Dynamics("urw", spec)
    rc = reweight(independent_coupling(spec, [0.5, 0.3, 0.2], [0, 1, 0]), dyn)
    prob = LossProblem(rc, GRID)
    exact = prob.exact()
    q = dyn.rate * prob.u
    expected = float(np.einsum("ks,ksj->", prob.weight, q - q * np.log(q)))
    assert prob.tractable(exact) - prob.total(exact) == pytest.approx(expected, rel=1e-10)
    np.testing.assert_allclose(prob.m2, prob.u**2, rtol=1e-10)


def test_gradient_matches_finite_differences(problem):
    model = noisy(problem, 0.5, 7)
    g = problem.gradient(model)
    rng = np.random.default_rng(0)
    flat = rng.choice(g.size, 100, replace=False)
    for i in flat:
        idx = np.unravel_index(i, g.shape)
        if g[idx] == 0:
            continue
        step = 1e-6
        lp = model.log_theta.copy()
        lm = model.log_theta.copy()
        lp[idx] += step
        lm[idx] -= step
        fd = (problem.total(TabularScore(GRID, lp)) - problem.total(TabularScore(GRID, lm))) / (2 * step)
        assert fd == pytest.approx(g[idx], rel=1e-5, abs=1e-13)


def test_wrappers_agree(problem):
    model = noisy(problem, 0.3, 2)
    rc = problem.rc
    assert loss_entropy(model, rc) + loss_l2(model, rc) == pytest.approx(loss_total(model, rc))
    assert loss_tractable(model, rc) == pytest.approx(problem.tractable(model))
    assert epsilon_tilde(model, rc) == pytest.approx(math.sqrt(problem.total(model)))


def test_monte_carlo_tractable_loss(problem):
    model = noisy(problem, 0.3, 3)
    est, se = tractable_loss_mc(problem, model, 20000, seed=0)
    assert abs(est - problem.tractable(model)) < 4 * se


def test_perturbed_tabulation_is_exact_times_noise():
    rc = make_instance("urw", 3, 1)
    grid = build_grid(0.2, 0.05)
    exact = model_theta(ExactScore(rc), grid)
    pert = PerturbedScore(rc, 0.25, seed=5)
    np.testing.assert_allclose(model_theta(pert, grid), exact * np.exp(0.25 * pert.noise))
    assert LossProblem(rc, grid).total(model_theta(PerturbedScore(rc, 0.0), grid)) == 0.0


def test_training_converges():
    spec = LatticeSpec(2, 1)
    dyn = Dynamics("nnrw", spec)
    rc = reweight(independent_coupling(spec, [0.5, 0.5], [0.8, 0.2]), dyn)
    prob = LossProblem(rc, GRID)
    init = TabularScore(GRID, np.log(model_theta(PerturbedScore(rc, 0.5, seed=0), GRID)))
    model, hist = train_tabular(prob, init, lr=1.0, steps=500)
    assert hist[-1].l_total <= 1e-6
    assert all(b.l_total <= a.l_total for a, b in zip(hist, hist[1:]))
    np.testing.assert_allclose(model.theta, prob.u, rtol=1e-3)


def test_training_from_exact_stops_immediately(problem):
    _, hist = train_tabular(problem, problem.exact(), lr=1.0, steps=10)
    assert len(hist) == 1


def test_training_rejects_bad_settings(problem):
    with pytest.raises(InputError):
        train_tabular(problem, problem.exact(), lr=0.0, steps=10)
    with pytest.raises(InputError):
        train_tabular(problem, problem.exact(), lr=1.0, steps=0)


def test_invalid_theta(problem):
    bad = problem.u.copy()
    bad[0, 0, 0] = -1.0
    with pytest.raises(InputError, match="k=0"):
        problem.total(bad)
    with pytest.raises(InputError):
        problem.total(np.ones((1, 2, 3)))
    with pytest.raises(InputError):
        TabularScore.from_values(GRID, bad)


@given(st.floats(-3, 3))
@settings(max_examples=20, deadline=None)
def test_losses_nonnegative_under_scaling(scale):
    prob = LossProblem(make_instance("urw", 2, 2, seed=1), GRID)
    model = TabularScore(GRID, np.log(prob.u) + scale)
    assert prob.entropy(model) >= 0 and prob.l2(model) >= 0


def test_save_load_roundtrip(tmp_path, problem):
    model = noisy(problem, 0.2, 0)
    path = tmp_path / "theta.json"
    model.save(path)
    back = TabularScore.load(path, *problem.shape[1:])
    np.testing.assert_allclose(back.theta, model.theta, rtol=1e-15)
    assert back.grid == model.grid
    obj = json.loads(path.read_text())
    obj["theta"].pop()
    path.write_text(json.dumps(obj))
    with pytest.raises(InputError, match="incomplete"):
        TabularScore.load(path, *problem.shape[1:])
    path.write_text(json.dumps({"theta": []}))
    with pytest.raises(InputError):
        TabularScore.load(path, *problem.shape[1:])
