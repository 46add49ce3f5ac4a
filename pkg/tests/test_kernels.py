import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from torusflow.errors import CapacityError, DomainError, InputError
from torusflow.kernels import (
    Dynamics,
    bessel_i,
    generator_rate,
    kolmogorov_residual,
    transition_prob,
    urw_alpha,
    wrapped_skellam,
)
from torusflow.lattice import LatticeSpec

KINDS = ["nnrw", "urw"]


@given(st.integers(0, 40), st.floats(0.0, 30.0))
@settings(max_examples=60)
def test_bessel_matches_mpmath(b, z):
    ref = float(mpmath.besseli(b, z))
    assert bessel_i(b, z) == pytest.approx(ref, rel=1e-12, abs=1e-300)


@pytest.mark.parametrize("z", [0.3, 1.0, 4.0, 12.0])
def test_bessel_recurrence(z):
    # I_{b-1}(z) - I_{b+1}(z) = (2b/z) I_b(z)
    for b in range(1, 15):
        lhs = bessel_i(b - 1, z) - bessel_i(b + 1, z)
        assert lhs == pytest.approx(2 * b / z * bessel_i(b, z), rel=1e-11)


def test_bessel_edge_values():
    assert bessel_i(0, 0.0) == 1.0
    assert bessel_i(3, 0.0) == 0.0
    with pytest.raises(DomainError):
        bessel_i(-2, 1.5)
    with pytest.raises(DomainError):
        bessel_i(1, -0.5)


def ode_kernel(Q, t):
    S = Q.shape[0]
    sol = solve_ivp(lambda _, y: (y.reshape(S, S) @ Q).ravel(), (0, t), np.eye(S).ravel(),
                    method="DOP853", rtol=1e-12, atol=1e-14)
    return sol.y[:, -1].reshape(S, S)


@pytest.mark.parametrize("m", [2, 3, 5, 8])
@pytest.mark.parametrize("t", [0.01, 0.4, 1.0])
def test_wrapped_skellam_vs_ode(m, t):
    Q = Dynamics("nnrw", LatticeSpec(m, 1)).generator
    ref = ode_kernel(Q, t)[0]
    got = np.array([wrapped_skellam(a, t, m) for a in range(m)])
    np.testing.assert_allclose(got, ref, atol=1e-10)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("m,d", [(2, 1), (3, 2), (5, 1), (4, 2)])
def test_kernel_vs_expm(kind, m, d):
    dyn = Dynamics(kind, LatticeSpec(m, d))
    for t in (0.0, 0.05, 0.5, 1.0):
        np.testing.assert_allclose(dyn.kernel(t), expm(t * dyn.generator), atol=1e-12)


def test_urw_closed_form_value():
    dyn = Dynamics("urw", LatticeSpec(3, 1))
    assert transition_prob(dyn, 1.0, 0, 0) == pytest.approx((1 + 2 * math.exp(-1)) / 3, abs=1e-15)
    assert transition_prob(dyn, 1.0, 0, 2) == pytest.approx((1 - math.exp(-1)) / 3, abs=1e-15)
    assert urw_alpha(0.5, 3) == pytest.approx((1 - math.exp(-0.5)) / (1 + 2 * math.exp(-0.5)))


@pytest.mark.parametrize("kind", KINDS)
def test_long_time_is_stationary(kind):
    dyn = Dynamics(kind, LatticeSpec(3, 2))
    np.testing.assert_allclose(dyn.kernel(50.0, strict=False), np.full((9, 9), 1 / 9), atol=1e-12)


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("m,d", [(2, 1), (2, 2), (3, 1), (3, 2), (5, 1), (5, 2)])
def test_kolmogorov_forward(kind, m, d):
    dyn = Dynamics(kind, LatticeSpec(m, d))
    rng = np.random.default_rng(m * 10 + d)
    for _ in range(20):
        t = rng.uniform(1e-3, 1 - 1e-3)
        x = int(rng.integers(dyn.spec.size))
        assert kolmogorov_residual(dyn, t, x) <= 1e-6


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("m", [2, 3, 4])
def test_generator_structure(kind, m):
    dyn = Dynamics(kind, LatticeSpec(m, 2))
    Q = dyn.generator
    np.testing.assert_allclose(Q.sum(axis=1), 0, atol=1e-14)
    np.testing.assert_allclose(Q, Q.T)
    assert np.all(Q - np.diag(np.diag(Q)) >= 0)
    assert generator_rate(dyn, 0, 0) == Q[0, 0]
    assert generator_rate(dyn, (0, 0), (1, 0)) == Q[0, 1]


def test_nnrw_m2_multiplicity():
    dyn = Dynamics("nnrw", LatticeSpec(2, 1))
    np.testing.assert_allclose(dyn.generator, [[-1, 1], [1, -1]])


@given(st.sampled_from(KINDS), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=30, deadline=None)
def test_chapman_kolmogorov(kind, s, r):
    dyn = Dynamics(kind, LatticeSpec(3, 2))
    if s + r > 1:
        s, r = s / 2, r / 2
    np.testing.assert_allclose(dyn.kernel(s) @ dyn.kernel(r), dyn.kernel(s + r), atol=1e-12)


def test_transition_prob_matches_matrix():
    dyn = Dynamics("nnrw", LatticeSpec(4, 2))
    P = dyn.kernel(0.3)
    for x, y in [(0, 0), (0, 5), (3, 12), (15, 1)]:
        assert transition_prob(dyn, 0.3, x, y) == pytest.approx(P[x, y], abs=1e-15)


def test_invalid_durations_and_capacity():
    dyn = Dynamics("urw", LatticeSpec(3, 1))
    with pytest.raises(InputError):
        dyn.kernel(-0.1)
    with pytest.raises(InputError):
        dyn.kernel(1.5)
    with pytest.raises(InputError):
        Dynamics("levy", LatticeSpec(3, 1))
    with pytest.raises(CapacityError):
        Dynamics("urw", LatticeSpec(5, 6)).kernel(0.5)
    # pointwise closed forms still work beyond the dense limit
    big = Dynamics("urw", LatticeSpec(5, 6))
    assert 0 < transition_prob(big, 0.5, 0, 7) < 1
