import numpy as np
import pytest

from torusflow import Dynamics, LatticeSpec, independent_coupling, point_coupling, reweight


def random_prob(rng, n, power=1.0):
    v = rng.random(n) ** power + 1e-3
    return v / v.sum()


def make_instance(kind, m, d, coupling="random", seed=0):
    spec = LatticeSpec(m, d)
    dyn = Dynamics(kind, spec)
    S = spec.size
    rng = np.random.default_rng(seed)
    if coupling == "random":
        c = independent_coupling(spec, random_prob(rng, S), random_prob(rng, S, 3.0))
    elif coupling == "uniform":
        c = independent_coupling(spec, np.full(S, 1 / S), np.full(S, 1 / S))
    elif coupling == "point":
        c = point_coupling(spec, 0, S - 1)
    else:
        raise ValueError(coupling)
    return reweight(c, dyn)


# Small configurations covering both families, several m and d, and degenerate couplings.
CONFIGS = [
    ("nnrw", 2, 1, "random"),
    ("nnrw", 3, 1, "random"),
    ("nnrw", 3, 2, "point"),
    ("urw", 2, 2, "random"),
    ("urw", 3, 1, "uniform"),
    ("urw", 3, 2, "random"),
]


@pytest.fixture(params=CONFIGS, ids=lambda c: "-".join(map(str, c)))
def instance(request):
    return make_instance(*request.param)
