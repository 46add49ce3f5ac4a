"""Invariant checks run by the ``verify`` and ``kernels-check`` subcommands.

Each check yields a :class:`Check` holding the measured value, the bound it
is compared against and whether it passed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import expm

from .coupling import ReweightedCoupling
from .engine import (
    ETA_MIN,
    bridge_score_matrix,
    engine_for,
    evolution_residuals,
    forward_evolve,
    score_ode_residual,
)
from .kernels import Dynamics, kolmogorov_residual
from .lattice import NNRW
from .metrics import kl, tv

SCORE_TIMES = (0.0, 0.25, 0.5, 0.75)


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool

    def as_dict(self) -> dict:
        d = asdict(self)
        d["value"] = _jsonable(d["value"])
        d["bound"] = _jsonable(d["bound"])
        return d


def _jsonable(v: float):
    v = float(v)
    return v if math.isfinite(v) else str(v)


def _le(name: str, value: float, bound: float) -> Check:
    return Check(name, float(value), float(bound), bool(value <= bound))


def kernel_checks(dyn: Dynamics, seed: int = 0, n_points: int = 20) -> list[Check]:
    rng = np.random.default_rng(seed)
    S = dyn.spec.size
    times = rng.uniform(1e-3, 1 - 1e-3, n_points)
    states = rng.integers(0, S, n_points)
    out = [
        _le(
            "kernel.kolmogorov_residual",
            max(kolmogorov_residual(dyn, float(t), int(x)) for t, x in zip(times, states)),
            1e-6,
        )
    ]
    Q = dyn.generator
    out.append(
        _le(
            "kernel.vs_generator_exponential",
            max(np.abs(dyn.kernel(float(t)) - expm(float(t) * Q)).max() for t in times[:5]),
            1e-8,
        )
    )
    out.append(
        _le("kernel.row_normalisation", max(np.abs(dyn.kernel(float(t)).sum(axis=1) - 1).max() for t in times), 1e-10)
    )
    out.append(_le("kernel.symmetry", max(np.abs(dyn.kernel(float(t)) - dyn.kernel(float(t)).T).max() for t in times), 1e-14))
    s, t = 0.3, 0.45
    out.append(_le("kernel.chapman_kolmogorov", np.abs(dyn.kernel(s) @ dyn.kernel(t) - dyn.kernel(s + t)).max(), 1e-9))
    out.append(_le("generator.row_sums", np.abs(Q.sum(axis=1)).max(), 1e-12))
    return out


def score_bounds(dyn: Dynamics, t: float) -> tuple[float, float]:
    """Explicit lower and upper bounds on a single projected score."""
    m = dyn.spec.m
    if dyn.kind == NNRW:
        c = 5 * (2 * m + 1)
        return (1 - t) / c, c / (1 - t)
    e = math.exp(-(1 - t))
    alpha = (1 - e) / (1 + (m - 1) * e)
    return alpha, 1 / alpha


def score_sum_bound(dyn: Dynamics, t: float) -> float:
    m, d = dyn.spec.m, dyn.spec.d
    if dyn.kind == NNRW:
        return 10 * d * (2 * m + 1) / (1 - t)
    return d * ((math.e + m - 1) / (1 - t) + m - 1)


def early_stopping_bound(dyn: Dynamics, eta: float) -> float:
    m, d = dyn.spec.m, dyn.spec.d
    if dyn.kind == NNRW:
        return 5 * d * (2 * m + 1) * eta
    return d * eta / (1 - math.exp(-1))


def score_bound_violations(rc: ReweightedCoupling, eta: float) -> tuple[int, int, float]:
    """(violations of the pointwise bounds, violations of the sum bound, worst log-margin)."""
    eng = engine_for(rc)
    dyn = rc.dynamics
    point = total = 0
    margin = math.inf
    for t in (*SCORE_TIMES, 1 - eta):
        u = eng.jump_scores(t)
        live = ~np.isnan(u[:, 0])
        lo, hi = score_bounds(dyn, t)
        vals = u[live]
        point += int(np.sum(vals < lo) + np.sum(vals > hi))
        total += int(np.sum(vals.sum(axis=1) > score_sum_bound(dyn, t)))
        margin = min(margin, float(np.min(np.log(vals / lo))), float(np.min(np.log(hi / vals))))
    return point, total, margin


def marginal_preservation_gap(rc: ReweightedCoupling, t_end: float = 0.9, n: int = 10) -> float:
    eng = engine_for(rc)
    times = [t_end * (i + 1) / n for i in range(n)]
    evolved = forward_evolve(rc.coupling.mu0, eng.generator, 0.0, t_end, snapshots=times)
    return max(float(np.abs(e.probs - eng.marginal(e.t)).max()) for e in evolved)


def transitivity_gaps(rc: ReweightedCoupling, t: float = 0.5) -> tuple[float, float]:
    """(max bridge-score transitivity defect, max projected-score transitivity defect)."""
    dyn = rc.dynamics
    S = rc.spec.size
    bridge = 0.0
    for x1 in range(S):
        B = bridge_score_matrix(dyn, t, x1)
        bridge = max(bridge, float(np.abs(B[:, :, None] * B[None, :, :] - B[:, None, :]).max()))
    U = engine_for(rc).score_matrix(t)
    projected = float(np.nanmax(np.abs(U[:, :, None] * U[None, :, :] - U[:, None, :])))
    return bridge, projected


def instance_checks(rc: ReweightedCoupling, eta: float, seed: int = 0) -> list[Check]:
    dyn = rc.dynamics
    eng = engine_for(rc)
    c = rc.coupling
    out = kernel_checks(dyn, seed)
    out.append(_le("marginal.endpoint_t0", np.abs(eng.marginal(0.0) - c.mu0).max(), 1e-10))
    out.append(_le("marginal.endpoint_t1", np.abs(eng.marginal(1.0) - c.mu1).max(), 1e-10))
    out.append(_le("projection.marginal_preservation", marginal_preservation_gap(rc), 1e-6))
    point, total, margin = score_bound_violations(rc, eta)
    out.append(Check("score.pointwise_bound_violations", point, 0, point == 0))
    out.append(Check("score.sum_bound_violations", total, 0, total == 0))
    out.append(Check("score.worst_log_margin", margin, 0.0, margin >= 0.0))
    rows = np.arange(rc.spec.size)
    ode = max(
        score_ode_residual(rc, t, int(x), j)
        for t in (0.3, 0.6)
        for x in rows
        for j in range(len(dyn.ops))
    )
    out.append(_le("score.ode_residual", ode, 1e-5))
    evo = [evolution_residuals(rc, 0.2, 0.6, j) for j in range(len(dyn.ops))]
    out.append(_le("score.evolution_residual", max(r[0] for r in evo), 1e-6))
    out.append(_le("score.entropy_evolution_residual", max(r[1] for r in evo), 1e-6))
    bridge, projected = transitivity_gaps(rc)
    out.append(_le("bridge.transitivity", bridge, 1e-12))
    out.append(Check("projected.transitivity_defect", projected, 0.0, True))
    early, target = eng.marginal(1 - eta), eng.marginal(1.0)
    out.append(_le("early_stopping.tv", tv(early, target), early_stopping_bound(dyn, eta)))
    out.append(Check("pinsker", tv(early, target), math.sqrt(kl(early, target) / 2),
                     tv(early, target) <= math.sqrt(kl(early, target) / 2) + 1e-12))
    return out


__all__ = [
    "Check",
    "ETA_MIN",
    "early_stopping_bound",
    "instance_checks",
    "kernel_checks",
    "marginal_preservation_gap",
    "score_bound_violations",
    "score_bounds",
    "score_sum_bound",
    "transitivity_gaps",
]
