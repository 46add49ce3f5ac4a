"""Exact interpolant marginals, scores and projected generators.

Everything here is dense linear algebra over the S = m^d states. The central
object is the numerator matrix

    N_t[x, y] = sum_{x0, x1} p_t(x | x0) p_{1-t}(x1 | y) pi~(x0, x1)
              = (P_t^T  pi~  P_{1-t}^T)[x, y],

whose diagonal is the interpolant marginal and whose row-normalised form
N_t[x, y] / N_t[x, x] is the projected score u_t(x, y) for every target y.
"""

from __future__ import annotations

import math
import threading
import weakref
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import simpson

from .coupling import ReweightedCoupling
from .errors import DomainError, InputError, UndefinedScoreError
from .kernels import Dynamics
from .lattice import JumpOp

ETA_MIN = 1e-3
FD_STEP = 1e-5
_CACHE_ENTRIES = 256


@dataclass(frozen=True)
class MarginalDist:
    t: float
    probs: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


@dataclass(frozen=True)
class ScoreTable:
    """u_t(x, op_j(x)) as an (S, |M|) array; NaN rows mark zero-mass states."""

    t: float
    values: np.ndarray


@dataclass(frozen=True)
class ProjectedGenerator:
    t: float
    rates: np.ndarray


def _tkey(t: float) -> float:
    return round(float(t), 12)


def _check_time(t: float, upper: float = 1.0) -> None:
    if not (0.0 <= t <= upper + 1e-15):
        raise DomainError(f"time {t!r} outside [0, {upper}]")


class ExactEngine:
    """Ground-truth score machinery for one (coupling, dynamics) pair."""

    def __init__(self, rc: ReweightedCoupling):
        self.rc = rc
        self.dyn: Dynamics = rc.dynamics
        self.spec = rc.spec
        self.table = self.dyn.jump_table
        self._lock = threading.Lock()
        self._cache: OrderedDict = OrderedDict()

    # -- cached per-time quantities -------------------------------------

    def _get(self, kind: str, t: float, build: Callable[[], np.ndarray]) -> np.ndarray:
        key = (kind, _tkey(t))
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None:
                self._cache.move_to_end(key)
                return hit
        value = build()
        value.setflags(write=False)
        with self._lock:
            value = self._cache.setdefault(key, value)
            while len(self._cache) > _CACHE_ENTRIES:
                self._cache.popitem(last=False)
        return value

    def numerator(self, t: float) -> np.ndarray:
        _check_time(t)
        return self._get(
            "num", t, lambda: self.dyn.kernel(t).T @ self.rc.weights @ self.dyn.kernel(1.0 - t).T
        )

    def marginal(self, t: float) -> np.ndarray:
        def build():
            p = np.clip(np.diagonal(self.numerator(t)).copy(), 0.0, None)
            return p / p.sum()

        return self._get("marg", t, build)

    def score_matrix(self, t: float) -> np.ndarray:
        """u_t(x, y) for all pairs; rows of zero-mass states are NaN."""
        _check_time(t, 1.0 - ETA_MIN)

        def build():
            N = self.numerator(t)
            diag = np.diagonal(N).copy()
            with np.errstate(divide="ignore", invalid="ignore"):
                U = N / diag[:, None]
            U[diag <= 0] = np.nan
            return U

        return self._get("score", t, build)

    def jump_scores(self, t: float) -> np.ndarray:
        U = self.score_matrix(t)
        return self._get("jump", t, lambda: U[np.arange(self.spec.size)[:, None], self.table])

    def generator(self, t: float) -> np.ndarray:
        """Dense projected generator q(x, y) u_t(x, y); zero rows at zero-mass states."""

        def build():
            S = self.spec.size
            u = np.nan_to_num(self.jump_scores(t), nan=0.0)
            Q = np.zeros((S, S))
            rows = np.repeat(np.arange(S), self.table.shape[1])
            np.add.at(Q, (rows, self.table.ravel()), self.dyn.rate * u.ravel())
            Q[np.arange(S), np.arange(S)] = 0.0
            Q[np.arange(S), np.arange(S)] = -Q.sum(axis=1)
            return Q

        return self._get("gen", t, build)

    def bridge_conditional_second_moment(self, t: float) -> np.ndarray:
        """E[u^{(X1)}_t(x, op(x))^2 | X_t = x] as an (S, |M|) array."""
        _check_time(t, 1.0 - ETA_MIN)

        def build():
            Pt, Pr = self.dyn.kernel(t), self.dyn.kernel(1.0 - t)
            joint_w = Pt.T @ self.rc.weights  # [x, x1], times Pr[x, x1] gives the joint law
            diag = np.einsum("ij,ij->i", joint_w, Pr)
            out = np.empty(self.table.shape)
            for j in range(self.table.shape[1]):
                Py = Pr[self.table[:, j]]
                out[:, j] = np.einsum("ij,ij->i", joint_w, Py * Py / Pr)
            with np.errstate(divide="ignore", invalid="ignore"):
                out /= diag[:, None]
            out[diag <= 0] = np.nan
            return out

        return self._get("m2", t, build)


_ENGINES: "weakref.WeakKeyDictionary[ReweightedCoupling, ExactEngine]" = weakref.WeakKeyDictionary()
_ENGINES_LOCK = threading.Lock()


def engine_for(rc: ReweightedCoupling) -> ExactEngine:
    with _ENGINES_LOCK:
        eng = _ENGINES.get(rc)
        if eng is None:
            eng = _ENGINES[rc] = ExactEngine(rc)
        return eng


def _index(spec, state) -> int:
    if isinstance(state, (int, np.integer)):
        if not 0 <= state < spec.size:
            raise InputError(f"state index {state} out of range")
        return int(state)
    return spec.encode(state)


def _op_index(dyn: Dynamics, op) -> int:
    if isinstance(op, (int, np.integer)):
        return int(op)
    try:
        return dyn.ops.index(op)
    except ValueError:
        raise InputError(f"{op} is not a jump operator of {dyn.kind}") from None


# -- public operations ------------------------------------------------------


def interpolant_marginal(rc: ReweightedCoupling, t: float) -> MarginalDist:
    return MarginalDist(t, engine_for(rc).marginal(t))


def bridge_score(dyn: Dynamics, t: float, x1, x, op: JumpOp | int) -> float:
    """p_{1-t}(x1 | op(x)) / p_{1-t}(x1 | x)."""
    if not 0.0 <= t <= 1.0 - ETA_MIN:
        raise DomainError(f"bridge score needs t in [0, 1 - {ETA_MIN}], got {t!r}")
    spec = dyn.spec
    xi = _index(spec, x)
    y = dyn.jump_table[xi, _op_index(dyn, op)]
    P = dyn.kernel(1.0 - t)
    return float(P[y, _index(spec, x1)] / P[xi, _index(spec, x1)])


def bridge_score_matrix(dyn: Dynamics, t: float, x1) -> np.ndarray:
    """u^{(x1)}_t(x, y) for all state pairs, indexed [x, y]."""
    if not 0.0 <= t <= 1.0 - ETA_MIN:
        raise DomainError(f"bridge score needs t in [0, 1 - {ETA_MIN}], got {t!r}")
    col = dyn.kernel(1.0 - t)[:, _index(dyn.spec, x1)]
    return col[None, :] / col[:, None]


def markov_score(rc: ReweightedCoupling, t: float, x, op: JumpOp | int) -> float:
    eng = engine_for(rc)
    xi = _index(rc.spec, x)
    val = eng.jump_scores(t)[xi, _op_index(rc.dynamics, op)]
    if math.isnan(val):
        raise UndefinedScoreError(f"state {xi} carries no interpolant mass at t={t}")
    return float(val)


def score_table(rc: ReweightedCoupling, t: float) -> ScoreTable:
    return ScoreTable(t, engine_for(rc).jump_scores(t))


def projected_generator(rc: ReweightedCoupling, t: float) -> ProjectedGenerator:
    return ProjectedGenerator(t, engine_for(rc).generator(t))


def forward_evolve(
    p0,
    gen: Callable[[float], np.ndarray],
    t0: float,
    t1: float,
    snapshots: Sequence[float] = (),
    max_step: float = 1e-3,
) -> MarginalDist | list[MarginalDist]:
    """Integrate dp/dt = p Q_t with classical RK4.

    The step is ``min(max_step, (1 - t) / 50)``, shrinking towards the
    terminal singularity, and the vector is renormalised after every step.
    With ``snapshots`` the distributions at those times are returned as a
    list; otherwise the distribution at ``t1``.
    """
    if t1 > 1.0 - ETA_MIN + 1e-15:
        raise DomainError(f"cannot evolve past 1 - {ETA_MIN}, got t1={t1!r}")
    if t1 < t0:
        raise InputError("t1 must be >= t0")
    stops = sorted({float(s) for s in snapshots if t0 <= s <= t1} | {float(t1)})
    p = np.array(p0, dtype=float)
    t = float(t0)
    out: dict[float, np.ndarray] = {}
    if stops[0] == t:
        out[t] = p.copy()
    for stop in stops:
        while t < stop - 1e-15:
            dt = min(max_step, (1.0 - t) / 50.0, stop - t)
            k1 = p @ gen(t)
            k2 = (p + 0.5 * dt * k1) @ gen(t + 0.5 * dt)
            k3 = (p + 0.5 * dt * k2) @ gen(t + 0.5 * dt)
            k4 = (p + dt * k3) @ gen(t + dt)
            p = p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            np.clip(p, 0.0, None, out=p)
            p /= p.sum()
            t = stop if stop - (t + dt) < 1e-15 else t + dt
        out[stop] = p.copy()
    if snapshots:
        return [MarginalDist(s, out[float(s)]) for s in snapshots]
    return MarginalDist(t1, out[float(t1)])


def _a_operator(U: np.ndarray, p: np.ndarray, table: np.ndarray, j: int) -> np.ndarray:
    """sum over sigma' of A_t(x, u; sigma_j, sigma'), for every x."""
    x = np.arange(U.shape[0])
    sx = table[:, j]
    total = np.zeros(U.shape[0])
    for b in range(table.shape[1]):
        tx = table[:, b]
        tsx = table[sx, b]  # sigma'(sigma(x))
        ratio = p[tx] / p
        total += (
            U[x, sx] * U[x, tx]
            - U[x, tsx]
            + ratio * (U[tx, sx] - U[x, sx] * U[tx, x])
        )
    return total


def score_ode_residual(rc: ReweightedCoupling, t: float, x, op: JumpOp | int) -> float:
    """|d/dt u_t(x, op(x)) - lambda * sum_sigma' A_t(x, u; op, sigma')|."""
    if not 0.05 <= t <= 1.0 - ETA_MIN - FD_STEP:
        raise DomainError(f"t must lie in [0.05, 1 - {ETA_MIN}], got {t!r}")
    eng = engine_for(rc)
    xi, j = _index(rc.spec, x), _op_index(rc.dynamics, op)
    y = eng.table[xi, j]
    du = (eng.score_matrix(t + FD_STEP)[xi, y] - eng.score_matrix(t - FD_STEP)[xi, y]) / (2 * FD_STEP)
    rhs = rc.dynamics.rate * _a_operator(eng.score_matrix(t), eng.marginal(t), eng.table, j)[xi]
    return float(abs(du - rhs))


def _expected_b(U: np.ndarray, p: np.ndarray, table: np.ndarray, j: int) -> float:
    """E[sum_sigma' B_r(X, u; sigma_j, sigma')] under X ~ p."""
    x = np.arange(U.shape[0])
    sx = table[:, j]
    total = 0.0
    for b in range(table.shape[1]):
        tx = table[:, b]
        stx = table[tx, j]  # sigma(sigma'(x)), equal to sigma'(sigma(x))
        # p(x) * ratio(x) = p(sigma'(x)): keeps zero-mass states out of the division
        term = p * (U[x, tx] * U[tx, stx] - U[x, stx]) + p[tx] * (U[tx, sx] - U[x, sx] * U[tx, x])
        total += term.sum()
    return float(total)


def _expected_c(U: np.ndarray, p: np.ndarray, table: np.ndarray, j: int) -> float:
    x = np.arange(U.shape[0])
    sx = table[:, j]
    total = 0.0
    for b in range(table.shape[1]):
        tx = table[:, b]
        stx = table[tx, j]
        term = U[x, stx] * np.log(U[tx, stx] / U[x, sx]) + U[x, tx] * (U[x, sx] - U[tx, stx])
        total += (p * term).sum()
    return float(total)


def phi(a):
    """a log a - a + 1, extended by phi(0) = 1."""
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(a > 0, a * np.log(np.where(a > 0, a, 1.0)) - a + 1.0, 1.0)
    return out


def evolution_residuals(
    rc: ReweightedCoupling, s: float, t: float, op: JumpOp | int, nodes: int = 21
) -> tuple[float, float]:
    """Residuals of the unconditional score and entropy evolution identities on [s, t]."""
    if not 0.0 <= s <= t <= 1.0 - ETA_MIN:
        raise DomainError(f"need 0 <= s <= t <= 1 - {ETA_MIN}, got s={s!r}, t={t!r}")
    if s == t:
        return 0.0, 0.0
    eng = engine_for(rc)
    j = _op_index(rc.dynamics, op)
    lam = rc.dynamics.rate
    rows = np.arange(rc.spec.size)

    def moments(r):
        U, p = eng.score_matrix(r), eng.marginal(r)
        u = U[rows, eng.table[:, j]]
        mask = p > 0
        if np.any(np.isnan(U[mask])):
            raise UndefinedScoreError(f"score undefined on the support at t={r}")
        return float((p[mask] * u[mask]).sum()), float((p[mask] * phi(u[mask])).sum())

    def integrands(r):
        U, p = eng.score_matrix(r), eng.marginal(r)
        if np.any(np.isnan(U)):
            raise UndefinedScoreError(f"score undefined on some state at t={r}")
        return _expected_b(U, p, eng.table, j), _expected_c(U, p, eng.table, j)

    grid = np.linspace(s, t, nodes)
    vals = np.array([integrands(r) for r in grid])
    int_b = simpson(vals[:, 0], x=grid)
    int_c = simpson(vals[:, 1], x=grid)
    ut, ft = moments(t)
    us, fs = moments(s)
    return abs(ut - us - lam * int_b), abs(ft - fs - lam * int_c)
