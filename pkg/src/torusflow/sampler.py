"""Time grid, score models and the frozen-score CTMC sampler.

On each grid interval [t_k, t_{k+1}) the jump rate attached to operator
sigma is ``lambda * u_{t_k}(X_{t_k}, sigma(X_{t_k}))``: it is read once at the
left endpoint from the state held there, and stays attached to the operator
(not to a target state) until t_{k+1}, even after the walker has moved.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.linalg import expm

from .coupling import ReweightedCoupling
from .engine import engine_for
from .errors import CapacityError, InputError
from .kernels import DENSE_MAX_STATES, Dynamics
from .lattice import JumpOp
from .rng import stream_key, uniforms

CHUNK = 16384


@dataclass(frozen=True)
class TimeGrid:
    h: float
    eta: float
    points: tuple[float, ...]

    @property
    def K(self) -> int:
        return len(self.points) - 1

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.points)


def build_grid(h: float, eta: float) -> TimeGrid:
    """Geometric grid t_k = 1 - (1+h)^-k on [0, 1-eta], last point clipped to 1-eta."""
    if not 0.0 < h < 1.0:
        raise InputError(f"step parameter h must lie in (0, 1), got {h!r}")
    if not 1e-3 <= eta < 0.5:
        raise InputError(f"early stopping eta must lie in [1e-3, 0.5), got {eta!r}")
    K = max(1, math.ceil(math.log(1.0 / eta) / math.log1p(h) - 1e-12))
    pts = [1.0 - (1.0 + h) ** (-k) for k in range(K)]
    pts.append(1.0 - eta)
    return TimeGrid(h, eta, tuple(pts))


class ScoreModel(Protocol):
    def table(self, k: int, t: float) -> np.ndarray:
        """Scores u(x, sigma_j(x)) at grid point k for all states, shape (S, |M|)."""


class ExactScore:
    def __init__(self, rc: ReweightedCoupling):
        self.engine = engine_for(rc)

    def table(self, k, t):
        return self.engine.jump_scores(t)


class PerturbedScore:
    """Exact score times exp(gamma * g[x, j]).

    g is one standard-normal table drawn from ``seed`` and shared by every
    grid time, so the perturbation acts as a persistent model error rather
    than noise that averages out across intervals.
    """

    def __init__(self, rc: ReweightedCoupling, gamma: float, seed: int = 0):
        self.engine = engine_for(rc)
        self.gamma = float(gamma)
        self.seed = int(seed)
        self.noise = np.random.default_rng(self.seed).standard_normal(self.engine.table.shape)
        self.noise.setflags(write=False)

    def table(self, k, t):
        return self.engine.jump_scores(t) * np.exp(self.gamma * self.noise)


@dataclass(frozen=True)
class JumpEvent:
    time: float
    source: int
    op: int
    target: int


@dataclass
class PathSample:
    seed: int
    path_id: int
    initial: int
    final: int
    events: list[JumpEvent] = field(default_factory=list)


def _run_chunk(model, grid, dyn, init, path_ids, seed, record):
    table = dyn.jump_table
    lam = dyn.rate
    n = len(path_ids)
    keys = stream_key(seed, path_ids)
    ctr = np.ones(n, dtype=np.uint64)  # counter 0 is reserved for the initial draw
    state = np.array(init, dtype=np.int64)
    events = [] if record else None
    for k in range(grid.K):
        t0, t1 = grid.points[k], grid.points[k + 1]
        rates = lam * np.asarray(model.table(k, t0), dtype=float)[state]
        total = rates.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            cum = np.cumsum(rates, axis=1) / total[:, None]
        clock = np.full(n, t0)
        live = np.flatnonzero(total > 0)
        while live.size:
            u_hold = uniforms(keys[live], ctr[live])
            u_pick = uniforms(keys[live], ctr[live] + np.uint64(1))
            ctr[live] += np.uint64(2)
            clock[live] += -np.log1p(-u_hold) / total[live]
            hit = clock[live] < t1
            live = live[hit]
            if not live.size:
                break
            choice = np.minimum((cum[live] <= u_pick[hit][:, None]).sum(axis=1), table.shape[1] - 1)
            src = state[live]
            state[live] = table[src, choice]
            if record:
                for i, s, c, d_, tm in zip(live, src, choice, state[live], clock[live]):
                    events.append((int(i), JumpEvent(float(tm), int(s), int(c), int(d_))))
    return state, events


def sample_initial(mu0, seed: int, path_ids) -> np.ndarray:
    """Inverse-CDF draw from mu0 using counter 0 of each path stream."""
    cdf = np.cumsum(np.asarray(mu0, dtype=float))
    u = uniforms(stream_key(seed, path_ids), np.zeros(len(path_ids), dtype=np.uint64))
    return np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(cdf) - 1)


def simulate_path(model: ScoreModel, grid: TimeGrid, dyn: Dynamics, init, seed: int, path_id: int = 0) -> PathSample:
    """One path from a given initial state (index or coordinates), with its jump events."""
    x0 = init if isinstance(init, (int, np.integer)) else dyn.spec.encode(init)
    final, events = _run_chunk(model, grid, dyn, [x0], np.array([path_id]), seed, True)
    return PathSample(seed, path_id, int(x0), int(final[0]), [e for _, e in events])


def simulate_paths(
    model: ScoreModel,
    grid: TimeGrid,
    dyn: Dynamics,
    mu0,
    n_paths: int,
    seed: int,
    threads: int = 1,
    record: bool = False,
):
    """Run ``n_paths`` paths with initial states drawn from mu0.

    Returns ``(initial, final)`` index arrays, plus a list of
    ``(path_id, JumpEvent)`` in path order when ``record`` is set.
    """
    ids = np.arange(n_paths, dtype=np.int64)
    init = sample_initial(mu0, seed, ids) if n_paths else np.zeros(0, dtype=np.int64)
    chunks = [slice(a, min(a + CHUNK, n_paths)) for a in range(0, n_paths, CHUNK)]

    def work(sl):
        return _run_chunk(model, grid, dyn, init[sl], ids[sl], seed, record)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(sl) for sl in chunks]
    final = np.concatenate([r[0] for r in results]) if results else np.zeros(0, dtype=np.int64)
    if not record:
        return init, final
    events = []
    for sl, (_, ev) in zip(chunks, results):
        ev.sort(key=lambda item: (item[0], item[1].time))
        events.extend((int(ids[sl][i]), e) for i, e in ev)
    return init, final, events


def _axis_rows(rates: np.ndarray, ops: Sequence[JumpOp], m: int, d: int, h: float) -> list[np.ndarray]:
    """Per-axis m x m interval kernels for operator rates frozen at one start state."""
    kernels = []
    for axis in range(d):
        G = np.zeros((m, m))
        for r, op in zip(rates, ops):
            if op.axis == axis and r > 0:
                for c in range(m):
                    G[c, (c + op.shift) % m] += r
        G[np.arange(m), np.arange(m)] -= G.sum(axis=1)
        kernels.append(expm(h * G))
    return kernels


def algorithm_law(model: ScoreModel, grid: TimeGrid, dyn: Dynamics, mu0) -> np.ndarray:
    """Exact law at 1 - eta of the frozen-score sampler started from mu0.

    Within an interval the walker started at x runs a translation-invariant
    walk whose operators act on single axes, so its kernel factorises into
    per-axis m x m matrix exponentials combined by Kronecker products.
    """
    spec = dyn.spec
    if spec.size > DENSE_MAX_STATES:
        raise CapacityError(f"{spec.size} states exceeds the dense limit {DENSE_MAX_STATES}")
    law = np.array(mu0, dtype=float)
    coords = spec.coords
    ops = dyn.ops
    for k in range(grid.K):
        h = grid.points[k + 1] - grid.points[k]
        rates = dyn.rate * np.asarray(model.table(k, grid.points[k]), dtype=float)
        new = np.zeros_like(law)
        for x in np.flatnonzero(law > 0):
            ker = _axis_rows(rates[x], ops, spec.m, spec.d, h)
            row = ker[0][coords[x, 0]]
            for axis in range(1, spec.d):
                row = np.kron(ker[axis][coords[x, axis]], row)
            new += law[x] * row
        law = np.clip(new, 0.0, None)
        law /= law.sum()
    return law
