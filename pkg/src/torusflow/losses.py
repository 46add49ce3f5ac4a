"""Score-entropy and squared-rate training losses, evaluated exactly.

Expectations over X_{t_k} are finite sums weighted by the interpolant
marginal; states with zero mass contribute nothing and get no gradient.
A parameter table theta[k, x, j] models u_{t_k}(x, sigma_j(x)) and is stored
as free log-rates so positivity is structural.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coupling import ReweightedCoupling
from .engine import engine_for, phi
from .errors import InputError, NumericalError
from .sampler import TimeGrid, build_grid

log = logging.getLogger(__name__)


@dataclass
class TabularScore:
    grid: TimeGrid
    log_theta: np.ndarray  # (K, S, |M|)

    @property
    def theta(self) -> np.ndarray:
        return np.exp(self.log_theta)

    def table(self, k, t):
        return np.exp(self.log_theta[k])

    @classmethod
    def from_values(cls, grid: TimeGrid, theta) -> "TabularScore":
        theta = np.asarray(theta, dtype=float)
        if np.any(~np.isfinite(theta)) or np.any(theta <= 0):
            raise InputError("tabular score entries must be finite and positive")
        return cls(grid, np.log(theta))

    def to_json(self) -> dict:
        K, S, M = self.log_theta.shape
        theta = self.theta
        return {
            "grid": {"h": self.grid.h, "eta": self.grid.eta},
            "theta": [
                [k, x, j, float(theta[k, x, j])] for k in range(K) for x in range(S) for j in range(M)
            ],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path, n_states: int, n_ops: int) -> "TabularScore":
        obj = json.loads(Path(path).read_text())
        try:
            grid = build_grid(obj["grid"]["h"], obj["grid"]["eta"])
            rows = obj["theta"]
        except (KeyError, TypeError) as exc:
            raise InputError(f"{path}: malformed tabular score file ({exc})") from exc
        theta = np.full((grid.K, n_states, n_ops), np.nan)
        for n, row in enumerate(rows):
            try:
                k, x, j, v = row
                theta[int(k), int(x), int(j)] = v
            except (ValueError, IndexError, TypeError) as exc:
                raise InputError(f"{path}: theta[{n}] = {row!r} is invalid") from exc
        if np.isnan(theta).any():
            raise InputError(f"{path}: theta table is incomplete")
        return cls.from_values(grid, theta)


@dataclass
class LossReport:
    l_entropy: float
    l_two: float
    l_total: float
    l_tractable: float
    per_interval: np.ndarray = field(repr=False, default=None)  # (K, 2): entropy, l2 parts


class LossProblem:
    """Exact marginals, scores and bridge moments on a grid, shared by all losses."""

    def __init__(self, rc: ReweightedCoupling, grid: TimeGrid):
        eng = engine_for(rc)
        self.rc, self.grid = rc, grid
        self.lam = rc.dynamics.rate
        pts = grid.points[:-1]
        self.h = grid.steps
        self.p = np.array([eng.marginal(t) for t in pts])
        self.mask = self.p > 0
        self.u = np.array([eng.jump_scores(t) for t in pts])
        self.m2 = np.array([eng.bridge_conditional_second_moment(t) for t in pts])
        # zero-mass states never enter a sum; give them harmless placeholders
        self.u[~self.mask] = 1.0
        self.m2[~self.mask] = 1.0
        self.weight = self.h[:, None] * self.p  # (K, S)

    @property
    def shape(self):
        return self.u.shape

    def exact(self) -> TabularScore:
        return TabularScore(self.grid, np.log(self.u))

    def _theta(self, model) -> np.ndarray:
        """Accepts a TabularScore or a raw positive (K, S, |M|) array."""
        if isinstance(model, TabularScore):
            theta = np.exp(model.log_theta)
        else:
            theta = np.asarray(model, dtype=float)
        if theta.shape != self.shape:
            raise InputError(f"theta shape {theta.shape} does not match {self.shape}")
        live = np.broadcast_to(self.mask[:, :, None], theta.shape)
        if not np.all(np.isfinite(theta[live])) or np.any(theta[live] <= 0):
            k, x, j = np.argwhere(live & ~(np.isfinite(theta) & (theta > 0)))[0]
            raise InputError(f"theta must be finite and positive, bad entry at (k={k}, x={x}, op={j})")
        return np.where(live, theta, 1.0)

    def entropy_terms(self, theta: np.ndarray) -> np.ndarray:
        lam, u = self.lam, self.u
        return lam * theta * phi(u / theta)

    def l2_terms(self, theta: np.ndarray) -> np.ndarray:
        return (self.lam * (theta - self.u)) ** 2

    def _reduce(self, terms: np.ndarray) -> np.ndarray:
        return np.einsum("ks,ksj->k", self.weight, terms)

    def report(self, model: TabularScore) -> LossReport:
        theta = self._theta(model)
        le = self._reduce(self.entropy_terms(theta))
        l2 = self._reduce(self.l2_terms(theta))
        return LossReport(
            float(le.sum()),
            float(l2.sum()),
            float(le.sum() + l2.sum()),
            self.tractable(model),
            np.stack([le, l2], axis=1),
        )

    def entropy(self, model: TabularScore) -> float:
        return float(self._reduce(self.entropy_terms(self._theta(model))).sum())

    def l2(self, model: TabularScore) -> float:
        return float(self._reduce(self.l2_terms(self._theta(model))).sum())

    def total(self, model: TabularScore) -> float:
        theta = self._theta(model)
        return float(self._reduce(self.entropy_terms(theta) + self.l2_terms(theta)).sum())

    def tractable(self, model: TabularScore) -> float:
        """The bridge-rate form; differs from ``total`` by a theta-independent constant."""
        lam, u, m2 = self.lam, self.u, self.m2
        theta = self._theta(model)
        terms = (
            -lam * u * np.log(lam * theta)
            + lam * theta
            + lam**2 * (theta**2 - 2.0 * theta * u + m2)
        )
        return float(self._reduce(terms).sum())

    def gradient(self, model: TabularScore) -> np.ndarray:
        """d total / d log_theta."""
        lam, u = self.lam, self.u
        theta = self._theta(model)
        g = lam * (theta - u) + 2.0 * lam**2 * (theta - u) * theta
        return self.weight[:, :, None] * g


def model_theta(model, grid: TimeGrid) -> np.ndarray:
    """Tabulate any score model on the grid's left endpoints as a (K, S, |M|) array."""
    return np.array([model.table(k, t) for k, t in enumerate(grid.points[:-1])], dtype=float)


def tractable_loss_mc(problem: LossProblem, model, n: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of the tractable loss and its standard error.

    Each sample draws (x0, x1) from the coupling, a grid index k with
    probability h_k / sum(h), then X_{t_k} from the normalised pointwise
    bridge density p_t(x | x0) p_{1-t}(x1 | x) / p_1(x1 | x0).
    """
    theta = problem._theta(model)
    rc, grid, lam = problem.rc, problem.grid, problem.lam
    dyn = rc.dynamics
    rng = np.random.default_rng(seed)
    S = rc.spec.size
    flat = rc.coupling.weights.ravel()
    pairs = rng.choice(flat.size, size=n, p=flat / flat.sum())
    x0s, x1s = np.divmod(pairs, S)
    hs = problem.h
    ks = rng.choice(len(hs), size=n, p=hs / hs.sum())
    vals = np.empty(n)
    table = dyn.jump_table
    for i, (x0, x1, k) in enumerate(zip(x0s, x1s, ks)):
        t = grid.points[k]
        Pt, Pr = dyn.kernel(t), dyn.kernel(1.0 - t)
        bridge = Pt[x0] * Pr[:, x1]
        x = rng.choice(S, p=bridge / bridge.sum())
        q_bridge = lam * Pr[table[x], x1] / Pr[x, x1]
        q_theta = lam * theta[k, x]
        terms = -q_bridge * np.log(q_theta) + q_theta + (q_theta - q_bridge) ** 2
        vals[i] = hs.sum() * terms.sum()
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else math.inf


def loss_entropy(model: TabularScore, rc: ReweightedCoupling, grid: TimeGrid | None = None) -> float:
    return LossProblem(rc, grid or model.grid).entropy(model)


def loss_l2(model: TabularScore, rc: ReweightedCoupling, grid: TimeGrid | None = None) -> float:
    return LossProblem(rc, grid or model.grid).l2(model)


def loss_total(model: TabularScore, rc: ReweightedCoupling, grid: TimeGrid | None = None) -> float:
    return LossProblem(rc, grid or model.grid).total(model)


def loss_tractable(model: TabularScore, rc: ReweightedCoupling, grid: TimeGrid | None = None) -> float:
    return LossProblem(rc, grid or model.grid).tractable(model)


def epsilon_tilde(model: TabularScore, rc: ReweightedCoupling, grid: TimeGrid | None = None) -> float:
    return math.sqrt(loss_total(model, rc, grid))


def train_tabular(
    problem: LossProblem,
    init: TabularScore,
    lr: float,
    steps: int,
    grad_tol: float = 1e-9,
    max_halvings: int = 30,
    precondition: bool = True,
) -> tuple[TabularScore, list[LossReport]]:
    """Full-batch gradient descent on the total loss in log-rate coordinates.

    Each step starts from ``lr`` and is retried with half the rate, up to
    ``max_halvings`` times, while it would raise the loss. With
    ``precondition`` the gradient is divided by the expectation weight
    h_k * p_k(x) * lambda of its entry, which removes the spread in curvature
    that the marginal weights otherwise put across entries. Stops early once
    the raw gradient norm drops to ``grad_tol``.
    """
    if not lr > 0:
        raise InputError(f"learning rate must be positive, got {lr!r}")
    if steps < 1:
        raise InputError(f"steps must be >= 1, got {steps!r}")
    w = init.log_theta.copy()
    model = TabularScore(init.grid, w)
    history = [problem.report(model)]
    current = history[0].l_total
    for step in range(steps):
        g = problem.gradient(model)
        bad = ~np.isfinite(g)
        if bad.any():
            k, x, j = np.argwhere(bad)[0]
            raise NumericalError(f"non-finite gradient at (k={k}, x={x}, op={j})")
        if float(np.sqrt((g * g).sum())) <= grad_tol:
            break
        direction = g
        if precondition:
            scale = problem.lam * problem.weight[:, :, None]
            direction = np.divide(g, scale, out=np.zeros_like(g), where=scale > 0)
        rate = lr
        for _ in range(max_halvings + 1):
            trial = TabularScore(init.grid, w - rate * direction)
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    value = problem.total(trial)
            except InputError:  # step overflowed a rate
                value = math.inf
            if value <= current:
                break
            rate *= 0.5
        else:
            log.info("backtracking exhausted at step %d", step)
            break
        w = trial.log_theta
        model = trial
        current = value
        history.append(problem.report(model))
    return model, history
