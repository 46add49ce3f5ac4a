"""Base generators and exact transition kernels for the NNRW and URW walks.

The nearest-neighbour walk moves each coordinate by a Skellam(t/2, t/2)
displacement wrapped onto Z_m; its kernel is a product of 1-D wrapped Skellam
pmfs, written through modified Bessel functions of the first kind. The uniform
walk kernel has the closed form ``a_t^d * alpha_t^{d_H(x, y)}``.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CapacityError, DomainError, InputError
from .lattice import FAMILIES, NNRW, URW, JumpOp, LatticeSpec

DENSE_MAX_STATES = 4096
BESSEL_MAX_TERMS = 500
BESSEL_REL_TOL = 1e-16
WRAP_REL_TOL = 1e-18
MEMO_BYTES = 256 * 2**20


def bessel_i(b: int, z: float) -> float:
    """Modified Bessel function I_b(z) of integer order by its power series.

    Summation stops once a term drops below 1e-16 of the running sum. For
    z <= 2 that happens within ~30 terms.
    """
    if b < 0 or int(b) != b:
        raise DomainError(f"order must be a nonnegative integer, got {b!r}")
    if z < 0:
        raise DomainError(f"argument must be >= 0, got {z!r}")
    if z == 0.0:
        return 1.0 if b == 0 else 0.0
    half = 0.5 * z
    if half == 0.0:
        return 1.0 if b == 0 else 0.0
    # first term (z/2)^b / b!, in log space so large b does not overflow
    term = math.exp(b * math.log(half) - math.lgamma(b + 1))
    if term == 0.0:
        return 0.0
    q = half * half
    total = term
    for n in range(1, BESSEL_MAX_TERMS):
        term *= q / (n * (n + b))
        total += term
        if term < BESSEL_REL_TOL * total:
            break
    return total


def wrapped_skellam(a: int, t: float, m: int) -> float:
    """P(S_t = a mod m) for S_t ~ Skellam(t/2, t/2), i.e. sum_k e^{-t} I_{|a+km|}(t)."""
    if t < 0:
        raise DomainError(f"duration must be >= 0, got {t!r}")
    a = a % m
    if t == 0.0:
        return 1.0 if a == 0 else 0.0
    total = 0.0
    # two monotone branches of orders: a, a+m, a+2m, ... and m-a, 2m-a, ...
    for order in (a, m - a):
        while True:
            term = bessel_i(order, t)
            total += term
            if term <= WRAP_REL_TOL * total:
                break
            order += m
    return math.exp(-t) * total


def _check_duration(t: float, strict: bool) -> None:
    if not np.isfinite(t) or t < 0 or (strict and t > 1):
        raise InputError(f"duration t must lie in [0, 1], got {t!r}")


@dataclass(frozen=True, eq=False)
class Dynamics:
    """A base random walk on the torus: kind is ``"nnrw"`` or ``"urw"``."""

    kind: str
    spec: LatticeSpec
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _memo: OrderedDict = field(default_factory=OrderedDict, repr=False)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise InputError(f"dynamics must be one of {FAMILIES}, got {self.kind!r}")

    @property
    def rate(self) -> float:
        """Per-operator jump rate lambda(m): 1/2 for NNRW, 1/m for URW."""
        return 0.5 if self.kind == NNRW else 1.0 / self.spec.m

    @property
    def ops(self) -> tuple[JumpOp, ...]:
        return self.spec.jump_ops(self.kind)

    @property
    def jump_table(self) -> np.ndarray:
        return self.spec.jump_table(self.kind)

    @property
    def diagonal(self) -> float:
        return -self.rate * len(self.ops)

    @cached_property
    def generator(self) -> np.ndarray:
        """Dense generator. Operators landing on the same target add their rates."""
        _require_dense(self.spec)
        S = self.spec.size
        Q = np.zeros((S, S))
        rows = np.arange(S)
        for j in range(len(self.ops)):
            np.add.at(Q, (rows, self.jump_table[:, j]), self.rate)
        Q[rows, rows] = self.diagonal
        Q.setflags(write=False)
        return Q

    def axis_generator(self) -> np.ndarray:
        """The m x m generator of one coordinate."""
        m = self.spec.m
        G = np.zeros((m, m))
        for op in self.ops:
            if op.axis == 0:
                for c in range(m):
                    G[c, (c + op.shift) % m] += self.rate
        G[np.arange(m), np.arange(m)] -= G.sum(axis=1)
        return G

    def axis_kernel(self, t: float, strict: bool = True) -> np.ndarray:
        """m x m one-coordinate kernel at duration t (circulant)."""
        _check_duration(t, strict)
        m = self.spec.m
        if self.kind == NNRW:
            first = np.array([wrapped_skellam(a, t, m) for a in range(m)])
        else:
            e = math.exp(-t)
            first = np.full(m, (1.0 - e) / m)
            first[0] = (1.0 + (m - 1) * e) / m
        idx = (np.arange(m)[None, :] - np.arange(m)[:, None]) % m
        return first[idx]

    def kernel(self, t: float, strict: bool = True) -> np.ndarray:
        """Dense S x S kernel p_t(y|x) indexed [x, y]; memoised per t."""
        _check_duration(t, strict)
        key = round(float(t), 12)
        with self._lock:
            K = self._memo.get(key)
            if K is not None:
                self._memo.move_to_end(key)
                return K
        _require_dense(self.spec)
        one = self.axis_kernel(t, strict)
        K = one
        # little-endian encoding: higher axes are the outer Kronecker factors
        for _ in range(self.spec.d - 1):
            K = np.kron(one, K)
        K.setflags(write=False)
        with self._lock:
            K = self._memo.setdefault(key, K)
            budget = max(4, MEMO_BYTES // K.nbytes)
            while len(self._memo) > budget:
                self._memo.popitem(last=False)
        return K


def _require_dense(spec: LatticeSpec) -> None:
    if spec.size > DENSE_MAX_STATES:
        raise CapacityError(f"{spec.size} states exceeds the dense limit {DENSE_MAX_STATES}")


def _coords(spec: LatticeSpec, x) -> tuple[int, ...]:
    if isinstance(x, (int, np.integer)):
        return spec.decode(int(x))
    return tuple(int(c) for c in x)


def generator_rate(dyn: Dynamics, x, y) -> float:
    """q(x, y); states given as indices or coordinate tuples."""
    x, y = _coords(dyn.spec, x), _coords(dyn.spec, y)
    if tuple(x) == tuple(y):
        return dyn.diagonal
    hits = sum(1 for op in dyn.ops if op.apply(x, dyn.spec) == tuple(y))
    return dyn.rate * hits


def transition_prob(dyn: Dynamics, t: float, x, y, strict: bool = True) -> float:
    """p_t(y|x) by the closed forms, without building dense tables."""
    _check_duration(t, strict)
    m = dyn.spec.m
    x, y = _coords(dyn.spec, x), _coords(dyn.spec, y)
    if dyn.kind == NNRW:
        out = 1.0
        for xi, yi in zip(x, y):
            out *= wrapped_skellam(yi - xi, t, m)
        return out
    e = math.exp(-t)
    alpha = (1.0 - e) / (1.0 + (m - 1) * e)
    dh = sum(1 for xi, yi in zip(x, y) if xi != yi)
    base = ((1.0 + (m - 1) * e) / m) ** dyn.spec.d
    return base * alpha ** dh if dh else base


def urw_alpha(t: float, m: int) -> float:
    e = math.exp(-t)
    return (1.0 - e) / (1.0 + (m - 1) * e)


def kolmogorov_residual(dyn: Dynamics, t: float, x: int, step: float = 1e-5) -> float:
    """max_y |d/dt p_t(y|x) - (p_t(.|x) Q)(y)|, derivative by central difference."""
    if not 1e-3 <= t <= 1 - 1e-3:
        raise DomainError(f"t must lie in [1e-3, 1 - 1e-3], got {t!r}")
    dp = (dyn.kernel(t + step)[x] - dyn.kernel(t - step)[x]) / (2 * step)
    rhs = dyn.kernel(t)[x] @ dyn.generator
    return float(np.max(np.abs(dp - rhs)))
