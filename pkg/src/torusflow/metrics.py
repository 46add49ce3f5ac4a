"""Divergences between finite distributions and empirical laws."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .errors import InputError


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InputError(f"distributions of different size: {p.shape} vs {q.shape}")
    return p, q


def kl(p, q) -> float:
    """KL(p | q) = sum p log(p/q) over the support of p; inf if p is not << q."""
    p, q = _pair(p, q)
    support = p > 0
    if np.any(q[support] <= 0):
        return math.inf
    ps, qs = p[support], q[support]
    return max(0.0, float(np.sum(ps * np.log(ps / qs))))


def tv(p, q) -> float:
    p, q = _pair(p, q)
    return 0.5 * float(np.abs(p - q).sum())


def pinsker_holds(p, q, slack: float = 1e-12) -> bool:
    return tv(p, q) <= math.sqrt(kl(p, q) / 2.0) + slack


@dataclass(frozen=True)
class EmpiricalDist:
    counts: np.ndarray

    def __post_init__(self):
        if self.total <= 0:
            raise InputError("empirical distribution needs at least one sample")

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))

    @property
    def probs(self) -> np.ndarray:
        return self.counts / self.total

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.probs, dtype=dtype)


def empirical(samples, n_states: int) -> EmpiricalDist:
    return EmpiricalDist(np.bincount(np.asarray(samples, dtype=np.int64), minlength=n_states))


def chi2_pvalue(emp: EmpiricalDist, probs, min_expected: float = 5.0) -> float:
    """Pearson goodness-of-fit p-value; cells with small expectation are pooled."""
    probs = np.asarray(probs, dtype=float)
    expected = probs * emp.total
    big = expected >= min_expected
    obs = list(emp.counts[big])
    exp = list(expected[big])
    if (~big).any():
        rest_e = expected[~big].sum()
        rest_o = emp.counts[~big].sum()
        if rest_e > 0:
            obs.append(rest_o)
            exp.append(rest_e)
        elif rest_o > 0:
            return 0.0
    if len(obs) < 2:
        return 1.0
    exp = np.array(exp)
    exp *= np.sum(obs) / exp.sum()
    return float(stats.chisquare(obs, exp).pvalue)
