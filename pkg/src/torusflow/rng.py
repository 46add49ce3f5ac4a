"""Counter-based uniforms: u = hash(seed, stream, counter).

Each Monte Carlo path owns stream ``path_id`` and advances its own counter,
so draws do not depend on batching or thread count. The mixer is the
SplitMix64 finaliser, applied in vectorised uint64 arithmetic.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z ^ (z >> np.uint64(30))
    z = z * _M1
    z = z ^ (z >> np.uint64(27))
    z = z * _M2
    return z ^ (z >> np.uint64(31))


def stream_key(seed: int, stream) -> np.ndarray:
    s = np.asarray(stream, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = _mix(np.uint64(seed & _MASK64) + _GOLDEN)
        return _mix(base ^ _mix((s + np.uint64(1)) * _GOLDEN))


def uniforms(key, counter) -> np.ndarray:
    """Uniforms in [0, 1) with 53 random bits, one per (key, counter) pair."""
    k = np.asarray(key, dtype=np.uint64)
    c = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(k + (c + np.uint64(1)) * _GOLDEN)
    return (z >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
