"""The torus Z_m^d, its index encoding, and the jump-operator families.

States are addressed by a little-endian mixed-radix index: coordinate 0 is the
least significant digit, so ``index = sum(coords[i] * m**i)``. Axes are
0-based throughout the code base.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import InputError

NNRW = "nnrw"
URW = "urw"
FAMILIES = (NNRW, URW)


@dataclass(frozen=True)
class LatticeSpec:
    m: int
    d: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 2:
            raise InputError(f"vocabulary size m must be an integer >= 2, got {self.m!r}")
        if int(self.d) != self.d or self.d < 1:
            raise InputError(f"dimension d must be an integer >= 1, got {self.d!r}")
        if self.m ** self.d > sys.maxsize:
            raise InputError(f"m^d = {self.m}^{self.d} does not fit a native index")

    @property
    def size(self) -> int:
        return self.m ** self.d

    @cached_property
    def strides(self) -> np.ndarray:
        return self.m ** np.arange(self.d, dtype=np.int64)

    @cached_property
    def coords(self) -> np.ndarray:
        """All states as an ``(S, d)`` coordinate array, row i decoding index i."""
        idx = np.arange(self.size, dtype=np.int64)
        return (idx[:, None] // self.strides[None, :]) % self.m

    def encode(self, coords: Sequence[int]) -> int:
        return encode(coords, self)

    def decode(self, index: int) -> tuple[int, ...]:
        return decode(index, self)

    def jump_ops(self, family: str) -> tuple["JumpOp", ...]:
        return jump_ops(self, family)

    @cached_property
    def _tables(self) -> dict:
        return {}

    def jump_table(self, family: str) -> np.ndarray:
        """``(S, |M|)`` array: entry ``[x, j]`` is the index of ``ops[j](x)``."""
        table = self._tables.get(family)
        if table is None:
            ops = self.jump_ops(family)
            table = np.empty((self.size, len(ops)), dtype=np.int64)
            for j, op in enumerate(ops):
                table[:, j] = op.apply_index(np.arange(self.size, dtype=np.int64), self)
            table.setflags(write=False)
            self._tables[family] = table
        return table


@dataclass(frozen=True)
class JumpOp:
    """Translation by ``shift`` (mod m) along ``axis``.

    NNRW operators are shift 1 (forward) and shift m-1 (backward); URW
    operators are every shift in 1..m-1.
    """

    family: str
    axis: int
    shift: int
    sign: int = 0  # +1 / -1 for NNRW, 0 for URW

    def apply(self, coords: Sequence[int], spec: LatticeSpec) -> tuple[int, ...]:
        out = list(coords)
        out[self.axis] = (out[self.axis] + self.shift) % spec.m
        return tuple(out)

    def apply_index(self, index, spec: LatticeSpec):
        """Vectorised action on state indices."""
        stride = spec.m ** self.axis
        c = (index // stride) % spec.m
        return index + (((c + self.shift) % spec.m) - c) * stride

    def inverse(self, spec: LatticeSpec) -> "JumpOp":
        if self.family == NNRW:
            return JumpOp(NNRW, self.axis, spec.m - self.shift, -self.sign)
        return JumpOp(URW, self.axis, spec.m - self.shift)

    @property
    def param(self) -> int:
        """Sign for NNRW, shift size for URW (the CSV ``jump_param`` field)."""
        return self.sign if self.family == NNRW else self.shift

    def __str__(self):
        if self.family == NNRW:
            return f"nnrw(axis={self.axis},{'+' if self.sign > 0 else '-'})"
        return f"urw(axis={self.axis},n={self.shift})"


def jump_ops(spec: LatticeSpec, family: str) -> tuple[JumpOp, ...]:
    """Operators in axis-major order: NNRW (l,+),(l,-); URW (l,n) with n ascending."""
    if family == NNRW:
        return tuple(
            op
            for axis in range(spec.d)
            for op in (JumpOp(NNRW, axis, 1, 1), JumpOp(NNRW, axis, spec.m - 1, -1))
        )
    if family == URW:
        return tuple(JumpOp(URW, axis, n) for axis in range(spec.d) for n in range(1, spec.m))
    raise InputError(f"unknown jump family {family!r}")


def encode(coords: Sequence[int], spec: LatticeSpec) -> int:
    if len(coords) != spec.d:
        raise InputError(f"expected {spec.d} coordinates, got {len(coords)}")
    index = 0
    for i, c in enumerate(coords):
        if int(c) != c or not 0 <= c < spec.m:
            raise InputError(f"coordinate {i} = {c!r} outside [0, {spec.m - 1}]")
        index += int(c) * spec.m ** i
    return index


def decode(index: int, spec: LatticeSpec) -> tuple[int, ...]:
    if not 0 <= index < spec.size:
        raise InputError(f"index {index} outside [0, {spec.size - 1}]")
    out = []
    for _ in range(spec.d):
        index, c = divmod(index, spec.m)
        out.append(c)
    return tuple(out)


def apply_jump(x: Sequence[int], op: JumpOp, spec: LatticeSpec) -> tuple[int, ...]:
    return op.apply(x, spec)


def hamming(x: Sequence[int], y: Sequence[int]) -> int:
    if len(x) != len(y):
        raise InputError(f"states of different dimension: {len(x)} vs {len(y)}")
    return sum(1 for a, b in zip(x, y) if a != b)


def hamming_matrix(spec: LatticeSpec) -> np.ndarray:
    c = spec.coords
    return (c[:, None, :] != c[None, :, :]).sum(axis=-1)
