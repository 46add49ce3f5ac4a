"""Couplings of two distributions on the torus, and their kernel reweighting."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .errors import CapacityError, InputError
from .kernels import DENSE_MAX_STATES, Dynamics
from .lattice import LatticeSpec

RENORM_TOL = 1e-6

COUPLING_SCHEMA = {
    "oneOf": [
        {
            "type": "object",
            "properties": {
                "type": {"const": "independent"},
                "mu0": {"type": "array", "items": {"type": "number"}},
                "mu1": {"type": "array", "items": {"type": "number"}},
            },
            "required": ["type", "mu0", "mu1"],
            "additionalProperties": False,
        },
        {
            "type": "object",
            "properties": {
                "type": {"const": "explicit"},
                "entries": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [
                            {"type": "integer", "minimum": 0},
                            {"type": "integer", "minimum": 0},
                            {"type": "number"},
                        ],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
            "required": ["type", "entries"],
            "additionalProperties": False,
        },
    ]
}

FILE_SCHEMA = {
    "type": "object",
    "properties": {
        "m": {"type": "integer", "minimum": 2},
        "d": {"type": "integer", "minimum": 1},
        "coupling": COUPLING_SCHEMA,
    },
    "required": ["m", "d", "coupling"],
}


@dataclass(frozen=True, eq=False)
class Coupling:
    """Joint law pi(x0, x1) as a dense S x S matrix indexed [x0, x1]."""

    spec: LatticeSpec
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        S = self.spec.size
        if w.shape != (S, S):
            raise InputError(f"coupling weights must have shape {(S, S)}, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise InputError("coupling weights must be finite and nonnegative")
        w = _renormalise(w, "coupling weights")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def mu0(self) -> np.ndarray:
        return self.weights.sum(axis=1)

    @property
    def mu1(self) -> np.ndarray:
        return self.weights.sum(axis=0)


@dataclass(frozen=True, eq=False)
class ReweightedCoupling:
    """pi(x0, x1) / p_1(x1 | x0), the mixing weights of the bridge mixture."""

    coupling: Coupling
    dynamics: Dynamics
    weights: np.ndarray

    @property
    def spec(self) -> LatticeSpec:
        return self.coupling.spec


def _renormalise(v: np.ndarray, what: str) -> np.ndarray:
    total = float(v.sum())
    if total <= 0:
        raise InputError(f"{what} has zero total mass")
    if abs(total - 1.0) > RENORM_TOL:
        raise InputError(f"{what} sums to {total!r}, more than {RENORM_TOL} away from 1")
    return v / total


def _prob_vector(v, S: int, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (S,):
        raise InputError(f"{what} must have length {S}, got shape {v.shape}")
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise InputError(f"{what} has a negative or non-finite entry")
    return _renormalise(v, what)


def _check_capacity(spec: LatticeSpec) -> None:
    if spec.size > DENSE_MAX_STATES:
        raise CapacityError(f"{spec.size} states exceeds the dense limit {DENSE_MAX_STATES}")


def independent_coupling(spec: LatticeSpec, mu0, mu1) -> Coupling:
    _check_capacity(spec)
    p0 = _prob_vector(mu0, spec.size, "mu0")
    p1 = _prob_vector(mu1, spec.size, "mu1")
    return Coupling(spec, np.outer(p0, p1))


def explicit_coupling(spec: LatticeSpec, entries) -> Coupling:
    _check_capacity(spec)
    S = spec.size
    w = np.zeros((S, S))
    for n, entry in enumerate(entries):
        x0, x1, weight = entry
        if not (0 <= x0 < S and 0 <= x1 < S):
            raise InputError(f"entries[{n}]: state index out of range [0, {S - 1}]")
        if weight < 0:
            raise InputError(f"entries[{n}]: negative weight {weight!r}")
        w[x0, x1] += weight
    return Coupling(spec, w)


def point_coupling(spec: LatticeSpec, x0: int, x1: int) -> Coupling:
    return explicit_coupling(spec, [(x0, x1, 1.0)])


def coupling_from_dict(spec: LatticeSpec, obj: dict) -> Coupling:
    """Build a coupling from the ``{"type": ...}`` object of the file schema."""
    _validate(obj, COUPLING_SCHEMA)
    if obj["type"] == "independent":
        return independent_coupling(spec, obj["mu0"], obj["mu1"])
    return explicit_coupling(spec, obj["entries"])


def coupling_to_dict(c: Coupling) -> dict:
    nz = np.argwhere(c.weights > 0)
    return {
        "m": c.spec.m,
        "d": c.spec.d,
        "coupling": {
            "type": "explicit",
            "entries": [[int(a), int(b), float(c.weights[a, b])] for a, b in nz],
        },
    }


def load_coupling(path) -> Coupling:
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    _validate(obj, FILE_SCHEMA, str(path))
    return coupling_from_dict(LatticeSpec(obj["m"], obj["d"]), obj["coupling"])


def _validate(obj, schema, where: str = "coupling") -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(obj), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"{where}: field {loc}: {err.message}")


def reweight(c: Coupling, dyn: Dynamics) -> ReweightedCoupling:
    if dyn.spec != c.spec:
        raise InputError("coupling and dynamics live on different lattices")
    w = c.weights / dyn.kernel(1.0)
    w.setflags(write=False)
    return ReweightedCoupling(c, dyn, w)
