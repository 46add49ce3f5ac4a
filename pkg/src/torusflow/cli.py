"""Experiment driver.

Usage: ``torusflow <verify|sample|sweep|train|kernels-check> --config cfg.json --out DIR``.
Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from .coupling import COUPLING_SCHEMA, coupling_from_dict, reweight
from .engine import engine_for
from .errors import CapacityError, InputError
from .kernels import DENSE_MAX_STATES, Dynamics
from .lattice import LatticeSpec
from .losses import LossProblem, TabularScore, model_theta, tractable_loss_mc, train_tabular
from .metrics import kl, tv
from .sampler import ExactScore, PerturbedScore, algorithm_law, build_grid, simulate_paths
from .verify import instance_checks, kernel_checks

log = logging.getLogger("torusflow")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

CONFIG_SCHEMA = {
    "type": "object",
    "properties": {
        "dynamics": {"enum": ["nnrw", "urw"]},
        "m": {"type": "integer", "minimum": 2},
        "d": {"type": "integer", "minimum": 1},
        "coupling": COUPLING_SCHEMA,
        "h": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "eta": {"type": "number", "minimum": 1e-3, "exclusiveMaximum": 0.5},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "paths": {"type": "integer", "minimum": 0},
        "score": {"type": "string", "pattern": r"^(exact|tabular:.+|perturbed:[0-9.eE+-]+)$"},
        "sweep": {
            "type": "object",
            "properties": {
                "h": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "eta": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "gamma": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
            },
            "additionalProperties": False,
        },
        "train": {
            "type": "object",
            "properties": {
                "lr": {"type": "number"},
                "steps": {"type": "integer"},
                "init_gamma": {"type": "number", "minimum": 0},
                "precondition": {"type": "boolean"},
                "mc_samples": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "required": ["dynamics", "m", "d"],
    "additionalProperties": False,
}

DEFAULT_CONFIG = {"dynamics": "urw", "m": 3, "d": 2, "h": 0.1, "eta": 0.05, "seed": 0, "paths": 1000, "score": "exact"}


def load_config(path) -> dict:
    if path is None:
        cfg = dict(DEFAULT_CONFIG)
    else:
        try:
            cfg = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    errors = sorted(jsonschema.Draft202012Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        loc = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise InputError(f"config field {loc}: {err.message}")
    for key, val in DEFAULT_CONFIG.items():
        cfg.setdefault(key, val)
    if cfg["m"] ** cfg["d"] > DENSE_MAX_STATES:
        raise InputError(f"m^d = {cfg['m'] ** cfg['d']} exceeds {DENSE_MAX_STATES} states")
    return cfg


class Instance:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.spec = LatticeSpec(cfg["m"], cfg["d"])
        self.dyn = Dynamics(cfg["dynamics"], self.spec)
        S = self.spec.size
        coupling = cfg.get("coupling") or {"type": "independent", "mu0": [1.0 / S] * S, "mu1": [1.0 / S] * S}
        self.coupling = coupling_from_dict(self.spec, coupling)
        self.rc = reweight(self.coupling, self.dyn)
        self.seed = int(cfg["seed"])

    def model(self, score: str, grid=None):
        """Score model plus the grid it is meant for."""
        if score == "exact":
            return ExactScore(self.rc), grid
        kind, _, arg = score.partition(":")
        if kind == "perturbed":
            return PerturbedScore(self.rc, float(arg), self.seed), grid
        table = TabularScore.load(arg, self.spec.size, len(self.dyn.ops))
        return table, table.grid


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "inf" if math.isinf(v) and v > 0 else repr(float(v))
    return str(v)


def _write_csv(path: Path, seed: int, header: list[str], rows) -> None:
    buf = io.StringIO()
    buf.write(f"# seed={seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_csv(path) -> list[dict]:
    """Parse a CSV written by this tool, skipping ``#`` header comments."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def cmd_verify(cfg: dict, out: Path, threads: int) -> int:
    inst = Instance(cfg)
    checks = instance_checks(inst.rc, cfg["eta"], inst.seed)
    return _report(checks, out / "verify_report.json", cfg)


def cmd_kernels_check(cfg: dict, out: Path, threads: int) -> int:
    inst = Instance(cfg)
    return _report(kernel_checks(inst.dyn, inst.seed), out / "kernels_report.json", cfg)


def _report(checks, path: Path, cfg: dict) -> int:
    ok = all(c.passed for c in checks)
    report = {"seed": cfg["seed"], "passed": ok, "checks": [c.as_dict() for c in checks]}
    path.write_text(json.dumps(report, indent=2))
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.value:.3e} (bound {c.bound:.3e})")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_sample(cfg: dict, out: Path, threads: int, events: bool = False) -> int:
    inst = Instance(cfg)
    model, grid = inst.model(cfg["score"], build_grid(cfg["h"], cfg["eta"]))
    res = simulate_paths(model, grid, inst.dyn, inst.coupling.mu0, cfg["paths"], inst.seed, threads, record=events)
    final = res[1]
    _write_csv(out / "final_states.csv", inst.seed, ["path_id", "final_index"], enumerate(final.tolist()))
    if events:
        ops = inst.dyn.ops
        rows = (
            (pid, e.time, e.source, ops[e.op].family, ops[e.op].axis, ops[e.op].param, e.target)
            for pid, e in res[2]
        )
        header = ["path_id", "time", "from_index", "jump_family", "jump_axis", "jump_param", "to_index"]
        _write_csv(out / "events.csv", inst.seed, header, rows)
    return EXIT_OK


SWEEP_HEADER = ["h", "eta", "gamma", "eps_tilde", "K", "kl", "tv_early", "tv_target", "runtime_ms"]


def sweep_row(inst: Instance, h: float, eta: float, gamma: float) -> list:
    start = time.perf_counter()
    try:
        grid = build_grid(h, eta)
        model = PerturbedScore(inst.rc, gamma, inst.seed)
        problem = LossProblem(inst.rc, grid)
        eps = math.sqrt(problem.total(model_theta(model, grid)))
        law = algorithm_law(model, grid, inst.dyn, inst.coupling.mu0)
    except CapacityError as exc:
        log.warning("row h=%s eta=%s gamma=%s skipped: %s", h, eta, gamma, exc)
        return [h, eta, gamma] + ["skipped"] * 6
    eng = engine_for(inst.rc)
    early, target = eng.marginal(1 - eta), eng.marginal(1.0)
    ms = (time.perf_counter() - start) * 1e3
    return [h, eta, gamma, eps, grid.K, kl(early, law), tv(early, law), tv(law, target), ms]


def cmd_sweep(cfg: dict, out: Path, threads: int) -> int:
    sweep = cfg.get("sweep") or {}
    hs = sweep.get("h", [cfg["h"]])
    etas = sweep.get("eta", [cfg["eta"]])
    gammas = sweep.get("gamma", [0.0])
    for eta in etas:
        if not 1e-3 <= eta < 0.5:
            raise InputError(f"sweep eta {eta!r} outside [1e-3, 0.5)")
    for h in hs:
        if not 0 < h < 1:
            raise InputError(f"sweep h {h!r} outside (0, 1)")
    inst = Instance(cfg)
    combos = list(itertools.product(hs, etas, gammas))
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        rows = list(pool.map(lambda c: sweep_row(inst, *c), combos))
    _write_csv(out / "sweep.csv", inst.seed, SWEEP_HEADER, rows)
    return EXIT_OK


def cmd_train(cfg: dict, out: Path, threads: int) -> int:
    tcfg = {"lr": 1.0, "steps": 500, "init_gamma": 0.5, "precondition": True, "mc_samples": 0}
    tcfg.update(cfg.get("train") or {})
    if not tcfg["lr"] > 0:
        raise InputError(f"train.lr must be positive, got {tcfg['lr']!r}")
    if tcfg["steps"] < 1:
        raise InputError(f"train.steps must be >= 1, got {tcfg['steps']!r}")
    inst = Instance(cfg)
    grid = build_grid(cfg["h"], cfg["eta"])
    problem = LossProblem(inst.rc, grid)
    init_model = PerturbedScore(inst.rc, tcfg["init_gamma"], inst.seed)
    init = TabularScore(grid, np.log(problem._theta(model_theta(init_model, grid))))
    model, history = train_tabular(problem, init, tcfg["lr"], tcfg["steps"], precondition=tcfg["precondition"])
    model.save(out / "theta.json")
    _write_csv(
        out / "loss_history.csv",
        inst.seed,
        ["step", "l_entropy", "l_two", "l_total"],
        ((i, r.l_entropy, r.l_two, r.l_total) for i, r in enumerate(history)),
    )
    summary = {"seed": inst.seed, "steps_run": len(history) - 1, "final": vars(history[-1]) | {"per_interval": None}}
    summary["final"].pop("per_interval")
    if tcfg["mc_samples"]:
        est, se = tractable_loss_mc(problem, model, tcfg["mc_samples"], inst.seed)
        summary["tractable_mc"] = {"estimate": est, "stderr": se, "exact": history[-1].l_tractable}
    (out / "train_summary.json").write_text(json.dumps(summary, indent=2))
    print(f"final l_total={history[-1].l_total:.3e} after {len(history) - 1} steps")
    return EXIT_OK


COMMANDS = {
    "verify": cmd_verify,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "kernels-check": cmd_kernels_check,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="torusflow", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="experiment config (JSON); defaults to URW m=3 d=2 uniform")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--events", action="store_true", help="sample: also dump jump events")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.threads < 1:
            raise InputError("--threads must be >= 1")
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "sample":
            return cmd_sample(cfg, out, args.threads, events=args.events)
        return COMMANDS[args.command](cfg, out, args.threads)
    except (InputError, CapacityError) as exc:
        print(f"torusflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
