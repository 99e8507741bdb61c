"""Command-line driver for ensemble experiments.

Every subcommand builds ``instances`` random instances, evaluates them
(optionally in a process pool) and writes ``results.jsonl``,
``summary.csv`` and ``meta.json`` into ``--out``.  Nothing is written
when the configuration is invalid.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from functools import partial
from importlib import metadata
from pathlib import Path

import numpy as np

from .bounds import (
    ck_constant,
    ck_rhs,
    conditions_check,
    diamond_bound_rhs,
    digest,
    finite_time_rhs,
    instance_factors,
    verify_instance,
)
from .distance import (
    classicality_defect,
    entangled_in_time_steps,
    feedforward_steps,
    induced_instrument_set,
    operational_diamond,
    projective_library,
    random_basis,
    time_averaged_distance,
)
from .ensembles import ENSEMBLES, Instance, normalized_spectrum, random_instance, random_instrument, random_state
from .errors import BudgetExceeded, LegMismatchError, ValidationError
from .process import (
    ProcessTensor,
    build_equilibrium,
    build_process,
    build_tester,
    causality_residual,
    d_eff_min,
    expectation,
    sequential_expectation_oracle,
)
from .spectral import Hamiltonian, gap_census, mean_positive_gap
from .timeavg import LEVEL_CAPS, TimeWindows, analytic_second_moment, g_factor, s_factor

log = logging.getLogger("procequil")

EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_BUDGET = 0, 1, 2, 3
MAX_TOTAL_DIM = 16
BORN_TOL = 1e-9


@dataclass
class ExperimentConfig:
    ensemble: str = "gue"
    ds: int = 2
    de: int = 2
    k: int = 2
    windows: list | None = None
    sweep: dict | None = None
    epsilon: float | str = "auto"
    instances: int = 10
    seed: int = 0
    samples: int = 200
    workers: int = 1
    out: str = "results"
    hamiltonian_file: str | None = None
    process_file: str | None = None
    outcomes: int = 2
    state_rank: int | None = 1
    classical: bool = False

    def window_list(self) -> list[float]:
        return list(self.windows) if self.windows is not None else [10.0] * self.k

    def sweep_values(self) -> list[float]:
        sw = self.sweep
        if sw.get("log", False):
            return np.geomspace(sw["start"], sw["stop"], sw["points"]).tolist()
        return np.linspace(sw["start"], sw["stop"], sw["points"]).tolist()


def _problem(name: str, msg: str) -> ValidationError:
    return ValidationError(f"config field {name!r}: {msg}")


def validate(cfg: ExperimentConfig, command: str) -> None:
    if cfg.ensemble not in ENSEMBLES:
        raise _problem("ensemble", f"must be one of {ENSEMBLES}")
    for name in ("ds", "de", "k", "outcomes", "samples", "workers"):
        v = getattr(cfg, name)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise _problem(name, f"must be a positive integer, got {v!r}")
    if not isinstance(cfg.instances, int) or cfg.instances < 0:
        raise _problem("instances", f"must be a non-negative integer, got {cfg.instances!r}")
    if not isinstance(cfg.seed, int) or not 0 <= cfg.seed < 2**64:
        raise _problem("seed", "must be an integer in [0, 2^64)")
    if cfg.ds * cfg.de > MAX_TOTAL_DIM:
        raise _problem("de", f"d_S*d_E = {cfg.ds * cfg.de} exceeds {MAX_TOTAL_DIM}")
    if cfg.k > 3:
        raise _problem("k", "at most 3 intervention times")
    if cfg.windows is not None:
        if not isinstance(cfg.windows, list) or len(cfg.windows) != cfg.k:
            raise _problem("windows", f"must be a list of {cfg.k} positive numbers")
        if any(not isinstance(t, (int, float)) or not t > 0 for t in cfg.windows):
            raise _problem("windows", "entries must be positive numbers")
    if cfg.epsilon != "auto" and (not isinstance(cfg.epsilon, (int, float)) or not cfg.epsilon > 0):
        raise _problem("epsilon", "must be a positive number or 'auto'")
    if cfg.ensemble == "from_file" and not cfg.hamiltonian_file:
        raise _problem("hamiltonian_file", "required for the from_file ensemble")
    if command == "sweep-T":
        sw = cfg.sweep
        if not isinstance(sw, dict) or not {"start", "stop", "points"} <= set(sw):
            raise _problem("sweep", "needs start, stop and points")
        if not (sw["start"] > 0 and sw["stop"] >= sw["start"] and int(sw["points"]) >= 1):
            raise _problem("sweep", "needs 0 < start <= stop and points >= 1")


def load_config(args: argparse.Namespace) -> tuple[ExperimentConfig, dict]:
    """Defaults, then the config file, then flags; returns the config and each field's source."""
    names = {f.name for f in fields(ExperimentConfig)}
    values, source = {}, {n: "default" for n in names}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"unknown config fields {sorted(unknown)}")
        values.update(data)
        source.update({n: "file" for n in data})
    for n in ("seed", "instances", "out", "workers", "ensemble", "ds", "de", "k"):
        v = getattr(args, n, None)
        if v is not None:
            values[n] = v
            source[n] = "flag"
    return ExperimentConfig(**values), source


# --------------------------------------------------------------------------- #
# per-instance work (top level so a process pool can pickle it)
# --------------------------------------------------------------------------- #

def instance_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def _make_instance(cfg: ExperimentConfig, rng: np.random.Generator) -> Instance:
    return random_instance(
        cfg.ensemble, cfg.ds, cfg.de, cfg.k, rng, cfg.outcomes, cfg.state_rank, cfg.hamiltonian_file
    )


def _epsilon(cfg: ExperimentConfig, inst: Instance) -> float:
    if cfg.epsilon != "auto":
        return float(cfg.epsilon)
    gap = mean_positive_gap(inst.spectrum)
    return 0.1 * gap if gap > 0 else 0.1


def _matrix_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=complex)
    return {"re": m.real.tolist(), "im": m.imag.tolist()}


def _inputs_json(inst: Instance, windows, epsilon) -> dict:
    return {
        "hamiltonian": Hamiltonian(inst.spectrum.matrix()).to_json(),
        "rho": _matrix_json(inst.rho),
        "instruments": [[_matrix_json(k) for k in m.kraus_ops] for m in inst.instruments],
        "d_s": inst.d_s,
        "d_e": inst.d_e,
        "windows": list(windows),
        "epsilon": epsilon,
    }


def verify_task(cfg: ExperimentConfig, i: int) -> list[dict]:
    inst = _make_instance(cfg, instance_rng(cfg.seed, i))
    eps = _epsilon(cfg, inst)
    tw = TimeWindows(tuple(cfg.window_list()))
    out = []
    for rep in verify_instance(inst.spectrum, inst.rho, inst.instruments, tw, eps, inst.full_instruments):
        rec = {
            "schema": "bound_report/1",
            "instance": i,
            "bound": rep.bound_name,
            "lhs": rep.lhs,
            "rhs": rep.rhs,
            "slack": rep.slack,
            "holds": rep.holds(),
            "epsilon": eps,
            "windows": list(tw.windows),
            "energy_scale": inst.energy_scale,
            "energy_shift": inst.energy_shift,
            "factors": rep.details,
            "inputs_digest": rep.inputs_digest,
        }
        if not rep.holds():
            rec["inputs"] = _inputs_json(inst, tw.windows, eps)
        out.append(rec)
    return out


def sweep_task(cfg: ExperimentConfig, i: int) -> list[dict]:
    inst = _make_instance(cfg, instance_rng(cfg.seed, i))
    eps = _epsilon(cfg, inst)
    census = gap_census(inst.spectrum, eps)
    rows = []
    for t in cfg.sweep_values():
        tw = TimeWindows.uniform(t, cfg.k)
        f = instance_factors(inst.spectrum, inst.rho, inst.instruments, tw, eps, inst.full_instruments)
        moment = analytic_second_moment(inst.spectrum, inst.rho, inst.instruments, tw)
        cond = conditions_check(census, tw, cfg.k, f.deff_min, eps)
        rows.append({
            "schema": "sweep_row/1",
            "instance": i,
            "T": t,
            "moment": moment,
            "finite_rhs": finite_time_rhs(f, cfg.k),
            "ck_rhs": ck_rhs(census, tw, eps, cfg.k, f.deff_min),
            "g": g_factor(census, t, eps),
            "s": s_factor(inst.spectrum, t),
            "n_epsilon": census.n_epsilon,
            "deff_min": f.deff_min,
            "time_margin": cond.time_margin if math.isfinite(cond.time_margin) else None,
            "k_margin": cond.k_margin,
            "epsilon": eps,
            "energy_scale": inst.energy_scale,
        })
    return rows


def born_steps(k: int, d_s: int, rng: np.random.Generator) -> list[tuple[str, list, np.ndarray | None]]:
    """A random product tester, a feedforward tester and an entangled-in-time tester."""
    product = [random_instrument(d_s, 2, rng, kraus_per_outcome=int(rng.integers(1, 3))) for _ in range(k)]
    ff, tau = feedforward_steps([(random_basis(d_s, rng), random_basis(d_s, rng)) for _ in range(k)], d_s)
    ent, tau_e = entangled_in_time_steps(k, d_s)
    return [("product", product, None), ("feedforward", ff, tau), ("entangled", ent, tau_e)]


def born_task(cfg: ExperimentConfig, i: int) -> list[dict]:
    rng = instance_rng(cfg.seed, i)
    inst = _make_instance(cfg, rng)
    dts = rng.uniform(0.0, 2.0 * math.pi, size=cfg.k)
    p = build_process(inst.spectrum, inst.rho, dts, cfg.ds)
    worst = 0.0
    for _, steps, tau in born_steps(cfg.k, cfg.ds, rng):
        tester = build_tester(steps, cfg.ds, tau)
        for label, c in tester.outcomes:
            chain = [steps[j][x] for j, x in enumerate(label)]
            oracle = sequential_expectation_oracle(inst.spectrum, inst.rho, chain, dts, cfg.ds, tau)
            worst = max(worst, abs(expectation(p, c) - oracle))
    return [{
        "schema": "born_check/1",
        "instance": i,
        "max_deviation": worst,
        "causality_residual": causality_residual(p),
        "pass": worst <= BORN_TOL,
        "dts": dts.tolist(),
    }]


def _classical_instance(cfg: ExperimentConfig, rng: np.random.Generator) -> Instance:
    """Hamiltonian block diagonal in the system's computational basis."""
    blocks = []
    for _ in range(cfg.ds):
        a = rng.normal(size=(cfg.de, cfg.de)) + 1j * rng.normal(size=(cfg.de, cfg.de))
        blocks.append((a + a.conj().T) / 2)
    h = sum(np.kron(np.diag(np.eye(cfg.ds)[s]), b) for s, b in enumerate(blocks))
    spectrum, scale, shift = normalized_spectrum(Hamiltonian(h))
    rho = random_state(cfg.ds * cfg.de, rng, cfg.state_rank)
    return Instance(spectrum, rho, (), (), cfg.ds, cfg.de, scale, shift)


def classicality_task(cfg: ExperimentConfig, i: int) -> list[dict]:
    rng = instance_rng(cfg.seed, i)
    inst = _classical_instance(cfg, rng) if cfg.classical else _make_instance(cfg, rng)
    dts = rng.uniform(0.0, 1.0, size=cfg.k) * np.asarray(cfg.window_list())
    bases = [np.eye(cfg.ds)] * cfg.k
    p = build_process(inst.spectrum, inst.rho, dts, cfg.ds)
    om = build_equilibrium(inst.spectrum, inst.rho, cfg.k, cfg.ds)
    d_p, d_o = classicality_defect(p, bases), classicality_defect(om, bases)
    dist = operational_diamond(p, om, induced_instrument_set(bases, cfg.ds))
    ok = abs(d_p - d_o) <= 2 * dist + 1e-10
    if cfg.classical:
        ok = ok and d_p <= 1e-10
    return [{
        "schema": "classicality/1",
        "instance": i,
        "classical_by_construction": cfg.classical,
        "defect_process": d_p,
        "defect_equilibrium": d_o,
        "distance": dist,
        "holds": ok,
    }]


def distances_task(cfg: ExperimentConfig, i: int) -> list[dict]:
    rng = instance_rng(cfg.seed, i)
    inst = _make_instance(cfg, rng)
    eps = _epsilon(cfg, inst)
    tw = TimeWindows(tuple(cfg.window_list()))
    lib = projective_library(cfg.k, cfg.ds, rng)
    deff = min(
        d_eff_min(inst.spectrum, inst.rho, chain)
        for t in lib for chain in t.instruments.values()
    )
    est = time_averaged_distance(inst.spectrum, inst.rho, lib, tw, cfg.samples, cfg.seed + i, cfg.ds)
    ck = ck_constant(gap_census(inst.spectrum, eps), tw, eps, cfg.k)
    rhs = diamond_bound_rhs(lib, ck, deff)
    return [{
        "schema": "distance_report/1",
        "instance": i,
        "mean": est.mean,
        "stderr": est.stderr,
        "samples": est.samples,
        "rhs": rhs,
        "total_outcomes": lib.total_outcomes,
        "deff_min": deff,
        "holds": est.mean <= rhs + 3 * est.stderr,
    }]


COMMANDS = {
    "verify-bounds": (verify_task, "holds"),
    "sweep-T": (sweep_task, None),
    "born-check": (born_task, "pass"),
    "classicality": (classicality_task, "holds"),
    "distances": (distances_task, "holds"),
}


# --------------------------------------------------------------------------- #
# output
# --------------------------------------------------------------------------- #

def _flatten(rec: dict) -> dict:
    flat = {}
    for key, v in rec.items():
        if key in ("inputs", "schema"):
            continue
        if isinstance(v, dict):
            for sub, x in v.items():
                if not isinstance(x, (dict, list)):
                    flat[f"{key}.{sub}"] = x
                elif isinstance(x, list) and all(isinstance(y, (int, float)) for y in x):
                    flat[f"{key}.{sub}"] = ";".join(repr(y) for y in x)
        elif isinstance(v, list):
            flat[key] = ";".join(repr(y) for y in v)
        else:
            flat[key] = v
    return flat


def summary_csv(records: list[dict]) -> str:
    rows = [_flatten(r) for r in records]
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    buf.write("# columns: " + ", ".join(cols) + "\n")
    writer = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def write_outputs(out: Path, records: list[dict], meta: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "results.jsonl", "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    (out / "summary.csv").write_text(summary_csv(records))
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str) + "\n")


def run(command: str, cfg: ExperimentConfig) -> tuple[list[dict], bool]:
    task, flag = COMMANDS[command]
    if command == "born-check" and cfg.process_file:
        return check_process_file(cfg.process_file), False
    fn = partial(task, cfg)
    if cfg.workers > 1 and cfg.instances > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(fn, range(cfg.instances)))
    else:
        chunks = [fn(i) for i in range(cfg.instances)]
    records = [r for chunk in chunks for r in chunk]
    violated = flag is not None and any(not r[flag] for r in records)
    return records, violated


def check_process_file(path: str) -> list[dict]:
    try:
        with open(path) as fh:
            p = ProcessTensor.from_json(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read process file {path}: {exc}") from exc
    return [{
        "schema": "process_check/1",
        "file": str(path),
        "k": p.k,
        "causality_residual": causality_residual(p),
        "min_eigenvalue": p.choi.min_eigenvalue(),
        "digest": digest(p.matrix),
    }]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="procequil", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--instances", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
        p.add_argument("--ensemble", choices=ENSEMBLES)
        p.add_argument("--ds", type=int)
        p.add_argument("--de", type=int)
        p.add_argument("--k", type=int)
    return parser


def _error(kind: str, exc: Exception) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": str(exc)}) + "\n")


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s", stream=sys.stderr)
    args = build_parser().parse_args(argv)
    start = time.perf_counter()
    try:
        cfg, source = load_config(args)
        validate(cfg, args.command)
        log.info("config precedence: flags > file > defaults; %s",
                 ", ".join(f"{k}={v}" for k, v in sorted(source.items()) if v != "default"))
        records, violated = run(args.command, cfg)
    except BudgetExceeded as exc:
        _error("budget", exc)
        return EXIT_BUDGET
    except (ValidationError, LegMismatchError, TypeError) as exc:
        _error("config", exc)
        return EXIT_CONFIG
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    meta = {
        "schema": "meta/1",
        "command": args.command,
        "config": asdict(cfg),
        "config_sources": source,
        "build": {"package": "procequil", "version": version, "numpy": np.__version__,
                  "python": platform.python_version()},
        "records": len(records),
        "violation": violated,
        "wall_time_s": time.perf_counter() - start,
        "energy_normalization": "spectra shifted and scaled to [0, 1]; per-record energy_scale",
        "level_caps": LEVEL_CAPS,
    }
    write_outputs(Path(cfg.out), records, meta)
    if violated:
        log.warning("at least one check failed; see %s", Path(cfg.out) / "results.jsonl")
        return EXIT_VIOLATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
