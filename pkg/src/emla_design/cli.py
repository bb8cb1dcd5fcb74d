"""Command line entry point: ``emla-design <subcommand> --scenario FILE --out DIR``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .description import read_json, validate_robot_dict, write_json
from .emla_drive import write_map_csv
from .errors import (
    ConfigurationError,
    EmlaDesignError,
    GeometryInfeasibleError,
    ReachabilityError,
    SolverBreakdown,
)
from .nlp_opt import energy_report, solve
from .pipeline import prepare, series_rows, simulation_summary, write_csv
from .scenario import check_reachable, load_scenario

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_IO = 4

log = logging.getLogger("emla_design")


class ValidationFailed(EmlaDesignError):
    def __init__(self, failures):
        super().__init__("; ".join(f"[{c}] {m}" for c, m in failures))
        self.failures = list(failures)


@dataclass
class RunArtifacts:
    out_dir: Path
    result: Path | None = None
    series: list = field(default_factory=list)
    maps: list = field(default_factory=list)
    log: Path | None = None
    extra: list = field(default_factory=list)

    def all_paths(self) -> list:
        paths = [self.result, self.log, *self.series, *self.maps, *self.extra]
        return [p for p in paths if p is not None]

    def to_dict(self) -> dict:
        def rel(p):
            return None if p is None else str(Path(p).relative_to(self.out_dir))
        return {"result": rel(self.result), "series": [rel(p) for p in self.series],
                "maps": [rel(p) for p in self.maps], "log": rel(self.log),
                "extra": [rel(p) for p in self.extra]}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _setup_logging(out_dir: Path, verbose: bool) -> Path:
    path = out_dir / "run.log"
    for h in list(log.handlers):
        log.removeHandler(h)
        h.close()
    fh = logging.FileHandler(path, mode="w", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    log.addHandler(fh)
    if verbose:
        sh = logging.StreamHandler(sys.stderr)
        sh.setFormatter(logging.Formatter("%(message)s"))
        log.addHandler(sh)
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    return path


def _load(args):
    scenario = load_scenario(args.scenario)
    if args.max_iter is not None:
        scenario.solver = replace(scenario.solver, max_iterations=args.max_iter)
    if args.seed is not None:
        scenario.solver = replace(scenario.solver, seed=args.seed)
    return scenario


# --- subcommands ------------------------------------------------------------------------

def cmd_effmap(args, art: RunArtifacts) -> int:
    scenario = _load(args)
    n_f, n_v = scenario.map_resolution
    summary = []
    for i, emla in enumerate(scenario.load_emlas()):
        emap = emla.efficiency_map(int(n_f), int(n_v))
        name = emla.name or f"emla{i}"
        path = write_map_csv(emap, art.out_dir / f"effmap_{name}.csv")
        art.maps.append(path)
        summary.append({"name": name, "file": path.name, "n_force": int(n_f), "n_velocity": int(n_v),
                        "eta_min": float(emap.values.min()), "eta_max": float(emap.values.max())})
        log.info("map %s: eta in [%.4f, %.4f]", name, emap.values.min(), emap.values.max())
    art.result = write_json(_jsonable({"maps": summary}), art.out_dir / "effmap.json")
    return EXIT_OK


def cmd_simulate(args, art: RunArtifacts) -> int:
    prep = prepare(_load(args))
    z = prep.nlp.x0
    summary = simulation_summary(prep, z)
    header, rows = series_rows(prep, z)
    art.series.append(write_csv(art.out_dir / "series.csv", header, rows))
    art.result = write_json(_jsonable({"scenario": prep.scenario.name, "simulation": summary}),
                            art.out_dir / "simulation.json")
    log.info("objective %.9e, plain energy %.6e J", summary["objective"], summary.get("plain_energy", float("nan")))
    return EXIT_OK


def cmd_optimize(args, art: RunArtifacts) -> int:
    scenario = _load(args)
    prep = prepare(scenario)
    t0 = time.perf_counter()

    def progress(rec, _z):
        log.info("iter %d  f=%.9e  viol=%.3e  step=%.3g", rec.iteration, rec.objective, rec.violation,
                 rec.step_length)

    result = solve(prep.nlp, scenario.solver, callback=progress)
    wall = time.perf_counter() - t0
    report = energy_report(result, prep.nlp)
    for tag, z in (("initial", prep.nlp.x0), ("final", result.z)):
        header, rows = series_rows(prep, z)
        art.series.append(write_csv(art.out_dir / f"series_{tag}.csv", header, rows))
    trace_rows = [[k, f, v] for k, (f, v) in enumerate(zip(result.objective_trace, result.violation_trace))]
    art.series.append(write_csv(art.out_dir / "trace.csv", ["iteration", "objective", "violation"], trace_rows))
    payload = {
        "scenario": scenario.name,
        "status": result.status,
        "success": result.success,
        "iterations": result.iterations,
        "decision_vector": {"xi": result.xi, "c": result.c},
        "initial_decision_vector": {"xi": result.xi_initial, "c": result.c_initial},
        "objective_initial": result.objective_initial,
        "objective_final": result.objective_final,
        "objective_trace": result.objective_trace,
        "violation_trace": result.violation_trace,
        "merit_trace": result.merit_trace,
        "constraint_violation": result.violation,
        "block_violations": result.block_violations,
        "reference_deviation_from_spiral": prep.joint_reference.deviation,
        "energy_report": report,
    }
    art.result = write_json(_jsonable(payload), art.out_dir / "result.json")
    # timing varies run to run, so it lives apart from the deterministic result
    art.extra.append(write_json({"wall_time_s": wall, "solver_wall_time_s": result.wall_time,
                                 "evaluations": result.evaluations}, art.out_dir / "timing.json"))
    log.info("status %s after %d iterations: %.9e -> %.9e", result.status, result.iterations,
             result.objective_initial, result.objective_final)
    return EXIT_OK


def cmd_validate(args, art: RunArtifacts) -> int:
    scenario = _load(args)
    checks = []

    def record(name, ok, detail=""):
        checks.append({"check": name, "passed": bool(ok), "detail": detail})
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))

    failures = validate_robot_dict(read_json(scenario.robot_path))
    record("robot_description", not failures, "; ".join(f"[{c}] {m}" for c, m in failures))
    if not failures:
        robot = scenario.load_robot()
        try:
            check_reachable(robot, scenario)
            record("reference_reachable", True)
        except ReachabilityError as exc:
            failures.append(("reference_reachable", str(exc)))
            record("reference_reachable", False, str(exc))
        for emla in scenario.load_emlas():
            try:
                emap = emla.efficiency_map(*map(int, scenario.map_resolution))
                ok = bool(np.all(emap.values > 0) and np.all(emap.values <= 1.0))
                record(f"efficiency_map[{emla.name}]", ok)
            except EmlaDesignError as exc:
                failures.append((f"efficiency_map[{emla.name}]", str(exc)))
                record(f"efficiency_map[{emla.name}]", False, str(exc))
        if not failures:
            prep = prepare(scenario)
            blocks = prep.nlp.constraints(prep.nlp.x0).block_violations()
            tol = scenario.solver.feasibility_tol
            for name, v in blocks.items():
                ok = v <= tol
                record(name, ok, f"max violation {v:.3e}")
                if not ok:
                    failures.append((name, f"max violation {v:.3e} at the initial point"))
    art.result = write_json(_jsonable({"scenario": scenario.name, "checks": checks}),
                            art.out_dir / "validation.json")
    if failures:
        raise ValidationFailed(failures)
    return EXIT_OK


COMMANDS = {"effmap": cmd_effmap, "simulate": cmd_simulate, "optimize": cmd_optimize, "validate": cmd_validate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="emla-design", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "effmap": "build and export the EMLA efficiency maps",
        "simulate": "inverse dynamics and energy along the reference with the initial lengths",
        "optimize": "solve the link-length / trajectory NLP",
        "validate": "check the robot, EMLAs and scenario and print pass/fail per check",
    }
    for name, text in helps.items():
        sp = sub.add_parser(name, help=text)
        sp.add_argument("--scenario", required=True, type=Path)
        sp.add_argument("--out", required=True, type=Path)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--max-iter", type=int, default=None)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def _error(kind, message, code, **extra) -> int:
    payload = {"error": kind, "message": message, "exit_code": code, **extra}
    sys.stderr.write(json.dumps(_jsonable(payload), sort_keys=False) + "\n")
    return code


def run(argv=None) -> tuple[int, RunArtifacts | None]:
    args = build_parser().parse_args(argv)
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _error("io_error", str(exc), EXIT_IO), None
    art = RunArtifacts(out_dir=args.out)
    art.log = _setup_logging(args.out, args.verbose)
    try:
        code = COMMANDS[args.command](args, art)
    except ValidationFailed as exc:
        code = _error("validation_failed", str(exc), EXIT_VALIDATION,
                      constraints=[c for c, _ in exc.failures])
    except ReachabilityError as exc:
        code = _error("reachability", str(exc), EXIT_VALIDATION, times=exc.times)
    except SolverBreakdown as exc:
        code = _error("solver_breakdown", str(exc), EXIT_SOLVER)
    except (ConfigurationError, GeometryInfeasibleError) as exc:
        code = _error("validation_failed", str(exc), EXIT_VALIDATION)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        code = _error("io_error", f"{type(exc).__name__}: {exc}", EXIT_IO)
    except EmlaDesignError as exc:
        code = _error(type(exc).__name__, str(exc), EXIT_VALIDATION)
    finally:
        for h in list(log.handlers):
            log.removeHandler(h)
            h.close()
    if art.result is not None:
        write_json(art.to_dict(), args.out / "artifacts.json")
    return code, art


def main(argv=None) -> int:
    code, _ = run(argv)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
