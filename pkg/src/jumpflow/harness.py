"""Experiment orchestration: config parsing, pipelines, report emission.

Configs are flat sectioned key = value text; reports are JSON with every
value carrying its standard error or an explicit "deterministic" tag;
tables go to CSV next to the report.
"""

from __future__ import annotations

import difflib
import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import picard
from .bsde import estimator_std_error, jump_residual, solve_system
from .exceptions import ConfigurationError, JumpflowError
from .forward import TimeGrid, simulate_paths
from .measure import LevyMeasure
from .oracle import SpatialGrid, compare, refinement_error, solve_pide
from .problems import REGISTRY, get_problem, problem_summaries
from .reflected import apriori_bound_ratio, complementarity_residual, solve_reflected

MODES = ("plain", "frozen", "picard", "reflected", "oracle", "compare")

GLOBAL_DEFAULTS = dict(
    paths=20_000,
    steps=50,
    seed=0,
    degree=3,
    alpha=None,
    tol=1e-8,
    max_iter=30,
    oracle_nodes=1000,
    oracle_steps=200,
    penalty_eps=1e-3,
    reflection="max",
    compatibility="standard",
)

_INT_KEYS = {"paths", "steps", "seed", "degree", "max_iter", "oracle_nodes", "oracle_steps"}
_FLOAT_KEYS = {"alpha", "tol", "penalty_eps"}
_STR_KEYS = {"problem", "mode", "reflection", "compatibility"}
_KNOWN_EXPERIMENT = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS
_KNOWN_LEVY = {"atoms"}


@dataclass
class ExperimentConfig:
    problem: str
    mode: str
    paths: int
    steps: int
    seed: int
    degree: int
    alpha: float
    tol: float
    max_iter: int
    oracle_nodes: int
    oracle_steps: int
    penalty_eps: float
    reflection: str
    compatibility: str
    levy_atoms: list = None

    def echo(self) -> dict:
        d = asdict(self)
        if d["levy_atoms"] is None:
            d.pop("levy_atoms")
        return d


def _parse_lines(text: str):
    """Minimal sectioned key=value parser that keeps line numbers."""
    entries = {}
    errors = []
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#") or line.startswith(";"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in ("experiment", "levy"):
                errors.append({"line": lineno, "key": section, "message": f"unknown section [{section}]"})
                section = None
            continue
        if "=" not in line:
            errors.append({"line": lineno, "key": line, "message": "expected 'key = value'"})
            continue
        if section is None:
            errors.append({"line": lineno, "key": line.split("=")[0].strip(),
                           "message": "key outside of a [section]"})
            continue
        key, _, value = line.partition("=")
        entries[(section, key.strip().lower())] = (value.strip(), lineno)
    return entries, errors


def validate_config(text: str):
    """Parse and validate raw config text.

    Returns (config, errors): a fully-defaulted ExperimentConfig when the
    error list is empty, otherwise None plus one entry per malformed field.
    """
    entries, errors = _parse_lines(text)

    for (section, key), (value, lineno) in entries.items():
        known = _KNOWN_EXPERIMENT if section == "experiment" else _KNOWN_LEVY
        if key not in known:
            close = difflib.get_close_matches(key, sorted(known), n=1)
            hint = f" (did you mean '{close[0]}'?)" if close else ""
            errors.append({"line": lineno, "key": key, "message": f"unknown key '{key}'{hint}"})

    def take(key, caster, message=None):
        item = entries.get(("experiment", key))
        if item is None:
            return None
        value, lineno = item
        try:
            return caster(value)
        except (TypeError, ValueError):
            errors.append({"line": lineno, "key": key,
                           "message": message or f"cannot parse value {value!r} for '{key}'"})
            return None

    problem = take("problem", str)
    if ("experiment", "problem") not in entries:
        errors.append({"line": 0, "key": "problem", "message": "missing required key 'problem'"})
    elif problem not in REGISTRY:
        close = difflib.get_close_matches(problem, sorted(REGISTRY), n=1)
        hint = f" (did you mean '{close[0]}'?)" if close else ""
        errors.append({"line": entries[("experiment", "problem")][1], "key": "problem",
                       "message": f"unknown problem '{problem}'{hint}"})

    mode = take("mode", str)
    if ("experiment", "mode") not in entries:
        errors.append({"line": 0, "key": "mode", "message": "missing required key 'mode'"})
    elif mode not in MODES:
        errors.append({"line": entries[("experiment", "mode")][1], "key": "mode",
                       "message": f"mode must be one of {', '.join(MODES)}"})

    resolved = dict(GLOBAL_DEFAULTS)
    if problem in REGISTRY:
        resolved.update(get_problem(problem).defaults)

    for key in _INT_KEYS:
        val = take(key, int)
        if val is not None:
            resolved[key] = val
    for key in _FLOAT_KEYS:
        val = take(key, float)
        if val is not None:
            resolved[key] = val
    for key in ("reflection", "compatibility"):
        val = take(key, str)
        if val is not None:
            resolved[key] = val

    def bad(key, message):
        item = entries.get(("experiment", key))
        errors.append({"line": item[1] if item else 0, "key": key, "message": message})

    if resolved["paths"] < 1:
        bad("paths", "paths must be >= 1")
    if resolved["steps"] < 1:
        bad("steps", "steps must be >= 1")
    if resolved["seed"] < 0:
        bad("seed", "seed must be >= 0")
    if resolved["degree"] < 0:
        bad("degree", "degree must be >= 0")
    if resolved["tol"] <= 0:
        bad("tol", "tol must be positive")
    if resolved["max_iter"] < 1:
        bad("max_iter", "max_iter must be >= 1")
    if resolved["oracle_nodes"] < 3:
        bad("oracle_nodes", "oracle_nodes must be >= 3")
    if resolved["oracle_steps"] < 1:
        bad("oracle_steps", "oracle_steps must be >= 1")
    if resolved["penalty_eps"] <= 0:
        bad("penalty_eps", "penalty_eps must be positive")
    if resolved["reflection"] not in ("max", "penalty"):
        bad("reflection", "reflection must be 'max' or 'penalty'")
    if resolved["compatibility"] not in ("standard", "paper"):
        bad("compatibility", "compatibility must be 'standard' or 'paper'")

    levy_atoms = None
    if ("levy", "atoms") in entries:
        value, lineno = entries[("levy", "atoms")]
        try:
            parsed = json.loads(value)
            levy_atoms = [(tuple(row[:-1]), float(row[-1])) for row in parsed]
            LevyMeasure(levy_atoms, mark_dim=len(levy_atoms[0][0]) if levy_atoms else 1)
        except Exception as exc:
            errors.append({"line": lineno, "key": "atoms",
                           "message": f"atoms must be a JSON list of [mark..., weight] rows: {exc}"})
            levy_atoms = None

    if mode == "reflected" and problem in REGISTRY and get_problem(problem).obstacle is None:
        bad("mode", f"mode 'reflected' needs a problem with an obstacle; '{problem}' has none")

    if errors:
        return None, errors
    return ExperimentConfig(problem=problem, mode=mode, levy_atoms=levy_atoms, **resolved), []


def list_problems() -> list[dict]:
    return problem_summaries()


def _probe_value(problem, solution, bundle, vf, t, x, i):
    """Probe value with its estimator standard error.

    Combines the global Monte-Carlo level noise with the local regression
    noise of the fit at the probe (zero at the degenerate start node).
    """
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    value = float(np.ravel(vf.evaluate(t, x_arr, i))[0])
    level = estimator_std_error(solution, problem.driver, bundle, i)
    j = vf.nearest_step(t)
    degenerate = vf.steps[j] is not None and vf.steps[j].degenerate
    point = 0.0 if degenerate else vf.point_std_error(t, x_arr, i)
    return value, float(np.sqrt(level**2 + point**2))


def _mc_values(problem, solution, bundle):
    vf = solution.value_function
    rows = []
    for probe in problem.probes:
        t, x = probe[0], probe[1]
        for i in range(problem.driver.m):
            value, se = _probe_value(problem, solution, bundle, vf, t, x, i)
            rows.append({"name": f"u_{i}({t:g}, {np.ravel(x)[0]:g})", "t": float(t),
                         "x": float(np.ravel(np.asarray(x, dtype=float))[0]), "component": i,
                         "value": value, "std_error": se})
    return rows


def _oracle_values(problem, grid_solution):
    rows = []
    for probe in problem.probes:
        t, x = probe[0], probe[1]
        for i in range(problem.driver.m):
            rows.append({"name": f"u_{i}({t:g}, {np.ravel(x)[0]:g})", "t": float(t),
                         "x": float(np.ravel(np.asarray(x, dtype=float))[0]), "component": i,
                         "value": grid_solution.value(t, float(np.ravel(x)[0]), i),
                         "std_error": "deterministic"})
    return rows


def _write_csv(path: Path, header: list[str], rows: list[list]):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _apply_levy_override(problem, config):
    if config.levy_atoms is not None:
        problem.measure = LevyMeasure(config.levy_atoms, mark_dim=problem.measure.mark_dim)
    if problem.obstacle is not None:
        problem.obstacle.compatibility = config.compatibility
    return problem


def run(config: ExperimentConfig, out_dir) -> dict:
    """Execute the configured pipeline and write report files to out_dir.

    Returns the report dict; writes report.json, convergence.csv and, in
    compare mode, errors.csv.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = _apply_levy_override(get_problem(config.problem), config)
    t_wall = time.perf_counter()
    timings = {}
    report = {"config": config.echo(), "values": [], "diagnostics": {}}

    needs_paths = config.mode in ("plain", "frozen", "picard", "reflected", "compare")
    bundle = None
    if needs_paths:
        grid = TimeGrid(problem.t_start, problem.horizon, config.steps)
        t0 = time.perf_counter()
        bundle = simulate_paths(problem.coeffs, problem.measure, (problem.t_start, problem.x0),
                                grid, config.paths, config.seed)
        timings["simulate"] = time.perf_counter() - t0

    solver_kw = dict(degree=config.degree, extras=problem.extra_basis)
    convergence_rows, convergence_header = [], []

    if config.mode in ("plain", "frozen"):
        t0 = time.perf_counter()
        frozen = None
        if config.mode == "frozen":
            frozen = problem.closed_form if problem.closed_form is not None else (
                lambda t, x, i: np.zeros(np.shape(x)[0]))
        if problem.obstacle is not None:
            solution = solve_reflected(problem.driver, problem.obstacle, bundle,
                                       frozen_u=frozen, reflection=config.reflection,
                                       penalty_eps=config.penalty_eps, **solver_kw)
        else:
            solution = solve_system(problem.driver, bundle, frozen_u=frozen, **solver_kw)
        timings["solve"] = time.perf_counter() - t0
        report["values"] = _mc_values(problem, solution, bundle)
        report["diagnostics"]["jump_residual"] = [float(r) for r in jump_residual(solution, bundle)]
        report["diagnostics"]["per_step"] = solution.diagnostics["per_step"]
        convergence_header = ["step", "time"] + [f"resid_rms_{i}" for i in range(problem.driver.m)] + ["cond"]
        convergence_rows = [[r["step"], float(r["time"])] + [float(v) for v in r["resid_rms"]] + [float(r["cond"])]
                            for r in solution.diagnostics["per_step"]]

    elif config.mode in ("picard", "compare"):
        t0 = time.perf_counter()
        solver = None
        if problem.obstacle is not None:
            solver = lambda driver, b, frozen_u=None, **kw: solve_reflected(
                driver, problem.obstacle, b, frozen_u=frozen_u,
                reflection=config.reflection, penalty_eps=config.penalty_eps, **kw)
        vf, diag = picard.solve_fixed_point(
            problem.driver, bundle, alpha=config.alpha, tol=config.tol,
            max_iter=config.max_iter, solver=solver, **solver_kw)
        timings["solve"] = time.perf_counter() - t0
        solution = diag.last_solution
        report["values"] = _mc_values(problem, solution, bundle)
        report["diagnostics"]["picard"] = diag.as_dict()
        report["diagnostics"]["jump_residual"] = [float(r) for r in jump_residual(solution, bundle)]
        convergence_header = ["iteration", "alpha_delta", "sup_delta", "ratio"]
        ratios = [""] + [float(r) for r in diag.ratios]
        convergence_rows = [[n + 1, float(diag.deltas[n]), float(diag.sup_deltas[n]), ratios[n]]
                            for n in range(diag.iterations)]

        if config.mode == "compare":
            t0 = time.perf_counter()
            lo, hi = problem.oracle_domain()
            grid_solution = solve_pide(problem, SpatialGrid(lo, hi, config.oracle_nodes),
                                       config.oracle_steps,
                                       obstacle=problem.obstacle.obstacle if problem.obstacle else None)
            timings["oracle"] = time.perf_counter() - t0
            probes = [(t, np.ravel(np.asarray(x, dtype=float))[0], i)
                      for (t, x) in problem.probes for i in range(problem.driver.m)]
            cmp = compare(vf, grid_solution, probes)
            report["diagnostics"]["compare"] = {"max_rel": cmp["max_rel"], "rms_rel": cmp["rms_rel"]}
            _write_csv(out / "errors.csv",
                       ["t", "x", "component", "value", "oracle", "rel_error"],
                       [[r["t"], r["x"], r["component"], r["value"], r["oracle"], r["rel_error"]]
                        for r in cmp["rows"]])

    elif config.mode == "reflected":
        t0 = time.perf_counter()
        solution = solve_reflected(problem.driver, problem.obstacle, bundle,
                                   reflection=config.reflection,
                                   penalty_eps=config.penalty_eps, **solver_kw)
        timings["solve"] = time.perf_counter() - t0
        report["values"] = _mc_values(problem, solution, bundle)
        dK = np.diff(solution.K, axis=1)
        report["diagnostics"]["reflected"] = {
            "complementarity_residual": complementarity_residual(solution, problem.obstacle),
            "apriori_bound_ratio": apriori_bound_ratio(solution, problem.driver, problem.obstacle, bundle),
            "k_mean": float(np.mean(solution.K[:, -1])),
            "k_max": float(np.max(solution.K[:, -1])),
            "k_activation_frequency": float(np.mean(dK > 0)),
        }
        report["diagnostics"]["jump_residual"] = [float(r) for r in jump_residual(solution, bundle)]
        report["diagnostics"]["per_step"] = solution.diagnostics["per_step"]
        convergence_header = ["step", "time"] + [f"resid_rms_{i}" for i in range(problem.driver.m)] + ["cond"]
        convergence_rows = [[r["step"], float(r["time"])] + [float(v) for v in r["resid_rms"]] + [float(r["cond"])]
                            for r in solution.diagnostics["per_step"]]

    elif config.mode == "oracle":
        t0 = time.perf_counter()
        lo, hi = problem.oracle_domain()
        grid = SpatialGrid(lo, hi, config.oracle_nodes)
        obstacle_fn = problem.obstacle.obstacle if problem.obstacle else None
        grid_solution = solve_pide(problem, grid, config.oracle_steps, obstacle=obstacle_fn)
        timings["oracle"] = time.perf_counter() - t0
        report["values"] = _oracle_values(problem, grid_solution)
        probe = problem.probes[0]
        half = SpatialGrid(lo, hi, max(3, (config.oracle_nodes + 1) // 2))
        coarse = solve_pide(problem, half, max(1, config.oracle_steps // 2), obstacle=obstacle_fn)
        fine_v = grid_solution.value(probe[0], float(np.ravel(probe[1])[0]), 0)
        coarse_v = coarse.value(probe[0], float(np.ravel(probe[1])[0]), 0)
        gap = abs(fine_v - coarse_v) / max(abs(fine_v), 1e-12)
        report["diagnostics"]["refinement"] = {"fine": fine_v, "coarse": coarse_v, "rel_gap": gap}
        for i in range(problem.driver.m):
            grid_solution.to_csv(out / f"grid_values_{i}.csv", i)
        convergence_header = ["resolution", "value", "rel_gap"]
        convergence_rows = [["coarse", coarse_v, ""], ["fine", fine_v, gap]]

    else:
        raise ConfigurationError(f"unhandled mode {config.mode!r}")

    timings["total"] = time.perf_counter() - t_wall
    report["timings"] = {k: round(v, 6) for k, v in timings.items()}
    _write_csv(out / "convergence.csv", convergence_header or ["empty"], convergence_rows)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
