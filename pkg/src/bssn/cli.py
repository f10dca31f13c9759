"""Command-line front end.

Settings are resolved in three layers: built-in defaults, then the JSON file
given by ``--config``, then explicit flags.  A later layer wins.  Every run
writes ``manifest.json`` with the resolved settings into ``--output-dir``.

Exit codes: 0 success, 1 configuration error, 2 convergence failure,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import io
from .core import WeightedL1Problem
from .errors import ConfigError, ConvergenceError, LcpError, LineSearchError, NumericalError, SolverError
from .experiments import (
    DEFAULT_RIDGE,
    SUPPORT_WEIGHTS,
    DiscrepancyConfig,
    PathPoint,
    deblur_problem,
    discrepancy_principle,
    make_deblur_instance,
    make_regression_instance,
    regression_metrics,
    regression_problem,
    select_weight,
    solve_or_record,
    streams,
)
from .lcp import brute_force_lcp, complementarity_residual, lemke, random_spd_instance, solve_lcp
from .newton import SolverConfig, solve, write_history_csv
from .objectives import RegressionProblem, quadratic_objective, robust_objective

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE, EXIT_INVARIANT = 0, 1, 2, 3

SOLVER_DEFAULTS = {
    "gamma": None,
    "variant": "modbssn",
    "tol": 1e-7,
    "sigma": 0.01,
    "beta": 0.5,
    "jmax": 250,
    "tmin": 1e-5,
    "max_outer": 500,
    "seed": 0,
}

DEFAULTS = {
    "deblur": {
        **SOLVER_DEFAULTS,
        "gamma": 1e5,
        "side": 64,
        "blur_length": 0.1,
        "noise": 0.05,
        "ridge": DEFAULT_RIDGE,
        "w": None,
        "w_init": 0.9**10,
        "q": 0.9,
        "tau": 2.0,
        "max_reductions": 200,
    },
    "regress": {
        **SOLVER_DEFAULTS,
        "gamma": 10.0,
        "m": 2000,
        "n": 50,
        "support_weights": list(SUPPORT_WEIGHTS),
        "outlier_fraction": 0.1,
        "rho": 1.0,
        "w": None,
        "w_grid": {"start": 0.002, "stop": 1.0, "num": 50},
    },
    "path": {
        **SOLVER_DEFAULTS,
        "gamma": 1.0,
        "objective": "quadratic",
        "matrix": None,
        "vector": None,
        "rho": 1.0,
        "w_grid": {"start": 0.01, "stop": 1.0, "num": 20},
        "warm_start": True,
        "jobs": 1,
    },
    "solve": {
        **SOLVER_DEFAULTS,
        "gamma": 1.0,
        "objective": "quadratic",
        "matrix": None,
        "vector": None,
        "rho": 1.0,
        "w": 1.0,
    },
    "lcp-test": {"seed": 0, "count": 200, "max_m": 10},
}

# flag name -> settings key
FLAG_KEYS = {
    "gamma": "gamma",
    "w": "w",
    "tol": "tol",
    "sigma": "sigma",
    "beta": "beta",
    "jmax": "jmax",
    "tmin": "tmin",
    "seed": "seed",
    "variant": "variant",
    "jobs": "jobs",
    "matrix": "matrix",
    "vector": "vector",
    "objective": "objective",
    "count": "count",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bssn", description="Semismooth Newton solvers for weighted l1 problems.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in DEFAULTS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON settings file")
        p.add_argument("--output-dir", type=Path, default=Path("."))
        p.add_argument("--seed", type=int)
        if name == "lcp-test":
            p.add_argument("--count", type=int)
            continue
        for flag in ("gamma", "w", "tol", "sigma", "beta", "tmin"):
            p.add_argument(f"--{flag}", type=float)
        p.add_argument("--jmax", type=float, help="hybrid switch threshold; 'inf' allowed")
        p.add_argument("--variant", choices=("bssn", "modbssn", "hybrid"))
        p.add_argument("--jobs", type=int, help="threads for cold-started sweeps")
        if name in ("solve", "path"):
            p.add_argument("--matrix", type=Path, help="CSV matrix (K or design A)")
            p.add_argument("--vector", type=Path, help="CSV vector (data f or response y)")
            p.add_argument("--objective", choices=("quadratic", "robust"))
    return parser


def resolve_settings(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    settings = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        unknown = set(loaded) - set(settings)
        if unknown:
            raise ConfigError(f"unknown config keys for {args.command}: {sorted(unknown)}")
        settings.update(loaded)
    for flag, key in FLAG_KEYS.items():
        val = getattr(args, flag, None)
        if val is not None:
            settings[key] = str(val) if isinstance(val, Path) else val
    return settings


def solver_config(s: dict, store_iterates: bool = False) -> SolverConfig:
    try:
        return SolverConfig(
            gamma=None,
            armijo_sigma=float(s["sigma"]),
            armijo_beta=float(s["beta"]),
            tol=float(s["tol"]),
            variant=s["variant"],
            j_max=float(s["jmax"]),
            t_min=float(s["tmin"]),
            max_outer=int(s["max_outer"]),
            store_iterates=store_iterates,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _gamma(s: dict) -> float:
    g = s.get("gamma")
    if g is None or not float(g) > 0:
        raise ConfigError(f"gamma must be positive, got {g}")
    return float(g)


def _grid(s: dict) -> list:
    grid = s.get("w_grid")
    if isinstance(grid, list):
        ws = [float(v) for v in grid]
    elif isinstance(grid, dict):
        try:
            ws = np.linspace(float(grid["start"]), float(grid["stop"]), int(grid["num"])).tolist()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad w_grid: {grid}") from exc
    else:
        raise ConfigError("w_grid must be a list or {start, stop, num}")
    if not ws or any(v <= 0 for v in ws) or any(b < a for a, b in zip(ws, ws[1:])):
        raise ConfigError("w_grid must be positive and increasing")
    return ws


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    return str(value)


def _history(records, out: Path, name: str = "history.csv") -> None:
    path = out / name
    write_history_csv(records, path)
    io.csv_to_dat(path)


def _summary(res, w: float, **extra) -> dict:
    nonzeros = int(np.count_nonzero(res.u_star))
    out = {
        "w": w,
        "converged": res.converged,
        "reason": res.reason,
        "final_residual": res.residual_norm,
        "iterations": res.n_steps,
        "unit_steps": res.unit_steps,
        "nonzeros": nonzeros,
        "switch_step": res.switch_step,
        "residual_monotone": all(
            b.residual_norm < a.residual_norm for a, b in zip(res.records, res.records[1:])
        ),
    }
    out.update(extra)
    return out


def cmd_deblur(s: dict, out: Path) -> int:
    try:
        dp = make_deblur_instance(int(s["side"]), float(s["blur_length"]), float(s["noise"]), int(s["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    gamma, ridge = _gamma(s), float(s["ridge"])
    config = solver_config(s)
    selected = {}
    if s["w"] is None:
        dconf = DiscrepancyConfig(float(s["w_init"]), float(s["q"]), float(s["tau"]), int(s["max_reductions"]))
        target = dconf.tau * dp.noise_norm
        disc = discrepancy_principle(
            lambda w: deblur_problem(dp, w, gamma, ridge),
            lambda u: float(np.linalg.norm(dp.k_matrix @ u - dp.f_delta)),
            dconf,
            target,
            config,
        )
        w = disc.w
        selected = {"discrepancy_target": target, "discrepancy_reductions": disc.reductions}
    else:
        w = float(s["w"])
    res = solve(deblur_problem(dp, w, gamma, ridge), None, config)
    side = dp.side
    io.write_pgm(out / "original.pgm", dp.u_true.reshape(side, side))
    io.write_pgm(out / "blurred.pgm", dp.f_delta.reshape(side, side))
    io.write_pgm(out / "reconstruction.pgm", res.u_star.reshape(side, side))
    _history(res.records, out)
    err = float(np.linalg.norm(res.u_star - dp.u_true))
    _write_json(out / "summary.json", _summary(res, w, reconstruction_error=err, **selected))
    return EXIT_OK if res.converged else EXIT_CONVERGENCE


def _regression_instance(s: dict) -> RegressionProblem:
    m, n = int(s["m"]), int(s["n"])
    seed = int(s["seed"])
    for attempt in range(3):
        sub_seed = seed if attempt == 0 else [seed, attempt]
        try:
            reg = make_regression_instance(
                m, n, s["support_weights"], float(s["outlier_fraction"]), sub_seed, rho=float(s["rho"])
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if np.linalg.matrix_rank(reg.a_rows) == n:
            return reg
        log.warning("synthesized design is rank deficient; regenerating (attempt %d)", attempt + 2)
    raise ConfigError("design matrix rank deficient after 3 attempts")


def _path_rows(weights, solutions, reg=None) -> list:
    rows = []
    for w, res in zip(weights, solutions):
        row = [f"{w:.6e}"] + [f"{c:.6e}" for c in res.u_star]
        ok = bool(np.all(np.isfinite(res.u_star)))
        row.append(str(int(np.count_nonzero(res.u_star))) if ok else "")
        if reg is not None:
            met = regression_metrics(reg, res.u_star) if ok else None
            row += [f"{met.std_error:.6e}", f"{met.r_squared:.6e}"] if met else ["", ""]
        row += [str(res.n_steps), str(int(res.converged))]
        rows.append(row)
    return rows


def _write_path(path: Path, n: int, rows, with_metrics: bool) -> None:
    header = ["w"] + [f"u{k}" for k in range(n)] + ["support_size"]
    if with_metrics:
        header += ["std_error", "r_squared"]
    header += ["steps", "converged"]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    io.csv_to_dat(path)


def _sweep(factory, weights, config, warm_start: bool, jobs: int) -> list:
    if warm_start:
        results, u = [], None
        for w in weights:
            res = solve_or_record(factory(w), u, config)
            results.append(res)
            if res.converged:
                u = res.u_star
        return results
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(lambda w: solve_or_record(factory(w), None, config), weights))
    return [solve_or_record(factory(w), None, config) for w in weights]


def cmd_regress(s: dict, out: Path) -> int:
    reg = _regression_instance(s)
    gamma = _gamma(s)
    config = solver_config(s)
    n = reg.a_rows.shape[1]
    factory = lambda w: regression_problem(reg, w, gamma)  # noqa: E731
    if s["w"] is not None:
        weights = [float(s["w"])]
    else:
        weights = _grid(s)
    results = _sweep(factory, weights, config, True, 1)
    _write_path(out / "path.csv", n, _path_rows(weights, results, reg), True)
    # history of the single run, or of the point picked by support size and standard error
    pick = 0
    if len(results) > 1 and any(r.converged for r in results):
        points = [
            PathPoint(w, r.u_star, regression_metrics(reg, r.u_star) if r.converged else None, r.converged, r.n_steps)
            for w, r in zip(weights, results)
        ]
        pick = points.index(select_weight(points, int(np.count_nonzero(reg.u_true))))
    _history(results[pick].records, out)
    true_support = np.flatnonzero(reg.u_true).tolist()
    _write_json(
        out / "summary.json",
        _summary(
            results[pick],
            weights[pick],
            support=np.flatnonzero(results[pick].u_star).tolist(),
            true_support=true_support,
            failed_points=sum(not r.converged for r in results),
        ),
    )
    return EXIT_OK if all(r.converged for r in results) else EXIT_CONVERGENCE


def _file_objective(s: dict):
    if not s.get("matrix") or not s.get("vector"):
        raise ConfigError("solve/path need 'matrix' and 'vector' CSV files")
    try:
        mat = io.read_matrix_csv(s["matrix"])
        vec = io.read_vector_csv(s["vector"])
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read problem files: {exc}") from exc
    kind = s["objective"]
    if kind == "quadratic":
        return quadratic_objective(mat, vec), mat.shape[1]
    if kind == "robust":
        try:
            return robust_objective(RegressionProblem(mat, vec, float(s["rho"]))), mat.shape[1]
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown objective {kind!r}")


def cmd_solve(s: dict, out: Path) -> int:
    obj, n = _file_objective(s)
    try:
        problem = WeightedL1Problem(obj, float(s["w"]), gamma=_gamma(s), n=n)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    res = solve(problem, None, solver_config(s))
    _history(res.records, out)
    io.write_vector_csv(out / "solution.csv", res.u_star)
    _write_json(out / "summary.json", _summary(res, float(s["w"])))
    return EXIT_OK if res.converged else EXIT_CONVERGENCE


def cmd_path(s: dict, out: Path) -> int:
    obj, n = _file_objective(s)
    gamma = _gamma(s)
    weights = _grid(s)
    jobs = int(s.get("jobs") or 1)
    warm = bool(s["warm_start"])
    if warm and jobs > 1:
        log.warning("warm-started sweeps run sequentially; ignoring jobs=%d", jobs)
    factory = lambda w: WeightedL1Problem(obj, w, gamma=gamma, n=n)  # noqa: E731
    results = _sweep(factory, weights, solver_config(s), warm, jobs)
    _write_path(out / "path.csv", n, _path_rows(weights, results), False)
    return EXIT_OK if all(r.converged for r in results) else EXIT_CONVERGENCE


def cmd_lcp_test(s: dict, out: Path) -> int:
    count, max_m = int(s["count"]), int(s["max_m"])
    if count < 1 or not 1 <= max_m <= 20:
        raise ConfigError("need count >= 1 and 1 <= max_m <= 20")
    rng = streams(int(s["seed"]), 1)[0]
    passed = 0
    failures = []
    for i in range(count):
        inst = random_spd_instance(int(rng.integers(1, max_m + 1)), rng, cond=float(10 ** rng.uniform(0, 3)))
        x_ref = brute_force_lcp(inst).x
        ok = True
        for sol in (solve_lcp(inst), lemke(inst)):
            ok &= np.max(np.abs(sol.x - x_ref)) <= 1e-8 and complementarity_residual(inst, sol.x) <= 1e-10
        passed += ok
        if not ok:
            failures.append(i)
    print(f"lcp-test: {passed}/{count} passed, {count - passed} failed")
    _write_json(out / "summary.json", {"count": count, "passed": passed, "failed_instances": failures})
    return EXIT_OK if passed == count else EXIT_INVARIANT


COMMANDS = {
    "deblur": cmd_deblur,
    "regress": cmd_regress,
    "solve": cmd_solve,
    "path": cmd_path,
    "lcp-test": cmd_lcp_test,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        settings = resolve_settings(args)
        out = Path(args.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "manifest.json", {"command": args.command, "settings": settings})
        return COMMANDS[args.command](settings, out)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, LineSearchError) as exc:
        print(f"convergence failure: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (LcpError, NumericalError, SolverError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
