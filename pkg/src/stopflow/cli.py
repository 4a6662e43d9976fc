"""Command-line front end.

Commands: solve (value function + boundaries), sweep (parameter sweeps
with optional monotonicity/limit checks), mc (Monte Carlo validation
against solver oracles), figure4 (reversible-vs-irreversible boundary
dataset).  Configuration is a flat key-value file with dotted keys, e.g.

    model.rho = 1.0
    refined.type = gaussian
    refined.sigma_tilde = 1.0

All outputs are CSV with a header row.  Exit codes: 0 success, 2 config
error, 3 solver non-convergence, 4 failed property check, 5 failed Monte
Carlo validation.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, TextIO

import numpy as np

from .closed_form import SmoothFitError, eval_closed_form, smooth_fit
from .fd_solver import ConvergenceError, Grid, SolverOptions, solve_vi
from .model import (
    ConstantCost,
    CostSpec,
    GaussianSignal,
    Irreversible,
    ModelParams,
    ParameterError,
    PoissonSignal,
    RefinedSignalSpec,
    VarianceCost,
)
from .obstacles import ObstacleFn, obstacle_eval, vb_gaussian, vb_poisson
from .sensitivity import (
    Instance,
    check_monotonicity,
    figure4_dataset,
    limit_diagnostics,
    sweep as run_sweep,
)
from .simulate import (
    SimConfig,
    mc_value_composed,
    mc_value_nested_gaussian,
    mc_value_nested_poisson,
    mc_value_outer,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_CHECK = 4
EXIT_MC = 5


class ConfigError(Exception):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class RunConfig:
    params: ModelParams
    cost: CostSpec
    refined: RefinedSignalSpec
    grid: Grid
    solver: SolverOptions
    sim: SimConfig
    out_dir: str


_DEFAULTS = {
    "model.rho": "1.0",
    "model.sigma": "5.0",
    "model.h": "9.0",
    "model.l": "1.0",
    "model.mu": "5.0",
    "cost.type": "constant",
    "cost.c_i": "1.0",
    "refined.type": "none",
    "refined.lambda": "2.0",
    "refined.sigma_tilde": "1.0",
    "refined.r": "1.0",
    "grid.n": "4000",
    "solver.method": "policy",
    "solver.tol": "1e-10",
    "solver.max_iter": "200",
    "sim.n_paths": "100000",
    "sim.dt": "0.001",
    "sim.t_max": "20.0",
    "sim.seed": "12345",
    "sim.antithetic": "false",
    "output.dir": ".",
}


def parse_config_text(text: str) -> Dict[str, str]:
    """Flat `key = value` lines; '#' starts a comment; unknown keys fail."""
    entries = dict(_DEFAULTS)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _DEFAULTS:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for key {key!r}")
        entries[key] = value
    return entries


def _to_float(entries: Dict[str, str], key: str) -> float:
    try:
        return float(entries[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: not a number: {entries[key]!r}")


def _to_int(entries: Dict[str, str], key: str) -> int:
    try:
        return int(entries[key])
    except ValueError:
        raise ConfigError(f"key {key!r}: not an integer: {entries[key]!r}")


def _to_bool(entries: Dict[str, str], key: str) -> bool:
    value = entries[key].lower()
    if value in ("true", "1", "yes"):
        return True
    if value in ("false", "0", "no"):
        return False
    raise ConfigError(f"key {key!r}: not a boolean: {entries[key]!r}")


def build_config(entries: Dict[str, str]) -> RunConfig:
    try:
        params = ModelParams(
            rho=_to_float(entries, "model.rho"),
            sigma=_to_float(entries, "model.sigma"),
            h=_to_float(entries, "model.h"),
            l=_to_float(entries, "model.l"),
            mu=_to_float(entries, "model.mu"),
        )
    except ParameterError as exc:
        raise ConfigError(f"model.l/model.mu/model.h/model.rho/model.sigma: {exc}")

    cost_type = entries["cost.type"]
    if cost_type == "constant":
        try:
            cost: CostSpec = ConstantCost(_to_float(entries, "cost.c_i"))
        except ParameterError as exc:
            raise ConfigError(f"cost.c_i: {exc}")
    elif cost_type == "variance":
        try:
            cost = VarianceCost(_to_float(entries, "cost.c_i"))
        except ParameterError as exc:
            raise ConfigError(f"cost.c_i: {exc}")
    else:
        raise ConfigError(f"cost.type: unknown cost type {cost_type!r}")

    ref_type = entries["refined.type"]
    try:
        if ref_type == "none":
            refined: RefinedSignalSpec = Irreversible()
        elif ref_type == "poisson":
            refined = PoissonSignal(
                lam=_to_float(entries, "refined.lambda"),
                r=_to_float(entries, "refined.r"),
            )
        elif ref_type == "gaussian":
            refined = GaussianSignal(
                sigma_tilde=_to_float(entries, "refined.sigma_tilde"),
                r=_to_float(entries, "refined.r"),
            )
        else:
            raise ConfigError(f"refined.type: unknown regime {ref_type!r}")
    except ParameterError as exc:
        raise ConfigError(f"refined.*: {exc}")

    try:
        grid = Grid(_to_int(entries, "grid.n"))
    except ParameterError as exc:
        raise ConfigError(f"grid.n: {exc}")

    method = entries["solver.method"]
    if method not in ("policy", "psor"):
        raise ConfigError(f"solver.method: unknown method {method!r}")
    solver = SolverOptions(
        tol=_to_float(entries, "solver.tol"),
        max_iter=_to_int(entries, "solver.max_iter"),
        method=method,
    )

    seed = _to_int(entries, "sim.seed")
    env_seed = os.environ.get("STOPFLOW_SEED")
    if env_seed is not None:
        try:
            seed = int(env_seed)
        except ValueError:
            raise ConfigError(f"STOPFLOW_SEED: not an integer: {env_seed!r}")
    try:
        sim = SimConfig(
            n_paths=_to_int(entries, "sim.n_paths"),
            dt=_to_float(entries, "sim.dt"),
            t_max=_to_float(entries, "sim.t_max"),
            seed=seed,
            antithetic=_to_bool(entries, "sim.antithetic"),
        )
    except ParameterError as exc:
        raise ConfigError(f"sim.*: {exc}")

    return RunConfig(params, cost, refined, grid, solver, sim, entries["output.dir"])


def dump_config(cfg: RunConfig) -> str:
    """Render the effective configuration; re-parses to the same RunConfig."""
    p = cfg.params
    lines = [
        f"model.rho = {p.rho!r}",
        f"model.sigma = {p.sigma!r}",
        f"model.h = {p.h!r}",
        f"model.l = {p.l!r}",
        f"model.mu = {p.mu!r}",
    ]
    if isinstance(cfg.cost, ConstantCost):
        lines += ["cost.type = constant", f"cost.c_i = {cfg.cost.c_i!r}"]
    else:
        lines += ["cost.type = variance", f"cost.c_i = {cfg.cost.scale!r}"]
    if isinstance(cfg.refined, PoissonSignal):
        lines += [
            "refined.type = poisson",
            f"refined.lambda = {cfg.refined.lam!r}",
            f"refined.r = {cfg.refined.r!r}",
        ]
    elif isinstance(cfg.refined, GaussianSignal):
        lines += [
            "refined.type = gaussian",
            f"refined.sigma_tilde = {cfg.refined.sigma_tilde!r}",
            f"refined.r = {cfg.refined.r!r}",
        ]
    else:
        lines += ["refined.type = none"]
    lines += [
        f"grid.n = {cfg.grid.n}",
        f"solver.method = {cfg.solver.method}",
        f"solver.tol = {cfg.solver.tol!r}",
        f"solver.max_iter = {cfg.solver.max_iter}",
        f"sim.n_paths = {cfg.sim.n_paths}",
        f"sim.dt = {cfg.sim.dt!r}",
        f"sim.t_max = {cfg.sim.t_max!r}",
        f"sim.seed = {cfg.sim.seed}",
        f"sim.antithetic = {'true' if cfg.sim.antithetic else 'false'}",
        f"output.dir = {cfg.out_dir}",
    ]
    return "\n".join(lines) + "\n"


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return build_config(dict(_DEFAULTS))
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config file: {exc}")
    return build_config(parse_config_text(text))


def parse_values(spec: str) -> List[float]:
    """Comma list `1,2,3` or range `start:stop:step` (stop inclusive)."""
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise ConfigError(f"--values: range needs start:stop:step, got {spec!r}")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise ConfigError(f"--values: not numeric: {spec!r}")
        if step <= 0:
            raise ConfigError(f"--values: step must be positive, got {step}")
        values = []
        x = start
        while x <= stop + 1e-12 * max(1.0, abs(stop)):
            values.append(x)
            x += step
        return values
    try:
        return [float(p) for p in spec.split(",") if p.strip()]
    except ValueError:
        raise ConfigError(f"--values: not numeric: {spec!r}")


def _fmt(x: float) -> str:
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    return format(float(x), ".8g")


def _write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else _fmt(c) for c in row) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig, method: str, out: TextIO) -> int:
    ob = ObstacleFn.create(cfg.params, cfg.refined)
    qs = cfg.grid.nodes
    boundary_rows = []
    fd_sol = None

    if method in ("fd", "both"):
        fd_sol = solve_vi(cfg.params, cfg.cost, ob, cfg.grid, cfg.solver)
        boundary_rows.append(
            ("fd", fd_sol.q_lo, fd_sol.q_hi, fd_sol.complementarity_gap)
        )
    cf_sol = None
    if method in ("closed_form", "both"):
        if not isinstance(cfg.cost, ConstantCost):
            raise ConfigError("cost.type: closed form needs cost.type = constant")
        cf_sol = smooth_fit(cfg.params, cfg.cost.c_i, cfg.refined)
        boundary_rows.append(
            ("closed_form", cf_sol.q_lo, cf_sol.q_hi, cf_sol.residual_sup)
        )

    if fd_sol is not None:
        values = fd_sol.values
        in_exp = (
            (fd_sol.values - fd_sol.obstacle) > fd_sol.contact_tol
        ).astype(int)
    else:
        c_i = cfg.cost.c_i
        values = np.array(
            [eval_closed_form(cf_sol, cfg.params, c_i, ob, float(q)) for q in qs]
        )
        in_exp = ((qs > cf_sol.q_lo) & (qs < cf_sol.q_hi)).astype(int)
    g = ob.on_grid(qs)

    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(
        os.path.join(cfg.out_dir, "value.csv"),
        ("q", "value", "obstacle", "in_exploration"),
        [(q, v, gv, int(e)) for q, v, gv, e in zip(qs, values, g, in_exp)],
    )
    _write_csv(
        os.path.join(cfg.out_dir, "boundaries.csv"),
        ("method", "q_lo", "q_hi", "residual"),
        boundary_rows,
    )
    print(f"wrote value.csv and boundaries.csv to {cfg.out_dir}", file=out)
    return EXIT_OK


_LIMIT_CHECKS = {
    "limit_rho": "rho",
    "limit_sigma": "sigma",
    "limit_c_i": "c_i",
    "limit_l_to_mu": "l_to_mu",
    "limit_h_to_inf": "h_to_inf",
    "limit_lambda": "lambda",
}

_PROP_CHECKS = {
    "prop_rho", "prop_sigma", "prop_cost", "prop_mu", "prop_cs",
    "prop_h_one_sided", "prop_l_one_sided",
}


def _limit_check_passed(table) -> bool:
    rows = [r for r in table.rows if not r.failed]
    if not rows:
        return False
    last = rows[-1]
    if table.which in ("rho", "sigma", "c_i"):
        return (
            table.decreasing_lo and table.decreasing_hi
            and last.dist_lo < 0.05 and last.dist_hi < 0.05
        )
    if table.which == "l_to_mu":
        return last.dist_lo < 0.05 and last.dist_hi < 0.05
    if table.which == "h_to_inf":
        return last.dist_lo < 0.05 and last.dist_hi < 0.05
    # lambda: endpoint limits of the nested threshold
    return rows[0].dist_lo < 1e-5 and rows[-1].dist_hi < 1e-5


def cmd_sweep(
    cfg: RunConfig, param: str, values: List[float], check: Optional[str],
    method: str, out: TextIO,
) -> int:
    base = Instance(cfg.params, cfg.cost, cfg.refined, cfg.grid)
    result = run_sweep(base, param, values, method=method)

    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(
        os.path.join(cfg.out_dir, f"sweep_{param}.csv"),
        ("param", "q_lo", "q_hi", "width", "method", "residual"),
        [
            (r.value, r.q_lo, r.q_hi, r.width, r.method, r.residual)
            for r in result.rows
        ],
    )
    print(f"wrote sweep_{param}.csv to {cfg.out_dir}", file=out)
    if check is None:
        return EXIT_OK

    if check in _PROP_CHECKS:
        report = check_monotonicity(result, check)
        passed = report.passed
        detail = "" if passed else f" violations={report.violations}"
    elif check in _LIMIT_CHECKS:
        table = limit_diagnostics(base, _LIMIT_CHECKS[check])
        passed = _limit_check_passed(table)
        detail = ""
    else:
        raise ConfigError(f"--check: unknown check {check!r}")

    with open(os.path.join(cfg.out_dir, "monotonicity.txt"), "w") as fh:
        fh.write(f"{check}: {'PASS' if passed else 'FAIL'}{detail}\n")
    print(f"{check}: {'PASS' if passed else 'FAIL'}", file=out)
    return EXIT_OK if passed else EXIT_CHECK


def _mc_oracle_boundaries(cfg: RunConfig):
    ob = ObstacleFn.create(cfg.params, cfg.refined)
    sol = solve_vi(cfg.params, cfg.cost, ob, cfg.grid, cfg.solver)
    return ob, sol


def cmd_mc(cfg: RunConfig, target: str, q0s: List[float], out: TextIO) -> int:
    if target not in ("outer", "nested", "composed"):
        raise ConfigError(f"--target: unknown target {target!r}")
    if target in ("nested", "composed") and isinstance(cfg.refined, Irreversible):
        raise ConfigError(f"refined.type: {target} target needs poisson or gaussian")

    rows = []
    worst = 0.0
    if target == "nested":
        for q0 in q0s:
            if isinstance(cfg.refined, PoissonSignal):
                est = mc_value_nested_poisson(
                    cfg.params, cfg.refined.lam, cfg.refined.r, q0, cfg.sim
                )
                oracle = vb_poisson(cfg.params, cfg.refined.lam, cfg.refined.r, q0)
            else:
                est = mc_value_nested_gaussian(
                    cfg.params, cfg.refined.sigma_tilde, cfg.refined.r, q0, cfg.sim
                )
                oracle = vb_gaussian(
                    cfg.params, cfg.refined.sigma_tilde, cfg.refined.r, q0
                )
            z = _z_score(est, oracle)
            worst = max(worst, abs(z))
            rows.append((q0, est.mean, est.std_err, oracle, z))
    else:
        ob, sol = _mc_oracle_boundaries(cfg)
        for q0 in q0s:
            if target == "outer":
                est = mc_value_outer(
                    cfg.params, cfg.cost, ob, sol.q_lo, sol.q_hi, q0, cfg.sim
                )
            else:
                est = mc_value_composed(
                    cfg.params, cfg.cost, cfg.refined, sol.q_lo, sol.q_hi, q0, cfg.sim
                )
            oracle = float(np.interp(q0, sol.grid.nodes, sol.values))
            z = _z_score(est, oracle)
            worst = max(worst, abs(z))
            rows.append((q0, est.mean, est.std_err, oracle, z))

    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(
        os.path.join(cfg.out_dir, "mc.csv"),
        ("q0", "mc_mean", "mc_stderr", "oracle_value", "z_score"),
        rows,
    )
    print(f"wrote mc.csv to {cfg.out_dir} (worst |z| = {worst:.3f})", file=out)
    return EXIT_OK if worst <= 3.0 else EXIT_MC


def _z_score(est, oracle: float) -> float:
    # allow for truncation bias before judging the deviation
    excess = max(0.0, abs(est.mean - oracle) - est.truncation_bound)
    if excess == 0.0:
        return 0.0
    if est.std_err == 0.0:
        return math.inf
    return math.copysign(excess / est.std_err, est.mean - oracle)


def cmd_figure4(cfg: RunConfig, out: TextIO) -> int:
    refined = cfg.refined
    if not isinstance(refined, GaussianSignal):
        refined = GaussianSignal(sigma_tilde=1.0, r=1.0)
    base = Instance(cfg.params, cfg.cost, refined, cfg.grid)
    reversible, reference = figure4_dataset(base)

    left, right = [], []
    for row, star in zip(reversible.rows, reference.rows):
        left.append((row.value, row.q_lo, row.q_hi, star.q_lo, star.q_hi))
        right.append((row.value, row.width, star.width))

    os.makedirs(cfg.out_dir, exist_ok=True)
    _write_csv(
        os.path.join(cfg.out_dir, "figure4_left.csv"),
        ("R", "q_lo", "q_hi", "q_lo_star", "q_hi_star"),
        left,
    )
    _write_csv(
        os.path.join(cfg.out_dir, "figure4_right.csv"),
        ("R", "width", "width_star"),
        right,
    )
    print(f"wrote figure4_left.csv and figure4_right.csv to {cfg.out_dir}", file=out)

    rows = [r for r in reversible.rows if not r.failed]
    slack = 2.0 * reversible.boundary_uncertainty()
    lo_ok = all(b.q_lo >= a.q_lo - slack for a, b in zip(rows, rows[1:]))
    hi_ok = all(b.q_hi >= a.q_hi - slack for a, b in zip(rows, rows[1:]))
    w_ok = all(b.width >= a.width - slack for a, b in zip(rows, rows[1:]))
    star = reference.rows[-1]
    conv_ok = (
        abs(rows[-1].q_lo - star.q_lo) < 0.01 and abs(rows[-1].q_hi - star.q_hi) < 0.01
    )
    if lo_ok and hi_ok and w_ok and conv_ok:
        return EXIT_OK
    print(
        f"figure4 property check failed: monotone_lo={lo_ok} monotone_hi={hi_ok} "
        f"monotone_width={w_ok} converged={conv_ok}",
        file=sys.stderr,
    )
    return EXIT_CHECK


# ---------------------------------------------------------------------------
# entry point


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stopflow",
        description="Optimal-stopping solvers for product choice under costly learning",
    )
    parser.add_argument("--config", help="path to a flat key-value config file")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument(
        "--dump-config", action="store_true",
        help="print the effective configuration and exit",
    )
    parser.add_argument(
        "--threads", type=int, default=1,
        help="worker threads; 1 (the default) is fully deterministic",
    )
    sub = parser.add_subparsers(dest="command")

    p_solve = sub.add_parser("solve", help="value function and free boundaries")
    p_solve.add_argument(
        "--method", choices=("fd", "closed_form", "both"), default="fd"
    )

    p_sweep = sub.add_parser("sweep", help="parameter sweep with optional checks")
    p_sweep.add_argument("--param", required=True)
    p_sweep.add_argument("--values", required=True)
    p_sweep.add_argument("--check", help="proposition or limit check identifier")
    p_sweep.add_argument(
        "--method", choices=("fd", "closed_form"), default="closed_form"
    )

    p_mc = sub.add_parser("mc", help="Monte Carlo validation against oracles")
    p_mc.add_argument("--paths", type=int, help="override sim.n_paths")
    p_mc.add_argument("--seed", type=int, help="override sim.seed")
    p_mc.add_argument(
        "--target", choices=("outer", "nested", "composed"), default="outer"
    )
    p_mc.add_argument("--q0", default="0.3,0.5,0.7", help="comma list of beliefs")

    sub.add_parser("figure4", help="reversible vs irreversible boundary dataset")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    out = sys.stdout

    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = replace(cfg, out_dir=args.out)
        if args.dump_config:
            out.write(dump_config(cfg))
            return EXIT_OK
        if args.command is None:
            parser.print_help(out)
            return EXIT_OK

        if args.command == "solve":
            return cmd_solve(cfg, args.method, out)
        if args.command == "sweep":
            values = parse_values(args.values)
            if not values:
                raise ConfigError("--values: empty value list")
            return cmd_sweep(cfg, args.param, values, args.check, args.method, out)
        if args.command == "mc":
            sim = cfg.sim
            if args.paths is not None:
                sim = replace(sim, n_paths=args.paths)
            if args.seed is not None:
                sim = replace(sim, seed=args.seed)
            cfg = replace(cfg, sim=sim)
            q0s = parse_values(args.q0)
            return cmd_mc(cfg, args.target, q0s, out)
        return cmd_figure4(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ParameterError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, SmoothFitError) as exc:
        print(f"solver failed to converge: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE


if __name__ == "__main__":
    sys.exit(main())
