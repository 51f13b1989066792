"""Command line front end: scenario loading, study dispatch and CSV export.

Every floating point number is written with 17 significant digits so that
re-reading a file recovers the exact doubles.  Output files depend only on
the scenario, the seed and the subcommand, never on ``--threads``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import PolicyId
from .evaluation import (StudyResult, TrialStats, convergence_study, heterogeneous_study,
                         parameter_sweep, policy_guidance, run_trials)
from .guidance import GuidanceSolution, solve_fbs
from .plant import uniform_grid
from .scenario import RUN_SECTION, ConfigError, dumps, load_scenario

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_NOT_CONVERGED = 2


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def _write_rows(path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    Path(path).write_text(buf.getvalue())


def export_matrix(matrix, path):
    """Dense matrix, one CSV row per matrix row, no header."""
    _write_rows(path, None, np.atleast_2d(matrix))


def export_variance_grid(variance, path, points=None):
    """``G*G`` rows of ``x, y, variance`` with x the slow index."""
    variance = np.asarray(variance, dtype=float)
    pts = uniform_grid(variance.shape[0]) if points is None else np.asarray(points)
    rows = ((pts[i], pts[j], variance[i, j])
            for i in range(variance.shape[0]) for j in range(variance.shape[1]))
    _write_rows(path, ["x", "y", "variance"], rows)


def export_csv(result, path, grid=None):
    """Write a solution, trial statistics, study table or variance grid to ``path``.

    Parameters
    ----------
    result : GuidanceSolution, TrialStats, StudyResult or (time, G x G array)
    path : path-like
    grid : TimeGrid, only needed for a solution without a covariance trajectory
    """
    if isinstance(result, GuidanceSolution):
        g = result.guidance
        z = result.states
        if result.cov_traj is not None:
            times, traces = result.cov_traj.grid.times, result.cov_traj.traces()
        else:
            times, traces = grid.times, np.full(len(g), np.nan)
        header = (["t"] + [f"p_{i + 1}" for i in range(g.shape[1])]
                  + [f"zeta_{i + 1}" for i in range(z.shape[1])] + ["trace_Pi"])
        rows = (np.concatenate(([t], g[k], z[k], [traces[k]])) for k, t in enumerate(times))
        _write_rows(path, header, rows)
    elif isinstance(result, TrialStats):
        rows = [[k, e] for k, e in enumerate(result.per_trial_errors)]
        rows += [["mean", result.terminal_error_mean], ["std", result.terminal_error_std]]
        _write_rows(path, ["trial", "terminal_error"], rows)
    elif isinstance(result, StudyResult):
        keys = [result.axis_name] + [k for k in result.entries[0] if k != result.axis_name]
        _write_rows(path, keys, ([e[k] for k in keys] for e in result.entries))
    elif isinstance(result, tuple) and len(result) == 2:
        export_variance_grid(result[1], path)
    else:
        raise TypeError(f"cannot export {type(result).__name__}")


def export_costs(solution, scenario, path):
    rows = [
        ("cost_total", solution.cost_total),
        ("cost_uncertainty", solution.cost_uncertainty),
        ("cost_mobility", solution.cost_mobility),
        ("guidance_energy", solution.guidance_energy(scenario.grid)),
        ("path_length", solution.path_length(scenario.fleet)),
        ("iterations", solution.iterations),
        ("converged", solution.converged),
    ]
    _write_rows(path, ["quantity", "value"], rows)


def write_metadata(path, scenario, subcommand, extra=()):
    """Sidecar holding the resolved scenario plus a ``[run]`` section."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp[RUN_SECTION] = {"subcommand": subcommand, **{k: str(v) for k, v in extra}}
    buf = io.StringIO()
    cp.write(buf)
    Path(path).write_text(dumps(scenario) + buf.getvalue())


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def _csv_list(text, conv=float):
    try:
        return [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _mp_range(text):
    lo, sep, hi = text.partition("..")
    try:
        lo, hi = int(lo), int(hi) if sep else int(lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a..b, got {text!r}") from None
    if hi < lo:
        raise argparse.ArgumentTypeError("empty m_p range")
    return list(range(lo, hi + 1))


def _cmd_discretize(scen, args, out):
    m = scen.model
    export_matrix(m.generator, out / "generator.csv")
    export_matrix(m.process_cov, out / "process_cov.csv")
    export_matrix(m.init_cov, out / "init_cov.csv")
    _write_rows(out / "modes.csv", ["k", "i", "j"],
                ([k, *m.pair(k)] for k in range(1, m.dim + 1)))
    print(f"discretize order={scen.order} dim={m.dim} "
          f"trace_init_cov={np.trace(m.init_cov):.6g}")
    return EXIT_OK


def _cmd_solve(scen, args, out):
    sol = solve_fbs(scen)
    export_csv(sol, out / "trajectory.csv", scen.grid)
    export_costs(sol, scen, out / "costs.csv")
    print(f"solve cost_total={sol.cost_total:.8g} uncertainty={sol.cost_uncertainty:.8g} "
          f"mobility={sol.cost_mobility:.8g} iterations={sol.iterations} "
          f"converged={sol.converged}")
    return EXIT_OK if sol.converged else EXIT_NOT_CONVERGED


def _cmd_simulate(scen, args, out):
    policy = PolicyId(args.policy)
    status = EXIT_OK
    sol = None
    if policy is PolicyId.OPTIMAL:
        sol = solve_fbs(scen)
        export_csv(sol, out / "trajectory.csv", scen.grid)
        status = EXIT_OK if sol.converged else EXIT_NOT_CONVERGED
    guidance = policy_guidance(scen, policy, sol)
    stats = run_trials(scen, guidance, args.trials, scen.seed, args.snapshots,
                       threads=args.threads, policy=policy)
    export_csv(stats, out / f"stats_{policy.value}.csv")
    for t, var in stats.variance_grid_snapshots:
        export_variance_grid(var, out / f"variance_{policy.value}_t{t:.6g}.csv")
    print(f"simulate policy={policy.value} trials={stats.n_trials} "
          f"mean={stats.terminal_error_mean:.8g} std={stats.terminal_error_std:.8g}")
    return status


def _study_status(result):
    return EXIT_OK if all(e["converged"] for e in result.entries) else EXIT_NOT_CONVERGED


def _cmd_sweep(scen, args, out):
    res = parameter_sweep(scen, args.param, args.values, n_trials=args.trials,
                          master_seed=scen.seed, threads=args.threads)
    export_csv(res, out / f"sweep_{args.param}.csv")
    for v, sol in zip(res.axis, res.solutions):
        export_csv(sol, out / f"trajectory_{args.param}_{v:.6g}.csv", scen.grid)
    for v, trials in zip(res.axis, res.trials):
        for name, stats in trials.items():
            export_csv(stats, out / f"stats_{args.param}_{v:.6g}_{name}.csv")
    energy = ", ".join(f"{x:.4g}" for x in res.column("guidance_energy"))
    print(f"sweep {args.param} values={len(res.axis)} guidance_energy=[{energy}]")
    return _study_status(res)


def _cmd_convergence(scen, args, out):
    res = convergence_study(scen, args.orders, threads=args.threads,
                            multistart=not args.single_start)
    export_csv(res, out / "convergence.csv")
    norm = ", ".join(f"{x:.6f}" for x in res.column("normalized_cost"))
    print(f"convergence orders={res.axis} normalized_cost=[{norm}]")
    return _study_status(res)


def _cmd_heterogeneous(scen, args, out):
    res = heterogeneous_study(scen, n_sensors=args.sensors, mp_values=args.mp_range,
                              threads=args.threads)
    export_csv(res, out / "heterogeneous.csv")
    norm = ", ".join(f"{x:.4f}" for x in res.column("normalized_total"))
    print(f"heterogeneous m_p={res.axis} normalized_total=[{norm}]")
    return _study_status(res)


COMMANDS = {
    "discretize": _cmd_discretize,
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "sweep": _cmd_sweep,
    "convergence": _cmd_convergence,
    "heterogeneous": _cmd_heterogeneous,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="scenario file")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--order", type=int, help="override the Galerkin order")
    common.add_argument("--seed", type=int, help="override the master seed")
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads; affects speed only")

    parser = argparse.ArgumentParser(prog="sensorguide",
                                     description="Optimal mobile-sensor guidance studies.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("discretize", parents=[common], help="dump generator and covariances")
    sub.add_parser("solve", parents=[common], help="solve for the optimal guidance")
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo trials for a policy")
    p.add_argument("--policy", default="optimal", choices=[x.value for x in PolicyId])
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--snapshots", type=_csv_list, default=[],
                   help="comma separated times for variance grids")
    p = sub.add_parser("sweep", parents=[common], help="sweep R or gamma")
    p.add_argument("--param", required=True, choices=["R", "gamma"])
    p.add_argument("--values", required=True, type=_csv_list)
    p.add_argument("--trials", type=int, default=0,
                   help="Monte Carlo trials per value (0 = solve only)")
    p = sub.add_parser("convergence", parents=[common], help="optimal cost versus order")
    p.add_argument("--orders", required=True, type=lambda s: _csv_list(s, int))
    p.add_argument("--single-start", action="store_true",
                   help="solve each order once from zero guidance")
    p = sub.add_parser("heterogeneous", parents=[common], help="mixed-quality teams")
    p.add_argument("--mp-range", required=True, type=_mp_range, help="e.g. 0..8")
    p.add_argument("--sensors", type=int, default=8)
    return parser


def run_command(args):
    """Execute parsed arguments; return the process exit status."""
    try:
        scen = load_scenario(args.config)
        changes = {}
        if args.order is not None:
            changes["order"] = args.order
        if args.seed is not None:
            changes["seed"] = args.seed
        if changes:
            scen = scen.evolve(**changes)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    extra = [(k, v) for k, v in sorted(vars(args).items())
             if k not in ("config", "out", "threads", "command", "order", "seed")]
    try:
        write_metadata(out / f"{args.command}_run.ini", scen, args.command, extra)
        status = COMMANDS[args.command](scen, args, out)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    if status == EXIT_NOT_CONVERGED:
        print("warning: solver did not converge; best iterate written", file=sys.stderr)
    return status


def main(argv=None):
    logging.basicConfig(level=os.environ.get("SENSORGUIDE_LOGLEVEL", "WARNING"))
    args = build_parser().parse_args(argv)
    return run_command(args)


if __name__ == "__main__":
    sys.exit(main())
