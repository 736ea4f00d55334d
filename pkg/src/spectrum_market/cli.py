"""Command-line interface.

Subcommands: generate, solve, simulate, verify, experiment, ratecheck.
Structured results go to JSON, time series and sweep tables to CSV; the
report-producing paths also render PNG figures next to their delimited
output (disable with --no-figures).

Exit codes: 0 success, 1 usage error (bad arguments, unreadable input),
2 numerical failure (no convergence, failed optimality check).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bgr import bgr_to_dot, build_bgr, bgr_decode
from .dynamics import (
    PdStop,
    default_rates,
    rate_condition_check,
    run_primal_dual,
)
from .errors import SpectrumMarketError
from .experiments import SweepConfig, equilibrium_snapshot, run_convergence_sweep
from .model import (
    DEFAULT_CHANNEL_CONFIG,
    generate_instance,
    read_instance,
    write_instance,
)
from .solver import (
    _best_responses,
    decode_demands,
    equilibrium_to_dict,
    solve_prices,
    verify_kkt,
)
from .utilities import ALPHA_FAIR, SCALED_LOG, make_utility

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via exit code 1."""

    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="spectrum-market", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="draw a random market instance")
    gen.add_argument("--users", type=int, required=True)
    gen.add_argument("--providers", type=int, required=True)
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--utility", choices=["log", "alpha-fair"], default="log")
    gen.add_argument("--a", type=float, default=1.0, help="willingness-to-pay weight")
    gen.add_argument("--alpha", type=float, default=0.5, help="alpha-fair exponent")
    gen.add_argument("-o", "--output", required=True)

    sol = sub.add_parser("solve", help="compute the market-clearing equilibrium")
    sol.add_argument("instance")
    sol.add_argument("-o", "--output", required=True)
    sol.add_argument("--tol", type=float, default=1e-6, help="optimality tolerance")
    sol.add_argument("--tie-tol", type=float, default=1e-9)
    sol.add_argument("--snapshot", metavar="PREFIX",
                     help="also emit association report (JSON + edge CSV + figure)")
    sol.add_argument("--no-figures", action="store_true")

    sim = sub.add_parser("simulate", help="run the primal-dual dynamics")
    sim.add_argument("instance")
    sim.add_argument("-o", "--output", required=True, help="trajectory CSV path")
    sim.add_argument("--eta", type=float, default=1e-3)
    sim.add_argument("--epsilon", type=float, default=1e-3)
    sim.add_argument("--max-steps", type=int, default=100_000)
    sim.add_argument("--sample-stride", type=int, default=10)
    sim.add_argument("--rates-seed", type=int, default=0)
    sim.add_argument("--no-figures", action="store_true")

    ver = sub.add_parser("verify", help="check optimality of a stored state")
    ver.add_argument("instance")
    ver.add_argument("state", help="equilibrium or final-state JSON")
    ver.add_argument("--tol", type=float, default=1e-6)
    ver.add_argument("--bgr", metavar="DOT",
                     help="write the tie graph at the state's prices as DOT")

    exp = sub.add_parser("experiment", help="convergence sweep over user counts")
    exp.add_argument("-o", "--output", required=True, help="sweep CSV path")
    exp.add_argument("--providers", type=int, default=5)
    exp.add_argument("--user-counts", default="20,40,60,80,100",
                     help="comma-separated list")
    exp.add_argument("--trials", type=int, default=200)
    exp.add_argument("--epsilon", type=float, default=1e-2)
    exp.add_argument("--eta", type=float, default=1e-3)
    exp.add_argument("--seed", type=int, default=1, help="base seed")
    exp.add_argument("--max-steps", type=int, default=100_000)
    exp.add_argument("--workers", type=int, default=1)
    exp.add_argument("--no-figures", action="store_true")

    rc = sub.add_parser("ratecheck", help="update-rate sufficiency report")
    rc.add_argument("instance")
    rc.add_argument("--rates-seed", type=int, default=0)

    return parser


def _utility_from_args(args):
    if args.utility == "log":
        return make_utility(SCALED_LOG, args.a)
    return make_utility(ALPHA_FAIR, args.a, args.alpha)


def _cmd_generate(args) -> int:
    instance = generate_instance(
        DEFAULT_CHANNEL_CONFIG, args.users, args.providers, _utility_from_args(args), args.seed
    )
    write_instance(instance, args.output)
    return EXIT_OK


def _cmd_solve(args) -> int:
    instance = read_instance(args.instance)
    p_star = solve_prices(instance, tie_tol=args.tie_tol)
    eq = decode_demands(instance, p_star, tie_tol=args.tie_tol)
    report = verify_kkt(instance, eq.q, eq.p, tol=args.tol)
    with open(args.output, "w", encoding="utf-8") as fh:
        json.dump(equilibrium_to_dict(eq, report), fh, indent=2)
        fh.write("\n")
    if args.snapshot:
        snap = equilibrium_snapshot(instance, tie_tol=args.tie_tol)
        prefix = Path(args.snapshot)
        with open(prefix.with_suffix(".json"), "w", encoding="utf-8") as fh:
            json.dump(snap.to_dict(), fh, indent=2)
            fh.write("\n")
        with open(prefix.with_suffix(".csv"), "w", encoding="utf-8") as fh:
            snap.write_edge_csv(fh)
        if not args.no_figures:
            from .figures import render_association

            render_association(snap, prefix.with_suffix(".png"))
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _cmd_simulate(args) -> int:
    instance = read_instance(args.instance)
    p_star = solve_prices(instance)
    eq = decode_demands(instance, p_star)
    rates = default_rates(instance, rates_seed=args.rates_seed)
    run = run_primal_dual(
        instance,
        rates,
        args.eta,
        PdStop(epsilon=args.epsilon, max_steps=args.max_steps),
        equilibrium=eq,
        sample_stride=args.sample_stride,
    )
    out = Path(args.output)
    with open(out, "w", encoding="utf-8") as fh:
        run.trajectory.write_csv(fh)
    final = {
        "q": run.state.q.ravel().tolist(),
        "p": run.state.p.tolist(),
        "t": run.state.t,
        "steps": run.steps,
        "converged": run.converged,
    }
    with open(out.with_name(out.stem + "_final.json"), "w", encoding="utf-8") as fh:
        json.dump(final, fh, indent=2)
        fh.write("\n")
    if not args.no_figures:
        from .figures import render_trajectory

        render_trajectory(run.trajectory, out.with_name(out.stem + "_trajectory.png"))
    print(f"converged={run.converged} steps={run.steps}")
    return EXIT_OK if run.converged else EXIT_NUMERICAL


def _cmd_verify(args) -> int:
    instance = read_instance(args.instance)
    with open(args.state, "r", encoding="utf-8") as fh:
        state = json.load(fh)
    q = np.asarray(state["q"], dtype=float).reshape(instance.I, instance.J)
    p = np.asarray(state["p"], dtype=float)
    report = verify_kkt(instance, q, p, tol=args.tol)
    for key, value in report.to_dict().items():
        print(f"{key}: {value}")
    if args.bgr:
        _, x, pref = _best_responses(instance, p, 1e-9)
        pref_sets = [tuple(int(j) for j in np.nonzero(row)[0]) for row in pref]
        decided = np.zeros_like(q)
        for i, members in enumerate(pref_sets):
            if x[i] > 0.0 and len(members) == 1:
                decided[i, members[0]] = x[i] / instance.c[i, members[0]]
        graph = build_bgr(instance, pref_sets, x, decided)
        try:
            decoded = bgr_decode(graph)
        except SpectrumMarketError:
            decoded = None
        with open(args.bgr, "w", encoding="utf-8") as fh:
            fh.write(bgr_to_dot(graph, decoded))
    return EXIT_OK if report.passed else EXIT_NUMERICAL


def _cmd_experiment(args) -> int:
    user_counts = tuple(int(tok) for tok in str(args.user_counts).split(",") if tok)
    cfg = SweepConfig(
        providers=args.providers,
        user_counts=user_counts,
        trials=args.trials,
        epsilon=args.epsilon,
        eta=args.eta,
        base_seed=args.seed,
        max_steps=args.max_steps,
    )
    stats = run_convergence_sweep(cfg, workers=args.workers)
    out = Path(args.output)
    with open(out, "w", encoding="utf-8") as fh:
        stats.write_csv(fh)
    if not args.no_figures:
        from .figures import render_sweep

        render_sweep(stats, out.with_name(out.stem + "_sweep.png"))
    return EXIT_OK


def _cmd_ratecheck(args) -> int:
    instance = read_instance(args.instance)
    p_star = solve_prices(instance)
    eq = decode_demands(instance, p_star)
    rates = default_rates(instance, rates_seed=args.rates_seed)
    report = rate_condition_check(instance, eq.q, rates)
    print(f"stacked_rank: {report.stacked_rank} (full = {instance.J})")
    print(f"refined_condition: {report.refined_condition}")
    print(f"every_provider_decided: {report.every_provider_decided}")
    print(f"sufficient: {report.sufficient}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "solve": _cmd_solve,
    "simulate": _cmd_simulate,
    "verify": _cmd_verify,
    "experiment": _cmd_experiment,
    "ratecheck": _cmd_ratecheck,
}


def dispatch(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc} (try --help)", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: cannot read {exc.filename} (check the path)", file=sys.stderr)
        return EXIT_USAGE
    except (json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"error: malformed input: {exc} (regenerate the file)", file=sys.stderr)
        return EXIT_USAGE
    except SpectrumMarketError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
