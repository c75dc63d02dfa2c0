"""Command-line entry point: ``jsqlab <subcommand> [options]``.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 failed
verdicts (``sweep --check``). Everything a command writes goes under
``--out`` together with a single ``manifest.json``.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, experiments, io
from .ctmc import CtmcParams, LevelOverflow, gillespie_run
from .diffusion import (
    DiffusionParams,
    DiffusionState,
    NumericalBlowUp,
    TrajectoryManifest,
    hitting_time_q1,
    hitting_time_q2,
    record_path,
)
from .functionals import Functional
from .regeneration import (
    InsufficientCycles,
    RegenConfig,
    default_B,
    estimate_stationary,
    run_cycles,
    tail_curve,
    tail_functionals,
)
from .stats import identity_checks, identity_functionals

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_VERDICT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _u64(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> float:
    v = float(text)
    if not (v > 0 and math.isfinite(v)):
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="flat JSON file of option defaults")
    g.add_argument("--seed", type=_u64, default=0, help="master seed (u64)")
    g.add_argument("--out", type=Path, default=Path("jsqlab-out"), help="output directory")
    g.add_argument("--workers", type=int, default=1, help="worker processes")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="jsqlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("diffusion", parents=[common], help="dump one trajectory")
    p.add_argument("--beta", type=_positive, default=1.0)
    p.add_argument("--dt", type=_positive)
    p.add_argument("--duration", type=_positive, default=100.0)
    p.add_argument("--stride", type=int, default=10)
    p.add_argument("--q1", type=float, default=0.0)
    p.add_argument("--q2", type=_positive, help="initial Q2 (default 2B)")

    p = sub.add_parser("stationary", parents=[common], help="regenerative estimates and tails")
    p.add_argument("--beta", type=_positive, default=1.0)
    p.add_argument("--dt", type=_positive)
    p.add_argument("--cycles", type=int, default=1000)
    p.add_argument("--B", type=_positive, help="regeneration level")
    p.add_argument("--jackknife", action="store_true")
    p.add_argument("--q2-levels", type=_positive, nargs="+", help="Q2 tail levels")
    p.add_argument("--q1-levels", type=_positive, nargs="+", help="Q1 tail levels x (Q1 <= -x)")

    p = sub.add_parser("ctmc", parents=[common], help="pre-limit N-server chain")
    p.add_argument("--n-servers", type=int, default=100)
    p.add_argument("--beta", type=_positive, default=1.0)
    p.add_argument("--horizon", type=_positive, default=2e4)
    p.add_argument("--burn-in", type=float)
    p.add_argument("--batches", type=int, default=32)

    p = sub.add_parser("identities", parents=[common], help="exact stationary identities")
    p.add_argument("--beta", type=_positive, default=1.0)
    p.add_argument("--dt", type=_positive)
    p.add_argument("--nmax", type=int, default=2)
    p.add_argument("--cycles", type=int, default=2000)

    p = sub.add_parser("hitting", parents=[common], help="hitting times of a level")
    p.add_argument("--beta", type=_positive, default=3.0)
    p.add_argument("--dt", type=_positive)
    p.add_argument("--coordinate", choices=("q1", "q2"), default="q2")
    p.add_argument("--level", type=float, required=False)
    p.add_argument("--q1", type=float, default=0.0)
    p.add_argument("--q2", type=_positive, default=1.0)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--max-time", type=_positive, default=1e4)

    p = sub.add_parser("sweep", parents=[common], help="run a scripted study")
    p.add_argument("study", choices=sorted(experiments.STUDIES))
    p.add_argument("--betas", type=_positive, nargs="+")
    p.add_argument("--cycles", type=int, default=500)
    p.add_argument("--replications", type=int, default=200)
    p.add_argument("--check", action="store_true", help="exit 3 if any verdict fails")

    p = sub.add_parser("figure1", parents=[common], help="time-weighted histograms of -Q1, Q2")
    p.add_argument("--betas", type=_positive, nargs="+", default=list(experiments.FIGURE1_BETAS))
    p.add_argument("--horizon", type=_positive, default=experiments.FIGURE1_HORIZON)
    p.add_argument("--burn-in", type=float, default=1000.0)
    return parser


def _apply_config(parser, argv):
    """Parse, then re-parse with defaults taken from ``--config`` if given."""
    args = parser.parse_args(argv)
    if args.config is None:
        return args
    try:
        values = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        parser.error(f"cannot read config {args.config}: {exc}")
    if not isinstance(values, dict):
        parser.error("config must be a flat JSON object")
    known = vars(args)
    unknown = [k for k in values if k.replace("-", "_") not in known]
    if unknown:
        parser.error(f"unknown config keys: {', '.join(unknown)}")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in values.items()})
    return parser.parse_args(argv)


def _snapshot(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}


def _params(args) -> DiffusionParams:
    return DiffusionParams(args.beta, dt=getattr(args, "dt", None), seed=args.seed)


def cmd_diffusion(args) -> list[str]:
    params = _params(args)
    q2 = args.q2 if args.q2 is not None else 2.0 * default_B(args.beta)
    start = DiffusionState(0.0, args.q1, q2)
    rows = record_path(start, params, args.duration, args.stride)
    io.write_csv(args.out / "trajectory.csv", ("t", "q1", "q2", "l"), rows.tolist())
    man = TrajectoryManifest(params, start, args.duration, args.stride).to_dict()
    io.write_json(args.out / "trajectory_params.json", man)
    return ["trajectory.csv", "trajectory_params.json"]


def _default_q2_levels(beta):
    return [x / beta for x in experiments.Q2_TAIL_GRID]


def cmd_stationary(args) -> list[str]:
    params = _params(args)
    q2_levels = sorted(args.q2_levels or _default_q2_levels(args.beta))
    q1_levels = sorted(args.q1_levels or [0.5, 1.0, 2.0, 3.0])
    fs = [
        Functional.monomial("q1", 1, 0),
        Functional.monomial("q2", 0, 1),
        Functional.monomial("q1^2", 2, 0),
        Functional.monomial("q2^2", 0, 2),
        Functional.local_time("L"),
    ]
    fs += tail_functionals("q2_above", q2_levels) + tail_functionals("q1_below", q1_levels)
    config = RegenConfig(args.B or default_B(args.beta), args.cycles, functionals=tuple(fs))
    cycles = run_cycles(params, config, args.workers)
    names = config.functional_names
    io.write_cycle_table(args.out / "cycles.csv", cycles, names)
    est = {n: estimate_stationary(cycles, n, args.jackknife).to_dict() for n in names}
    io.write_json(args.out / "estimates.json", est)
    rows = []
    for coord, levels in (("q2_above", q2_levels), ("q1_below", q1_levels)):
        for p in tail_curve(cycles, coord, levels):
            rows.append((coord, p.level, p.raw.value, p.raw.std_error, p.corrected))
    io.write_csv(args.out / "tails.csv", ("coordinate", "level", "raw", "std_error", "isotonic"),
                 rows)
    return ["cycles.csv", "estimates.json", "tails.csv"]


def cmd_ctmc(args) -> list[str]:
    params = CtmcParams(args.n_servers, args.beta, args.seed)
    run = gillespie_run(params, args.horizon, args.burn_in, args.batches)
    (q1, q2), (s1, s2) = run.scaled_means(args.n_servers), run.scaled_se(args.n_servers)
    io.write_json(
        args.out / "ctmc_means.json",
        {
            "n_servers": args.n_servers,
            "lambda": params.lam,
            "level_means": run.level_means,
            "level_std_errors": run.level_se,
            "qbar1": {"value": q1, "std_error": s1},
            "qbar2": {"value": q2, "std_error": s2},
        },
    )
    rows = []
    for name in ("qbar1", "qbar2"):
        rows += io.histogram_rows(name, run.edges[name], run.histograms[name])
    io.write_csv(args.out / "ctmc_histogram.csv", ("coordinate", "bin_left", "bin_right", "mass"),
                 rows)
    return ["ctmc_means.json", "ctmc_histogram.csv"]


def cmd_identities(args) -> list[str]:
    params = _params(args)
    fs = identity_functionals(args.beta, args.nmax)
    config = RegenConfig(default_B(args.beta), args.cycles, functionals=tuple(fs))
    cycles = run_cycles(params, config, args.workers)
    reports = identity_checks(cycles, args.beta, args.nmax)
    io.write_json(args.out / "identities.json", [r.to_dict() for r in reports])
    return ["identities.json"]


def cmd_hitting(args) -> list[str]:
    params = _params(args)
    if args.coordinate == "q1":
        level = 0.0 if args.level is None else args.level
        hitter = hitting_time_q1
    else:
        level = args.beta / 4 if args.level is None else args.level
        hitter = hitting_time_q2
    start = DiffusionState(0.0, args.q1, args.q2)
    rows = []
    for i in range(args.reps):
        rng = np.random.default_rng(np.random.SeedSequence(args.seed, spawn_key=(i,)))
        res = hitter(start, params, level, args.max_time, rng=rng)
        rows.append((i, res.hit, res.time))
    io.write_csv(args.out / "hitting.csv", ("replication", "hit", "time"), rows)
    times = np.array([r[2] for r in rows if r[1]])
    summary = {
        "coordinate": args.coordinate,
        "level": level,
        "hits": int(times.size),
        "truncated": args.reps - int(times.size),
        "mean": float(times.mean()) if times.size else math.nan,
        "std_error": float(times.std(ddof=1) / math.sqrt(times.size)) if times.size > 1 else math.nan,
    }
    io.write_json(args.out / "hitting.json", summary)
    return ["hitting.csv", "hitting.json"]


def cmd_sweep(args) -> list[str]:
    _, default_betas = experiments.STUDIES[args.study]
    spec = experiments.SweepSpec(
        betas=tuple(args.betas or default_betas),
        cycles=args.cycles,
        replications=args.replications,
        seed=args.seed,
        workers=args.workers,
        out_dir=args.out,
    )
    report = experiments.run_study(args.study, spec)
    written = report.write(args.out)
    for v in report.verdicts:
        print(v.line())
    args._failed = args.check and not report.passed
    return written


def cmd_figure1(args) -> list[str]:
    spec = experiments.SweepSpec(
        betas=tuple(args.betas), horizon=args.horizon, burn_in=args.burn_in, seed=args.seed,
    )
    report = experiments.figure1(spec)
    written = []
    for key, (header, rows) in report.tables.items():
        name = f"figure1_{key}.csv"
        io.write_csv(args.out / name, header, rows)
        written.append(name)
    return written


COMMANDS = {
    "diffusion": cmd_diffusion,
    "stationary": cmd_stationary,
    "ctmc": cmd_ctmc,
    "identities": cmd_identities,
    "hitting": cmd_hitting,
    "sweep": cmd_sweep,
    "figure1": cmd_figure1,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, list(sys.argv[1:] if argv is None else argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.workers < 1:
        parser.print_usage(sys.stderr)
        print("jsqlab: error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    start = time.perf_counter()
    args._failed = False
    try:
        written = COMMANDS[args.command](args)
    except (NumericalBlowUp, InsufficientCycles, LevelOverflow, FloatingPointError) as exc:
        print(f"jsqlab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"jsqlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    config = {k: v for k, v in _snapshot(args).items() if not k.startswith("_")}
    io.write_manifest(args.out, args.command, config, args.seed,
                      time.perf_counter() - start, written)
    return EXIT_VERDICT if args._failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
