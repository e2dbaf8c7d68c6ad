"""Command-line entry points.

Exit codes: 0 success, 2 configuration or argument problem, 3 file IO
problem, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness, mobility
from .core import ScenarioError, load_scenario
from .marl import ALGORITHMS


def _parse_values(text: str) -> list:
    values = []
    for piece in text.split(","):
        piece = piece.strip()
        if not piece:
            continue
        try:
            values.append(json.loads(piece))
        except json.JSONDecodeError:
            values.append(piece)
    if not values:
        raise ScenarioError("--values", "no values given")
    return values


def _parse_law(text: str, flag: str) -> dict:
    try:
        law = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(flag, f"invalid JSON: {exc}") from None
    if not isinstance(law, dict) or "law" not in law:
        raise ScenarioError(flag, 'expected an object like {"law": "normal", ...}')
    return law


def _cmd_run(args) -> int:
    report = harness.run_experiment(
        args.config, args.algo, seed=args.seed,
        iterations=args.iterations, out_dir=args.out,
    )
    print(f"algo={report.algo} seed={report.seed} cr={report.cr!r} "
          f"sr={report.sr!r} aqt_s={report.aqt_s!r}")
    if args.out:
        print(f"wrote {args.out}/{harness.REPORT_NAME} and {args.out}/{harness.CURVE_NAME}")
    return 0


def _cmd_sweep(args) -> int:
    rows = harness.sweep(
        args.config, args.algo, args.param, _parse_values(args.values),
        args.out, seed=args.seed, iterations=args.iterations, jobs=args.jobs,
    )
    for row in rows:
        print(f"{row['dir']}: {args.param}={row['value']!r} cr={row['cr']!r}")
    print(f"wrote {args.out}/{harness.SWEEP_INDEX_NAME}")
    return 0


def _cmd_gen_traj(args) -> int:
    table = mobility.synth_trajectories(
        n_vehicles=args.vehicles,
        area_m=args.area,
        speed_law=_parse_law(args.speed_law, "--speed-law"),
        dwell_law=_parse_law(args.dwell_law, "--dwell-law"),
        horizon=args.horizon,
        seed=args.seed,
    )
    mobility.write_trajectories_csv(table, args.out)
    print(f"wrote {len(table)} trajectories to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    scenario = load_scenario(args.config)
    print(f"OK {scenario.config_digest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edgeview",
        description="Deterministic scheduling laboratory for edge view fusion.",
        epilog="exit codes: 0 ok, 2 config error, 3 IO error, 1 unexpected error",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train one algorithm and write a report")
    run.add_argument("--config", required=True, help="scenario JSON path")
    run.add_argument("--algo", required=True, choices=ALGORITHMS)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None, help="output directory")
    run.add_argument("--iterations", type=int, default=harness.DEFAULT_ITERATIONS)
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="rerun one experiment over config values")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--algo", required=True, choices=ALGORITHMS)
    sweep.add_argument("--param", required=True,
                       help="dotted config path, e.g. edges.0.bandwidth_hz")
    sweep.add_argument("--values", required=True,
                       help="comma-separated values, e.g. 1e6,2e6,3e6")
    sweep.add_argument("--out", required=True)
    sweep.add_argument("--seed", type=int, default=None)
    sweep.add_argument("--iterations", type=int, default=harness.DEFAULT_ITERATIONS)
    sweep.add_argument("--jobs", type=int, default=None,
                       help="parallel processes (default: CPU count)")
    sweep.set_defaults(func=_cmd_sweep)

    gen = sub.add_parser("gen-traj", help="generate a synthetic trajectory CSV")
    gen.add_argument("--out", required=True)
    gen.add_argument("--vehicles", type=int, required=True)
    gen.add_argument("--horizon", type=int, required=True)
    gen.add_argument("--area", type=float, default=1000.0, metavar="SIDE_M",
                     help="side of the square area in meters")
    gen.add_argument("--speed-law", default='{"law": "normal", "mean": 13.9, "std": 2.0}')
    gen.add_argument("--dwell-law", default='{"law": "uniform", "low": 5, "high": 15}')
    gen.add_argument("--seed", type=int, default=0)
    gen.set_defaults(func=_cmd_gen_traj)

    val = sub.add_parser("validate", help="check a scenario config and print its digest")
    val.add_argument("--config", required=True)
    val.set_defaults(func=_cmd_validate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - the CLI maps everything to a code
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
