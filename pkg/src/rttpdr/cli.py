"""Command-line interface: simulate, run, sweep, compare."""

from __future__ import annotations

import argparse
import sys

from . import formats, harness
from .simulator import nlos_site_scenario


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--grid-gamma", type=int, default=2048, help="bearing grid size over [0, pi)")
    parser.add_argument("--grid-omega", type=int, default=4096, help="heading grid size over [0, 2*pi)")
    parser.add_argument("--w1", type=float, default=0.0, help="weight of the system residual (w2 = 1 - w1)")
    parser.add_argument("--candidates", type=int, default=0, help="reference-step pool size (0 = quarter of N)")
    parser.add_argument(
        "--quantize-heading",
        action=argparse.BooleanOptionalAction,
        default=False,
        help="snap measured heading changes to quarter turns",
    )
    parser.add_argument(
        "--refine",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="polish grid minima with local refinement",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rttpdr",
        description="WiFi RTT + pedestrian dead reckoning positioning toolkit",
    )
    sub = parser.add_subparsers(dest="verb", required=True)

    sim = sub.add_parser("simulate", help="materialize a scenario into a measurement log")
    sim.add_argument("--scenario", required=True)
    sim.add_argument("--log", required=True, help="output measurement log CSV")
    sim.add_argument("--truth", default=None, help="optional ground-truth CSV output")
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument(
        "--ranges",
        action="store_true",
        help="write range_m values instead of rtt_s",
    )

    run = sub.add_parser("run", help="run one algorithm on a scenario or log")
    source = run.add_mutually_exclusive_group(required=True)
    source.add_argument("--scenario")
    source.add_argument("--log")
    run.add_argument("--algorithm", choices=harness.ALGORITHMS, default="full")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out-dir", default=".")
    _add_pipeline_flags(run)

    swp = sub.add_parser("sweep", help="error curve along one parameter")
    swp.add_argument("--scenario", default=None, help="base scenario (default: built-in NLOS site)")
    swp.add_argument("--parameter", choices=harness.SWEEP_PARAMETERS, required=True)
    swp.add_argument("--values", required=True, help="comma-separated values")
    swp.add_argument("--seeds", type=int, default=20)
    swp.add_argument("--seed", type=int, default=None, help="override the base seed")
    swp.add_argument("--out", default="sweep.csv")
    _add_pipeline_flags(swp)

    cmp_ = sub.add_parser("compare", help="full pipeline vs the two baselines")
    cmp_.add_argument("--scenario", default=None, help="base scenario (default: built-in NLOS site)")
    cmp_.add_argument("--seeds", type=int, default=50)
    cmp_.add_argument("--seed", type=int, default=None, help="override the base seed")
    cmp_.add_argument("--out", default=None, help="optional JSON report path")
    _add_pipeline_flags(cmp_)
    return parser


def _pipeline_config(args) -> harness.PipelineConfig:
    return harness.RunConfig(
        scenario_path="unused",
        algorithm="full",
        gamma_grid=args.grid_gamma,
        omega_grid=args.grid_omega,
        w1=args.w1,
        candidate_count=args.candidates,
        quantize_heading=args.quantize_heading,
        refine=args.refine,
    ).pipeline_config()


def _base_scenario(args):
    if args.scenario is not None:
        scenario = formats.read_scenario(args.scenario)
    else:
        scenario = nlos_site_scenario(seed=0)
    if args.seed is not None:
        scenario = scenario.with_seed(args.seed)
    return scenario


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)

    if args.verb == "simulate":
        steps = harness.simulate_to_log(
            args.scenario,
            args.log,
            truth_path=args.truth,
            seed=args.seed,
            value_column="range_m" if args.ranges else "rtt_s",
        )
        print(f"wrote {steps} steps to {args.log}")
        return 0

    if args.verb == "run":
        config = harness.RunConfig(
            scenario_path=args.scenario,
            log_path=args.log,
            algorithm=args.algorithm,
            gamma_grid=args.grid_gamma,
            omega_grid=args.grid_omega,
            w1=args.w1,
            candidate_count=args.candidates,
            quantize_heading=args.quantize_heading,
            refine=args.refine,
            seed=args.seed,
            output_dir=args.out_dir,
        )
        payload = harness.execute_run(config)
        if payload["error"] is not None:
            error = payload["error"]
            print(
                f"{payload['algorithm']}: mean {error['mean']:.3f} m, "
                f"median {error['median']:.3f} m over {payload['num_steps']} steps"
            )
        else:
            print(f"{payload['algorithm']}: trajectory written ({payload['num_steps']} steps)")
        print(f"artifacts in {args.out_dir}/trajectory.csv and metrics.json")
        return 0

    if args.verb == "sweep":
        scenario = _base_scenario(args)
        values = [float(v) for v in args.values.split(",")]
        rows = harness.sweep(scenario, args.parameter, values, args.seeds, _pipeline_config(args))
        formats.write_sweep_csv(
            args.out,
            [
                (
                    row["parameter"],
                    row["value"],
                    row["seeds"],
                    row["failures"],
                    row["mean_error"],
                    row["median_error"],
                )
                for row in rows
            ],
            ["parameter", "value", "seeds", "failures", "mean_error", "median_error"],
        )
        for row in rows:
            print(
                f"{row['parameter']}={row['value']:g}: mean {row['mean_error']:.3f} m "
                f"median {row['median_error']:.3f} m ({row['failures']} failures)"
            )
        print(f"wrote {args.out}")
        return 0

    if args.verb == "compare":
        scenario = _base_scenario(args)
        report = harness.compare_algorithms(scenario, args.seeds, _pipeline_config(args))
        print(f"{'algorithm':<8} {'mean':>8} {'median':>8} {'std':>8} {'failures':>9}")
        for algorithm in harness.ALGORITHMS:
            entry = report["per_algorithm"][algorithm]
            print(
                f"{algorithm:<8} {entry['mean']:>8.3f} {entry['median']:>8.3f} "
                f"{entry['std']:>8.3f} {entry['failures']:>9d}"
            )
        for label, test in report["paired_tests"].items():
            print(
                f"paired {label}: mean diff {test['mean_difference']:+.3f} m, "
                f"one-sided p = {test['p_value']:.2e}"
            )
        if args.out:
            formats.write_metrics_json(
                args.out, {k: v for k, v in report.items() if k != "errors"}
            )
            print(f"wrote {args.out}")
        return 0

    return 1


if __name__ == "__main__":
    sys.exit(main())
