"""Run orchestration behind the command-line verbs.

``run`` executes one algorithm on one input (scenario file or measurement
log) and writes ``trajectory.csv`` plus a deterministic ``metrics.json``.
``compare`` runs all three algorithms over a block of seeds and reports
summary statistics with paired significance tests; ``sweep`` varies one
parameter and records the error curve. Seeds derive deterministically from
the base seed, so identical invocations produce identical artifacts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import formats
from .alignment import OmegaSearchConfig
from .baselines import run_baseline_no_ta, run_baseline_raw
from .ensemble import EnsembleConfig
from .pipeline import (
    PipelineConfig,
    run_alignment_stage,
    run_positioning,
    run_ranging_stage,
)
from .ranging_arbitrary import GammaSearchConfig
from .simulator import (
    ErrorReport,
    GroundTruth,
    ScenarioConfig,
    evaluate,
    generate_measurements,
    generate_truth,
    nlos_site_scenario,
)
from .types import InfeasibleError, TrajectoryEstimate

ALGORITHMS = ("full", "no-ta", "raw")

SWEEP_PARAMETERS = ("C", "w1", "sigma", "N", "M")


@dataclass(frozen=True)
class RunConfig:
    """Mirror of the CLI flags; exactly one of scenario/log must be set."""

    scenario_path: str | None = None
    log_path: str | None = None
    algorithm: str = "full"
    gamma_grid: int = 2048
    omega_grid: int = 4096
    w1: float = 0.0
    candidate_count: int = 0  # 0 = quarter-of-N default
    quantize_heading: bool = False
    refine: bool = True
    seed: int | None = None  # overrides the scenario's seed
    output_dir: str = "."

    def __post_init__(self):
        if (self.scenario_path is None) == (self.log_path is None):
            raise ValueError("exactly one of scenario_path/log_path is required")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not 0.0 <= self.w1 <= 1.0:
            raise ValueError("w1 must lie in [0, 1]")

    def pipeline_config(self) -> PipelineConfig:
        refine_tol = 1e-10 if self.refine else None
        omega_tol = 1e-10 if self.refine else None
        return PipelineConfig(
            ensemble=EnsembleConfig(
                candidate_count=self.candidate_count or None,
                gamma=GammaSearchConfig(
                    grid_size=self.gamma_grid,
                    w1=self.w1,
                    w2=1.0 - self.w1,
                    refine_tol=refine_tol,
                ),
            ),
            omega=OmegaSearchConfig(grid_size=self.omega_grid, refine_tol=omega_tol),
            quantize_heading=self.quantize_heading,
        )


def _load_input(config: RunConfig):
    """Returns (aps, measurements, truth | None, scenario | None)."""
    if config.scenario_path is not None:
        scenario = formats.read_scenario(config.scenario_path)
        if config.seed is not None:
            scenario = scenario.with_seed(config.seed)
        truth = generate_truth(scenario)
        measurements = generate_measurements(scenario, truth)
        return scenario.aps, measurements, truth, scenario
    aps, measurements = formats.read_measurement_log(config.log_path)
    return aps, measurements, None, None


def execute_run(config: RunConfig) -> dict:
    """Run one algorithm, write trajectory.csv and metrics.json, and return
    the metrics payload."""
    aps, measurements, truth, scenario = _load_input(config)
    pipeline_config = config.pipeline_config()

    per_ap: dict = {}
    failures: dict = {}
    feasible: frozenset[int] = frozenset()
    heading = None
    unresolved: tuple[int, ...] = ()
    mobility = None

    if config.algorithm == "full":
        result = run_positioning(aps, measurements, pipeline_config)
        estimate = result.estimate
        per_ap = result.per_ap
        failures = result.failures
        feasible = result.feasible_aps
        heading = result.estimate.heading
        mobility = result.mobility
    elif config.algorithm == "no-ta":
        stage = run_ranging_stage(aps, measurements, pipeline_config)
        estimate = run_baseline_no_ta(
            aps, measurements, pipeline_config.ensemble, estimates=stage.per_ap
        )
        per_ap = stage.per_ap
        failures = stage.failures
        feasible = estimate.contributing_aps
        unresolved = estimate.unresolved_steps
        mobility = stage.mobility
    else:
        estimate = run_baseline_raw(aps, measurements)
        feasible = estimate.contributing_aps
        unresolved = estimate.unresolved_steps

    report = evaluate(estimate, truth) if truth is not None else None
    payload = {
        "algorithm": config.algorithm,
        "seed": scenario.seed if scenario is not None else None,
        "mobility": mobility.value if mobility is not None else None,
        "num_steps": len(measurements),
        "num_aps": len(aps),
        "heading": heading,
        "feasible_aps": sorted(feasible),
        "per_ap": {
            str(ap_id): {
                "step_length": estimate_.step_length,
                "bias": estimate_.bias,
                "feasible": estimate_.feasible,
            }
            for ap_id, estimate_ in sorted(per_ap.items())
        },
        "failures": {str(k): v for k, v in sorted(failures.items())},
        "unresolved_steps": list(unresolved),
        "error": report.as_dict() if report is not None else None,
        "config": {
            "gamma_grid": config.gamma_grid,
            "omega_grid": config.omega_grid,
            "w1": config.w1,
            "w2": 1.0 - config.w1,
            "candidates": config.candidate_count,
            "quantize_heading": config.quantize_heading,
            "refine": config.refine,
        },
    }

    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    formats.write_trajectory_csv(out / "trajectory.csv", estimate, truth, report)
    formats.write_metrics_json(out / "metrics.json", payload)
    return payload


def simulate_to_log(
    scenario_path,
    log_path,
    truth_path=None,
    seed: int | None = None,
    value_column: str = "rtt_s",
) -> int:
    """Materialize a scenario into a measurement log; returns the step count."""
    scenario = formats.read_scenario(scenario_path)
    if seed is not None:
        scenario = scenario.with_seed(seed)
    truth = generate_truth(scenario)
    measurements = generate_measurements(scenario, truth)
    formats.write_measurement_log(log_path, scenario.aps, measurements, value_column)
    if truth_path is not None:
        with open(truth_path, "w", encoding="utf-8", newline="") as handle:
            handle.write("n,x_true,y_true\n")
            for i, point in enumerate(truth.positions):
                handle.write(f"{i + 1},{float(point[0])!r},{float(point[1])!r}\n")
    return scenario.num_steps


def _run_algorithms(
    scenario: ScenarioConfig, pipeline_config: PipelineConfig, algorithms=ALGORITHMS
) -> dict[str, float]:
    """Per-seed mean errors for the requested algorithms (NaN = infeasible)."""
    truth = generate_truth(scenario)
    measurements = generate_measurements(scenario, truth)
    errors: dict[str, float] = {}
    stage = None
    for algorithm in algorithms:
        try:
            if algorithm == "full":
                stage = run_ranging_stage(scenario.aps, measurements, pipeline_config)
                estimate, _, _ = run_alignment_stage(scenario.aps, stage, pipeline_config)
            elif algorithm == "no-ta":
                if stage is None:
                    stage = run_ranging_stage(scenario.aps, measurements, pipeline_config)
                estimate = run_baseline_no_ta(
                    scenario.aps,
                    measurements,
                    pipeline_config.ensemble,
                    estimates=stage.per_ap,
                )
            else:
                estimate = run_baseline_raw(scenario.aps, measurements)
            errors[algorithm] = evaluate(estimate, truth).mean
        except InfeasibleError:
            errors[algorithm] = math.nan
    return errors


def compare_algorithms(
    scenario: ScenarioConfig,
    seeds: int,
    pipeline_config: PipelineConfig | None = None,
    algorithms=ALGORITHMS,
) -> dict:
    """Run the three algorithms over ``seeds`` derived seeds.

    Returns summary statistics per algorithm and one-sided paired t-tests
    on per-seed mean errors for the expected orderings full < no-ta < raw.
    """
    pipeline_config = pipeline_config or PipelineConfig()
    per_algorithm: dict[str, list[float]] = {a: [] for a in algorithms}
    for offset in range(seeds):
        errors = _run_algorithms(
            scenario.with_seed(scenario.seed + offset), pipeline_config, algorithms
        )
        for algorithm in algorithms:
            per_algorithm[algorithm].append(errors[algorithm])

    summary = {}
    for algorithm, values in per_algorithm.items():
        arr = np.asarray(values)
        ok = arr[np.isfinite(arr)]
        summary[algorithm] = {
            "seeds": int(arr.size),
            "failures": int(arr.size - ok.size),
            "mean": float(np.mean(ok)) if ok.size else math.nan,
            "median": float(np.median(ok)) if ok.size else math.nan,
            "std": float(np.std(ok)) if ok.size else math.nan,
        }

    comparisons = {}
    ordered = [a for a in ("full", "no-ta", "raw") if a in per_algorithm]
    for first, second in zip(ordered, ordered[1:]):
        a = np.asarray(per_algorithm[first])
        b = np.asarray(per_algorithm[second])
        keep = np.isfinite(a) & np.isfinite(b)
        if int(keep.sum()) >= 3:
            test = stats.ttest_rel(a[keep], b[keep], alternative="less")
            comparisons[f"{first}<{second}"] = {
                "pairs": int(keep.sum()),
                "mean_difference": float(np.mean(a[keep] - b[keep])),
                "p_value": float(test.pvalue),
            }
    return {"per_algorithm": summary, "paired_tests": comparisons, "errors": per_algorithm}


def _scenario_for_sweep(
    base: ScenarioConfig, parameter: str, value: float, seed: int
) -> tuple[ScenarioConfig, PipelineConfig | None]:
    if parameter == "C":
        return base.with_seed(seed), None  # handled via pipeline config
    if parameter == "w1":
        return base.with_seed(seed), None
    if parameter == "sigma":
        return replace(base, seed=seed, range_noise_sigma=float(value)), None
    # N and M re-draw the site layout with the base scenario's corruption
    return (
        nlos_site_scenario(
            seed,
            num_steps=int(value) if parameter == "N" else base.num_steps,
            num_aps=int(value) if parameter == "M" else base.num_aps,
            range_noise_sigma=base.range_noise_sigma,
            heading_noise_sigma=base.heading_noise_sigma,
            bias_low=min(base.biases) if base.biases else 1.0,
            bias_high=max(base.biases) if base.biases else 5.0,
            outlier_fraction=base.outlier_fraction,
            outlier_low=base.outlier_low,
            outlier_high=base.outlier_high,
        ),
        None,
    )


def sweep(
    base_scenario: ScenarioConfig,
    parameter: str,
    values,
    seeds: int,
    pipeline_config: PipelineConfig | None = None,
) -> list[dict]:
    """Error curve of the full pipeline along one parameter.

    ``C`` and ``w1`` vary the pipeline configuration on the fixed scenario;
    ``sigma`` varies the measurement corruption; ``N`` and ``M`` re-draw
    the benchmark site at the requested size. Each point averages the mean
    positioning error over ``seeds`` seeds; infeasible runs are counted
    separately and excluded from the averages.
    """
    if parameter not in SWEEP_PARAMETERS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMETERS}")
    pipeline_config = pipeline_config or PipelineConfig()
    rows = []
    for value in values:
        config = pipeline_config
        if parameter == "C":
            config = replace(
                pipeline_config,
                ensemble=replace(pipeline_config.ensemble, candidate_count=int(value)),
            )
        elif parameter == "w1":
            config = replace(
                pipeline_config,
                ensemble=replace(
                    pipeline_config.ensemble,
                    gamma=replace(
                        pipeline_config.ensemble.gamma, w1=float(value), w2=1.0 - float(value)
                    ),
                ),
            )
        errors = []
        failures = 0
        for offset in range(seeds):
            scenario, _ = _scenario_for_sweep(
                base_scenario, parameter, value, base_scenario.seed + offset
            )
            try:
                truth = generate_truth(scenario)
                measurements = generate_measurements(scenario, truth)
                result = run_positioning(scenario.aps, measurements, config)
                errors.append(evaluate(result.estimate, truth).mean)
            except InfeasibleError:
                failures += 1
        rows.append(
            {
                "parameter": parameter,
                "value": float(value),
                "seeds": seeds,
                "failures": failures,
                "mean_error": float(np.mean(errors)) if errors else math.nan,
                "median_error": float(np.median(errors)) if errors else math.nan,
            }
        )
    return rows
