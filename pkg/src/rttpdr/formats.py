"""File formats: scenario files, measurement logs, and result artifacts.

Measurement log (CSV, UTF-8, '.' decimal, radians/meters/seconds):

    #ap,<id>,<x>,<y>          one line per AP, before the header row
    step,t,theta,ap_id,rtt_s  column header; the last column may instead
                              be range_m to carry distances directly
    1,0.0,0.0,1,6.8e-08       one row per (step, AP) with a measurement

Steps must appear with consistent (t, theta) across their rows; a missing
(step, AP) row simply means that AP did not answer at that step. Parse
errors report the offending line number.

Scenario files are YAML mirroring ScenarioConfig; ``turns`` is either a
full per-step list or a sparse {step: radians} mapping.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import yaml

from .simulator import ErrorReport, GroundTruth, ScenarioConfig
from .types import (
    ApDescriptor,
    MeasurementSet,
    PositioningError,
    SPEED_OF_LIGHT,
    StepEvent,
    TrajectoryEstimate,
)


class MeasurementLogError(PositioningError, ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def read_scenario(path) -> ScenarioConfig:
    """Load a scenario description from YAML."""
    with open(path, "r", encoding="utf-8") as handle:
        raw = yaml.safe_load(handle)
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: scenario file must be a mapping")
    required = {"aps", "step_length", "heading", "start", "steps"}
    missing = required - raw.keys()
    if missing:
        raise ValueError(f"{path}: missing scenario fields {sorted(missing)}")

    num_steps = int(raw["steps"])
    turns = np.zeros(num_steps)
    spec = raw.get("turns") or {}
    if isinstance(spec, dict):
        for step, value in spec.items():
            index = int(step)
            if not 1 <= index <= num_steps:
                raise ValueError(f"{path}: turn step {index} out of range")
            turns[index - 1] = float(value)
    else:
        values = np.asarray(spec, dtype=float)
        if values.size != num_steps:
            raise ValueError(f"{path}: turns list must have one entry per step")
        turns = values

    aps = []
    biases = []
    for entry in raw["aps"]:
        aps.append(ApDescriptor(int(entry["id"]), np.asarray(entry["position"], dtype=float)))
        biases.append(float(entry.get("bias", 0.0)))

    return ScenarioConfig(
        aps=tuple(aps),
        biases=tuple(biases),
        step_length=float(raw["step_length"]),
        heading=float(raw["heading"]),
        start=np.asarray(raw["start"], dtype=float),
        turns=turns,
        range_noise_sigma=float(raw.get("range_noise_sigma", 0.0)),
        heading_noise_sigma=float(raw.get("heading_noise_sigma", 0.0)),
        outlier_fraction=float(raw.get("outlier_fraction", 0.0)),
        outlier_low=float(raw.get("outlier_low", 2.0)),
        outlier_high=float(raw.get("outlier_high", 6.0)),
        seed=int(raw.get("seed", 0)),
    )


def write_scenario(config: ScenarioConfig, path) -> None:
    turn_map = {
        int(i + 1): float(v) for i, v in enumerate(config.turns) if v != 0.0
    }
    payload = {
        "seed": config.seed,
        "step_length": float(config.step_length),
        "heading": float(config.heading),
        "start": [float(x) for x in config.start],
        "steps": int(config.num_steps),
        "turns": turn_map,
        "range_noise_sigma": float(config.range_noise_sigma),
        "heading_noise_sigma": float(config.heading_noise_sigma),
        "outlier_fraction": float(config.outlier_fraction),
        "outlier_low": float(config.outlier_low),
        "outlier_high": float(config.outlier_high),
        "aps": [
            {
                "id": ap.ap_id,
                "position": [float(x) for x in ap.position],
                "bias": float(bias),
            }
            for ap, bias in zip(config.aps, config.biases)
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        yaml.safe_dump(payload, handle, sort_keys=False)


def write_measurement_log(path, aps, measurements, value_column: str = "rtt_s") -> None:
    """Write per-(step, AP) rows; NaN slots are simply omitted."""
    if value_column not in ("rtt_s", "range_m"):
        raise ValueError("value_column must be rtt_s or range_m")
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for ap in aps:
            handle.write(f"#ap,{ap.ap_id},{float(ap.position[0])!r},{float(ap.position[1])!r}\n")
        writer = csv.writer(handle)
        writer.writerow(["step", "t", "theta", "ap_id", value_column])
        for measurement in measurements:
            step = measurement.step
            for column, ap in enumerate(aps):
                tau = measurement.rtts[column]
                if not math.isfinite(tau):
                    continue
                value = tau if value_column == "rtt_s" else tau * SPEED_OF_LIGHT / 2.0
                writer.writerow(
                    [step.index, repr(float(step.timestamp)), repr(float(step.cumulative_heading)), ap.ap_id, repr(float(value))]
                )


def read_measurement_log(path) -> tuple[tuple[ApDescriptor, ...], list[MeasurementSet]]:
    """Parse a measurement log back into APs and per-step measurement sets."""
    aps: list[ApDescriptor] = []
    header: list[str] | None = None
    rows: list[tuple[int, int, float, float, int, float]] = []  # (line, step, t, theta, ap, value)
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            text = line.strip()
            if not text:
                continue
            if text.startswith("#ap,"):
                if header is not None:
                    raise MeasurementLogError(line_no, "AP declarations must precede the header row")
                parts = text.split(",")
                if len(parts) != 4:
                    raise MeasurementLogError(line_no, "expected #ap,<id>,<x>,<y>")
                try:
                    aps.append(ApDescriptor(int(parts[1]), (float(parts[2]), float(parts[3]))))
                except ValueError as err:
                    raise MeasurementLogError(line_no, f"bad AP declaration: {err}") from err
                continue
            if text.startswith("#"):
                continue
            parts = text.split(",")
            if header is None:
                if [p.strip() for p in parts[:4]] != ["step", "t", "theta", "ap_id"] or parts[4].strip() not in ("rtt_s", "range_m"):
                    raise MeasurementLogError(
                        line_no, "expected header step,t,theta,ap_id,rtt_s|range_m"
                    )
                header = [p.strip() for p in parts]
                continue
            if len(parts) != 5:
                raise MeasurementLogError(line_no, f"expected 5 fields, got {len(parts)}")
            try:
                rows.append(
                    (line_no, int(parts[0]), float(parts[1]), float(parts[2]), int(parts[3]), float(parts[4]))
                )
            except ValueError as err:
                raise MeasurementLogError(line_no, f"bad row: {err}") from err

    if header is None:
        raise MeasurementLogError(0, "missing header row")
    if not aps:
        raise MeasurementLogError(0, "no #ap declarations")
    if not rows:
        raise MeasurementLogError(0, "no measurement rows")
    ids = [ap.ap_id for ap in aps]
    if len(set(ids)) != len(ids):
        raise MeasurementLogError(0, "duplicate AP ids in header")
    column_of = {ap_id: i for i, ap_id in enumerate(ids)}
    as_range = header[4] == "range_m"

    steps: dict[int, tuple[int, float, float]] = {}  # step -> (line, t, theta)
    values: dict[int, np.ndarray] = {}
    for line_no, step, t, theta, ap_id, value in rows:
        if ap_id not in column_of:
            raise MeasurementLogError(line_no, f"AP {ap_id} was not declared")
        if value <= 0:
            raise MeasurementLogError(line_no, "measurement value must be positive")
        if step in steps:
            known = steps[step]
            if known[1] != t or known[2] != theta:
                raise MeasurementLogError(
                    line_no, f"step {step} repeats with different t/theta (first at line {known[0]})"
                )
        else:
            steps[step] = (line_no, t, theta)
            values[step] = np.full(len(aps), np.nan)
        slot = values[step]
        if math.isfinite(slot[column_of[ap_id]]):
            raise MeasurementLogError(line_no, f"duplicate measurement for step {step}, AP {ap_id}")
        slot[column_of[ap_id]] = value / (SPEED_OF_LIGHT / 2.0) if as_range else value

    indices = sorted(steps)
    if indices != list(range(1, len(indices) + 1)):
        raise MeasurementLogError(0, "step indices must be contiguous starting at 1")
    timestamps = [steps[i][1] for i in indices]
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        raise MeasurementLogError(0, "timestamps must be strictly increasing")
    thetas = [steps[i][2] for i in indices]
    if thetas[0] != 0.0:
        raise MeasurementLogError(steps[1][0], "the first step must have theta = 0")

    measurements = []
    previous_theta = 0.0
    for i in indices:
        theta = thetas[i - 1]
        event = StepEvent(
            index=i,
            timestamp=timestamps[i - 1],
            heading_change=theta - previous_theta if i > 1 else 0.0,
            cumulative_heading=theta,
        )
        previous_theta = theta
        measurements.append(MeasurementSet(step=event, rtts=values[i]))
    return tuple(aps), measurements


def write_trajectory_csv(path, estimate: TrajectoryEstimate, truth: GroundTruth | None = None, report: ErrorReport | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        if truth is None:
            writer.writerow(["n", "x_est", "y_est"])
            for i, point in enumerate(estimate.positions):
                writer.writerow([i + 1, repr(float(point[0])), repr(float(point[1]))])
            return
        writer.writerow(["n", "x_est", "y_est", "x_true", "y_true", "err"])
        errors = report.per_step if report is not None else np.linalg.norm(
            estimate.positions - truth.positions, axis=1
        )
        for i, (point, true_point) in enumerate(zip(estimate.positions, truth.positions)):
            writer.writerow(
                [
                    i + 1,
                    repr(float(point[0])),
                    repr(float(point[1])),
                    repr(float(true_point[0])),
                    repr(float(true_point[1])),
                    repr(float(errors[i])),
                ]
            )


def write_metrics_json(path, payload: dict) -> None:
    """Deterministic metrics dump: sorted keys, fixed separators."""
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(_jsonify(payload), handle, sort_keys=True, indent=2, allow_nan=True)
        handle.write("\n")


def _jsonify(value):
    if isinstance(value, dict):
        return {str(k): _jsonify(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        items = list(value)
        if isinstance(value, (set, frozenset)):
            items = sorted(items)
        return [_jsonify(v) for v in items]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return [_jsonify(v) for v in value.tolist()]
    if isinstance(value, float) and math.isnan(value):
        return None
    return value


def write_sweep_csv(path, rows, columns) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def ensure_parent(path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path
