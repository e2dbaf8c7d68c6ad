"""Experiment orchestration: metrics, reports, and scenario sweeps.

A run trains one algorithm on one scenario, evaluates the trained
policy on a noise-free episode, and serializes two files: a JSON report
of scalar metrics and a CSV learning curve.  Identical (config, algo,
seed, iterations) inputs produce byte-identical outputs; nothing
time- or host-dependent is written.

Sweeps rerun the same experiment over a list of values for one config
entry, one process per point, each point internally single-threaded.
"""

from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import marl, simulation
from .core import Scenario, ScenarioError, read_config, validate_scenario
from .fusion import ViewScore, vcps_quality

DEFAULT_ITERATIONS = 2000

REPORT_NAME = "report.json"
CURVE_NAME = "curve.csv"
SWEEP_INDEX_NAME = "sweep_index.json"


def metric_cr(slot_rewards) -> float:
    """Cumulative reward: the sum of per-slot rewards."""
    return float(sum(slot_rewards))


def metric_car(scores: list[ViewScore], weights: tuple[float, float, float]
               ) -> tuple[float, float, float]:
    """Weighted complement of each quality component, averaged over views.

    The components sum to the mean per-view reward, so the triple shows
    how much of the reward each of timeliness, completeness and
    consistency contributes.
    """
    if not scores:
        return (weights[0], weights[1], weights[2])
    t = float(np.mean([s.norm_timeliness for s in scores]))
    c = float(np.mean([s.norm_completeness for s in scores]))
    k = float(np.mean([s.norm_consistency for s in scores]))
    return (weights[0] * (1.0 - t), weights[1] * (1.0 - c), weights[2] * (1.0 - k))


def metric_aqt(qtimes: list[list[list[float]]]) -> float:
    """Average queuing time, innermost means first.

    ``qtimes[t][v]`` holds vehicle v's per-upload queuing delays during
    slot t.  Each vehicle contributes the mean over its own uploads (0
    when it uploaded nothing), each slot averages over all vehicles,
    and the result averages over slots.
    """
    if not qtimes:
        return 0.0
    slot_means = []
    for per_vehicle in qtimes:
        n = len(per_vehicle)
        if n == 0:
            slot_means.append(0.0)
            continue
        total = 0.0
        for qs in per_vehicle:
            if qs:
                total += sum(qs) / len(qs)
        slot_means.append(total / n)
    return float(sum(slot_means) / len(slot_means))


def metric_sr(scores: list[ViewScore], threshold: float) -> float:
    """Fraction of scored views whose completeness meets the threshold."""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"completeness threshold must lie in [0, 1], got {threshold}")
    if not scores:
        return 1.0
    hits = sum(1 for s in scores if s.completeness >= threshold)
    return hits / len(scores)


@dataclass
class MetricsReport:
    """Scalar metrics plus the learning curve of one experiment run."""

    algo: str
    seed: int
    iterations: int
    config_digest: str
    completeness_threshold: float
    cr: float
    car: tuple[float, float, float]
    aqt_s: float
    sr: float
    quality: float  # mean per-view reward of the evaluation episode
    curve: np.ndarray

    def scalar_dict(self) -> dict:
        return {
            "algo": self.algo,
            "seed": self.seed,
            "iterations": self.iterations,
            "config_digest": self.config_digest,
            "completeness_threshold": self.completeness_threshold,
            "metrics": {
                "cr": self.cr,
                "car": [self.car[0], self.car[1], self.car[2]],
                "car_sum": self.car[0] + self.car[1] + self.car[2],
                "aqt_s": self.aqt_s,
                "sr": self.sr,
                "quality": self.quality,
            },
        }


def report_json(report: MetricsReport) -> str:
    return json.dumps(report.scalar_dict(), sort_keys=True, indent=2) + "\n"


def curve_csv(report: MetricsReport) -> str:
    n_vehicles = report.curve.shape[1] - 2
    header = "iteration,cr" + "".join(f",mean_dr_{i}" for i in range(n_vehicles))
    lines = [header]
    for row in report.curve:
        cells = [str(int(row[0]))] + [repr(float(x)) for x in row[1:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def write_outputs(report: MetricsReport, out_dir: str) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    report_path = os.path.join(out_dir, REPORT_NAME)
    curve_path = os.path.join(out_dir, CURVE_NAME)
    with open(report_path, "w", encoding="utf-8") as f:
        f.write(report_json(report))
    with open(curve_path, "w", encoding="utf-8") as f:
        f.write(curve_csv(report))
    return report_path, curve_path


def evaluate_metrics(scenario: Scenario, trained: marl.TrainResult) -> MetricsReport:
    """Score a trained policy on a noise-free evaluation episode."""
    result = marl.evaluate(scenario, trained)
    car = metric_car(result.scores, scenario.aov.weights)
    return MetricsReport(
        algo=trained.algo,
        seed=trained.seed,
        iterations=trained.iterations,
        config_digest=scenario.config_digest,
        completeness_threshold=scenario.completeness_threshold,
        cr=metric_cr(result.slot_rewards),
        car=car,
        aqt_s=metric_aqt(result.qtimes),
        sr=metric_sr(result.scores, scenario.completeness_threshold),
        quality=vcps_quality(result.scores),
        curve=trained.curve,
    )


def _resolve_scenario(config, seed: int | None) -> Scenario:
    if isinstance(config, Scenario):
        scenario = config
        if seed is not None and seed != scenario.seed:
            raise ValueError("cannot override the seed of an already-built scenario")
        return scenario
    if isinstance(config, str):
        cfg = read_config(config)
        base_dir = os.path.dirname(os.path.abspath(config))
    else:
        cfg = copy.deepcopy(config)
        base_dir = os.getcwd()
    if seed is not None:
        cfg["seed"] = seed
    return validate_scenario(cfg, base_dir=base_dir)


def run_experiment(config, algo: str, *, seed: int | None = None,
                   iterations: int = DEFAULT_ITERATIONS,
                   out_dir: str | None = None, progress=None) -> MetricsReport:
    """Train, evaluate, and (optionally) serialize one experiment.

    ``config`` may be a config file path, a raw config dict, or a
    built Scenario.  A ``seed`` argument overrides the config seed
    before the digest is computed, so the report hash always reflects
    the resolved inputs.
    """
    scenario = _resolve_scenario(config, seed)
    trained = marl.train(scenario, algo, iterations, progress=progress)
    report = evaluate_metrics(scenario, trained)
    if out_dir is not None:
        write_outputs(report, out_dir)
    return report


def set_config_entry(cfg: dict, path: str, value) -> None:
    """Assign ``value`` at a dotted path like ``edges.0.bandwidth_hz``."""
    parts = path.split(".")
    node = cfg
    for i, part in enumerate(parts[:-1]):
        try:
            key = int(part) if isinstance(node, list) else part
            node = node[key]
        except (KeyError, IndexError, ValueError, TypeError):
            raise ScenarioError(".".join(parts[: i + 1]), "no such config entry") from None
    last = parts[-1]
    try:
        key = int(last) if isinstance(node, list) else last
        node[key]
    except (KeyError, IndexError, ValueError, TypeError):
        raise ScenarioError(path, "no such config entry") from None
    node[key] = value


def _sweep_point(job) -> dict:
    cfg, algo, seed, iterations, param, value, point_dir = job
    point_cfg = copy.deepcopy(cfg)
    set_config_entry(point_cfg, param, value)
    report = run_experiment(point_cfg, algo, seed=seed, iterations=iterations,
                            out_dir=point_dir)
    return {
        "param": param,
        "value": value,
        "dir": os.path.basename(point_dir),
        "config_digest": report.config_digest,
        "cr": report.cr,
    }


def sweep(config, algo: str, param: str, values: list, out_dir: str, *,
          seed: int | None = None, iterations: int = DEFAULT_ITERATIONS,
          jobs: int | None = None) -> list[dict]:
    """Run one experiment per value of ``param``; returns the index rows.

    Points execute in separate processes (up to ``jobs`` at a time) and
    land in ``out_dir/point_<k>``.  Results are identical for any job
    count because every point depends only on its own inputs.
    """
    if isinstance(config, str):
        cfg = read_config(config)
        cfg = _absolutize_paths(cfg, os.path.dirname(os.path.abspath(config)))
    else:
        cfg = copy.deepcopy(config)
    if not values:
        raise ValueError("sweep needs at least one value")
    os.makedirs(out_dir, exist_ok=True)
    digits = max(3, len(str(len(values) - 1)))
    jobs_list = [
        (cfg, algo, seed, iterations, param, v,
         os.path.join(out_dir, f"point_{k:0{digits}d}"))
        for k, v in enumerate(values)
    ]
    workers = jobs if jobs is not None else (os.cpu_count() or 1)
    workers = max(1, min(workers, len(jobs_list)))
    if workers == 1:
        rows = [_sweep_point(j) for j in jobs_list]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_point, jobs_list))
    index_path = os.path.join(out_dir, SWEEP_INDEX_NAME)
    with open(index_path, "w", encoding="utf-8") as f:
        f.write(json.dumps(rows, sort_keys=True, indent=2) + "\n")
    return rows


def _absolutize_paths(cfg: dict, base_dir: str) -> dict:
    """Rewrite relative file references so points can run from any cwd."""
    cfg = copy.deepcopy(cfg)
    mobility = cfg.get("mobility")
    if isinstance(mobility, dict):
        path = mobility.get("path")
        if isinstance(path, str) and not os.path.isabs(path):
            mobility["path"] = os.path.join(base_dir, path)
    return cfg


def identity_gap(report: MetricsReport, result: simulation.EpisodeResult) -> float:
    """|CAR sum - mean slot reward|; zero up to rounding by construction."""
    mean_reward = float(np.mean(result.slot_rewards)) if result.slot_rewards else 1.0
    return abs(sum(report.car) - mean_reward)
