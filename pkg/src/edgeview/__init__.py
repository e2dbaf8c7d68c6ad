"""Deterministic scheduling laboratory for cooperative sensing at the edge.

Vehicles sense heterogeneous information types and upload them to edge
nodes over a shared wireless channel; each edge fuses the uploads into
views and scores them by timeliness, completeness and consistency.
The package provides the queueing, channel, fusion and mobility models,
the per-slot episode engine, four decision algorithms (three learned,
one random), and a reproducible experiment harness.
"""

from .core import (
    AovParams,
    ChannelParams,
    EdgeState,
    InformationType,
    Scenario,
    ScenarioError,
    TrainingParams,
    VehicleState,
    ViewSpec,
    load_scenario,
    read_config,
    validate_scenario,
)
from .harness import MetricsReport, run_experiment, sweep
from .marl import ALGORITHMS, TrainResult, train
from .simulation import EpisodeResult, run_episode

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS",
    "AovParams",
    "ChannelParams",
    "EdgeState",
    "EpisodeResult",
    "InformationType",
    "MetricsReport",
    "Scenario",
    "ScenarioError",
    "TrainResult",
    "TrainingParams",
    "VehicleState",
    "ViewSpec",
    "load_scenario",
    "read_config",
    "run_episode",
    "run_experiment",
    "sweep",
    "train",
    "validate_scenario",
    "__version__",
]
