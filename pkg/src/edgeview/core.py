"""Scenario model: information catalog, vehicles, edges, views, geometry.

A scenario is loaded from JSON (plus optional environment-variable
overrides), validated once, and then treated as immutable by every other
module.  All distances are planar meters, all times are 1 s slots
numbered 1..horizon, data sizes are bits, and bandwidth is Hz.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import mobility

#: prefix for environment-variable config overrides, e.g.
#: EDGEVIEW_HORIZON=100 or EDGEVIEW_CHANNEL__NOISE_DBM=-85
ENV_PREFIX = "EDGEVIEW_"


class ScenarioError(ValueError):
    """Configuration rejected at validation, with the offending field path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class InformationType:
    """One entry of the sensed-information catalog."""

    id: int
    data_size_bits: float


@dataclass(frozen=True)
class ViewSpec:
    """A view an edge must keep fresh: the set of catalog types it needs."""

    id: int
    required_types: frozenset[int]


@dataclass(frozen=True)
class VehicleState:
    id: int
    sensible_types: tuple[int, ...]
    freq_bounds: dict[int, tuple[float, float]]  # type id -> (min Hz, max Hz)
    tx_power_mw: float
    trajectory: mobility.Trajectory

    def position(self, t: int) -> tuple[float, float] | None:
        return self.trajectory.position(t)


@dataclass(frozen=True)
class EdgeState:
    id: int
    location: tuple[float, float]
    radio_range_m: float
    bandwidth_hz: float
    views: tuple[ViewSpec, ...]


@dataclass(frozen=True)
class ChannelParams:
    noise_dbm: float = -90.0
    antenna_constant: float = 1.0
    path_loss_exponent: float = 3.0
    fading_mean: float = 2.0
    fading_variance: float = 0.4
    noise_uncertainty_db: tuple[float, float] = (0.0, 3.0)


@dataclass(frozen=True)
class AovParams:
    """Weights and normalization scales of the view-age score."""

    weights: tuple[float, float, float] = (0.3, 0.4, 0.3)
    timeliness_scale: float = 1.0
    consistency_scale: float = 1.0


@dataclass(frozen=True)
class TrainingParams:
    gamma: float = 0.996
    buffer_capacity: int = 100000
    batch_size: int = 512
    learning_rate: float = 0.001
    noise_std: float = 0.2
    noise_decay: float = 0.999
    noise_floor: float = 0.01
    target_rate: float = 0.005
    actor_hidden: tuple[int, ...] = (64, 32)
    critic_hidden: tuple[int, ...] = (128, 64)


@dataclass(frozen=True)
class Scenario:
    """Validated, immutable description of one experiment world."""

    seed: int
    horizon: int
    catalog: tuple[InformationType, ...]
    vehicles: tuple[VehicleState, ...]
    edges: tuple[EdgeState, ...]
    channel: ChannelParams
    aov: AovParams
    training: TrainingParams
    bandwidth_share_offset: float = 1.0  # additive offset in the rank-based share rule
    prediction_horizon: int = 5
    completeness_threshold: float = 0.8
    max_views: int = 10
    service_cv: float = 0.5  # coefficient of variation of modeled service times
    em_components: int = 2
    em_refit_iters: int = 2
    em_refit_every: int = 1
    config_digest: str = ""

    # lookup caches built at validation
    _type_index: dict[int, int] = field(default_factory=dict, repr=False)
    _vehicle_index: dict[int, int] = field(default_factory=dict, repr=False)

    def type_size(self, type_id: int) -> float:
        return self.catalog[self._type_index[type_id]].data_size_bits

    def vehicle(self, vehicle_id: int) -> VehicleState:
        return self.vehicles[self._vehicle_index[vehicle_id]]

    @property
    def type_ids(self) -> tuple[int, ...]:
        return tuple(t.id for t in self.catalog)


def distance(vehicle: VehicleState, edge: EdgeState, t: int) -> float:
    """Planar distance in meters between a vehicle and an edge at slot t."""
    pos = vehicle.position(t)
    if pos is None:
        raise ValueError(f"vehicle {vehicle.id} has no position at slot {t}")
    return math.hypot(pos[0] - edge.location[0], pos[1] - edge.location[1])


def coverage_set(edge: EdgeState, vehicles: tuple[VehicleState, ...], t: int) -> set[int]:
    """Ids of vehicles within radio range of the edge at slot t.

    Vehicles absent at t are simply not covered; a vehicle exactly on the
    range boundary counts as covered.
    """
    out: set[int] = set()
    for v in vehicles:
        pos = v.position(t)
        if pos is None:
            continue
        if math.hypot(pos[0] - edge.location[0], pos[1] - edge.location[1]) <= edge.radio_range_m:
            out.add(v.id)
    return out


# -- config ingestion ---------------------------------------------------------


def _as_number(value: Any, path: str, *, positive: bool = False, nonneg: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(path, f"expected a number, got {value!r}")
    x = float(value)
    if positive and x <= 0:
        raise ScenarioError(path, f"must be positive, got {x}")
    if nonneg and x < 0:
        raise ScenarioError(path, f"must be >= 0, got {x}")
    return x


def _as_int(value: Any, path: str, *, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(path, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ScenarioError(path, f"must be >= {minimum}, got {value}")
    return value


def apply_env_overrides(cfg: dict, environ: dict[str, str] | None = None) -> dict:
    """Overlay EDGEVIEW_* environment variables onto a raw config dict.

    A variable EDGEVIEW_A__B=value sets cfg["a"]["b"].  Values are parsed
    as JSON and fall back to plain strings.  Returns a new dict.
    """
    env = os.environ if environ is None else environ
    out = copy.deepcopy(cfg)
    for key, raw in sorted(env.items()):
        if not key.startswith(ENV_PREFIX):
            continue
        parts = [p.lower() for p in key[len(ENV_PREFIX):].split("__") if p]
        if not parts:
            continue
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = value
    return out


def _build_trajectories(cfg: dict, horizon: int, seed: int, base_dir: str) -> dict[int, mobility.Trajectory]:
    """Materialize trajectories from inline data, a CSV trace, or the generator."""
    mob = cfg.get("mobility")
    inline: dict[int, mobility.Trajectory] = {}
    for i, v in enumerate(cfg.get("vehicles", [])):
        traj = v.get("trajectory")
        if traj is None:
            continue
        if not isinstance(traj, list) or len(traj) < 1:
            raise ScenarioError(f"vehicles[{i}].trajectory", "expected a non-empty list of [slot, x, y]")
        try:
            slots = [int(p[0]) for p in traj]
            xy = np.array([[float(p[1]), float(p[2])] for p in traj])
        except (TypeError, ValueError, IndexError):
            raise ScenarioError(f"vehicles[{i}].trajectory", "rows must be [slot, x, y]") from None
        if any(b != a + 1 for a, b in zip(slots, slots[1:])):
            raise ScenarioError(f"vehicles[{i}].trajectory", "slots must be consecutive")
        inline[int(v["id"])] = mobility.Trajectory(start_slot=slots[0], xy=xy)

    if mob is None:
        return inline
    kind = mob.get("kind")
    if kind == "csv":
        path = mob.get("path")
        if not isinstance(path, str):
            raise ScenarioError("mobility.path", "expected a file path")
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        table = mobility.load_trajectories(path, horizon=horizon)
        generated = dict(table.vehicles)
    elif kind == "synthetic":
        n = _as_int(mob.get("n_vehicles", len(cfg.get("vehicles", []))), "mobility.n_vehicles", minimum=1)
        area = _as_number(mob.get("area_m", 1000.0), "mobility.area_m", positive=True)
        speed = mob.get("speed", {"law": "constant", "value": 5.0})
        dwell = mob.get("dwell", {"law": "constant", "value": horizon})
        table = mobility.synth_trajectories(
            n, area, speed, dwell, horizon, seed=int(mob.get("seed", seed))
        )
        generated = dict(table.vehicles)
    else:
        raise ScenarioError("mobility.kind", f"expected 'csv' or 'synthetic', got {kind!r}")

    # inline data wins for vehicles that carry their own path
    generated.update(inline)
    return generated


def validate_scenario(cfg: dict | Scenario, base_dir: str = ".") -> Scenario:
    """Check a raw config dict and freeze it into a Scenario.

    Validating an already-validated scenario returns it unchanged.
    Raises ScenarioError naming the offending field on any violation.
    """
    if isinstance(cfg, Scenario):
        return cfg
    if not isinstance(cfg, dict):
        raise ScenarioError("config", f"expected a mapping, got {type(cfg).__name__}")

    seed = _as_int(cfg.get("seed", 0), "seed", minimum=0)
    horizon = _as_int(cfg.get("horizon", 0), "horizon", minimum=1)

    raw_catalog = cfg.get("catalog")
    if not isinstance(raw_catalog, list) or not raw_catalog:
        raise ScenarioError("catalog", "expected a non-empty list of information types")
    catalog: list[InformationType] = []
    seen_types: set[int] = set()
    for i, item in enumerate(raw_catalog):
        tid = _as_int(item.get("id"), f"catalog[{i}].id", minimum=0)
        if tid in seen_types:
            raise ScenarioError(f"catalog[{i}].id", f"duplicate type id {tid}")
        seen_types.add(tid)
        size = _as_number(item.get("data_size_bits"), f"catalog[{i}].data_size_bits", positive=True)
        catalog.append(InformationType(id=tid, data_size_bits=size))
    type_index = {t.id: i for i, t in enumerate(catalog)}

    trajectories = _build_trajectories(cfg, horizon, seed, base_dir)

    raw_vehicles = cfg.get("vehicles")
    if not isinstance(raw_vehicles, list) or not raw_vehicles:
        raise ScenarioError("vehicles", "expected a non-empty list")
    vehicles: list[VehicleState] = []
    seen_v: set[int] = set()
    for i, v in enumerate(raw_vehicles):
        vid = _as_int(v.get("id"), f"vehicles[{i}].id", minimum=0)
        if vid in seen_v:
            raise ScenarioError(f"vehicles[{i}].id", f"duplicate vehicle id {vid}")
        seen_v.add(vid)
        sensible = v.get("sensible_types")
        if not isinstance(sensible, list) or not sensible:
            raise ScenarioError(f"vehicles[{i}].sensible_types", "expected a non-empty list")
        for tid in sensible:
            if tid not in seen_types:
                raise ScenarioError(f"vehicles[{i}].sensible_types", f"unknown type id {tid}")
        if len(set(sensible)) != len(sensible):
            raise ScenarioError(f"vehicles[{i}].sensible_types", "duplicate type ids")
        bounds_cfg = v.get("freq_bounds", {})
        default = bounds_cfg.get("default")
        bounds: dict[int, tuple[float, float]] = {}
        for tid in sensible:
            pair = bounds_cfg.get(str(tid), default)
            if pair is None:
                raise ScenarioError(
                    f"vehicles[{i}].freq_bounds", f"no bounds for type {tid} and no default"
                )
            lo = _as_number(pair[0], f"vehicles[{i}].freq_bounds[{tid}][0]", positive=True)
            hi = _as_number(pair[1], f"vehicles[{i}].freq_bounds[{tid}][1]", positive=True)
            if hi < lo:
                raise ScenarioError(f"vehicles[{i}].freq_bounds[{tid}]", "max below min")
            bounds[tid] = (lo, hi)
        power = _as_number(v.get("tx_power_mw", 1.0), f"vehicles[{i}].tx_power_mw", positive=True)
        traj = trajectories.get(vid)
        if traj is None:
            raise ScenarioError(
                f"vehicles[{i}]", "no trajectory: provide inline data or a mobility section"
            )
        if traj.start_slot < 1 or traj.end_slot > horizon:
            raise ScenarioError(
                f"vehicles[{i}].trajectory",
                f"slots [{traj.start_slot}, {traj.end_slot}] outside 1..{horizon}",
            )
        vehicles.append(
            VehicleState(
                id=vid,
                sensible_types=tuple(sorted(sensible)),
                freq_bounds=bounds,
                tx_power_mw=power,
                trajectory=traj,
            )
        )
    vehicles.sort(key=lambda v: v.id)

    max_views = _as_int(cfg.get("max_views", 10), "max_views", minimum=1)

    raw_edges = cfg.get("edges")
    if not isinstance(raw_edges, list) or not raw_edges:
        raise ScenarioError("edges", "expected a non-empty list")
    edges: list[EdgeState] = []
    seen_e: set[int] = set()
    for i, e in enumerate(raw_edges):
        eid = _as_int(e.get("id"), f"edges[{i}].id", minimum=0)
        if eid in seen_e:
            raise ScenarioError(f"edges[{i}].id", f"duplicate edge id {eid}")
        seen_e.add(eid)
        loc = e.get("location")
        if not isinstance(loc, list) or len(loc) != 2:
            raise ScenarioError(f"edges[{i}].location", "expected [x, y]")
        views_cfg = e.get("views")
        if not isinstance(views_cfg, list) or not views_cfg:
            raise ScenarioError(f"edges[{i}].views", "expected a non-empty list")
        if len(views_cfg) > max_views:
            raise ScenarioError(
                f"edges[{i}].views", f"{len(views_cfg)} views exceed max_views={max_views}"
            )
        views: list[ViewSpec] = []
        seen_views: set[int] = set()
        for j, w in enumerate(views_cfg):
            wid = _as_int(w.get("id"), f"edges[{i}].views[{j}].id", minimum=0)
            if wid in seen_views:
                raise ScenarioError(f"edges[{i}].views[{j}].id", f"duplicate view id {wid}")
            seen_views.add(wid)
            req = w.get("required_types")
            if not isinstance(req, list) or not req:
                raise ScenarioError(f"edges[{i}].views[{j}].required_types", "expected a non-empty list")
            for tid in req:
                if tid not in seen_types:
                    raise ScenarioError(
                        f"edges[{i}].views[{j}].required_types", f"unknown type id {tid}"
                    )
            views.append(ViewSpec(id=wid, required_types=frozenset(req)))
        edges.append(
            EdgeState(
                id=eid,
                location=(float(loc[0]), float(loc[1])),
                radio_range_m=_as_number(e.get("radio_range_m"), f"edges[{i}].radio_range_m", positive=True),
                bandwidth_hz=_as_number(e.get("bandwidth_hz"), f"edges[{i}].bandwidth_hz", positive=True),
                views=tuple(views),
            )
        )
    edges.sort(key=lambda e: e.id)

    ch = cfg.get("channel", {})
    nu = ch.get("noise_uncertainty_db", [0.0, 3.0])
    if not isinstance(nu, list) or len(nu) != 2 or nu[0] > nu[1] or nu[0] < 0:
        raise ScenarioError("channel.noise_uncertainty_db", "expected [low, high] with 0 <= low <= high")
    channel = ChannelParams(
        noise_dbm=_as_number(ch.get("noise_dbm", -90.0), "channel.noise_dbm"),
        antenna_constant=_as_number(ch.get("antenna_constant", 1.0), "channel.antenna_constant", positive=True),
        path_loss_exponent=_as_number(ch.get("path_loss_exponent", 3.0), "channel.path_loss_exponent", positive=True),
        fading_mean=_as_number(ch.get("fading_mean", 2.0), "channel.fading_mean"),
        fading_variance=_as_number(ch.get("fading_variance", 0.4), "channel.fading_variance", nonneg=True),
        noise_uncertainty_db=(float(nu[0]), float(nu[1])),
    )

    aov_cfg = cfg.get("aov", {})
    weights = aov_cfg.get("weights", [0.3, 0.4, 0.3])
    if not isinstance(weights, list) or len(weights) != 3:
        raise ScenarioError("aov.weights", "expected three weights")
    w = tuple(_as_number(x, f"aov.weights[{i}]", nonneg=True) for i, x in enumerate(weights))
    if abs(sum(w) - 1.0) > 1e-9:
        raise ScenarioError("aov.weights", f"must sum to 1, got {sum(w)}")
    aov = AovParams(
        weights=w,  # type: ignore[arg-type]
        timeliness_scale=_as_number(aov_cfg.get("timeliness_scale", 1.0), "aov.timeliness_scale", positive=True),
        consistency_scale=_as_number(aov_cfg.get("consistency_scale", 1.0), "aov.consistency_scale", positive=True),
    )

    tr = cfg.get("training", {})
    training = TrainingParams(
        gamma=_as_number(tr.get("gamma", 0.996), "training.gamma", nonneg=True),
        buffer_capacity=_as_int(tr.get("buffer_capacity", 100000), "training.buffer_capacity", minimum=1),
        batch_size=_as_int(tr.get("batch_size", 512), "training.batch_size", minimum=1),
        learning_rate=_as_number(tr.get("learning_rate", 0.001), "training.learning_rate", positive=True),
        noise_std=_as_number(tr.get("noise_std", 0.2), "training.noise_std", nonneg=True),
        noise_decay=_as_number(tr.get("noise_decay", 0.999), "training.noise_decay", positive=True),
        noise_floor=_as_number(tr.get("noise_floor", 0.01), "training.noise_floor", nonneg=True),
        target_rate=_as_number(tr.get("target_rate", 0.005), "training.target_rate", positive=True),
        actor_hidden=tuple(tr.get("actor_hidden", [64, 32])),
        critic_hidden=tuple(tr.get("critic_hidden", [128, 64])),
    )
    if training.gamma >= 1.0:
        raise ScenarioError("training.gamma", "must be < 1")

    digest = config_digest(cfg)

    return Scenario(
        seed=seed,
        horizon=horizon,
        catalog=tuple(catalog),
        vehicles=tuple(vehicles),
        edges=tuple(edges),
        channel=channel,
        aov=aov,
        training=training,
        bandwidth_share_offset=_as_number(cfg.get("bandwidth_share_offset", 1.0), "bandwidth_share_offset", nonneg=True),
        prediction_horizon=_as_int(cfg.get("prediction_horizon", 5), "prediction_horizon", minimum=1),
        completeness_threshold=_as_number(cfg.get("completeness_threshold", 0.8), "completeness_threshold", nonneg=True),
        max_views=max_views,
        service_cv=_as_number(cfg.get("service_cv", 0.5), "service_cv", nonneg=True),
        em_components=_as_int(cfg.get("em_components", 2), "em_components", minimum=1),
        em_refit_iters=_as_int(cfg.get("em_refit_iters", 2), "em_refit_iters", minimum=1),
        em_refit_every=_as_int(cfg.get("em_refit_every", 1), "em_refit_every", minimum=1),
        config_digest=digest,
        _type_index=type_index,
        _vehicle_index={v.id: i for i, v in enumerate(vehicles)},
    )


def config_digest(cfg: dict) -> str:
    """Stable sha256 over the canonical JSON form of a raw config dict."""
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(blob.encode()).hexdigest()


def read_config(path: str, use_env: bool = True) -> dict:
    """Read a JSON config file and apply env overrides, without validating."""
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError("config", f"invalid JSON in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ScenarioError("config", "top level must be a JSON object")
    if use_env:
        cfg = apply_env_overrides(cfg)
    return cfg


def load_scenario(path: str, use_env: bool = True) -> Scenario:
    """Read a JSON config file, apply env overrides, and validate it."""
    cfg = read_config(path, use_env=use_env)
    return validate_scenario(cfg, base_dir=os.path.dirname(os.path.abspath(path)))
