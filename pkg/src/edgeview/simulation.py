"""Per-slot episode engine.

One episode walks the scenario horizon slot by slot.  Each slot: build
observations, let the vehicle policies pick raw actions, track distances
and predict their short-horizon average at the edge, rank vehicles and
split the uplink band, push every sensed type through the queue model
and the slot-wise channel, score the edge views from the successful
uploads, and split the slot reward into per-vehicle contributions by
counterfactual re-scoring.

Randomness is split into named substreams derived from (scenario seed,
episode index) so the environment outcome for a fixed action stream
never depends on what the learners do between episodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import channel, fusion, policy, queueing
from .core import EdgeState, Scenario, VehicleState
from .mobility import DistanceTracker

# substream tags for per-episode random tables
_STREAM_FADING = 1
_STREAM_WALL = 2
_STREAM_TRACKER = 3

#: a link only counts as usable when every packet could finish within this
#: many seconds; slower rates behave exactly like a zero allocation
_MAX_SERVICE_S = 1e12


class VehiclePolicy(Protocol):
    def __call__(
        self, vehicle_id: int, obs: np.ndarray, t: int, central_obs: np.ndarray | None
    ) -> np.ndarray: ...


class EdgePolicy(Protocol):
    def __call__(
        self,
        edge: EdgeState,
        ranks: dict[int, int],
        covered_ids: list[int],
        central_obs: np.ndarray | None,
        t: int,
    ) -> policy.EdgeAction: ...


def observation_dim(scenario: Scenario) -> int:
    """Length of one vehicle observation: sensing state, cache, views."""
    d = len(scenario.catalog)
    return 2 * d + d + scenario.max_views * d


def central_observation_dim(scenario: Scenario) -> int:
    """Length of the whole-system observation used by the central learner."""
    d = len(scenario.catalog)
    return 2 * d * len(scenario.vehicles) + d + scenario.max_views * d


def action_layout(scenario: Scenario) -> list[tuple[int, int, int]]:
    """(vehicle id, offset, width) slices of the concatenated action vector."""
    layout = []
    off = 0
    for v in scenario.vehicles:
        width = 2 * len(v.sensible_types)
        layout.append((v.id, off, width))
        off += width
    return layout


def encode_vehicle_obs(
    scenario: Scenario,
    vehicle: VehicleState,
    *,
    covered: bool,
    last_rates: dict[int, float],
    edge: EdgeState | None,
    cache: dict[int, int],
    t: int,
) -> np.ndarray:
    """Fixed-length observation of one vehicle at the start of slot t.

    Three blocks over the catalog order: sensed-type indicators plus the
    vehicle's current (previous-slot) frequencies normalized into their
    bounds; the associated edge's cache freshness per type; and the
    required-type indicator rows of up to max_views views, zero-padded.
    Every entry lies in [0, 1].
    """
    d = len(scenario.catalog)
    out = np.zeros(observation_dim(scenario))
    if covered:
        for i, info in enumerate(scenario.catalog):
            tid = info.id
            if tid in vehicle.freq_bounds:
                out[i] = 1.0
                lo, hi = vehicle.freq_bounds[tid]
                rate = last_rates.get(tid, lo)
                out[d + i] = 0.0 if hi <= lo else min(1.0, max(0.0, (rate - lo) / (hi - lo)))
    if edge is not None:
        for i, info in enumerate(scenario.catalog):
            receipt = cache.get(info.id)
            if receipt is not None:
                out[2 * d + i] = min(1.0, max(0.0, 1.0 - (t - receipt) / scenario.horizon))
        for j, view in enumerate(edge.views):
            base = 3 * d + j * d
            for i, info in enumerate(scenario.catalog):
                if info.id in view.required_types:
                    out[base + i] = 1.0
    return out


def encode_central_obs(vehicle_obs: np.ndarray, scenario: Scenario) -> np.ndarray:
    """System observation: all sensing blocks, then one cache/view block.

    Defined for single-edge scenarios; the shared cache/view block is
    taken from the first vehicle that sees the edge (they all agree).
    """
    d = len(scenario.catalog)
    parts = [vehicle_obs[i, : 2 * d] for i in range(len(scenario.vehicles))]
    tail = np.zeros(d + scenario.max_views * d)
    for i in range(len(scenario.vehicles)):
        block = vehicle_obs[i, 2 * d:]
        if np.any(block != 0.0):
            tail = block
            break
    parts.append(tail)
    return np.concatenate(parts)


@dataclass
class UploadOutcome:
    """One per-slot upload attempt with its queue/channel fate."""

    t: int
    edge_id: int
    info: fusion.ReceivedInfo


@dataclass
class EpisodeResult:
    slot_rewards: list[float]
    diff_rewards: np.ndarray  # (horizon, n_vehicles)
    scores: list[fusion.ViewScore]  # every (slot, edge, view), slot-major
    qtimes: list[list[list[float]]]  # [slot][vehicle position] -> queue waits
    vehicle_obs: np.ndarray  # (horizon + 1, n_vehicles, obs_dim)
    raw_actions: np.ndarray  # (horizon, sum of per-vehicle action widths)
    central_obs: np.ndarray | None  # (horizon + 1, central_dim)
    uploads: list[UploadOutcome]

    @property
    def cumulative_reward(self) -> float:
        return float(sum(self.slot_rewards))


def slot_reward(scores_by_edge: dict[int, list[fusion.ViewScore]]) -> float:
    """Mean complement of the view-age score over every required view."""
    total = 0.0
    count = 0
    for scores in scores_by_edge.values():
        for s in scores:
            total += 1.0 - s.aov
            count += 1
    if count == 0:
        raise ValueError("no views to reward")
    return total / count


def difference_reward(
    scenario: Scenario,
    uploads_by_edge: dict[int, list[fusion.ReceivedInfo]],
    base_reward: float,
    vehicle_id: int,
) -> float:
    """Reward minus the reward with this vehicle's successes removed.

    The counterfactual re-scores every view from the reduced upload set;
    a vehicle with no successful upload gets exactly zero.
    """
    if not any(
        u.success and u.vehicle_id == vehicle_id
        for ups in uploads_by_edge.values()
        for u in ups
    ):
        return 0.0
    reduced: dict[int, list[fusion.ViewScore]] = {}
    for eid, ups in uploads_by_edge.items():
        kept = [u for u in ups if not (u.success and u.vehicle_id == vehicle_id)]
        edge = next(e for e in scenario.edges if e.id == eid)
        reduced[eid] = [
            fusion.score_view(
                v,
                kept,
                horizon=scenario.horizon,
                weights=scenario.aov.weights,
                timeliness_scale=scenario.aov.timeliness_scale,
                consistency_scale=scenario.aov.consistency_scale,
            )
            for v in edge.views
        ]
    return base_reward - slot_reward(reduced)


@dataclass
class _EpisodeTables:
    """Per-episode random channel state and geometry, order-independent."""

    dist: np.ndarray  # (S, E, T) meters, nan when absent
    covered: np.ndarray  # (S, E, T) bool
    snr: np.ndarray  # (S, E, T) linear
    log_term: np.ndarray  # (S, E, T) log2(1 + snr)
    wall: np.ndarray  # (S, E)


def _build_tables(scenario: Scenario, episode: int) -> _EpisodeTables:
    s_n = len(scenario.vehicles)
    e_n = len(scenario.edges)
    t_n = scenario.horizon
    dist = np.full((s_n, e_n, t_n), np.nan)
    covered = np.zeros((s_n, e_n, t_n), dtype=bool)
    for si, v in enumerate(scenario.vehicles):
        traj = v.trajectory
        for t in range(max(1, traj.start_slot), min(t_n, traj.end_slot) + 1):
            x, y = traj.position(t)  # type: ignore[misc]
            for ei, e in enumerate(scenario.edges):
                d = math.hypot(x - e.location[0], y - e.location[1])
                dist[si, ei, t - 1] = d
                covered[si, ei, t - 1] = d <= e.radio_range_m

    ch = scenario.channel
    rng_fading = np.random.default_rng([scenario.seed, _STREAM_FADING, episode])
    h = rng_fading.normal(ch.fading_mean, math.sqrt(ch.fading_variance), (s_n, e_n, t_n))
    gain = h * h
    rng_wall = np.random.default_rng([scenario.seed, _STREAM_WALL, episode])
    lo, hi = ch.noise_uncertainty_db
    n_db = rng_wall.uniform(lo, hi, (s_n, e_n))
    sigma = 10.0 ** (n_db / 10.0)
    wall = (sigma * sigma - 1.0) / sigma

    noise_mw = channel.dbm_to_mw(ch.noise_dbm)
    power = np.array([v.tx_power_mw for v in scenario.vehicles])[:, None, None]
    dis = np.maximum(1.0, dist)
    with np.errstate(invalid="ignore"):
        snr = power * gain * ch.antenna_constant * dis ** (-ch.path_loss_exponent) / noise_mw
    snr = np.where(np.isnan(dist), 0.0, snr)
    log_term = np.log2(1.0 + snr)
    return _EpisodeTables(dist=dist, covered=covered, snr=snr, log_term=log_term, wall=wall)


def run_episode(
    scenario: Scenario,
    vehicle_policy: VehiclePolicy,
    edge_policy: EdgePolicy,
    episode: int,
    *,
    need_central: bool = False,
    audit_sink: list[str] | None = None,
    action_sink: list[list[policy.VehicleAction]] | None = None,
) -> EpisodeResult:
    """Simulate one episode under the given policies.

    ``episode`` selects the per-episode random tables, so a fixed
    (scenario, episode, action stream) triple always reproduces the same
    outcome.  ``audit_sink`` collects constraint violations of every
    decoded action and allocation; ``action_sink`` collects the decoded
    vehicle actions per slot.
    """
    s_n = len(scenario.vehicles)
    horizon = scenario.horizon
    horizon_end = float(horizon + 1)
    tables = _build_tables(scenario, episode)
    vid_to_idx = {v.id: i for i, v in enumerate(scenario.vehicles)}
    eid_to_idx = {e.id: i for i, e in enumerate(scenario.edges)}
    layout = action_layout(scenario)

    caches: dict[int, dict[int, int]] = {e.id: {} for e in scenario.edges}
    last_rates: dict[int, dict[int, float]] = {v.id: {} for v in scenario.vehicles}
    trackers: dict[tuple[int, int], DistanceTracker] = {}

    obs_dim = observation_dim(scenario)
    vehicle_obs = np.zeros((horizon + 1, s_n, obs_dim))
    central_obs = np.zeros((horizon + 1, central_observation_dim(scenario))) if need_central else None
    raw_actions = np.zeros((horizon, sum(w for _, _, w in layout)))
    diff_rewards = np.zeros((horizon, s_n))
    slot_rewards: list[float] = []
    all_scores: list[fusion.ViewScore] = []
    qtimes: list[list[list[float]]] = []
    uploads_log: list[UploadOutcome] = []

    def association(t: int) -> dict[int, int]:
        """vehicle id -> edge id of the nearest covering edge at slot t."""
        assoc: dict[int, int] = {}
        for si, v in enumerate(scenario.vehicles):
            best = None
            for ei, e in enumerate(scenario.edges):
                if tables.covered[si, ei, t - 1]:
                    d = tables.dist[si, ei, t - 1]
                    if best is None or d < best[0] or (d == best[0] and e.id < best[1]):
                        best = (d, e.id)
            if best is not None:
                assoc[v.id] = best[1]
        return assoc

    def build_obs(row: int, t: int, assoc: dict[int, int]) -> None:
        for si, v in enumerate(scenario.vehicles):
            eid = assoc.get(v.id)
            edge = scenario.edges[eid_to_idx[eid]] if eid is not None else None
            vehicle_obs[row, si] = encode_vehicle_obs(
                scenario,
                v,
                covered=eid is not None,
                last_rates=last_rates[v.id],
                edge=edge,
                cache=caches[eid] if eid is not None else {},
                t=t,
            )
        if central_obs is not None:
            central_obs[row] = encode_central_obs(vehicle_obs[row], scenario)

    assoc = association(1)
    build_obs(0, 1, assoc)

    for t in range(1, horizon + 1):
        obs_row = t - 1
        slot_actions: list[policy.VehicleAction] = []

        raws: dict[int, np.ndarray] = {}
        cobs = central_obs[obs_row] if central_obs is not None else None
        for v in scenario.vehicles:
            raw = np.asarray(
                vehicle_policy(v.id, vehicle_obs[obs_row, vid_to_idx[v.id]], t, cobs),
                dtype=float,
            )
            raws[v.id] = raw
        for vid, off, width in layout:
            raw_actions[t - 1, off: off + width] = raws[vid]

        # edge side: track distances, predict, rank, allocate
        covered_by_edge: dict[int, list[int]] = {e.id: [] for e in scenario.edges}
        for vid, eid in assoc.items():
            covered_by_edge[eid].append(vid)
        allocations: dict[int, policy.EdgeAction] = {}
        for e in scenario.edges:
            vids = sorted(covered_by_edge[e.id])
            entries = []
            for vid in vids:
                si = vid_to_idx[vid]
                key = (vid, e.id)
                tracker = trackers.get(key)
                if tracker is None:
                    tracker_seed = int(
                        np.random.default_rng(
                            [scenario.seed, _STREAM_TRACKER, episode, vid, e.id]
                        ).integers(2**31)
                    )
                    tracker = DistanceTracker(
                        k=scenario.em_components,
                        refit_iters=scenario.em_refit_iters,
                        refit_every=scenario.em_refit_every,
                        seed=tracker_seed,
                    )
                    trackers[key] = tracker
                dis = float(tables.dist[si, eid_to_idx[e.id], t - 1])
                tracker.append(dis)
                davg = tracker.predict_avg(scenario.prediction_horizon)
                size = policy.required_info_size(
                    scenario.vehicle(vid).sensible_types,
                    e.views,
                    {info.id: info.data_size_bits for info in scenario.catalog},
                )
                entries.append((vid, size, davg))
            ranks = policy.rank_vehicles(entries)
            alloc = edge_policy(e, ranks, vids, cobs, t)
            allocations[e.id] = alloc
            if audit_sink is not None:
                audit_sink.extend(policy.audit_allocation(e, alloc))

        # vehicle side: decode, queue, transmit
        uploads_by_edge: dict[int, list[fusion.ReceivedInfo]] = {e.id: [] for e in scenario.edges}
        slot_q: list[list[float]] = [[] for _ in range(s_n)]
        for v in scenario.vehicles:
            vid = v.id
            if vid not in assoc:
                continue
            eid = assoc[vid]
            si, ei = vid_to_idx[vid], eid_to_idx[eid]
            bw = allocations[eid].bandwidth_hz.get(vid, 0.0)
            rate_now = bw * float(tables.log_term[si, ei, t - 1])
            type_ids = v.sensible_types
            sizes = {tid: scenario.type_size(tid) for tid in type_ids}
            if rate_now <= 0.0 or max(sizes.values()) > rate_now * _MAX_SERVICE_S:
                # nothing can move this slot; every sensed type fails
                for tid in type_ids:
                    info = fusion.ReceivedInfo(tid, vid, 0.0, 0.0, math.inf, False)
                    uploads_by_edge[eid].append(info)
                    uploads_log.append(UploadOutcome(t=t, edge_id=eid, info=info))
                continue

            alphas = {tid: sizes[tid] / rate_now for tid in type_ids}
            action = policy.decode_action(vid, raws[vid], type_ids, v.freq_bounds, alphas)
            slot_actions.append(action)
            if audit_sink is not None:
                audit_sink.extend(policy.audit_action(action, v.freq_bounds, alphas))

            classes = [
                queueing.QueueClass(
                    rate_hz=action.rates_hz[i],
                    mean_service_s=alphas[tid],
                    service_var_s2=(scenario.service_cv * alphas[tid]) ** 2,
                    priority=action.priorities[i],
                )
                for i, tid in enumerate(type_ids)
            ]

            def rate_of_slot(slot: int, si=si, ei=ei, bw=bw) -> float:
                if slot < 1 or slot > horizon or not tables.covered[si, ei, slot - 1]:
                    return 0.0
                return bw * float(tables.log_term[si, ei, slot - 1])

            def covered_of_slot(slot: int, si=si, ei=ei) -> bool:
                return 1 <= slot <= horizon and bool(tables.covered[si, ei, slot - 1])

            def snr_of_slot(slot: int, si=si, ei=ei) -> float:
                if slot < 1 or slot > horizon:
                    return 0.0
                return float(tables.snr[si, ei, slot - 1])

            wall = float(tables.wall[si, ei])
            for i, tid in enumerate(type_ids):
                rate = action.rates_hz[i]
                q = queueing.queuing_time(classes, classes[i])
                slot_q[si].append(q)
                start = t + q
                g = channel.transmission_time(sizes[tid], start, rate_of_slot, horizon_end)
                ok = channel.transmission_success(
                    start, g, wall, horizon_end, snr_of_slot, covered_of_slot
                )
                info = fusion.ReceivedInfo(
                    type_id=tid,
                    vehicle_id=vid,
                    interarrival_s=1.0 / rate,
                    queuing_s=q,
                    transmission_s=g,
                    success=ok,
                )
                uploads_by_edge[eid].append(info)
                uploads_log.append(UploadOutcome(t=t, edge_id=eid, info=info))
            last_rates[vid] = {tid: action.rates_hz[i] for i, tid in enumerate(type_ids)}

        if action_sink is not None:
            action_sink.append(slot_actions)
        qtimes.append(slot_q)

        # score views, update caches, split the reward
        scores_by_edge: dict[int, list[fusion.ViewScore]] = {}
        for e in scenario.edges:
            ups = uploads_by_edge[e.id]
            scores_by_edge[e.id] = [
                fusion.score_view(
                    view,
                    ups,
                    horizon=horizon,
                    weights=scenario.aov.weights,
                    timeliness_scale=scenario.aov.timeliness_scale,
                    consistency_scale=scenario.aov.consistency_scale,
                )
                for view in e.views
            ]
            for u in ups:
                if u.success:
                    caches[e.id][u.type_id] = t
            all_scores.extend(scores_by_edge[e.id])
        r = slot_reward(scores_by_edge)
        slot_rewards.append(r)
        for v in scenario.vehicles:
            diff_rewards[t - 1, vid_to_idx[v.id]] = difference_reward(
                scenario, uploads_by_edge, r, v.id
            )

        # observation for the next slot (positions clamp at the horizon)
        next_t = min(t + 1, horizon)
        assoc = association(next_t)
        build_obs(t, t + 1, assoc)

    return EpisodeResult(
        slot_rewards=slot_rewards,
        diff_rewards=diff_rewards,
        scores=all_scores,
        qtimes=qtimes,
        vehicle_obs=vehicle_obs,
        raw_actions=raw_actions,
        central_obs=central_obs,
        uploads=uploads_log,
    )


def rank_edge_policy(scenario: Scenario) -> EdgePolicy:
    """The built-in allocation rule: rank-proportional shares."""

    def policy_fn(edge, ranks, covered_ids, central_obs, t):
        return policy.allocate_bandwidth(edge, ranks, scenario.bandwidth_share_offset)

    return policy_fn
