"""Decision surfaces: vehicle sensing actions and edge bandwidth splits.

Vehicles choose a sensing frequency and an upload priority per sensed
type; the edge splits its uplink band across covered vehicles.  All
decision paths (learned, heuristic, random) emit the same action types
and must satisfy the same constraint set, checked by ``audit_action``:

  C1  requested frequencies inside their per-type bounds
  C2  priorities form a permutation of 1..n (larger served first)
  C3  per-vehicle bandwidth within [0, capacity]
  C4  effective offered load keeps the upload queue stable (< 1)
  C5  bandwidth shares sum to at most the capacity

C4 is enforced by uniformly down-scaling the requested frequencies with
a 0.999 margin when they would saturate the queue; the applied scale is
kept on the action so the audit can separate C1 (on the request) from
C4 (on the effective rates).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import EdgeState, ViewSpec

#: stability margin applied when requested frequencies saturate the queue
STABILITY_MARGIN = 0.999

_TOL = 1e-9


@dataclass(frozen=True)
class VehicleAction:
    """Per-type sensing frequencies and upload priorities of one vehicle."""

    vehicle_id: int
    type_ids: tuple[int, ...]
    requested_hz: tuple[float, ...]
    rates_hz: tuple[float, ...]  # effective frequencies after the stability cap
    priorities: tuple[int, ...]  # permutation of 1..n, larger served first
    stability_scale: float


@dataclass(frozen=True)
class EdgeAction:
    """Uplink bandwidth granted to each covered vehicle (Hz)."""

    edge_id: int
    bandwidth_hz: dict[int, float]


def decode_action(
    vehicle_id: int,
    raw: np.ndarray,
    type_ids: tuple[int, ...],
    bounds: dict[int, tuple[float, float]],
    mean_service_s: dict[int, float],
) -> VehicleAction:
    """Map a raw [0,1]^(2n) vector to a constraint-satisfying action.

    The first n entries choose frequencies affinely inside their bounds;
    the last n are priority scores ranked descending (ties broken by the
    smaller type id).  If the requested load sum(rate * service) reaches
    the stability margin, every frequency is scaled down uniformly.
    """
    n = len(type_ids)
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (2 * n,):
        raise ValueError(f"raw action must have shape ({2 * n},), got {raw.shape}")
    if np.any(raw < -_TOL) or np.any(raw > 1.0 + _TOL):
        raise ValueError("raw action entries must lie in [0, 1]")
    raw = np.clip(raw, 0.0, 1.0)

    requested = []
    for i, tid in enumerate(type_ids):
        lo, hi = bounds[tid]
        requested.append(lo + raw[i] * (hi - lo))

    load = sum(r * mean_service_s[tid] for r, tid in zip(requested, type_ids))
    if load >= STABILITY_MARGIN:
        scale = STABILITY_MARGIN / load
    else:
        scale = 1.0
    rates = [r * scale for r in requested]

    order = sorted(range(n), key=lambda i: (-raw[n + i], type_ids[i]))
    priorities = [0] * n
    for rank_pos, i in enumerate(order):
        priorities[i] = n - rank_pos  # first in order gets the largest priority

    return VehicleAction(
        vehicle_id=vehicle_id,
        type_ids=tuple(type_ids),
        requested_hz=tuple(requested),
        rates_hz=tuple(rates),
        priorities=tuple(priorities),
        stability_scale=scale,
    )


def required_info_size(
    sensed_types: tuple[int, ...],
    views: tuple[ViewSpec, ...],
    type_size_bits: dict[int, float],
) -> float:
    """Bits of the vehicle's sensed types that any of the views require."""
    needed = set()
    for v in views:
        needed |= v.required_types
    return float(sum(type_size_bits[t] for t in sensed_types if t in needed))


def rank_vehicles(entries: list[tuple[int, float, float]]) -> dict[int, int]:
    """Rank covered vehicles for the bandwidth rule; rank 1 is served best.

    ``entries`` holds (vehicle id, required size bits, predicted average
    distance).  Larger required size wins, then smaller distance, then
    smaller id.
    """
    order = sorted(entries, key=lambda e: (-e[1], e[2], e[0]))
    return {vid: i + 1 for i, (vid, _, _) in enumerate(order)}


def allocate_bandwidth(
    edge: EdgeState, ranks: dict[int, int], share_offset: float
) -> EdgeAction:
    """Split the edge band by rank: share ~ capacity / (offset + rank).

    When the raw shares exceed the capacity they are rescaled
    proportionally so the total equals the capacity exactly.
    """
    if not ranks:
        return EdgeAction(edge_id=edge.id, bandwidth_hz={})
    raw = {vid: edge.bandwidth_hz / (share_offset + rank) for vid, rank in ranks.items()}
    total = sum(raw.values())
    if total > edge.bandwidth_hz:
        factor = edge.bandwidth_hz / total
        raw = {vid: b * factor for vid, b in raw.items()}
    return EdgeAction(edge_id=edge.id, bandwidth_hz=raw)


def random_vehicle_action(
    vehicle_id: int,
    type_ids: tuple[int, ...],
    bounds: dict[int, tuple[float, float]],
    mean_service_s: dict[int, float],
    rng: np.random.Generator,
) -> VehicleAction:
    """Frequencies uniform inside their bounds, priorities a random permutation."""
    n = len(type_ids)
    raw = np.empty(2 * n)
    raw[:n] = rng.uniform(0.0, 1.0, n)
    perm = rng.permutation(n)
    # encode the permutation as strictly decreasing scores along perm
    scores = np.empty(n)
    scores[perm] = np.linspace(1.0, 0.0, n)
    raw[n:] = scores
    return decode_action(vehicle_id, raw, type_ids, bounds, mean_service_s)


def random_bandwidth(
    edge: EdgeState, vehicle_ids: list[int], rng: np.random.Generator
) -> EdgeAction:
    """Uniformly random split of the whole band across the given vehicles."""
    if not vehicle_ids:
        return EdgeAction(edge_id=edge.id, bandwidth_hz={})
    shares = rng.dirichlet(np.ones(len(vehicle_ids)))
    return EdgeAction(
        edge_id=edge.id,
        bandwidth_hz={vid: float(s * edge.bandwidth_hz) for vid, s in zip(vehicle_ids, shares)},
    )


def audit_action(
    action: VehicleAction,
    bounds: dict[int, tuple[float, float]],
    mean_service_s: dict[int, float],
) -> list[str]:
    """C1/C2/C4 violations of one vehicle action; empty means compliant."""
    problems: list[str] = []
    n = len(action.type_ids)
    for tid, req in zip(action.type_ids, action.requested_hz):
        lo, hi = bounds[tid]
        if req < lo - _TOL or req > hi + _TOL:
            problems.append(f"C1: requested rate {req} for type {tid} outside [{lo}, {hi}]")
    if not (0.0 < action.stability_scale <= 1.0 + _TOL):
        problems.append(f"C4: stability scale {action.stability_scale} out of (0, 1]")
    for req, eff in zip(action.requested_hz, action.rates_hz):
        if not math.isclose(eff, req * action.stability_scale, rel_tol=1e-9, abs_tol=1e-12):
            problems.append("C4: effective rates do not match the declared scale")
            break
    if sorted(action.priorities) != list(range(1, n + 1)):
        problems.append(f"C2: priorities {action.priorities} are not a permutation of 1..{n}")
    load = sum(r * mean_service_s[tid] for r, tid in zip(action.rates_hz, action.type_ids))
    if load >= 1.0:
        problems.append(f"C4: effective load {load} saturates the queue")
    return problems


def audit_allocation(edge: EdgeState, alloc: EdgeAction) -> list[str]:
    """C3/C5 violations of one edge allocation; empty means compliant."""
    problems: list[str] = []
    for vid, b in alloc.bandwidth_hz.items():
        if b < -_TOL or b > edge.bandwidth_hz + _TOL:
            problems.append(f"C3: share {b} for vehicle {vid} outside [0, {edge.bandwidth_hz}]")
    total = sum(alloc.bandwidth_hz.values())
    if total > edge.bandwidth_hz * (1.0 + 1e-9):
        problems.append(f"C5: total allocation {total} exceeds capacity {edge.bandwidth_hz}")
    return problems
