"""View fusion scoring: how fresh, complete and consistent an edge view is.

Each slot, an edge assembles every required view from the information
uploads that succeeded in that slot.  A view is scored on three axes:

* timeliness   -- summed age (sensing gap + queue wait + transfer time)
                  of the received items; lower is better;
* completeness -- fraction of the required types actually received;
* consistency  -- squared spread of the receipt instants, since a view
                  stitched from samples taken far apart misrepresents
                  the scene.

The three raw scores are normalized to [0, 1] penalties and combined by
configured weights into a single age score in [0, 1]; 0 is a perfect
view.  Per-slot rewards and the global quality metric are complements of
that score.
"""

from __future__ import annotations

from dataclasses import dataclass

from .core import ViewSpec


@dataclass(frozen=True)
class ReceivedInfo:
    """One upload attempt of one information type by one vehicle."""

    type_id: int
    vehicle_id: int
    interarrival_s: float
    queuing_s: float
    transmission_s: float
    success: bool

    @property
    def age_s(self) -> float:
        return self.interarrival_s + self.queuing_s + self.transmission_s

    @property
    def receipt_span_s(self) -> float:
        """Queue wait plus transfer: when the item lands, relative to the slot."""
        return self.queuing_s + self.transmission_s


def received_records(view: ViewSpec, uploads: list[ReceivedInfo]) -> list[ReceivedInfo]:
    """Successful uploads whose type the view requires, duplicates kept."""
    return [u for u in uploads if u.success and u.type_id in view.required_types]


def received_set(view: ViewSpec, uploads: list[ReceivedInfo]) -> set[int]:
    """Distinct required types that arrived for the view."""
    return {u.type_id for u in received_records(view, uploads)}


def view_timeliness(view: ViewSpec, uploads: list[ReceivedInfo]) -> float:
    """Summed age of everything received for the view (seconds)."""
    return sum(u.age_s for u in received_records(view, uploads))


def view_completeness(view: ViewSpec, uploads: list[ReceivedInfo]) -> float:
    """Fraction of required types received, capped at 1."""
    return min(1.0, len(received_set(view, uploads)) / len(view.required_types))


def view_consistency(view: ViewSpec, uploads: list[ReceivedInfo]) -> float:
    """Squared spread of receipt instants around their mean (s^2); 0 is best."""
    records = received_records(view, uploads)
    if not records:
        return 0.0
    spans = [u.receipt_span_s for u in records]
    mean = sum(spans) / len(spans)
    return sum((s - mean) ** 2 for s in spans)


def normalize_components(
    timeliness_s: float,
    completeness: float,
    consistency_s2: float,
    *,
    n_received: int,
    horizon: int,
    max_sq_dev: float,
    timeliness_scale: float = 1.0,
    consistency_scale: float = 1.0,
) -> tuple[float, float, float]:
    """Map raw view scores to [0, 1] penalties (1 is worst).

    ``n_received`` counts received records (duplicates included) and
    ``max_sq_dev`` is the largest single squared deviation among them.
    An empty view is maximally penalized on all three axes.  The
    completeness penalty is exactly 1 - completeness; the other two are
    scaled by their configured normalization factors and clamped.
    """
    if n_received <= 0:
        return 1.0, 1.0, 1.0
    nt = timeliness_s / (timeliness_scale * n_received * horizon)
    nt = min(1.0, max(0.0, nt))
    nc = 1.0 - completeness
    if max_sq_dev > 0.0:
        ns = min(1.0, max(0.0, consistency_s2 / (consistency_scale * max_sq_dev)))
    else:
        ns = 0.0
    return nt, nc, ns


def age_of_view(
    norm_timeliness: float,
    norm_completeness: float,
    norm_consistency: float,
    weights: tuple[float, float, float],
) -> float:
    """Weighted combination of the three penalties; 0 is a perfect view."""
    return (
        weights[0] * norm_timeliness
        + weights[1] * norm_completeness
        + weights[2] * norm_consistency
    )


@dataclass(frozen=True)
class ViewScore:
    """Raw and normalized scores of one view in one slot."""

    view_id: int
    timeliness_s: float
    completeness: float
    consistency_s2: float
    norm_timeliness: float
    norm_completeness: float
    norm_consistency: float
    aov: float


def score_view(
    view: ViewSpec,
    uploads: list[ReceivedInfo],
    *,
    horizon: int,
    weights: tuple[float, float, float],
    timeliness_scale: float = 1.0,
    consistency_scale: float = 1.0,
) -> ViewScore:
    """Score one view from one slot's upload outcomes."""
    records = received_records(view, uploads)
    timeliness = sum(u.age_s for u in records)
    completeness = min(1.0, len({u.type_id for u in records}) / len(view.required_types))
    if records:
        spans = [u.receipt_span_s for u in records]
        mean = sum(spans) / len(spans)
        devs = [(s - mean) ** 2 for s in spans]
        consistency = sum(devs)
        max_dev = max(devs)
    else:
        consistency = 0.0
        max_dev = 0.0
    nt, nc, ns = normalize_components(
        timeliness,
        completeness,
        consistency,
        n_received=len(records),
        horizon=horizon,
        max_sq_dev=max_dev,
        timeliness_scale=timeliness_scale,
        consistency_scale=consistency_scale,
    )
    return ViewScore(
        view_id=view.id,
        timeliness_s=timeliness,
        completeness=completeness,
        consistency_s2=consistency,
        norm_timeliness=nt,
        norm_completeness=nc,
        norm_consistency=ns,
        aov=age_of_view(nt, nc, ns, weights),
    )


def vcps_quality(scores: list[ViewScore]) -> float:
    """Mean complement of the age score over every scored view."""
    if not scores:
        raise ValueError("no views were scored")
    return sum(1.0 - s.aov for s in scores) / len(scores)
