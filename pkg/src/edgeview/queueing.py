"""Single-server priority queue: closed-form waits and a simulation oracle.

Each sensed information type forms one class of a non-preemptive
head-of-line priority queue at the vehicle: Poisson arrivals at the
sensing frequency, generally distributed service (transmission) times
with known mean and variance, higher priority value served first.

``queuing_time`` is the analytic model of record used by the simulator;
``des_oracle`` is an independent discrete-event simulation used by the
tests to confirm ordering and monotonicity properties of the model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class QueueInstabilityError(ValueError):
    """Offered load leaves no capacity for the class under evaluation."""


@dataclass(frozen=True)
class QueueClass:
    """One priority class of the vehicle-side upload queue."""

    rate_hz: float  # Poisson arrival rate (sensing frequency)
    mean_service_s: float
    service_var_s2: float
    priority: int  # larger value is served first

    def __post_init__(self) -> None:
        if self.rate_hz <= 0:
            raise ValueError("rate_hz must be positive")
        if self.mean_service_s <= 0:
            raise ValueError("mean_service_s must be positive")
        if self.service_var_s2 < 0:
            raise ValueError("service_var_s2 must be >= 0")


def interarrival_time(rate_hz: float) -> float:
    """Mean gap between consecutive samples of one class."""
    if rate_hz <= 0:
        raise ValueError("rate_hz must be positive")
    return 1.0 / rate_hz


def higher_priority(classes: list[QueueClass], target: QueueClass) -> list[QueueClass]:
    """Classes strictly ahead of ``target`` in the service order."""
    return [c for c in classes if c.priority > target.priority]


def workload(classes: list[QueueClass]) -> float:
    """Long-run busy fraction contributed by the given classes."""
    return sum(c.rate_hz * c.mean_service_s for c in classes)


def workload_ahead(classes: list[QueueClass], target: QueueClass) -> float:
    """Busy fraction of the classes served before ``target``."""
    return workload(higher_priority(classes, target))


def queuing_time(classes: list[QueueClass], target: QueueClass) -> float:
    """Expected in-queue waiting time of the target class.

    Head-of-line priorities without preemption: the wait grows with the
    load placed ahead of the class and with the service-time variance of
    the class and everything above it.  Raises QueueInstabilityError when
    the load ahead plus the class's own load reaches the server capacity.
    """
    if target not in classes:
        raise ValueError("target class must be part of the class list")
    ahead = workload_ahead(classes, target)
    own = target.rate_hz * target.mean_service_s
    if ahead >= 1.0 or ahead + own >= 1.0:
        raise QueueInstabilityError(
            f"load ahead {ahead:.6f} plus own load {own:.6f} saturates the server"
        )
    var_mass = target.rate_hz * target.service_var_s2 + sum(
        c.rate_hz * c.service_var_s2 for c in higher_priority(classes, target)
    )
    alpha = target.mean_service_s
    wait = (alpha + var_mass / (2.0 * (1.0 - ahead - own))) / (1.0 - ahead) - alpha
    return wait


def _service_sampler(rng: np.random.Generator, mean: float, var: float):
    """Draws with the requested mean/variance: gamma, or constant when var=0."""
    if var == 0.0:
        return lambda size: np.full(size, mean)
    shape = mean * mean / var
    scale = var / mean
    return lambda size: rng.gamma(shape, scale, size)


def des_oracle(
    classes: list[QueueClass],
    n_arrivals: int,
    seed: int,
    warmup_frac: float = 0.05,
    n_batches: int = 50,
) -> dict[int, tuple[float, float]]:
    """Simulate the queue and return empirical waits per priority.

    Event-driven, single server, non-preemptive: at every service
    completion the oldest job of the highest-priority non-empty class
    starts next.  Returns {priority: (mean wait, standard error)} with
    the standard error taken over batch means after discarding the
    warmup fraction, which keeps it honest under autocorrelation.
    """
    if len({c.priority for c in classes}) != len(classes):
        raise ValueError("priorities must be distinct")
    rng = np.random.default_rng(seed)
    total_rate = sum(c.rate_hz for c in classes)
    per_class = [max(8, int(round(n_arrivals * c.rate_hz / total_rate))) for c in classes]

    order = sorted(range(len(classes)), key=lambda i: -classes[i].priority)
    arrivals = []
    services = []
    for i, c in enumerate(classes):
        gaps = rng.exponential(1.0 / c.rate_hz, per_class[i])
        arrivals.append(np.cumsum(gaps))
        services.append(_service_sampler(rng, c.mean_service_s, c.service_var_s2)(per_class[i]))

    merged_time = np.concatenate(arrivals)
    merged_cls = np.concatenate([np.full(len(a), i, dtype=np.int64) for i, a in enumerate(arrivals)])
    sort = np.argsort(merged_time, kind="stable")
    merged_time = merged_time[sort]
    merged_cls = merged_cls[sort]

    n_total = len(merged_time)
    arr_lists = [a.tolist() for a in arrivals]
    svc_lists = [s.tolist() for s in services]
    times = merged_time.tolist()
    cls_ids = merged_cls.tolist()

    enqueued = [0] * len(classes)
    served = [0] * len(classes)
    waits: list[list[float]] = [[] for _ in classes]
    t_free = 0.0
    i = 0
    done = 0
    while done < n_total:
        while i < n_total and times[i] <= t_free:
            enqueued[cls_ids[i]] += 1
            i += 1
        picked = -1
        for c in order:
            if served[c] < enqueued[c]:
                picked = c
                break
        if picked < 0:
            t_free = times[i]
            continue
        j = served[picked]
        waits[picked].append(t_free - arr_lists[picked][j])
        t_free += svc_lists[picked][j]
        served[picked] += 1
        done += 1

    out: dict[int, tuple[float, float]] = {}
    for i, c in enumerate(classes):
        w = np.array(waits[i])
        w = w[int(len(w) * warmup_frac):]
        batches = np.array_split(w, n_batches)
        means = np.array([b.mean() for b in batches if len(b)])
        se = float(means.std(ddof=1) / np.sqrt(len(means))) if len(means) > 1 else float("inf")
        out[c.priority] = (float(w.mean()), se)
    return out
