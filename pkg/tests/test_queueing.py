import numpy as np
import pytest

from edgeview import queueing
from edgeview.queueing import QueueClass, QueueInstabilityError


def make(rate, mean, var, prio):
    return QueueClass(rate_hz=rate, mean_service_s=mean, service_var_s2=var, priority=prio)


@pytest.mark.parametrize("rate, expected", [(0.5, 2.0), (1.0, 1.0), (4.0, 0.25)])
def test_interarrival_time(rate, expected):
    assert queueing.interarrival_time(rate) == expected


@pytest.mark.parametrize("rate", [0.0, -1.0])
def test_interarrival_time_rejects_nonpositive(rate):
    with pytest.raises(ValueError):
        queueing.interarrival_time(rate)


def test_workload_pinned():
    classes = [make(0.2, 1.0, 0.0, 2), make(0.3, 2.0, 0.0, 1)]
    assert queueing.workload(classes) == pytest.approx(0.8, abs=1e-12)
    assert queueing.workload([]) == 0.0
    assert queueing.workload([make(0.5, 2.0, 0.0, 1)]) == pytest.approx(1.0)


def test_workload_ahead():
    a = make(0.2, 1.0, 0.0, 2)
    b = make(0.3, 1.0, 0.0, 1)
    assert queueing.workload_ahead([a, b], b) == pytest.approx(0.2, abs=1e-12)
    assert queueing.workload_ahead([a, b], a) == 0.0


def test_queuing_time_single_class():
    c = make(0.5, 1.0, 0.5, 1)
    assert queueing.queuing_time([c], c) == pytest.approx(0.25, abs=1e-12)


def test_queuing_time_two_classes():
    hi = make(0.2, 1.0, 1.0, 2)
    lo = make(0.3, 1.0, 1.0, 1)
    assert queueing.queuing_time([hi, lo], lo) == pytest.approx(0.875, abs=1e-12)


def test_queuing_time_zero_variance_single_class():
    c = make(0.5, 1.0, 0.0, 1)
    assert queueing.queuing_time([c], c) == 0.0


def test_highest_priority_closed_form():
    # with nothing ahead the wait reduces to rate*var / (2*(1 - rate*mean))
    rng = np.random.default_rng(5)
    for _ in range(200):
        rate = rng.uniform(0.05, 0.9)
        mean = rng.uniform(0.1, 1.0 / rate * 0.9)
        var = rng.uniform(0.0, 2.0)
        top = make(rate, mean, var, 3)
        lower = make(0.01, 0.1, 0.2, 1)
        got = queueing.queuing_time([top, lower], top)
        want = rate * var / (2.0 * (1.0 - rate * mean))
        assert got == pytest.approx(want, rel=1e-12)


def test_queuing_time_requires_membership():
    a = make(0.2, 1.0, 0.0, 2)
    with pytest.raises(ValueError):
        queueing.queuing_time([a], make(0.1, 1.0, 0.0, 1))


@pytest.mark.parametrize(
    "classes_target",
    [
        # own load saturates
        ([make(0.5, 2.0, 0.1, 1)], 0),
        # load ahead saturates
        ([make(0.6, 2.0, 0.1, 2), make(0.1, 0.5, 0.1, 1)], 1),
        # combined load saturates
        ([make(0.5, 1.0, 0.1, 2), make(0.5, 1.0, 0.1, 1)], 1),
    ],
)
def test_instability_raises(classes_target):
    classes, idx = classes_target
    with pytest.raises(QueueInstabilityError):
        queueing.queuing_time(classes, classes[idx])


def _random_stable_config(rng):
    n = int(rng.integers(2, 5))
    budget = rng.uniform(0.4, 0.85)
    loads = rng.dirichlet(np.ones(n)) * budget
    classes = []
    for i in range(n):
        mean = rng.uniform(0.1, 2.0)
        rate = loads[i] / mean
        var = rng.uniform(0.0, 1.5) * mean * mean
        classes.append(make(rate, mean, var, n - i))
    return classes


def test_monotone_in_own_rate_variance_and_load_ahead():
    rng = np.random.default_rng(17)
    for _ in range(200):
        classes = _random_stable_config(rng)
        target = classes[-1]
        base = queueing.queuing_time(classes, target)

        bumped_var = make(
            target.rate_hz, target.mean_service_s, target.service_var_s2 + 0.3, target.priority
        )
        q_var = queueing.queuing_time(classes[:-1] + [bumped_var], bumped_var)
        assert q_var >= base - 1e-12

        bumped_rate = make(
            target.rate_hz * 1.05, target.mean_service_s, target.service_var_s2, target.priority
        )
        q_rate = queueing.queuing_time(classes[:-1] + [bumped_rate], bumped_rate)
        assert q_rate >= base - 1e-12

        ahead = classes[0]
        bumped_ahead = make(
            ahead.rate_hz * 1.05, ahead.mean_service_s, ahead.service_var_s2, ahead.priority
        )
        q_ahead = queueing.queuing_time([bumped_ahead] + classes[1:], target)
        assert q_ahead >= base - 1e-12


def test_des_oracle_empty_system_limit():
    c = make(1e-4, 1.0, 1.0, 1)
    (mean, se), = queueing.des_oracle([c], 2000, seed=3).values()
    assert mean == pytest.approx(0.0, abs=3 * se + 1e-6)


def test_des_oracle_mm1_matches_pollaczek_khintchine():
    # M/M/1: exponential service is gamma with shape 1
    c = make(0.5, 1.0, 1.0, 1)
    mean, se = queueing.des_oracle([c], 200_000, seed=11)[1]
    want = 0.5 * (1.0 + 1.0) / (2.0 * (1.0 - 0.5))
    assert abs(mean - want) <= 3 * se


def test_des_oracle_priority_ordering():
    rng = np.random.default_rng(23)
    for trial in range(10):
        budget = rng.uniform(0.3, 0.8)
        split = rng.uniform(0.2, 0.8)
        hi = make(budget * split / 0.5, 0.5, rng.uniform(0, 0.5), 2)
        lo = make(budget * (1 - split) / 0.5, 0.5, rng.uniform(0, 0.5), 1)
        waits = queueing.des_oracle([hi, lo], 30_000, seed=100 + trial)
        assert waits[2][0] <= waits[1][0] + 3 * (waits[2][1] + waits[1][1])


def test_des_oracle_rejects_duplicate_priorities():
    with pytest.raises(ValueError):
        queueing.des_oracle([make(0.1, 1, 0, 1), make(0.1, 1, 0, 1)], 1000, seed=0)
