import numpy as np
import pytest

from edgeview import fusion
from edgeview.core import ViewSpec
from edgeview.fusion import ReceivedInfo


def rec(tid, vid=0, a=1.0, q=0.0, g=0.0, ok=True):
    return ReceivedInfo(
        type_id=tid, vehicle_id=vid, interarrival_s=a, queuing_s=q,
        transmission_s=g, success=ok,
    )


VIEW = ViewSpec(id=0, required_types=frozenset({1, 2, 3}))


def test_received_set_intersection():
    ups = [rec(2), rec(3), rec(7)]
    assert fusion.received_set(VIEW, ups) == {2, 3}


def test_received_set_ignores_failures():
    assert fusion.received_set(VIEW, [rec(1, ok=False)]) == set()


def test_received_records_keeps_duplicates():
    ups = [rec(2, vid=0), rec(2, vid=1), rec(3)]
    assert len(fusion.received_records(VIEW, ups)) == 3


def test_view_timeliness_pinned():
    ups = [rec(1, a=1.0, q=0.5, g=0.5), rec(2, a=2.0, q=1.0, g=1.0)]
    assert fusion.view_timeliness(VIEW, ups) == pytest.approx(6.0, abs=1e-12)
    assert fusion.view_timeliness(VIEW, []) == 0.0
    assert fusion.view_timeliness(VIEW, [rec(1, a=1.0)]) == 1.0


def test_view_completeness_pinned():
    four = ViewSpec(id=1, required_types=frozenset({1, 2, 3, 4}))
    ups = [rec(1), rec(2), rec(3)]
    assert fusion.view_completeness(four, ups) == 0.75
    assert fusion.view_completeness(VIEW, [rec(1), rec(2), rec(3)]) == 1.0
    assert fusion.view_completeness(VIEW, []) == 0.0


def test_view_consistency_pinned():
    # receipt instants 2 and 4, mean 3 -> (1 + 1)
    ups = [rec(1, q=1.0, g=1.0), rec(2, q=2.0, g=2.0)]
    assert fusion.view_consistency(VIEW, ups) == pytest.approx(2.0, abs=1e-12)
    assert fusion.view_consistency(VIEW, [rec(1, q=1.0, g=2.0)]) == 0.0
    ups3 = [rec(1, q=1.0, g=2.0), rec(2, q=2.0, g=1.0), rec(3, q=0.0, g=3.0)]
    assert fusion.view_consistency(VIEW, ups3) == 0.0


def test_consistency_shift_invariance():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 6))
        ups = [rec(1, q=float(rng.uniform(0, 5)), g=float(rng.uniform(0, 5))) for _ in range(n)]
        shift = float(rng.uniform(0, 10))
        shifted = [
            ReceivedInfo(u.type_id, u.vehicle_id, u.interarrival_s, u.queuing_s + shift,
                         u.transmission_s, u.success)
            for u in ups
        ]
        assert fusion.view_consistency(VIEW, shifted) == pytest.approx(
            fusion.view_consistency(VIEW, ups), rel=1e-9, abs=1e-9
        )


def test_timeliness_additivity():
    rng = np.random.default_rng(4)
    ups = [rec(int(rng.integers(1, 4)), a=float(rng.uniform(0, 3))) for _ in range(20)]
    whole = fusion.view_timeliness(VIEW, ups)
    parts = fusion.view_timeliness(VIEW, ups[:9]) + fusion.view_timeliness(VIEW, ups[9:])
    assert whole == pytest.approx(parts, rel=1e-12)


def test_normalize_components_pinned():
    nt, nc, ns = fusion.normalize_components(
        6.0, 0.75, 0.0, n_received=2, horizon=30, max_sq_dev=1.0,
    )
    assert nt == pytest.approx(0.1, abs=1e-12)
    assert nc == pytest.approx(0.25, abs=1e-12)
    assert ns == 0.0


def test_normalize_consistency_clamps():
    _, _, ns = fusion.normalize_components(
        0.0, 1.0, 2.0, n_received=2, horizon=10, max_sq_dev=1.0, consistency_scale=2.0,
    )
    assert ns == 1.0


def test_normalize_empty_view_worst_case():
    assert fusion.normalize_components(
        0.0, 0.0, 0.0, n_received=0, horizon=10, max_sq_dev=0.0
    ) == (1.0, 1.0, 1.0)


def test_normalize_zero_spread_is_perfectly_consistent():
    _, _, ns = fusion.normalize_components(
        1.0, 1.0, 0.0, n_received=3, horizon=10, max_sq_dev=0.0
    )
    assert ns == 0.0


def test_age_of_view_pinned():
    w = (0.3, 0.4, 0.3)
    assert fusion.age_of_view(0.2, 0.5, 0.1, w) == pytest.approx(0.29, abs=1e-12)
    assert fusion.age_of_view(0.0, 0.0, 0.0, w) == 0.0
    assert fusion.age_of_view(1.0, 1.0, 1.0, w) == pytest.approx(1.0, abs=1e-12)


def test_age_of_view_monotone_per_component():
    rng = np.random.default_rng(9)
    w = (0.3, 0.4, 0.3)
    for _ in range(100):
        comps = rng.uniform(0, 1, 3)
        base = fusion.age_of_view(*comps, w)
        for i in range(3):
            worse = comps.copy()
            worse[i] = min(1.0, worse[i] + 0.1)
            assert fusion.age_of_view(*worse, w) >= base - 1e-12


def test_vcps_quality():
    def fake(aov):
        return fusion.ViewScore(0, 0, 1, 0, 0, 0, 0, aov)

    assert fusion.vcps_quality([fake(0.29)]) == pytest.approx(0.71, abs=1e-12)
    assert fusion.vcps_quality([fake(0.2), fake(0.4)]) == pytest.approx(0.7, abs=1e-12)
    assert fusion.vcps_quality([fake(1.0), fake(1.0)]) == 0.0
    with pytest.raises(ValueError):
        fusion.vcps_quality([])


def test_score_view_duplicates_and_completeness():
    ups = [rec(1, vid=0, a=1.0, q=1.0, g=1.0), rec(1, vid=1, a=1.0, q=2.0, g=2.0)]
    score = fusion.score_view(VIEW, ups, horizon=10, weights=(0.3, 0.4, 0.3))
    # both records age-count, one distinct type of three required
    assert score.timeliness_s == pytest.approx(3.0 + 5.0)
    assert score.completeness == pytest.approx(1.0 / 3.0)
    assert score.consistency_s2 == pytest.approx(2.0)  # instants 2 and 4


def test_score_view_randomized_identities():
    rng = np.random.default_rng(21)
    for _ in range(500):
        req = frozenset(int(t) for t in rng.choice(8, size=int(rng.integers(1, 5)), replace=False))
        view = ViewSpec(id=0, required_types=req)
        ups = [
            rec(
                int(rng.integers(0, 8)),
                vid=int(rng.integers(0, 3)),
                a=float(rng.uniform(0, 4)),
                q=float(rng.uniform(0, 4)),
                g=float(rng.uniform(0, 4)),
                ok=bool(rng.uniform() < 0.7),
            )
            for _ in range(int(rng.integers(0, 10)))
        ]
        s = fusion.score_view(view, ups, horizon=20, weights=(0.3, 0.4, 0.3))
        assert s.norm_completeness == pytest.approx(1.0 - s.completeness, abs=1e-15)
        assert 0.0 <= s.aov <= 1.0
        for comp in (s.norm_timeliness, s.norm_completeness, s.norm_consistency):
            assert 0.0 <= comp <= 1.0
