"""Episode mechanics: encodings, determinism, rewards, credit assignment."""

import numpy as np
import pytest

from edgeview.core import validate_scenario
from edgeview.simulation import (
    action_layout,
    central_observation_dim,
    difference_reward,
    encode_vehicle_obs,
    observation_dim,
    rank_edge_policy,
    run_episode,
    slot_reward,
)


def small_cfg():
    return {
        "seed": 5,
        "horizon": 8,
        "catalog": [
            {"id": 0, "data_size_bits": 4e5},
            {"id": 1, "data_size_bits": 6e5},
            {"id": 2, "data_size_bits": 2e5},
        ],
        "vehicles": [
            {"id": 0, "sensible_types": [0, 1], "freq_bounds": {"default": [0.2, 2.0]},
             "tx_power_mw": 1.0,
             "trajectory": [[t, 100.0 + 5.0 * t, 200.0] for t in range(1, 9)]},
            {"id": 1, "sensible_types": [1, 2], "freq_bounds": {"default": [0.2, 2.0]},
             "tx_power_mw": 1.0,
             "trajectory": [[t, 300.0, 100.0 + 10.0 * t] for t in range(1, 9)]},
        ],
        "edges": [
            {"id": 0, "location": [250.0, 200.0], "radio_range_m": 600.0,
             "bandwidth_hz": 2e6,
             "views": [{"id": 0, "required_types": [0, 1]},
                       {"id": 1, "required_types": [1, 2]}]},
        ],
        "aov": {"weights": [0.3, 0.4, 0.3], "timeliness_scale": 0.5,
                "consistency_scale": 4.0},
        "max_views": 3,
    }


@pytest.fixture(scope="module")
def scenario():
    return validate_scenario(small_cfg())


def scripted_policy(salt=7):
    def policy_fn(vehicle_id, obs, t, central_obs):
        rng = np.random.default_rng([salt, vehicle_id, t])
        return rng.uniform(size=4)
    return policy_fn


def run(scenario, episode=1, **kw):
    return run_episode(scenario, scripted_policy(), rank_edge_policy(scenario), episode, **kw)


class TestEncodings:
    def test_dimensions_follow_layout(self, scenario):
        d = len(scenario.catalog)
        assert observation_dim(scenario) == 2 * d + d + scenario.max_views * d == 18
        assert central_observation_dim(scenario) == 2 * d * 2 + d + scenario.max_views * d == 24
        assert action_layout(scenario) == [(0, 0, 4), (1, 4, 4)]

    def test_idle_vehicle_encodes_to_zero(self, scenario):
        obs = encode_vehicle_obs(
            scenario, scenario.vehicle(0), covered=False, last_rates={},
            edge=None, cache={}, t=3,
        )
        np.testing.assert_array_equal(obs, np.zeros(18))

    def test_block_contents(self, scenario):
        obs = encode_vehicle_obs(
            scenario, scenario.vehicle(0), covered=True,
            last_rates={0: 1.1}, edge=scenario.edges[0], cache={1: 2}, t=4,
        )
        np.testing.assert_array_equal(obs[:3], [1.0, 1.0, 0.0])  # senses types 0 and 1
        assert obs[3] == pytest.approx(0.5)   # (1.1 - 0.2) / 1.8
        assert obs[4] == 0.0                  # no previous rate: lower bound
        np.testing.assert_array_equal(obs[6:9], [0.0, 0.75, 0.0])  # 1 - (4-2)/8
        np.testing.assert_array_equal(obs[9:12], [1.0, 1.0, 0.0])
        np.testing.assert_array_equal(obs[12:15], [0.0, 1.0, 1.0])
        np.testing.assert_array_equal(obs[15:], np.zeros(3))

    def test_identical_snapshots_identical_encodings(self, scenario):
        kw = dict(covered=True, last_rates={1: 0.9}, edge=scenario.edges[0],
                  cache={0: 1}, t=5)
        a = encode_vehicle_obs(scenario, scenario.vehicle(1), **kw)
        b = encode_vehicle_obs(scenario, scenario.vehicle(1), **kw)
        np.testing.assert_array_equal(a, b)


class TestEpisode:
    def test_shapes(self, scenario):
        res = run(scenario, need_central=True)
        assert len(res.slot_rewards) == 8
        assert res.diff_rewards.shape == (8, 2)
        assert res.vehicle_obs.shape == (9, 2, 18)
        assert res.raw_actions.shape == (8, 8)
        assert res.central_obs.shape == (9, 24)
        assert len(res.qtimes) == 8 and all(len(q) == 2 for q in res.qtimes)
        assert len(res.scores) == 8 * 2
        assert res.cumulative_reward == pytest.approx(sum(res.slot_rewards))

    def test_deterministic_replay(self, scenario):
        a = run(scenario)
        b = run(scenario)
        assert a.slot_rewards == b.slot_rewards
        np.testing.assert_array_equal(a.diff_rewards, b.diff_rewards)
        np.testing.assert_array_equal(a.raw_actions, b.raw_actions)
        np.testing.assert_array_equal(a.vehicle_obs, b.vehicle_obs)

    def test_episode_index_changes_channel(self, scenario):
        a = run(scenario, episode=1)
        b = run(scenario, episode=2)
        assert a.slot_rewards != b.slot_rewards

    def test_observations_stay_in_unit_interval(self, scenario):
        res = run(scenario)
        assert np.all(res.vehicle_obs >= 0.0) and np.all(res.vehicle_obs <= 1.0)

    def test_slot_rewards_match_scores(self, scenario):
        res = run(scenario)
        for k, r in enumerate(res.slot_rewards):
            views = res.scores[2 * k: 2 * k + 2]
            assert r == pytest.approx(np.mean([1.0 - s.aov for s in views]))

    def test_audits_clean_and_actions_logged(self, scenario):
        audit, actions = [], []
        res = run(scenario, audit_sink=audit, action_sink=actions)
        assert audit == []
        assert len(actions) == 8
        assert all(len(slot) == 2 for slot in actions)
        assert len(res.uploads) == 8 * 4  # both vehicles attempt both types

    def test_replaying_recorded_actions_is_bit_exact(self, scenario):
        first = run(scenario)
        layout = {vid: (off, width) for vid, off, width in action_layout(scenario)}

        def replay(vehicle_id, obs, t, central_obs):
            off, width = layout[vehicle_id]
            return first.raw_actions[t - 1, off: off + width]

        second = run_episode(scenario, replay, rank_edge_policy(scenario), 1)
        assert second.slot_rewards == first.slot_rewards
        np.testing.assert_array_equal(second.diff_rewards, first.diff_rewards)
        np.testing.assert_array_equal(second.vehicle_obs, first.vehicle_obs)


class TestSlotReward:
    def vs(self, aov):
        from edgeview.fusion import ViewScore

        return ViewScore(0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, aov)

    def test_single_view_complement(self):
        assert slot_reward({0: [self.vs(0.29)]}) == pytest.approx(0.71)

    def test_mean_over_edges_and_views(self):
        got = slot_reward({0: [self.vs(0.2), self.vs(0.5)], 1: [self.vs(0.8)]})
        assert got == pytest.approx((0.8 + 0.5 + 0.2) / 3.0)

    def test_all_worst_scores_give_zero(self):
        assert slot_reward({0: [self.vs(1.0), self.vs(1.0)]}) == 0.0

    def test_no_views_rejected(self):
        with pytest.raises(ValueError, match="no views"):
            slot_reward({0: []})


class TestDifferenceRewards:
    def group_uploads(self, res, t):
        ups = [u.info for u in res.uploads if u.t == t]
        return {0: ups}

    def test_stored_rewards_match_recomputation(self, scenario):
        res = run(scenario)
        for t in range(1, 9):
            grouped = self.group_uploads(res, t)
            base = res.slot_rewards[t - 1]
            for si, vid in enumerate((0, 1)):
                want = difference_reward(scenario, grouped, base, vid)
                assert res.diff_rewards[t - 1, si] == pytest.approx(want)

    def test_never_exceeds_system_reward(self, scenario):
        res = run(scenario)
        for t in range(1, 9):
            assert np.all(res.diff_rewards[t - 1] <= res.slot_rewards[t - 1] + 1e-12)

    def test_zero_for_vehicles_without_successes(self, scenario):
        res = run(scenario)
        for t in range(1, 9):
            succeeded = {u.info.vehicle_id for u in res.uploads if u.t == t and u.info.success}
            for si, vid in enumerate((0, 1)):
                if vid not in succeeded:
                    assert res.diff_rewards[t - 1, si] == 0.0


class TestUncoveredVehicle:
    def test_out_of_range_vehicle_idles(self):
        cfg = small_cfg()
        cfg["vehicles"][1]["trajectory"] = [[t, 9000.0, 9000.0] for t in range(1, 9)]
        sc = validate_scenario(cfg)
        res = run_episode(sc, scripted_policy(), rank_edge_policy(sc), 1)
        assert all(u.info.vehicle_id == 0 for u in res.uploads)
        np.testing.assert_array_equal(res.diff_rewards[:, 1], np.zeros(8))
        assert all(q[1] == [] for q in res.qtimes)
        # sensing block is zeroed while out of coverage
        np.testing.assert_array_equal(res.vehicle_obs[:, 1, :6], np.zeros((9, 6)))
