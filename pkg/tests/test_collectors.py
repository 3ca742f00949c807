import math

import numpy as np
import pytest

from genfl.collectors import (ClientStats, FavorConfig, FedMarlConfig, RewardConfig,
                              SelectionRecord, VALUE_STEP, augment_records,
                              collect_records, collect_session, explore_select,
                              favor_reward, fedmarl_reward, oort_select,
                              oort_utility, pool_fingerprint, random_select,
                              records_from_jsonl, records_to_jsonl, update_values)
from genfl.core import Budget, ClientSelection
from genfl.errors import DataError
from genfl.flsim import PartitionConfig, SimConfig

from conftest import random_pool


class TestRandomSelect:
    def test_full_pool(self, small_pool):
        sel = random_select(small_pool, 6, np.random.default_rng(0))
        assert sorted(sel.tokens) == list(range(6))

    def test_deterministic(self, small_pool):
        a = random_select(small_pool, 3, np.random.default_rng(5))
        b = random_select(small_pool, 3, np.random.default_rng(5))
        assert a == b

    def test_inclusion_frequency(self):
        pool = random_pool(np.random.default_rng(0), 100)
        rng = np.random.default_rng(1)
        counts = np.zeros(100)
        n_draws = 10_000
        for _ in range(n_draws):
            for t in random_select(pool, 10, rng).tokens:
                counts[t] += 1
        freq = counts / n_draws
        sigma = math.sqrt(0.1 * 0.9 / n_draws)
        # 4 sigma rather than 3: 100 ids are checked simultaneously
        assert np.all(np.abs(freq - 0.1) < 4 * sigma)

    def test_size_bounds(self, small_pool):
        with pytest.raises(DataError):
            random_select(small_pool, 7, np.random.default_rng(0))


class TestOortUtility:
    def test_hand_example(self):
        stats = ClientStats(losses=[2.0] * 10, round_time_s=10.0)
        assert oort_utility(stats, deadline_s=5.0, penalty_exp=2.0) == pytest.approx(5.0, rel=1e-14)

    def test_within_deadline_no_penalty(self):
        stats = ClientStats(losses=[1.0, 3.0], round_time_s=2.0)
        expected = 2 * math.sqrt((1 + 9) / 2)
        assert oort_utility(stats, deadline_s=5.0, penalty_exp=2.0) == pytest.approx(expected)

    def test_single_loss(self):
        stats = ClientStats(losses=[0.7], round_time_s=1.0)
        assert oort_utility(stats, deadline_s=5.0, penalty_exp=2.0) == pytest.approx(0.7)

    def test_oracle_on_random_inputs(self):
        gen = np.random.default_rng(0)
        for _ in range(200):
            losses = list(gen.uniform(0, 3, size=int(gen.integers(1, 20))))
            t = float(gen.uniform(0.5, 20))
            deadline = float(gen.uniform(0.5, 20))
            a = float(gen.uniform(0, 4))
            stats = ClientStats(losses=losses, round_time_s=t)
            expected = len(losses) * math.sqrt(sum(l * l for l in losses) / len(losses))
            if t > deadline:
                expected *= (deadline / t) ** a
            assert oort_utility(stats, deadline, a) == pytest.approx(expected, rel=1e-13)

    def test_empty_losses(self):
        stats = ClientStats(losses=[1.0], round_time_s=1.0)
        stats.losses = []
        with pytest.raises(DataError):
            oort_utility(stats, 1.0, 2.0)


class TestOortSelect:
    def stats_table(self, utils, explored=1):
        return {i: ClientStats(losses=[u], round_time_s=1.0, explored=explored)
                for i, u in enumerate(utils)}

    def test_eps_zero_is_top_t(self):
        table = self.stats_table([0.1, 0.9, 0.5, 0.7])
        sel = oort_select(table, 2, 0.0, deadline_s=10, penalty_exp=2,
                          rng=np.random.default_rng(0))
        assert set(sel.tokens) == {1, 3}

    def test_tie_break_lower_id(self):
        table = self.stats_table([1.0] * 6)
        sel = oort_select(table, 3, 0.0, deadline_s=10, penalty_exp=2,
                          rng=np.random.default_rng(0))
        assert sel.tokens == (0, 1, 2)

    def test_matches_sort_oracle(self):
        gen = np.random.default_rng(1)
        for _ in range(1000):
            utils = gen.uniform(0, 1, size=int(gen.integers(3, 12)))
            size = int(gen.integers(1, len(utils) + 1))
            table = self.stats_table(utils)
            sel = oort_select(table, size, 0.0, deadline_s=10, penalty_exp=2, rng=gen)
            expected = sorted(range(len(utils)), key=lambda i: (-utils[i], i))[:size]
            assert list(sel.tokens) == expected

    def test_exploration_picks_unexplored(self):
        table = self.stats_table([0.9, 0.8, 0.7, 0.1, 0.2, 0.3])
        for i in (3, 4, 5):
            table[i].explored = 0
        # epsilon 0.5, size 4 -> 2 greedy + 2 unexplored
        sel = oort_select(table, 4, 0.5, deadline_s=10, penalty_exp=2,
                          rng=np.random.default_rng(2))
        assert set(sel.tokens[:2]) == {0, 1}
        assert set(sel.tokens[2:]) <= {3, 4, 5}


class TestRewards:
    def test_favor_zero_at_target(self):
        assert favor_reward([0.8], FavorConfig(omega_target=0.8)) == pytest.approx(0.0)

    def test_favor_hand_example(self):
        cfg = FavorConfig(xi=2.0, omega_target=0.0, gamma=1.0)
        assert favor_reward([1.0, 1.0], cfg) == pytest.approx(2.0)

    def test_favor_negative_below_target(self):
        cfg = FavorConfig()
        assert favor_reward([0.5, 0.6, 0.7], cfg) < 0

    def test_favor_oracle(self):
        gen = np.random.default_rng(0)
        for _ in range(100):
            path = list(gen.uniform(0, 1, size=int(gen.integers(1, 8))))
            cfg = FavorConfig(xi=float(gen.uniform(1.5, 100)),
                              omega_target=float(gen.uniform(0, 1)),
                              gamma=float(gen.uniform(0.5, 1.0)))
            expected = sum(cfg.gamma ** t * (cfg.xi ** (w - cfg.omega_target) - 1)
                           for t, w in enumerate(path))
            assert favor_reward(path, cfg) == pytest.approx(expected, rel=1e-13)

    def test_fedmarl_zero(self):
        assert fedmarl_reward(0.5, 0.5, 0.0, 0.0, FedMarlConfig()) == 0.0

    def test_fedmarl_hand_example(self):
        cfg = FedMarlConfig(w1=1.0, w2=0.5, w3=0.25)
        r = fedmarl_reward(0.6, 0.5, 0.2, 0.4, cfg)
        assert r == pytest.approx(-0.1, abs=1e-15)

    def test_fedmarl_latency_monotone(self):
        cfg = FedMarlConfig(w2=0.1)
        assert fedmarl_reward(0.5, 0.4, 2.0, 1.0, cfg) < fedmarl_reward(0.5, 0.4, 1.0, 1.0, cfg)

    def test_fedmarl_log1p_utility(self):
        cfg = FedMarlConfig(utility="log1p")
        r = fedmarl_reward(0.6, 0.5, 0.0, 0.0, cfg)
        assert r == pytest.approx(math.log1p(0.6) - math.log1p(0.5))


class TestExploreSelect:
    def test_eps_zero_top_by_value(self):
        values = {0: 0.1, 1: 0.9, 2: 0.5, 3: 0.7}
        sel = explore_select(values, 2, 0.0, np.random.default_rng(0))
        assert sel.tokens == (1, 3)

    def test_eps_one_matches_uniform_stat(self):
        values = {i: float(i) for i in range(20)}
        rng = np.random.default_rng(3)
        counts = np.zeros(20)
        n = 4000
        for _ in range(n):
            for t in explore_select(values, 4, 1.0, rng).tokens:
                counts[t] += 1
        freq = counts / n
        sigma = math.sqrt(0.2 * 0.8 / n)
        assert np.all(np.abs(freq - 0.2) < 4 * sigma)

    def test_value_update_rule(self):
        values = {0: 0.0, 1: 0.0, 2: 0.4}
        sel = ClientSelection((0, 2))
        update_values(values, sel, reward=1.0)
        credit = 0.5
        assert values[0] == pytest.approx(VALUE_STEP * credit)
        assert values[2] == pytest.approx(0.4 + VALUE_STEP * (credit - 0.4))
        assert values[1] == 0.0


@pytest.fixture(scope="module")
def tiny_setup():
    pool = random_pool(np.random.default_rng(50), 8)
    sim = SimConfig(clients=8, participants=3, rounds=4)
    return pool, sim, PartitionConfig(), Budget(10.0, 60.0)


class TestCollection:
    def test_record_count(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        rs = collect_records(["oort"], 2, pool, sim, part, budget, root_seed=0)
        assert len(rs) == 2 * sim.rounds

    def test_all_collectors_and_score_roundtrip(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        rs = collect_records(["oort", "favor", "fedmarl", "random"], 1, pool, sim,
                             part, budget, root_seed=1)
        from genfl.core import comprehensive_score
        for rec in rs.records:
            bd = comprehensive_score(rec.perf, rec.latency_s, rec.energy_j, budget)
            assert rec.score == bd.comprehensive  # 0 ulp round-trip
            rec.selection.validate_against(pool)

    def test_reproducible_serialization(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        a = collect_records(["fedmarl"], 2, pool, sim, part, budget, root_seed=7)
        b = collect_records(["fedmarl"], 2, pool, sim, part, budget, root_seed=7)
        assert records_to_jsonl(a) == records_to_jsonl(b)

    def test_favor_session_reward_logged(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        rs = collect_records(["favor"], 1, pool, sim, part, budget, root_seed=2)
        assert len(rs.metadata["favor_session_rewards"]) == 1

    def test_fixed_size_sessions(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        records, _ = collect_session("random", pool, sim, part, budget,
                                     RewardConfig(), session_seed=9, vary_size=False)
        assert all(len(r.selection) == sim.participants for r in records)


class TestAugmentation:
    def test_zero_shuffles_identity(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        rs = collect_records(["random"], 1, pool, sim, part, budget, root_seed=3)
        out = augment_records(rs, 0, seed=0)
        assert out.records == rs.records

    def test_copies_preserve_set_and_score(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        rs = collect_records(["random"], 1, pool, sim, part, budget, root_seed=4)
        out = augment_records(rs, 5, seed=1)
        assert len(out) == 6 * len(rs)
        for i, src in enumerate(rs.records):
            for copy in out.records[6 * i: 6 * (i + 1)]:
                assert copy.selection.id_set == src.selection.id_set
                assert copy.score == src.score


class TestPersistence:
    def test_jsonl_roundtrip(self, tiny_setup):
        pool, sim, part, budget = tiny_setup
        rs = collect_records(["oort", "favor"], 1, pool, sim, part, budget, root_seed=5)
        text = records_to_jsonl(rs)
        back = records_from_jsonl(text, budget, rs.pool_fingerprint)
        assert back.records == rs.records
        assert records_to_jsonl(back) == text

    def test_fingerprint_sensitive_to_pool(self):
        a = random_pool(np.random.default_rng(0), 5)
        b = random_pool(np.random.default_rng(1), 5)
        assert pool_fingerprint(a) != pool_fingerprint(b)
        assert pool_fingerprint(a) == pool_fingerprint(a)
