"""Bandit reranking against a naive step-by-step reference interpreter."""

import math

import numpy as np
import pytest

from layerqe.bandit import (
    BanditConfig,
    PruneSchedule,
    bandit_rerank,
    baseline_select,
    budget_units,
    layer_snapshot,
    mae_to_sigma,
    prefix_cutoff,
    rerank_pools,
    staged_prune,
    ucb_score,
)
from layerqe.rng import substream
from layerqe.synth import SynthConfig, generate_pool

from conftest import make_pool


# --- naive reference interpreter of the UCB bandit ---

def ref_bandit(scores, errors, budget, gamma, start=1):
    n = len(scores)
    n_layers = len(scores[0])
    sigma = [[e * math.sqrt(math.pi / 2.0) for e in row] for row in errors]
    depth = [start] * n
    spent = n * start
    remaining = [c for c in range(n)] if start < n_layers else []
    pulls = []
    while spent < budget and remaining:
        best = max(remaining, key=lambda c: (scores[c][depth[c] - 1]
                                             + gamma * sigma[c][depth[c] - 1], -c))
        depth[best] += 1
        spent += 1
        pulls.append((spent, best, depth[best]))
        if depth[best] == n_layers:
            remaining.remove(best)
    selected = max(range(n), key=lambda c: (scores[c][depth[c] - 1], -c))
    return selected, spent, pulls


def random_pool(rng, n, n_layers, source_id="src0"):
    scores = rng.normal(70, 5, size=(n, n_layers))
    errors = rng.normal(1.0, 0.6, size=(n, n_layers))  # may be negative
    return make_pool(scores.tolist(), errors.tolist(), source_id=source_id)


class TestScalars:
    def test_mae_to_sigma_values(self):
        assert mae_to_sigma(0.0) == 0.0
        assert mae_to_sigma(1.0) == pytest.approx(1.2533141, abs=1e-6)
        assert mae_to_sigma(0.2) == pytest.approx(0.2506628, abs=1e-6)

    def test_ucb_values(self):
        assert ucb_score(0.5, 0.1, 1.0) == pytest.approx(0.6)
        assert ucb_score(0.5, 0.1, 0.0) == 0.5
        assert ucb_score(79.0, 2.0, 1.5) == pytest.approx(82.0)

    def test_budget_units(self):
        assert budget_units(0.45, 200, 24) == 2160
        assert budget_units(0.15, 200, 24) == 720
        assert budget_units(1.0, 10, 6) == 60


class TestBanditRerank:
    def test_hand_trace_two_candidates(self):
        inv = 1.0 / math.sqrt(math.pi / 2.0)
        pool = make_pool(
            [[0.5, 0.55], [0.6, 0.60]],
            [[0.2 * inv, 0.0], [0.05 * inv, 0.0]],
        )
        result = bandit_rerank(pool, BanditConfig(budget=3, gamma=1.0))
        # UCB: A = 0.7 > B = 0.65, so A advances to layer 2 and completes;
        # the budget is spent; the deepest-layer argmax is B (0.60 > 0.55).
        assert result.selected == 1
        assert result.cost == 3
        assert [(p.step, p.candidate, p.layer) for p in result.trace.pulls] == [(3, 0, 2)]

    def test_exhaustive_budget_selects_final_argmax(self):
        rng = substream(5, "bx")
        pool = random_pool(rng, 6, 4)
        result = bandit_rerank(pool, BanditConfig(budget=24, gamma=1.0))
        assert result.cost == 24
        assert result.selected == int(np.argmax(pool.final_scores()))

    def test_minimum_budget_selects_start_layer_argmax(self):
        rng = substream(6, "bm")
        pool = random_pool(rng, 5, 4)
        result = bandit_rerank(pool, BanditConfig(budget=5, gamma=1.0))
        assert result.cost == 5
        assert result.selected == int(np.argmax(pool.score_matrix()[:, 0]))
        assert result.trace.pulls == ()

    def test_budget_below_minimum_rejected(self):
        pool = make_pool([[1, 2], [3, 4]])
        with pytest.raises(ValueError, match="below minimum"):
            bandit_rerank(pool, BanditConfig(budget=1))

    def test_start_layer_beyond_layers_rejected(self):
        pool = make_pool([[1, 2], [3, 4]])
        with pytest.raises(ValueError, match="start_layer"):
            bandit_rerank(pool, BanditConfig(budget=8, start_layer=3))

    def test_budget_beyond_full_stops_when_exhausted(self):
        pool = make_pool([[1, 2], [3, 4]])
        result = bandit_rerank(pool, BanditConfig(budget=100))
        assert result.cost == 4  # pool fully evaluated before the budget runs out

    def test_reference_agreement_random_pools(self):
        rng = substream(7, "bandit-oracle")
        for _ in range(1000):
            n = int(rng.integers(2, 11))
            n_layers = int(rng.integers(2, 7))
            pool = random_pool(rng, n, n_layers)
            start = int(rng.integers(1, n_layers + 1))
            budget = int(rng.integers(n * start, n * n_layers + 2))
            gamma = float(rng.choice([0.0, 0.5, 1.0, 2.0]))
            cfg = BanditConfig(budget=budget, gamma=gamma, start_layer=start)
            result = bandit_rerank(pool, cfg)
            scores = [list(map(float, c.trajectory.scores)) for c in pool.candidates]
            errors = [list(map(float, c.trajectory.errors)) for c in pool.candidates]
            sel, spent, pulls = ref_bandit(scores, errors, budget, gamma, start)
            assert result.selected == sel
            assert result.cost == spent
            assert [(p.step, p.candidate, p.layer) for p in result.trace.pulls] == pulls

    def test_budget_soundness(self):
        rng = substream(8, "bs")
        for _ in range(100):
            n = int(rng.integers(2, 8))
            n_layers = int(rng.integers(2, 6))
            pool = random_pool(rng, n, n_layers)
            budget = int(rng.integers(n, n * n_layers + 1))
            result = bandit_rerank(pool, BanditConfig(budget=budget))
            assert result.cost <= budget
            if result.cost < budget:  # only possible when fully evaluated
                assert result.cost == n * n_layers

    def test_batch_matches_sequential(self):
        rng = substream(9, "batch")
        for n, n_layers in ((5, 4), (8, 6), (3, 2)):
            pools = [random_pool(rng, n, n_layers, source_id=f"s{i}") for i in range(20)]
            for frac in (0.3, 0.6, 1.0):
                budget = budget_units(frac, n, n_layers)
                budget = max(budget, n)
                cfg = BanditConfig(budget=budget, gamma=1.0)
                batch = rerank_pools(pools, cfg)
                seq = [bandit_rerank(p, cfg) for p in pools]
                assert batch == [(r.selected, r.cost) for r in seq]

    def test_batch_heterogeneous_shapes_fall_back(self):
        rng = substream(10, "rag")
        pools = [random_pool(rng, 3, 4, "a"), random_pool(rng, 5, 4, "b")]
        cfg = BanditConfig(budget=12, gamma=1.0)
        batch = rerank_pools(pools, cfg)
        assert batch == [(r.selected, r.cost) for r in (bandit_rerank(p, cfg) for p in pools)]


class TestBaselines:
    def test_full_budget_selects_global_argmax(self):
        rng = substream(11, "bl")
        pool = random_pool(rng, 6, 4)
        selected, cost = baseline_select(pool, "random", budget=24, seed=1)
        assert selected == int(np.argmax(pool.final_scores()))
        assert cost == 24

    def test_minimum_budget_single_candidate(self):
        rng = substream(12, "bl2")
        pool = random_pool(rng, 6, 4)
        selected, cost = baseline_select(pool, "random", budget=4, seed=1)
        assert cost == 4

    def test_logprob_sum_top_k(self):
        pool = make_pool(
            [[1, 5], [2, 9], [3, 7]],
            logprob_avgs=[-1.0, -0.3, -0.7],
        )
        # logprob sums are avg * 10: [-10, -3, -7]; top-2 are candidates 1, 2
        selected, cost = baseline_select(pool, "logprob_sum", budget=4, seed=0)
        assert cost == 4
        assert selected == 1  # final score 9 beats 7

    def test_logprob_missing_named_error(self):
        pool = make_pool([[1, 2], [3, 4]])
        with pytest.raises(ValueError, match="logprob_avg"):
            baseline_select(pool, "logprob_avg", budget=2, seed=0)

    def test_budget_below_one_evaluation(self):
        pool = make_pool([[1, 2], [3, 4]])
        with pytest.raises(ValueError, match="full evaluation"):
            baseline_select(pool, "random", budget=1, seed=0)

    def test_random_seeded_deterministic(self):
        rng = substream(13, "bl3")
        pool = random_pool(rng, 10, 3)
        a = baseline_select(pool, "random", budget=9, seed=42)
        b = baseline_select(pool, "random", budget=9, seed=42)
        assert a == b


class TestSnapshots:
    def test_initialization_only(self):
        rng = substream(14, "sn")
        pool = random_pool(rng, 4, 3)
        result = bandit_rerank(pool, BanditConfig(budget=12))
        hist = layer_snapshot(result.trace, [4 / 12])
        assert hist[4 / 12] == {1: 4}

    def test_exhaustive_all_final(self):
        rng = substream(15, "sn2")
        pool = random_pool(rng, 4, 3)
        result = bandit_rerank(pool, BanditConfig(budget=12))
        assert layer_snapshot(result.trace, [1.0])[1.0] == {3: 4}

    def test_hand_trace_snapshot(self):
        inv = 1.0 / math.sqrt(math.pi / 2.0)
        pool = make_pool([[0.5, 0.55], [0.6, 0.60]], [[0.2 * inv, 0.0], [0.05 * inv, 0.0]])
        result = bandit_rerank(pool, BanditConfig(budget=3, gamma=1.0))
        assert layer_snapshot(result.trace, [1.0])[1.0] == {1: 1, 2: 1}

    def test_bad_fraction(self):
        rng = substream(16, "sn3")
        pool = random_pool(rng, 2, 2)
        result = bandit_rerank(pool, BanditConfig(budget=4))
        with pytest.raises(ValueError):
            layer_snapshot(result.trace, [0.0])


class TestPrefixCutoff:
    def test_half_with_fertility(self):
        assert prefix_cutoff(10, 0.5, 1.1) == 6  # 5.5 rounds half up

    def test_identity(self):
        assert prefix_cutoff(10, 1.0, 1.0) == 10

    def test_clamped_to_one(self):
        assert prefix_cutoff(3, 0.25, 1.1) == 1  # 0.825 rounds to 1 under clamp

    def test_validation(self):
        with pytest.raises(ValueError):
            prefix_cutoff(0, 0.5, 1.0)
        with pytest.raises(ValueError):
            prefix_cutoff(5, 0.0, 1.0)


class TestStagedPrune:
    def _partials(self, finals, noise=None):
        out = []
        for i, f in enumerate(finals):
            jitter = 0.0 if noise is None else noise[i]
            out.append({0.25: f + jitter, 0.5: f + jitter / 2, 0.75: f, 1.0: f})
        return out

    def test_keep_all_costs_full(self):
        partials = self._partials([1.0, 3.0, 2.0])
        schedule = PruneSchedule(stages=((0.25, 1.0), (0.5, 1.0), (0.75, 1.0)))
        survivor, cost = staged_prune(partials, schedule)
        assert survivor == 1
        assert cost == pytest.approx(1.0)

    def test_hand_cost_accounting(self):
        partials = self._partials([1.0, 4.0, 3.0, 2.0])
        schedule = PruneSchedule(stages=((0.25, 0.5),))
        survivor, cost = staged_prune(partials, schedule)
        assert cost == pytest.approx((4 * 0.25 + 2 * 0.75) / 4)
        assert survivor == 1

    def test_single_survivor_selected_regardless_of_finals(self):
        # candidate 0 wins at the 25% checkpoint but is globally worst
        partials = [
            {0.25: 9.0, 1.0: 0.0},
            {0.25: 1.0, 1.0: 5.0},
            {0.25: 2.0, 1.0: 7.0},
            {0.25: 3.0, 1.0: 9.0},
        ]
        schedule = PruneSchedule(stages=((0.25, 0.25),))
        survivor, _ = staged_prune(partials, schedule)
        assert survivor == 0

    def test_missing_partial_named_error(self):
        schedule = PruneSchedule(stages=((0.5, 0.5),))
        with pytest.raises(ValueError, match="0.5"):
            staged_prune([{1.0: 1.0}, {1.0: 2.0}], schedule)

    def test_schedule_validation(self):
        with pytest.raises(ValueError):
            PruneSchedule(stages=((0.3, 0.5),))
        with pytest.raises(ValueError):
            PruneSchedule(stages=((0.5, 0.5), (0.25, 0.5)))
        with pytest.raises(ValueError):
            PruneSchedule(stages=((0.25, 0.0),))


class TestOnSyntheticPool:
    def test_bandit_beats_minimum_on_calibrated_pool(self):
        cfg = SynthConfig(seed=19, layers=12, n_candidates=30, difficulty_sd=0.3)
        pool = generate_pool(cfg, substream(19, "pp"))
        full = bandit_rerank(pool, BanditConfig(budget=30 * 12))
        assert full.selected == int(np.argmax(pool.final_scores()))
