import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import expit, logit

from apolab.errors import InvalidInput
from apolab.policy import TabularPolicy, World
from apolab.preferences import (
    PreferenceDataset,
    PreferenceTable,
    RewardTable,
    bt_preference_prob,
    bt_to_preference_table,
    general_minimal_gap,
    make_rng,
    minimal_gap,
    population_dataset,
    sample_dataset,
    win_probabilities,
    win_probability,
)

from conftest import policy, random_policy

reward_tables = arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(2, 5)), elements=st.floats(-1, 1))


def cyclic_table(p=0.9) -> PreferenceTable:
    probs = np.full((1, 3, 3), 0.5)
    for a, b in ((0, 1), (1, 2), (2, 0)):
        probs[0, a, b], probs[0, b, a] = p, 1 - p
    return PreferenceTable(probs)


class TestRewardTable:
    def test_strict_range(self):
        with pytest.raises(InvalidInput):
            RewardTable([[1.5, 0.0]], strict=True)
        assert not RewardTable([[1.5, 0.0]]).in_unit_range

    def test_non_finite(self):
        with pytest.raises(InvalidInput):
            RewardTable([[np.nan, 0.0]])


class TestPreferenceTable:
    def test_rejects_broken_antisymmetry(self):
        probs = np.full((1, 2, 2), 0.5)
        probs[0, 0, 1] = 0.7
        with pytest.raises(InvalidInput):
            PreferenceTable(probs)

    def test_rejects_out_of_range(self):
        probs = np.full((1, 2, 2), 0.5)
        probs[0, 0, 1], probs[0, 1, 0] = 1.2, -0.2
        with pytest.raises(InvalidInput):
            PreferenceTable(probs)


class TestBradleyTerry:
    def test_equal_rewards(self):
        assert bt_preference_prob(RewardTable([[0.3, 0.3]]), 0, 0, 1) == 0.5

    def test_sigmoid_value(self):
        assert bt_preference_prob(RewardTable([[1.0, 0.0]]), 0, 0, 1) == pytest.approx(0.73106, abs=1e-5)

    def test_index_out_of_range(self):
        with pytest.raises(InvalidInput):
            bt_preference_prob(RewardTable([[1.0, 0.0]]), 0, 0, 2)
        with pytest.raises(InvalidInput):
            bt_preference_prob(RewardTable([[1.0, 0.0]]), 1, 0, 1)

    @given(reward_tables)
    def test_table_properties(self, rewards):
        table = bt_to_preference_table(RewardTable(rewards))
        p = table.probs
        np.testing.assert_array_equal(p + p.transpose(0, 2, 1), 1.0)
        assert np.all(np.diagonal(p, axis1=1, axis2=2) == 0.5)
        x, a, b = 0, 0, rewards.shape[1] - 1
        assert p[x, a, b] == pytest.approx(bt_preference_prob(RewardTable(rewards), x, a, b), abs=1e-15)

    @given(reward_tables, st.floats(-5, 5))
    def test_shift_invariance(self, rewards, c):
        shifted = rewards + c
        np.testing.assert_allclose(
            bt_to_preference_table(RewardTable(shifted)).probs, bt_to_preference_table(RewardTable(rewards)).probs,
            atol=1e-12,
        )

    def test_constant_table(self):
        assert np.all(bt_to_preference_table(RewardTable(np.full((2, 3), 0.4))).probs == 0.5)

    def test_logit_round_trip(self):
        table = bt_to_preference_table(RewardTable([[0.8, -0.3]]))
        assert logit(table.probs[0, 0, 1]) == pytest.approx(1.1, abs=1e-12)


class TestWinProbability:
    def test_indifferent(self, rng):
        pref = PreferenceTable(np.full((2, 3, 3), 0.5))
        pi = random_policy(rng, 2, 3)
        np.testing.assert_allclose(win_probabilities(pref, pi), 0.5)

    def test_near_point_mass(self):
        pref = bt_to_preference_table(RewardTable([[0.2, 0.9, -0.4]]))
        eps = 1e-9
        pi = policy([1 - 2 * eps, eps, eps])
        assert win_probability(pref, pi, 0, 1) == pytest.approx(pref.probs[0, 1, 0], abs=1e-8)

    def test_index_error(self):
        with pytest.raises(InvalidInput):
            win_probability(PreferenceTable(np.full((1, 2, 2), 0.5)), TabularPolicy.uniform(1, 2), 0, 5)

    @pytest.mark.parametrize("seed", range(10))
    def test_self_play_balance_and_affinity(self, seed):
        rng = np.random.default_rng(seed)
        pref = cyclic_table(rng.uniform(0.5, 1.0))
        p, q = random_policy(rng, 1, 3), random_policy(rng, 1, 3)
        balance = sum(p.probs[0, y] * win_probability(pref, p, 0, y) for y in range(3))
        assert balance == pytest.approx(0.5, abs=1e-14)
        lam = rng.uniform()
        mix = TabularPolicy.from_probs(lam * p.probs + (1 - lam) * q.probs)
        np.testing.assert_allclose(
            win_probabilities(pref, mix), lam * win_probabilities(pref, p) + (1 - lam) * win_probabilities(pref, q),
            atol=1e-14,
        )


class TestMinimalGap:
    def test_two_responses(self):
        g = minimal_gap(RewardTable([[1.0, 0.0]]))
        assert (g.delta, g.unique) == (1.0, True) and list(g.argmax) == [0]

    def test_tie(self):
        g = minimal_gap(RewardTable([[1.0, 1.0, 0.0]]))
        assert g.delta == 0 and not g.unique and list(g.argmax) == [0]

    @pytest.mark.parametrize("seed", range(10))
    def test_brute_force(self, seed):
        r = np.random.default_rng(seed).uniform(-1, 1, size=(3, 4))
        deltas = []
        for row in r:
            best = max(range(4), key=lambda y: (row[y], -y))
            deltas.append(row[best] - max(row[y] for y in range(4) if y != best))
        g = minimal_gap(RewardTable(r))
        assert g.delta == pytest.approx(min(deltas), abs=1e-15)
        shifted = minimal_gap(RewardTable(r + np.arange(3)[:, None]))
        assert shifted.delta == pytest.approx(g.delta, abs=1e-12)

    def test_general_from_bt(self):
        table = bt_to_preference_table(RewardTable([[1.0, 0.0]]))
        g = general_minimal_gap(table)
        # lead of y=0 over y=1 against each opponent y'
        leads = [table.probs[0, 0, yp] - table.probs[0, 1, yp] for yp in range(2)]
        assert g.unique and list(g.argmax) == [0]
        assert g.delta == pytest.approx(min(leads), abs=1e-15)
        assert g.delta == pytest.approx(expit(1) - 0.5)

    def test_general_indifferent(self):
        g = general_minimal_gap(PreferenceTable(np.full((1, 3, 3), 0.5)))
        assert g.delta == 0 and not g.unique

    def test_general_cyclic(self):
        assert not general_minimal_gap(cyclic_table()).unique


class TestSampling:
    def test_reproducible(self, rng):
        pref = cyclic_table(0.7)
        pi = random_policy(rng, 1, 3)
        a = sample_dataset(pref, pi, World.uniform(1, 3), 200, 7)
        b = sample_dataset(pref, pi, World.uniform(1, 3), 200, 7)
        np.testing.assert_array_equal(a.winners, b.winners)
        np.testing.assert_array_equal(a.losers, b.losers)

    def test_rejects_empty(self):
        with pytest.raises(InvalidInput):
            sample_dataset(cyclic_table(), TabularPolicy.uniform(1, 3), World.uniform(1, 3), 0, 0)

    def test_degenerate_behavior(self):
        eps = 1e-12
        pi = policy([eps, 1 - 2 * eps, eps])
        d = sample_dataset(cyclic_table(), pi, World.uniform(1, 3), 500, 3)
        assert np.all(d.winners == 1) and np.all(d.losers == 1)

    def test_winner_frequency_within_binomial_interval(self):
        pref = bt_to_preference_table(RewardTable([[0.6, -0.4, 0.1]]))
        n = 100_000
        d = sample_dataset(pref, TabularPolicy.uniform(1, 3), World.uniform(1, 3), n, 11)
        for a, b in ((0, 1), (0, 2), (2, 1)):
            wins = np.sum((d.winners == a) & (d.losers == b))
            total = wins + np.sum((d.winners == b) & (d.losers == a))
            p = pref.probs[0, a, b]
            assert abs(wins / total - p) <= 3 * math.sqrt(p * (1 - p) / total)

    def test_streams_differ_by_key(self):
        assert make_rng(1, 0).random() != make_rng(1, 1).random()

    def test_population_weights_sum_to_one(self, rng):
        pref = cyclic_table(0.8)
        pi = random_policy(rng, 1, 3)
        d = population_dataset(pref, pi, World.uniform(1, 3))
        assert d.weights.sum() == pytest.approx(1.0, abs=1e-14)
        W = d.pair_weights((1, 3))
        # marginal of a response appearing in a pair equals 2 pi(y) in total
        np.testing.assert_allclose(W.sum(axis=2) + W.sum(axis=1), 2 * pi.probs, atol=1e-14)

    def test_dataset_validation(self):
        with pytest.raises(InvalidInput):
            PreferenceDataset([0, 0], [1], [0])
        d = PreferenceDataset([0], [2], [0])
        with pytest.raises(InvalidInput):
            d.pair_weights((1, 2))
