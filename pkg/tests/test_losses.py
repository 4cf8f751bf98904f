import math

import numpy as np
import pytest
from scipy.special import expit

from apolab.errors import ConfigError, InvalidInput
from apolab.losses import LossKind, dpo_loss, evaluate, ipo_loss, make_objective, sppo_log_partition, sppo_loss
from apolab.policy import TabularPolicy, World, normalize_log_policy
from apolab.preferences import PreferenceDataset, PreferenceTable, make_rng, population_dataset, win_probabilities
from apolab.verify import finite_difference_gradient, random_loss_case

from conftest import policy, random_policy

TAGS = ("dpo", "sppo", "ipo")


def single(x=0, w=0, l=1):
    return PreferenceDataset([x], [w], [l])


class TestLossKind:
    def test_unknown_tag(self):
        with pytest.raises(ConfigError):
            LossKind("kto")

    @pytest.mark.parametrize("kw", [{"tag": "ipo", "ipo_tau": 0.0}, {"tag": "sppo", "sppo_eta": -1.0}])
    def test_rejects_non_positive(self, kw):
        with pytest.raises(ConfigError):
            LossKind(**kw)

    def test_eta_contract(self):
        assert LossKind("sppo").eta_for(4.0) == 0.25
        assert LossKind("sppo", sppo_eta=0.5).eta_for(2.0) == 0.5
        with pytest.raises(ConfigError):
            LossKind("sppo", sppo_eta=1.0).eta_for(2.0)


class TestDPO:
    def test_equal_policies(self):
        p = TabularPolicy.uniform(1, 2)
        data = PreferenceDataset([0, 0, 0], [0, 1, 0], [1, 0, 1])
        assert dpo_loss(p, p, 1.0, data).value == pytest.approx(math.log(2), abs=1e-15)

    def test_unit_margin(self):
        pi_t = TabularPolicy.uniform(1, 2)
        pi = policy([expit(1), expit(-1)])
        assert dpo_loss(pi, pi_t, 1.0, single()).value == pytest.approx(0.313262, abs=1e-6)

    def test_empty_dataset(self):
        p = TabularPolicy.uniform(1, 2)
        with pytest.raises(InvalidInput):
            dpo_loss(p, p, 1.0, PreferenceDataset([], [], []))

    def test_strictly_decreasing_in_margin(self):
        pi_t = TabularPolicy.uniform(1, 2)
        margins = np.linspace(-4, 4, 17)
        values = [dpo_loss(normalize_log_policy([[m, 0.0]]), pi_t, 1.0, single()).value for m in margins]
        assert np.all(np.diff(values) < 0)


class TestSPPO:
    def test_log_partition_indifferent(self):
        pref = PreferenceTable(np.full((2, 3, 3), 0.5))
        for eta in (0.5, 1.0, 2.0):
            np.testing.assert_allclose(sppo_log_partition(pref, TabularPolicy.uniform(2, 3), eta), eta / 2)

    def test_zero_at_exact_square_minimizer(self):
        beta = 1.0
        pref = PreferenceTable(np.full((1, 3, 3), 0.5))
        pi_t = TabularPolicy.uniform(1, 3)
        b = beta * 0.5
        logp = pi_t.log_probs[0].copy()
        logp[0] += (1 - b) / beta
        logp[1] += -b / beta
        logp[2] = math.log(1 - math.exp(logp[0]) - math.exp(logp[1]))
        pi = TabularPolicy(logp[None, :])
        assert sppo_loss(pi, pi_t, beta, single(), pref).value == pytest.approx(0.0, abs=1e-28)

    def test_eta_beta_mismatch(self):
        p = TabularPolicy.uniform(1, 2)
        with pytest.raises(ConfigError):
            sppo_loss(p, p, 2.0, single(), PreferenceTable(np.full((1, 2, 2), 0.5)), eta=1.0)

    def test_needs_preferences(self):
        p = TabularPolicy.uniform(1, 2)
        with pytest.raises(InvalidInput):
            evaluate(LossKind("sppo"), p, p, 1.0, single())

    @pytest.mark.parametrize("ny", [2, 3, 4])
    @pytest.mark.parametrize("beta", [0.5, 1.0, 2.0])
    def test_population_loss_is_regression_up_to_constant(self, ny, beta):
        # expected loss over pairs drawn from pi_t = E_y[(r_pi(y) + beta log Z - P(y > pi_t))^2] + C(pi_t)
        rng = np.random.default_rng(ny * 10 + int(beta * 2))
        raw = rng.uniform(size=(1, ny, ny))
        upper = np.triu(raw, 1)
        probs = upper + np.tril(1 - upper.transpose(0, 2, 1), -1) + 0.5 * np.eye(ny)
        pref = PreferenceTable(probs)
        world = World.uniform(1, ny)
        pi_t = random_policy(rng, 1, ny)
        data = population_dataset(pref, pi_t, world)
        b = beta * sppo_log_partition(pref, pi_t, 1 / beta)
        wins = win_probabilities(pref, pi_t)

        def regression(pi):
            r = beta * (pi.log_probs - pi_t.log_probs)
            return float(np.sum(pi_t.probs * (r + b[:, None] - wins) ** 2))

        offsets = []
        for _ in range(4):
            pi = random_policy(rng, 1, ny)
            offsets.append(sppo_loss(pi, pi_t, beta, data, pref).value - regression(pi))
        np.testing.assert_allclose(offsets, offsets[0], atol=1e-12)


class TestIPO:
    @pytest.mark.parametrize("tau", [0.5, 1.0, 4.0])
    def test_equal_policies(self, tau):
        p = TabularPolicy.uniform(1, 2)
        assert ipo_loss(p, p, 1.3, tau, single()).value == pytest.approx(tau**-2, rel=1e-14)

    @pytest.mark.parametrize("tau,beta", [(1.0, 1.0), (2.0, 0.5), (0.25, 3.0)])
    def test_zero_at_target_margin(self, tau, beta):
        pi_t = TabularPolicy.uniform(1, 2)
        pi = normalize_log_policy([[1 / (tau * beta), 0.0]])
        assert ipo_loss(pi, pi_t, beta, tau, single()).value == pytest.approx(0.0, abs=1e-28)


class TestGradients:
    @pytest.mark.parametrize("tag", TAGS)
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_central_differences(self, tag, seed):
        rng = make_rng(100 + seed)
        loss, pi, pi_t, beta, data, pref = random_loss_case(rng, tag)
        objective = make_objective(loss, pi_t, beta, data, pref)
        logits = pi.log_probs + rng.normal(size=pi.shape)
        _, grad = objective(logits)
        fd = finite_difference_gradient(objective, logits)
        assert np.linalg.norm(grad - fd) <= 1e-5 * np.linalg.norm(grad)

    @pytest.mark.parametrize("tag", TAGS)
    @pytest.mark.parametrize("seed", range(10))
    def test_shift_invariance_and_tangency(self, tag, seed):
        rng = make_rng(200 + seed)
        loss, pi, pi_t, beta, data, pref = random_loss_case(rng, tag)
        objective = make_objective(loss, pi_t, beta, data, pref)
        logits = pi.log_probs + rng.normal(size=pi.shape)
        value, grad = objective(logits)
        shifted, _ = objective(logits + rng.normal(scale=10.0, size=(pi.shape[0], 1)))
        assert abs(shifted - value) <= 1e-10
        np.testing.assert_allclose(grad.sum(axis=1), 0.0, atol=1e-8)
