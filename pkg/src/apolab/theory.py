"""Closed-form objects from the convergence analysis of accelerated preference optimization.

These are used as oracles against the iterative engine: the momentum weights
that turn per-iteration rewards into the policy after t + 1 steps, the
auxiliary policy built from the latent reward, and the KL / sub-optimality
ceilings derived from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidInput
from .policy import TabularPolicy, normalize_log_policy
from .preferences import PreferenceTable, RewardTable, general_minimal_gap, minimal_gap


@dataclass(frozen=True)
class MomentumWeights:
    t: int
    alpha: float
    weights: np.ndarray
    gamma_beta: float

    def gamma(self, beta: float) -> float:
        return self.gamma_beta / beta


def gamma_beta_closed_form(t: int, alpha: float) -> float:
    """(t+1)/(1-a) - a/(1-a)^2 + a^(t+2)/(1-a)^2."""
    one_minus = 1.0 - alpha
    return (t + 1) / one_minus - alpha / one_minus**2 + alpha ** (t + 2) / one_minus**2


def momentum_weights(t: int, alpha: float) -> MomentumWeights:
    """Weights (1 - a^(t+1-i)) / (1 - a) on the rewards r_0..r_t.

    Older rewards get larger weight; the newest has weight 1.
    """
    if not 0 <= alpha < 1:
        raise InvalidInput(f"alpha must lie in [0, 1), got {alpha}")
    if t < 0:
        raise InvalidInput(f"t must be >= 0, got {t}")
    k = t + 1 - np.arange(t + 1)
    weights = (1.0 - alpha ** k.astype(float)) / (1.0 - alpha)
    weights.setflags(write=False)
    gamma_beta = math.fsum(weights.tolist())
    closed = gamma_beta_closed_form(t, alpha)
    if abs(gamma_beta - closed) > 1e-12 * max(1.0, abs(closed)):
        raise AssertionError(f"momentum weight sum {gamma_beta!r} != closed form {closed!r}")
    return MomentumWeights(t, alpha, weights, gamma_beta)


def closed_form_policy(
    pi_ref: TabularPolicy, rewards: Sequence[np.ndarray], alpha: float, beta: float
) -> TabularPolicy:
    """pi_ref * exp(sum_i w_{t,i} r_i / beta), normalized, for rewards r_0..r_t."""
    if not beta > 0:
        raise InvalidInput(f"beta must be positive, got {beta}")
    if len(rewards) == 0:
        raise InvalidInput("need at least one reward matrix")
    mw = momentum_weights(len(rewards) - 1, alpha)
    total = np.zeros(pi_ref.shape)
    for w, r in zip(mw.weights, rewards):
        r = np.asarray(getattr(r, "rewards", r), dtype=float)
        if r.shape != pi_ref.shape:
            raise InvalidInput(f"reward shape {r.shape} does not match policy {pi_ref.shape}")
        total += w * r
    return normalize_log_policy(pi_ref.log_probs + total / beta)


def auxiliary_policy(
    pi_ref: TabularPolicy, reward: RewardTable | Sequence[np.ndarray], t: int, alpha: float, beta: float
) -> TabularPolicy:
    """Auxiliary policy after t + 1 steps driven by the true signal.

    With a RewardTable every step uses r*.  For general preferences pass the
    list of per-iteration win-probability tables (length t + 1).
    """
    if isinstance(reward, RewardTable):
        return closed_form_policy(pi_ref, [reward.rewards] * (t + 1), alpha, beta)
    if len(reward) != t + 1:
        raise InvalidInput(f"expected {t + 1} win-probability tables, got {len(reward)}")
    return closed_form_policy(pi_ref, reward, alpha, beta)


@dataclass(frozen=True)
class OptimalPolicy:
    """Deterministic optimal policy held as a per-prompt response index."""

    argmax_map: np.ndarray
    unique: bool
    delta: float

    def mass_under(self, policy: TabularPolicy) -> np.ndarray:
        return policy.probs[np.arange(len(self.argmax_map)), self.argmax_map]

    def kl_from(self, q: TabularPolicy) -> np.ndarray:
        """KL(pi* || q) = -log q(y*|x), per prompt.

        Computed as log1p(sum_{y != y*} q(y)/q(y*)) so values far below machine
        epsilon survive.
        """
        rows = np.arange(len(self.argmax_map))
        lp = q.log_probs
        ratio = np.exp(lp - lp[rows, self.argmax_map][:, None])
        ratio[rows, self.argmax_map] = 0.0
        return np.log1p(ratio.sum(axis=1))

    def tv_from(self, q: TabularPolicy) -> np.ndarray:
        """TV(pi*, q) = 1 - q(y*|x) = mass q puts elsewhere, per prompt."""
        rows = np.arange(len(self.argmax_map))
        p = q.probs
        p[rows, self.argmax_map] = 0.0
        return np.clip(p.sum(axis=1), 0.0, 1.0)

    def expected_reward(self, reward: RewardTable, prompt_dist: np.ndarray) -> float:
        rows = np.arange(len(self.argmax_map))
        return float(prompt_dist @ reward.rewards[rows, self.argmax_map])


def optimal_policy(model: RewardTable | PreferenceTable) -> OptimalPolicy:
    if isinstance(model, RewardTable):
        gap = minimal_gap(model)
    else:
        gap = general_minimal_gap(model)
    return OptimalPolicy(gap.argmax, gap.unique, gap.delta)


def coverage_coefficient(pi_hat_final: TabularPolicy, pi_star_aux: TabularPolicy, pi_t: TabularPolicy) -> float:
    """max over (x, y) of pi_hat_final * pi_star_aux / pi_t^2."""
    if not pi_hat_final.shape == pi_star_aux.shape == pi_t.shape:
        raise InvalidInput("shape mismatch in coverage_coefficient")
    log_ratio = pi_hat_final.log_probs + pi_star_aux.log_probs - 2.0 * pi_t.log_probs
    return float(np.exp(log_ratio.max()))


def kl_upper_bound(t: int, alpha: float, beta: float, delta_gap: float, pi_ref_opt_mass) -> np.ndarray:
    """exp(-gamma_t * delta) / pi_ref(y*|x) with gamma_t = (sum of momentum weights) / beta."""
    if not delta_gap > 0:
        raise InvalidInput(f"gap must be positive, got {delta_gap}")
    mass = np.atleast_1d(np.asarray(pi_ref_opt_mass, dtype=float))
    if np.any(mass <= 0) or np.any(mass > 1):
        raise InvalidInput("optimal-response masses must lie in (0, 1]")
    gamma = momentum_weights(t, alpha).gamma(beta)
    return np.exp(-gamma * delta_gap) / mass


def suboptimality_bound(t: int, alpha: float, beta: float, pi_ref_opt_mass) -> np.ndarray:
    """log((1 - p) / p) / gamma_t with p = pi_ref(y*|x).

    Diagnostic only: the value is non-positive for p >= 1/2 although the true
    gap is positive there.
    """
    p = np.atleast_1d(np.asarray(pi_ref_opt_mass, dtype=float))
    if np.any(p <= 0) or np.any(p >= 1):
        raise InvalidInput("optimal-response masses must lie in (0, 1)")
    gamma = momentum_weights(t, alpha).gamma(beta)
    return np.log((1.0 - p) / p) / gamma


def log_ratio_inequality_slack(x) -> np.ndarray:
    """(1 + x)|log x| - |x - 1|, which is >= 0 for every x > 0 and 0 at x = 1."""
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise InvalidInput("x must be positive")
    return (1.0 + x) * np.abs(np.log(x)) - np.abs(x - 1.0)
