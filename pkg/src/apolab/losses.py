"""DPO, SPPO and IPO losses on reparameterized rewards, with analytic gradients.

All losses read the candidate policy only through its normalized
log-probabilities, so gradients are taken with respect to unnormalized logits
and are tangent to the simplex (each row sums to zero).

A dataset is reduced once to a weight tensor W[x, winner, loser]; the
empirical mean of any per-sample loss is then a fixed-order sum against W,
which keeps evaluation bit-stable regardless of sample order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import expit, log_expit, logsumexp

from .errors import ConfigError, InvalidInput
from .policy import TabularPolicy
from .preferences import PreferenceDataset, PreferenceTable, win_probabilities

LOSS_TAGS = ("dpo", "sppo", "ipo")


@dataclass(frozen=True)
class LossKind:
    tag: str = "dpo"
    ipo_tau: float = 1.0
    sppo_eta: float | None = None

    def __post_init__(self):
        tag = self.tag.lower()
        if tag not in LOSS_TAGS:
            raise ConfigError(f"unknown loss {self.tag!r}; expected one of {', '.join(LOSS_TAGS)}")
        object.__setattr__(self, "tag", tag)
        if tag == "ipo" and not self.ipo_tau > 0:
            raise ConfigError("ipo_tau must be positive")
        if tag == "sppo" and self.sppo_eta is not None and not self.sppo_eta > 0:
            raise ConfigError("sppo_eta must be positive")

    def eta_for(self, beta: float) -> float:
        """SPPO step size; the reduction to APO only holds with eta = 1/beta."""
        if self.sppo_eta is None:
            return 1.0 / beta
        if abs(self.sppo_eta * beta - 1.0) > 1e-12:
            raise ConfigError(f"SPPO requires eta * beta = 1 (got eta={self.sppo_eta}, beta={beta})")
        return self.sppo_eta


class LossEvaluation(NamedTuple):
    value: float
    gradient: np.ndarray


def sppo_log_partition(pref: PreferenceTable, pi_t: TabularPolicy, eta: float) -> np.ndarray:
    """log Z(x) = log sum_y pi_t(y|x) exp(eta * P(y > pi_t | x))."""
    wins = win_probabilities(pref, pi_t)
    return logsumexp(pi_t.log_probs + eta * wins, axis=1)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    return logits - logsumexp(logits, axis=1, keepdims=True)


def _to_logit_gradient(grad_logp: np.ndarray, logp: np.ndarray) -> np.ndarray:
    # chain rule through log-softmax: g - softmax * sum(g)
    return grad_logp - np.exp(logp) * grad_logp.sum(axis=1, keepdims=True)


def _pairwise_margin(r: np.ndarray) -> np.ndarray:
    return r[:, :, None] - r[:, None, :]


def _margin_to_reward_grad(d_margin: np.ndarray) -> np.ndarray:
    # M[x, a, b] = r[x, a] - r[x, b]
    return d_margin.sum(axis=2) - d_margin.sum(axis=1)


def dpo_terms(r: np.ndarray, weights: np.ndarray) -> tuple[float, np.ndarray]:
    margin = _pairwise_margin(r)
    value = float(-(weights * log_expit(margin)).sum())
    d_margin = -weights * expit(-margin)
    return value, _margin_to_reward_grad(d_margin)


def ipo_terms(r: np.ndarray, weights: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    resid = _pairwise_margin(r) - 1.0 / tau
    value = float((weights * resid**2).sum())
    return value, _margin_to_reward_grad(2.0 * weights * resid)


def sppo_terms(r: np.ndarray, weights: np.ndarray, offset: np.ndarray) -> tuple[float, np.ndarray]:
    win_resid = r + offset[:, None] - 1.0
    lose_resid = r + offset[:, None]
    as_winner = weights.sum(axis=2)
    as_loser = weights.sum(axis=1)
    value = float(0.5 * (as_winner * win_resid**2).sum() + 0.5 * (as_loser * lose_resid**2).sum())
    return value, as_winner * win_resid + as_loser * lose_resid


def make_objective(
    loss: LossKind,
    pi_t: TabularPolicy,
    beta: float,
    dataset: PreferenceDataset,
    pref: PreferenceTable | None = None,
) -> Callable[[np.ndarray], tuple[float, np.ndarray]]:
    """Closure mapping candidate logits to (loss value, gradient wrt logits)."""
    if not beta > 0:
        raise InvalidInput(f"beta must be positive, got {beta}")
    if len(dataset) == 0:
        raise InvalidInput("dataset is empty")
    weights = dataset.pair_weights(pi_t.shape)
    logp_t = pi_t.log_probs

    if loss.tag == "dpo":
        terms = lambda r: dpo_terms(r, weights)  # noqa: E731
    elif loss.tag == "ipo":
        terms = lambda r: ipo_terms(r, weights, loss.ipo_tau)  # noqa: E731
    else:
        if pref is None:
            raise InvalidInput("SPPO loss needs the preference table to compute log Z exactly")
        eta = loss.eta_for(beta)
        # beta * log Z makes the per-response regression targets P(y > pi_t) - beta log Z
        # consistent with a normalized policy for any beta; equals log Z when beta = 1.
        offset = beta * sppo_log_partition(pref, pi_t, eta)
        terms = lambda r: sppo_terms(r, weights, offset)  # noqa: E731

    def objective(logits: np.ndarray) -> tuple[float, np.ndarray]:
        logp = _log_softmax(logits)
        value, grad_r = terms(beta * (logp - logp_t))
        return value, _to_logit_gradient(beta * grad_r, logp)

    return objective


def evaluate(
    loss: LossKind,
    pi: TabularPolicy,
    pi_t: TabularPolicy,
    beta: float,
    dataset: PreferenceDataset,
    pref: PreferenceTable | None = None,
) -> LossEvaluation:
    if pi.shape != pi_t.shape:
        raise InvalidInput(f"shape mismatch: {pi.shape} vs {pi_t.shape}")
    value, grad = make_objective(loss, pi_t, beta, dataset, pref)(pi.log_probs)
    return LossEvaluation(value, grad)


def dpo_loss(pi: TabularPolicy, pi_t: TabularPolicy, beta: float, dataset: PreferenceDataset) -> LossEvaluation:
    """Mean of -log sigmoid(r_pi(x, y_w) - r_pi(x, y_l)) with r_pi = beta log(pi / pi_t)."""
    return evaluate(LossKind("dpo"), pi, pi_t, beta, dataset)


def sppo_loss(
    pi: TabularPolicy,
    pi_t: TabularPolicy,
    beta: float,
    dataset: PreferenceDataset,
    pref: PreferenceTable,
    eta: float | None = None,
) -> LossEvaluation:
    """Mean of (r_pi(y_w) - 1 + b)^2 / 2 + (r_pi(y_l) + b)^2 / 2 with b = beta * log Z_{pi_t}(x).

    ``eta`` defaults to 1/beta; any other value raises ConfigError.
    """
    return evaluate(LossKind("sppo", sppo_eta=eta), pi, pi_t, beta, dataset, pref)


def ipo_loss(
    pi: TabularPolicy, pi_t: TabularPolicy, beta: float, tau: float, dataset: PreferenceDataset
) -> LossEvaluation:
    """Mean of (r_pi(y_w) - r_pi(y_l) - 1/tau)^2."""
    return evaluate(LossKind("ipo", ipo_tau=tau), pi, pi_t, beta, dataset)
