"""Accelerated preference optimization over tabular policies.

Each iteration collects preference data under the current policy pi_t,
solves the one-step preference optimization for pi_hat_{t+1}, then
extrapolates in log space:

    log pi_{t+1} = (1 + alpha) log pi_hat_{t+1} - alpha log pi_hat_t  (normalized)

In exact mode the inner arg-min is replaced by its population-limit closed
form pi_hat_{t+1} ∝ pi_t exp(signal / beta).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InvalidInput, NumericalError
from .losses import LossKind, make_objective
from .policy import TabularPolicy, World, normalize_log_policy, reparameterized_reward
from .preferences import (
    PreferenceDataset,
    PreferenceTable,
    RewardTable,
    bt_to_preference_table,
    make_rng,
    sample_dataset,
    win_probabilities,
)

log = logging.getLogger(__name__)

MODES = ("exact", "empirical")
ANCHORS = ("pi_hat", "pi")
MAX_HALVINGS = 30


@dataclass(frozen=True)
class InnerSolver:
    max_steps: int = 5000
    learning_rate: float = 1.0
    grad_tol: float = 1e-8


@dataclass(frozen=True)
class RunConfig:
    beta: float = 1.0
    alpha: float = 0.0
    T: int = 10
    N: int = 1000
    mode: str = "exact"
    loss: LossKind = field(default_factory=LossKind)
    inner_solver: InnerSolver = field(default_factory=InnerSolver)
    seed: int = 0
    momentum_anchor: str = "pi_hat"
    beta_schedule: tuple[float, ...] | None = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ConfigError(f"beta must be positive, got {self.beta}")
        if not 0 <= self.alpha < 1:
            raise ConfigError(f"alpha must lie in [0, 1), got {self.alpha}")
        if self.T < 1:
            raise ConfigError(f"T must be >= 1, got {self.T}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "empirical" and self.N < 1:
            raise ConfigError("N must be >= 1 in empirical mode")
        if self.momentum_anchor not in ANCHORS:
            raise ConfigError(f"momentum_anchor must be one of {ANCHORS}, got {self.momentum_anchor!r}")
        if self.beta_schedule is not None:
            sched = tuple(float(b) for b in self.beta_schedule)
            if not sched or any(not b > 0 for b in sched):
                raise ConfigError("beta_schedule entries must be positive")
            object.__setattr__(self, "beta_schedule", sched)
        s = self.inner_solver
        if s.max_steps < 1 or not s.learning_rate > 0 or not s.grad_tol > 0:
            raise ConfigError("inner solver needs max_steps >= 1, learning_rate > 0, grad_tol > 0")
        if self.loss.tag == "sppo" and self.beta_schedule is None:
            self.loss.eta_for(self.beta)

    def beta_at(self, t: int) -> float:
        if self.beta_schedule is None:
            return self.beta
        return self.beta_schedule[min(t, len(self.beta_schedule) - 1)]

    @property
    def constant_beta(self) -> bool:
        return self.beta_schedule is None


class InnerResult(NamedTuple):
    policy: TabularPolicy
    value: float
    grad_norm: float
    steps: int
    converged: bool
    values: list[float]


@dataclass(frozen=True)
class IterationRecord:
    t: int
    beta: float
    pi_hat_next: TabularPolicy
    pi_next: TabularPolicy
    reward: np.ndarray
    reward_max: float
    extrapolation_log_partition: np.ndarray
    target: np.ndarray | None
    loss_value: float | None = None
    inner_steps: int = 0
    grad_norm: float | None = None


@dataclass
class RunTrace:
    """Policies pi_hat_0..pi_hat_{T+1}, pi_0..pi_{T+1} and one record per iteration."""

    config: RunConfig
    pi_hats: list[TabularPolicy]
    pis: list[TabularPolicy]
    records: list[IterationRecord]

    @property
    def final_policy(self) -> TabularPolicy:
        return self.pi_hats[-1]

    @property
    def rewards(self) -> list[np.ndarray]:
        return [rec.reward for rec in self.records]


def _signal_matrix(signal, pi_t: TabularPolicy) -> np.ndarray:
    if isinstance(signal, RewardTable):
        return signal.rewards
    if isinstance(signal, PreferenceTable):
        return win_probabilities(signal, pi_t)
    return np.asarray(signal, dtype=float)


def exact_update(pi_t: TabularPolicy, signal, beta: float) -> TabularPolicy:
    """pi_hat_{t+1} ∝ pi_t exp(r / beta).

    ``signal`` is a RewardTable (r = r*), a PreferenceTable (r = win
    probability against pi_t) or a plain reward matrix.
    """
    if not beta > 0:
        raise InvalidInput(f"beta must be positive, got {beta}")
    r = _signal_matrix(signal, pi_t)
    if r.shape != pi_t.shape:
        raise InvalidInput(f"signal shape {r.shape} does not match policy {pi_t.shape}")
    return normalize_log_policy(pi_t.log_probs + r / beta)


def minimize_loss(
    loss: LossKind,
    dataset: PreferenceDataset,
    pi_t: TabularPolicy,
    config: RunConfig | InnerSolver,
    pref: PreferenceTable | None = None,
    beta: float | None = None,
) -> InnerResult:
    """Full-batch gradient descent on candidate logits, started at log pi_t.

    Trial steps use the Barzilai-Borwein length and are halved (up to 30
    times) until the loss does not increase, so accepted losses are
    monotone.  Stops once the max-norm of the gradient is <= grad_tol.
    """
    if isinstance(config, RunConfig):
        solver, beta = config.inner_solver, config.beta if beta is None else beta
    else:
        solver = config
        if beta is None:
            raise InvalidInput("beta is required when passing a bare InnerSolver")
    objective = make_objective(loss, pi_t, beta, dataset, pref)

    theta = pi_t.log_probs.copy()
    value, grad = objective(theta)
    if not np.isfinite(value):
        raise NumericalError("non-finite loss", step=0)
    values = [value]
    step = solver.learning_rate
    stalled = 0
    steps = 0
    converged = False
    for k in range(solver.max_steps):
        if np.max(np.abs(grad)) <= solver.grad_tol:
            converged = True
            break
        trial_step = step
        for _ in range(MAX_HALVINGS + 1):
            cand = theta - trial_step * grad
            cand_value, cand_grad = objective(cand)
            if not np.isfinite(cand_value) or not np.all(np.isfinite(cand_grad)):
                raise NumericalError("non-finite loss", step=k + 1)
            if cand_value <= value:
                break
            trial_step *= 0.5
        else:
            log.debug("inner solver: no descent after %d halvings at step %d", MAX_HALVINGS, k)
            break
        s, y = cand - theta, cand_grad - grad
        sy = float(np.sum(s * y))
        step = float(np.sum(s * s)) / sy if sy > 0 else solver.learning_rate
        stalled = stalled + 1 if cand_value == value else 0
        theta, value, grad = cand, cand_value, cand_grad
        values.append(value)
        steps = k + 1
        if stalled >= 20:
            break
    else:
        converged = bool(np.max(np.abs(grad)) <= solver.grad_tol)

    grad_norm = float(np.max(np.abs(grad)))
    return InnerResult(normalize_log_policy(theta), value, grad_norm, steps, converged, values)


def extrapolate(pi_hat_next: TabularPolicy, pi_hat_prev: TabularPolicy, alpha: float) -> TabularPolicy:
    """Nesterov step pi_{t+1} ∝ pi_hat_{t+1} (pi_hat_{t+1} / pi_hat_t)^alpha."""
    if not 0 <= alpha < 1:
        raise InvalidInput(f"alpha must lie in [0, 1), got {alpha}")
    if pi_hat_next.shape != pi_hat_prev.shape:
        raise InvalidInput(f"shape mismatch: {pi_hat_next.shape} vs {pi_hat_prev.shape}")
    if alpha == 0 or np.array_equal(pi_hat_next.log_probs, pi_hat_prev.log_probs):
        return TabularPolicy(pi_hat_next.log_probs, log_partition=np.zeros(pi_hat_next.shape[0]))
    return normalize_log_policy((1 + alpha) * pi_hat_next.log_probs - alpha * pi_hat_prev.log_probs)


def estimation_error(
    pi_hat_next: TabularPolicy, pi_t: TabularPolicy, signal, beta: float, world: World
) -> float:
    """E_{x~rho, y1,y2~pi_t}[(s(x,y1) - s(x,y2) - r_t(x,y1) + r_t(x,y2))^2] with r_t = beta log(pi_hat/pi_t).

    Evaluated exactly by enumerating response pairs.
    """
    r_t = reparameterized_reward(pi_hat_next, pi_t, beta).values
    target = _signal_matrix(signal, pi_t)
    if target.shape != r_t.shape or world.shape != r_t.shape:
        raise InvalidInput("shape mismatch in estimation_error")
    resid = target - r_t
    diff = resid[:, :, None] - resid[:, None, :]
    p = pi_t.probs
    per_prompt = np.einsum("xa,xb,xab->x", p, p, diff**2)
    return float(world.prompt_dist @ per_prompt)


def population_target(model, pi_t: TabularPolicy, loss: LossKind, beta: float) -> np.ndarray | None:
    """Reward whose exponential-weights update is the population minimizer of ``loss``.

    DPO under a BT model targets r*; SPPO targets the win probability against
    pi_t; IPO targets (2 * win probability - 1) / tau.  Returns None for DPO
    without a latent reward.
    """
    if loss.tag == "dpo":
        return model.rewards if isinstance(model, RewardTable) else None
    pref = bt_to_preference_table(model) if isinstance(model, RewardTable) else model
    wins = win_probabilities(pref, pi_t)
    if loss.tag == "sppo":
        return wins
    return (2.0 * wins - 1.0) / loss.ipo_tau


def run_apo(world: World, model, pi_ref: TabularPolicy, config: RunConfig) -> RunTrace:
    """Run T + 1 iterations from pi_0 = pi_hat_0 = pi_ref; the result is pi_hat_{T+1}.

    ``model`` is a RewardTable (Bradley-Terry) or a general PreferenceTable.
    """
    if pi_ref.shape != world.shape:
        raise InvalidInput(f"pi_ref shape {pi_ref.shape} does not match world {world.shape}")
    if model.shape != world.shape:
        raise InvalidInput(f"model shape {model.shape} does not match world {world.shape}")
    if config.mode == "exact" and config.loss.tag == "dpo" and not isinstance(model, RewardTable):
        raise ConfigError("exact DPO mode needs a Bradley-Terry reward table")
    pref = None
    if config.mode == "empirical" or config.loss.tag != "dpo":
        pref = bt_to_preference_table(model) if isinstance(model, RewardTable) else model

    pi_hats = [pi_ref]
    pis = [pi_ref]
    records: list[IterationRecord] = []
    for t in range(config.T + 1):
        beta = config.beta_at(t)
        pi_t = pis[t]
        target = population_target(model, pi_t, config.loss, beta)
        try:
            if config.mode == "exact":
                pi_hat_next = exact_update(pi_t, target, beta)
                inner = None
            else:
                data = sample_dataset(pref, pi_t, world, config.N, make_rng(config.seed, t))
                loss = config.loss if config.constant_beta else replace(config.loss, sppo_eta=None)
                inner = minimize_loss(loss, data, pi_t, config.inner_solver, pref=pref, beta=beta)
                pi_hat_next = inner.policy
        except NumericalError as err:
            raise NumericalError(err.reason, step=err.step, iteration=t) from err

        anchor = pi_hats[t] if config.momentum_anchor == "pi_hat" else pi_t
        pi_next = extrapolate(pi_hat_next, anchor, config.alpha)
        reward = reparameterized_reward(pi_hat_next, pi_t, beta)
        records.append(
            IterationRecord(
                t=t,
                beta=beta,
                pi_hat_next=pi_hat_next,
                pi_next=pi_next,
                reward=reward.values,
                reward_max=reward.max_abs,
                extrapolation_log_partition=pi_next.log_partition,
                target=target,
                loss_value=None if inner is None else inner.value,
                inner_steps=0 if inner is None else inner.steps,
                grad_norm=None if inner is None else inner.grad_norm,
            )
        )
        pi_hats.append(pi_hat_next)
        pis.append(pi_next)
    return RunTrace(config, pi_hats, pis, records)
