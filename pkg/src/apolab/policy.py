"""Tabular conditional distributions pi(y|x) over finite prompt and response sets.

Everything is stored and combined in log space; probabilities are only
materialized for expectations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from .errors import InvalidInput

STOCHASTIC_TOL = 1e-10


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class World:
    num_prompts: int
    num_responses: int
    prompt_dist: np.ndarray

    def __post_init__(self):
        if self.num_prompts < 1:
            raise InvalidInput("num_prompts must be >= 1")
        if self.num_responses < 2:
            raise InvalidInput("num_responses must be >= 2")
        rho = _frozen(self.prompt_dist)
        if rho.shape != (self.num_prompts,):
            raise InvalidInput(f"prompt_dist has shape {rho.shape}, expected ({self.num_prompts},)")
        if not np.all(np.isfinite(rho)) or np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise InvalidInput("prompt_dist must be a probability vector")
        object.__setattr__(self, "prompt_dist", rho)

    @classmethod
    def uniform(cls, num_prompts: int, num_responses: int) -> World:
        return cls(num_prompts, num_responses, np.full(num_prompts, 1.0 / num_prompts))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.num_prompts, self.num_responses)

    def to_json(self) -> dict:
        return {
            "num_prompts": self.num_prompts,
            "num_responses": self.num_responses,
            "prompt_dist": self.prompt_dist.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> World:
        return cls(int(obj["num_prompts"]), int(obj["num_responses"]), np.asarray(obj["prompt_dist"], dtype=float))


@dataclass(frozen=True)
class TabularPolicy:
    """Row-stochastic policy with full support, held as natural-log probabilities.

    ``log_partition`` is the per-prompt shift removed by the normalization
    that produced this policy (None when the log-probabilities were given
    directly).
    """

    log_probs: np.ndarray
    log_partition: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        lp = _frozen(self.log_probs)
        if lp.ndim != 2 or lp.shape[1] < 2:
            raise InvalidInput(f"log_probs must be a |X| x |Y| matrix with |Y| >= 2, got shape {lp.shape}")
        if not np.all(np.isfinite(lp)):
            raise InvalidInput("policy log-probabilities must be finite (full support)")
        row_mass = logsumexp(lp, axis=1)
        if np.max(np.abs(row_mass)) > STOCHASTIC_TOL:
            raise InvalidInput(f"policy rows are not normalized (max |logsumexp| = {np.max(np.abs(row_mass)):.3e})")
        object.__setattr__(self, "log_probs", lp)
        if self.log_partition is not None:
            object.__setattr__(self, "log_partition", _frozen(self.log_partition))

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_probs.shape

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs)

    @classmethod
    def uniform(cls, num_prompts: int, num_responses: int) -> TabularPolicy:
        return cls(np.full((num_prompts, num_responses), -np.log(num_responses)))

    @classmethod
    def from_probs(cls, probs) -> TabularPolicy:
        probs = np.asarray(probs, dtype=float)
        if probs.ndim == 1:
            probs = probs[None, :]
        if np.any(probs <= 0):
            raise InvalidInput("probabilities must be strictly positive")
        return normalize_log_policy(np.log(probs))

    def to_json(self) -> dict:
        return {
            "num_prompts": self.shape[0],
            "num_responses": self.shape[1],
            "log_probs": self.log_probs.ravel().tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> TabularPolicy:
        shape = (int(obj["num_prompts"]), int(obj["num_responses"]))
        flat = np.asarray(obj["log_probs"], dtype=float)
        if flat.size != shape[0] * shape[1]:
            raise InvalidInput(f"log_probs has {flat.size} entries, expected {shape[0] * shape[1]}")
        return cls(flat.reshape(shape))


class PromptStat(NamedTuple):
    """A per-prompt quantity and its expectation under the prompt distribution."""

    per_prompt: np.ndarray
    mean: float


def normalize_log_policy(unnormalized_log_scores) -> TabularPolicy:
    scores = np.asarray(unnormalized_log_scores, dtype=float)
    if scores.ndim == 1:
        scores = scores[None, :]
    if not np.all(np.isfinite(scores)):
        raise InvalidInput("log scores must be finite")
    log_z = logsumexp(scores, axis=1)
    return TabularPolicy(scores - log_z[:, None], log_partition=log_z)


def _check_pair(p: TabularPolicy, q: TabularPolicy, world: World | None = None):
    if p.shape != q.shape:
        raise InvalidInput(f"shape mismatch: {p.shape} vs {q.shape}")
    if world is not None and world.shape != p.shape:
        raise InvalidInput(f"policy shape {p.shape} does not match world {world.shape}")


def tv_distance(p: TabularPolicy, q: TabularPolicy, world: World) -> PromptStat:
    _check_pair(p, q, world)
    per_prompt = 0.5 * np.abs(p.probs - q.probs).sum(axis=1)
    per_prompt = np.clip(per_prompt, 0.0, 1.0)
    return PromptStat(per_prompt, float(world.prompt_dist @ per_prompt))


def kl_divergence(p: TabularPolicy, q: TabularPolicy, world: World) -> PromptStat:
    _check_pair(p, q, world)
    per_prompt = (p.probs * (p.log_probs - q.log_probs)).sum(axis=1)
    # rounding can leave tiny negatives when p == q
    per_prompt = np.maximum(per_prompt, 0.0)
    return PromptStat(per_prompt, float(world.prompt_dist @ per_prompt))


def expected_reward(policy: TabularPolicy, reward, world: World) -> float:
    rewards = np.asarray(getattr(reward, "rewards", reward), dtype=float)
    if rewards.shape != policy.shape or world.shape != policy.shape:
        raise InvalidInput(f"shape mismatch: policy {policy.shape}, reward {rewards.shape}, world {world.shape}")
    return float(world.prompt_dist @ (policy.probs * rewards).sum(axis=1))


class ReparameterizedReward(NamedTuple):
    values: np.ndarray
    max_abs: float


def reparameterized_reward(pi: TabularPolicy, pi_t: TabularPolicy, beta: float) -> ReparameterizedReward:
    """beta * log(pi / pi_t) entrywise, plus its largest magnitude R."""
    if not beta > 0:
        raise InvalidInput(f"beta must be positive, got {beta}")
    _check_pair(pi, pi_t)
    values = beta * (pi.log_probs - pi_t.log_probs)
    return ReparameterizedReward(values, float(np.max(np.abs(values))))
