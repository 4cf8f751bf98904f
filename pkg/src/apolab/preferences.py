"""Latent rewards, pairwise preference tables and preference-pair sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import expit

from .errors import InvalidInput
from .policy import TabularPolicy, World

ANTISYMMETRY_TOL = 1e-12

# Every random stream in the package comes from this generator family; the
# identifier is recorded in run summaries.
RNG_ALGORITHM = "numpy.PCG64/SeedSequence"


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for stream ``keys`` of ``seed``.

    Streams are split with SeedSequence spawn keys, so ``make_rng(s, t)`` for
    different ``t`` are statistically independent and stable across platforms.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class RewardTable:
    rewards: np.ndarray
    strict: bool = False

    def __post_init__(self):
        r = np.array(self.rewards, dtype=np.float64)
        if r.ndim == 1:
            r = r[None, :]
        if r.ndim != 2 or r.shape[1] < 2:
            raise InvalidInput(f"rewards must be a |X| x |Y| matrix, got shape {r.shape}")
        if not np.all(np.isfinite(r)):
            raise InvalidInput("rewards must be finite")
        if self.strict and np.any(np.abs(r) > 1.0):
            raise InvalidInput("strict BT mode requires rewards in [-1, 1]")
        r.setflags(write=False)
        object.__setattr__(self, "rewards", r)

    @property
    def shape(self) -> tuple[int, int]:
        return self.rewards.shape

    @property
    def in_unit_range(self) -> bool:
        return bool(np.all(np.abs(self.rewards) <= 1.0))


@dataclass(frozen=True)
class PreferenceTable:
    """probs[x, y1, y2] = P(y1 beats y2 | x)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim == 2:
            p = p[None]
        if p.ndim != 3 or p.shape[1] != p.shape[2] or p.shape[1] < 2:
            raise InvalidInput(f"preference tensor must be |X| x |Y| x |Y|, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise InvalidInput("preference probabilities must lie in [0, 1]")
        if np.max(np.abs(p + p.transpose(0, 2, 1) - 1.0)) > ANTISYMMETRY_TOL:
            raise InvalidInput("preference tensor is not antisymmetric: P(a>b) + P(b>a) != 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape[:2]


@dataclass(frozen=True)
class PreferenceDataset:
    """Preference triples (x, winner, loser), optionally weighted.

    Sampled datasets carry no weights and are averaged uniformly.  Weighted
    datasets enumerate the population limit.
    """

    prompts: np.ndarray
    winners: np.ndarray
    losers: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        arrays = [np.asarray(a, dtype=np.int64).ravel() for a in (self.prompts, self.winners, self.losers)]
        if len({a.size for a in arrays}) != 1:
            raise InvalidInput("prompts, winners and losers must have equal length")
        for name, a in zip(("prompts", "winners", "losers"), arrays):
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.size != arrays[0].size or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidInput("weights must be finite, non-negative and match the sample count")
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    def __len__(self) -> int:
        return int(self.prompts.size)

    def pair_weights(self, shape: tuple[int, int]) -> np.ndarray:
        """Normalized weight tensor W[x, winner, loser]; empirical means become sums against W."""
        if len(self) == 0:
            raise InvalidInput("dataset is empty")
        nx, ny = shape
        if self.prompts.max() >= nx or self.prompts.min() < 0:
            raise InvalidInput("prompt index out of range")
        if max(self.winners.max(), self.losers.max()) >= ny or min(self.winners.min(), self.losers.min()) < 0:
            raise InvalidInput("response index out of range")
        flat = (self.prompts * ny + self.winners) * ny + self.losers
        w = None if self.weights is None else self.weights
        counts = np.bincount(flat, weights=w, minlength=nx * ny * ny).astype(np.float64)
        total = counts.sum()
        if total <= 0:
            raise InvalidInput("dataset has zero total weight")
        return (counts / total).reshape(nx, ny, ny)

    def to_json(self) -> dict:
        out = {
            "prompts": self.prompts.tolist(),
            "winners": self.winners.tolist(),
            "losers": self.losers.tolist(),
        }
        if self.weights is not None:
            out["weights"] = self.weights.tolist()
        return out


def _check_index(n: int, *idx: int):
    for i in idx:
        if not 0 <= int(i) < n:
            raise InvalidInput(f"index {i} out of range [0, {n})")


def bt_preference_prob(reward: RewardTable, x: int, y1: int, y2: int) -> float:
    nx, ny = reward.shape
    _check_index(nx, x)
    _check_index(ny, y1, y2)
    r = reward.rewards[x]
    return float(expit(r[y1] - r[y2]))


def bt_to_preference_table(reward: RewardTable) -> PreferenceTable:
    r = reward.rewards
    diff = r[:, :, None] - r[:, None, :]
    probs = expit(diff)
    # expit(d) + expit(-d) can miss 1 by an ulp; enforce exact antisymmetry
    upper = np.triu(np.ones(probs.shape[1:], dtype=bool), k=1)
    probs = np.where(upper, probs, 1.0 - probs.transpose(0, 2, 1))
    idx = np.arange(probs.shape[1])
    probs[:, idx, idx] = 0.5
    return PreferenceTable(probs)


def win_probabilities(pref: PreferenceTable, policy: TabularPolicy) -> np.ndarray:
    """Matrix of P(y beats policy | x) for every (x, y)."""
    if pref.shape != policy.shape:
        raise InvalidInput(f"shape mismatch: preferences {pref.shape}, policy {policy.shape}")
    return np.einsum("xab,xb->xa", pref.probs, policy.probs)


def win_probability(pref: PreferenceTable, policy: TabularPolicy, x: int, y: int) -> float:
    nx, ny = pref.shape
    _check_index(nx, x)
    _check_index(ny, y)
    return float(pref.probs[x, y] @ policy.probs[x])


class Gap(NamedTuple):
    delta: float
    argmax: np.ndarray
    unique: bool


def minimal_gap(reward: RewardTable) -> Gap:
    r = reward.rewards
    best = np.argmax(r, axis=1)
    rows = np.arange(r.shape[0])
    masked = r.copy()
    masked[rows, best] = -np.inf
    per_prompt = r[rows, best] - masked.max(axis=1)
    return Gap(float(per_prompt.min()), best, bool(np.all(per_prompt > 0)))


def general_minimal_gap(pref: PreferenceTable) -> Gap:
    """Largest gap for which a unique dominant response exists at every prompt.

    For candidate c at prompt x the gap is
    min over y != c and all y' of P(c > y') - P(y > y').
    """
    p = pref.probs
    nx, ny, _ = p.shape
    # lead[x, c, y] = min_{y'} (P(c > y') - P(y > y'))
    lead = (p[:, :, None, :] - p[:, None, :, :]).min(axis=3)
    idx = np.arange(ny)
    lead[:, idx, idx] = np.inf
    per_candidate = lead.min(axis=2)
    best = np.argmax(per_candidate, axis=1)
    per_prompt = per_candidate[np.arange(nx), best]
    delta = float(per_prompt.min())
    satisfied = delta > 0
    return Gap(max(delta, 0.0), best, satisfied)


def sample_dataset(
    pref: PreferenceTable,
    behavior: TabularPolicy,
    world: World,
    n: int,
    rng_seed: int | np.random.Generator,
) -> PreferenceDataset:
    """Draw n i.i.d. triples: x ~ rho, y1, y2 ~ behavior(.|x), winner ~ Bernoulli(P(y1 > y2 | x)).

    Coinciding draws are kept; the diagonal probability 1/2 makes their label a
    fair coin.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    if pref.shape != behavior.shape or world.shape != behavior.shape:
        raise InvalidInput("shape mismatch between preferences, behavior policy and world")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else make_rng(rng_seed)
    x = rng.choice(world.num_prompts, size=n, p=world.prompt_dist)
    cdf = np.cumsum(behavior.probs, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random((2, n))
    last = world.num_responses - 1
    y1 = np.minimum((u[0][:, None] >= cdf[x]).sum(axis=1), last)
    y2 = np.minimum((u[1][:, None] >= cdf[x]).sum(axis=1), last)
    first_wins = rng.random(n) < pref.probs[x, y1, y2]
    winners = np.where(first_wins, y1, y2)
    losers = np.where(first_wins, y2, y1)
    return PreferenceDataset(x, winners, losers)


def population_dataset(pref: PreferenceTable, behavior: TabularPolicy, world: World) -> PreferenceDataset:
    """Every (x, winner, loser) triple weighted by its probability under the sampling process.

    P(winner=a, loser=b | x) = 2 pi(a|x) pi(b|x) P(a > b | x) for a != b and
    pi(a|x)^2 for a == b.
    """
    nx, ny = behavior.shape
    pi = behavior.probs
    w = 2.0 * world.prompt_dist[:, None, None] * pi[:, :, None] * pi[:, None, :] * pref.probs
    x, a, b = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(ny), indexing="ij")
    return PreferenceDataset(x.ravel(), a.ravel(), b.ravel(), weights=w.ravel())
