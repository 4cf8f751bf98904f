"""Problem instances: a world, a reference policy and a preference model.

Fixture JSON layout::

    {
      "kind": "bt" | "general",
      "world": {"num_prompts": .., "num_responses": .., "prompt_dist": [..]},
      "pi_ref": {"num_prompts": .., "num_responses": .., "log_probs": [row-major]},
      "rewards": [[..], ..],          # kind == "bt"
      "preferences": [[[..], ..], ..] # kind == "general"
    }
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInput
from .policy import TabularPolicy, World, normalize_log_policy
from .preferences import PreferenceTable, RewardTable, bt_to_preference_table, make_rng


@dataclass(frozen=True)
class Instance:
    world: World
    pi_ref: TabularPolicy
    model: RewardTable | PreferenceTable

    def __post_init__(self):
        if self.pi_ref.shape != self.world.shape or self.model.shape != self.world.shape:
            raise InvalidInput("instance components disagree on shape")

    @property
    def kind(self) -> str:
        return "bt" if isinstance(self.model, RewardTable) else "general"

    @property
    def preferences(self) -> PreferenceTable:
        if isinstance(self.model, RewardTable):
            return bt_to_preference_table(self.model)
        return self.model

    def to_json(self) -> dict:
        out = {"kind": self.kind, "world": self.world.to_json(), "pi_ref": self.pi_ref.to_json()}
        if self.kind == "bt":
            out["rewards"] = self.model.rewards.tolist()
        else:
            out["preferences"] = self.model.probs.tolist()
        return out

    @classmethod
    def from_json(cls, obj: dict) -> Instance:
        try:
            world = World.from_json(obj["world"])
            if "pi_ref" in obj:
                pi_ref = TabularPolicy.from_json(obj["pi_ref"])
            else:
                pi_ref = TabularPolicy.uniform(*world.shape)
            kind = obj.get("kind", "bt" if "rewards" in obj else "general")
            if kind == "bt":
                model = RewardTable(np.asarray(obj["rewards"], dtype=float), strict=bool(obj.get("strict", False)))
            elif kind == "general":
                model = PreferenceTable(np.asarray(obj["preferences"], dtype=float))
            else:
                raise InvalidInput(f"unknown instance kind {kind!r}")
        except KeyError as err:
            raise InvalidInput(f"fixture is missing field {err}") from None
        return cls(world, pi_ref, model)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> Instance:
        return cls.from_json(json.loads(Path(path).read_text()))


def _reference_policy(rng: np.random.Generator, shape: tuple[int, int], ref: str) -> TabularPolicy:
    if ref == "uniform":
        return TabularPolicy.uniform(*shape)
    if ref == "random":
        return normalize_log_policy(np.log(rng.dirichlet(np.full(shape[1], 2.0), size=shape[0])))
    raise InvalidInput(f"unknown reference policy kind {ref!r}")


def random_bt_instance(
    seed: int, delta: float, num_prompts: int, num_responses: int, ref: str = "uniform"
) -> Instance:
    """BT instance with rewards in [-1, 1] and minimal gap at least ``delta``."""
    if not 0 < delta < 2:
        raise InvalidInput("delta must lie in (0, 2) for rewards in [-1, 1]")
    rng = make_rng(seed)
    world = World.uniform(num_prompts, num_responses)
    rewards = np.empty(world.shape)
    for x in range(num_prompts):
        top = rng.uniform(-1.0 + delta, 1.0)
        rewards[x] = rng.uniform(-1.0, top - delta, size=num_responses)
        rewards[x, rng.integers(num_responses)] = top
    return Instance(world, _reference_policy(rng, world.shape, ref), RewardTable(rewards, strict=True))


def random_general_instance(
    seed: int, delta: float, num_prompts: int, num_responses: int, ref: str = "uniform"
) -> Instance:
    """General (possibly intransitive) preferences with a dominant response per prompt.

    Among non-dominant responses P lies in [1/2 - s, 1/2 + s]; the dominant
    response beats each of them with probability at least 1/2 + s + delta,
    which yields a general gap of at least ``delta``.
    """
    if not 0 < delta < 0.5:
        raise InvalidInput("delta must lie in (0, 0.5)")
    rng = make_rng(seed)
    world = World.uniform(num_prompts, num_responses)
    probs = np.full((num_prompts, num_responses, num_responses), 0.5)
    for x in range(num_prompts):
        spread = (0.5 - delta) * rng.uniform(0.3, 1.0)
        upper = np.triu_indices(num_responses, k=1)
        vals = rng.uniform(0.5 - spread, 0.5 + spread, size=len(upper[0]))
        probs[x][upper] = vals
        probs[x][(upper[1], upper[0])] = 1.0 - vals
        star = rng.integers(num_responses)
        for y in range(num_responses):
            if y != star:
                p = rng.uniform(0.5 + spread + delta, 1.0)
                probs[x, star, y] = p
                probs[x, y, star] = 1.0 - p
    return Instance(world, _reference_policy(rng, world.shape, ref), PreferenceTable(probs))


def generate(
    kind: str, seed: int, delta: float, num_prompts: int, num_responses: int, ref: str = "uniform"
) -> Instance:
    if kind == "bt":
        return random_bt_instance(seed, delta, num_prompts, num_responses, ref)
    if kind == "general":
        return random_general_instance(seed, delta, num_prompts, num_responses, ref)
    raise InvalidInput(f"unknown instance kind {kind!r}")
