"""Plain-text key/value configuration for runs and sweeps.

One ``key = value`` per line; ``#`` starts a comment.  In a sweep file a
comma-separated value lists alternatives and the sweep is their cartesian
product.  ``beta_schedule`` takes space-separated numbers.

Run keys: beta, alpha, T, N, mode, loss, ipo_tau, sppo_eta,
inner_solver.max_steps, inner_solver.learning_rate, inner_solver.grad_tol,
seed, momentum_anchor, beta_schedule.

Instance keys: instance (fixture path) or gen_kind, gen_seed, gen_delta,
num_prompts, num_responses, gen_ref.

Harness keys: window (two integers t_lo, t_hi).
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigError, InvalidInput
from .engine import InnerSolver, RunConfig
from .instance import Instance, generate
from .losses import LossKind

_FLOAT = float
_INT = int


def _str(v: str) -> str:
    return v.strip().strip('"').strip("'")


def _schedule(v: str) -> tuple[float, ...]:
    return tuple(float(tok) for tok in v.split())


RUN_KEYS = {
    "beta": _FLOAT,
    "alpha": _FLOAT,
    "T": _INT,
    "N": _INT,
    "mode": _str,
    "loss": _str,
    "ipo_tau": _FLOAT,
    "sppo_eta": _FLOAT,
    "inner_solver.max_steps": _INT,
    "inner_solver.learning_rate": _FLOAT,
    "inner_solver.grad_tol": _FLOAT,
    "seed": _INT,
    "momentum_anchor": _str,
    "beta_schedule": _schedule,
}
INSTANCE_KEYS = {
    "instance": _str,
    "gen_kind": _str,
    "gen_seed": _INT,
    "gen_delta": _FLOAT,
    "num_prompts": _INT,
    "num_responses": _INT,
    "gen_ref": _str,
}
HARNESS_KEYS = {"window": lambda v: tuple(int(tok) for tok in v.replace(",", " ").split())}
ALL_KEYS = {**RUN_KEYS, **INSTANCE_KEYS, **HARNESS_KEYS}
# keys whose value is itself a list and so cannot be swept
NON_SWEEP = {"beta_schedule", "window"}


@dataclass
class ExperimentSpec:
    instance_source: dict
    runs: list[RunConfig]
    window: tuple[int, int] | None = None
    base_dir: Path = field(default_factory=Path.cwd)

    def load_instance(self) -> Instance:
        return load_instance(self.instance_source, self.base_dir)


def parse_text(text: str) -> dict[str, list]:
    """Parse key/value text into {key: [alternative values]} with line/column errors."""
    out: dict[str, list] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", line=lineno, column=len(raw) - len(raw.lstrip()) + 1)
        key_part, value_part = line.split("=", 1)
        key = key_part.strip()
        if key not in ALL_KEYS:
            raise ConfigError(f"unknown key {key!r}", line=lineno, column=raw.index(key) + 1 if key else 1)
        if key in out:
            raise ConfigError(f"duplicate key {key!r}", line=lineno, column=raw.index(key) + 1)
        # 1-based column where value_part begins
        value_col = len(key_part) + 2
        conv = ALL_KEYS[key]
        pieces = [value_part] if key in NON_SWEEP else value_part.split(",")
        values = []
        offset = value_col
        for piece in pieces:
            tok = piece.strip()
            if tok:
                try:
                    values.append(conv(tok))
                except ValueError:
                    col = offset + (len(piece) - len(piece.lstrip()))
                    raise ConfigError(f"bad value {tok!r} for {key}", line=lineno, column=col) from None
            offset += len(piece) + 1
        out[key] = values
    return out


def build_run_config(values: dict) -> RunConfig:
    loss = LossKind(
        values.get("loss", "dpo"),
        ipo_tau=values.get("ipo_tau", 1.0),
        sppo_eta=values.get("sppo_eta"),
    )
    solver = InnerSolver(
        max_steps=values.get("inner_solver.max_steps", InnerSolver.max_steps),
        learning_rate=values.get("inner_solver.learning_rate", InnerSolver.learning_rate),
        grad_tol=values.get("inner_solver.grad_tol", InnerSolver.grad_tol),
    )
    defaults = RunConfig.__dataclass_fields__
    try:
        return RunConfig(
            beta=values.get("beta", defaults["beta"].default),
            alpha=values.get("alpha", defaults["alpha"].default),
            T=values.get("T", defaults["T"].default),
            N=values.get("N", defaults["N"].default),
            mode=values.get("mode", defaults["mode"].default),
            loss=loss,
            inner_solver=solver,
            seed=values.get("seed", defaults["seed"].default),
            momentum_anchor=values.get("momentum_anchor", defaults["momentum_anchor"].default),
            beta_schedule=values.get("beta_schedule"),
        )
    except InvalidInput as err:
        raise ConfigError(str(err)) from None


def expand(parsed: dict[str, list]) -> list[RunConfig]:
    """Cartesian product over every run key; an empty alternative list yields no runs."""
    keys = [k for k in RUN_KEYS if k in parsed]
    runs = []
    for combo in itertools.product(*(parsed[k] for k in keys)):
        runs.append(build_run_config(dict(zip(keys, combo))))
    return runs


def parse_spec(text: str, base_dir: Path | None = None) -> ExperimentSpec:
    parsed = parse_text(text)
    source = {k: v[0] for k, v in parsed.items() if k in INSTANCE_KEYS and v}
    window = None
    if parsed.get("window"):
        window = parsed["window"][0]
        if len(window) != 2 or window[0] > window[1]:
            raise ConfigError("window needs two integers t_lo <= t_hi")
    return ExperimentSpec(source, expand(parsed), window, base_dir or Path.cwd())


def load_spec(path: str | Path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read {path}: {err.strerror}") from None
    return parse_spec(text, path.parent)


def load_instance(source: dict, base_dir: Path | None = None) -> Instance:
    if "instance" in source:
        path = Path(source["instance"])
        if not path.is_absolute() and base_dir is not None:
            path = base_dir / path
        try:
            return Instance.load(path)
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot load instance {path}: {err}") from None
    try:
        return generate(
            source.get("gen_kind", "bt"),
            source.get("gen_seed", 0),
            source.get("gen_delta", 0.5),
            source.get("num_prompts", 1),
            source.get("num_responses", 2),
            source.get("gen_ref", "uniform"),
        )
    except InvalidInput as err:
        raise ConfigError(str(err)) from None


def config_to_dict(config: RunConfig) -> dict:
    d = asdict(config)
    if d["beta_schedule"] is not None:
        d["beta_schedule"] = list(d["beta_schedule"])
    return d


def config_hash(config: RunConfig) -> str:
    blob = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
