"""Per-iteration metrics, oracle columns and convergence-rate fits for run traces."""

from __future__ import annotations

import csv
import io
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from scipy.stats import linregress

from .engine import RunTrace, estimation_error
from .errors import InvalidInput
from .instance import Instance
from .policy import expected_reward
from .preferences import RewardTable, win_probabilities
from .theory import (
    auxiliary_policy,
    coverage_coefficient,
    kl_upper_bound,
    momentum_weights,
    optimal_policy,
    suboptimality_bound,
)

COLUMNS = (
    "run_id",
    "t",
    "tv_to_opt",
    "kl_opt_to_pihat",
    "subopt_gap",
    "gamma_t",
    "oracle_kl_bound",
    "kappa_t",
    "est_error",
    "loss_value",
    "inner_steps",
    "R_max",
)


def trace_metrics(trace: RunTrace, instance: Instance, run_id: str = "run") -> list[dict]:
    """One row per iteration t = 0..T, keyed by COLUMNS.

    Undefined entries are None: distances to pi* need a unique optimum, the
    sub-optimality gap needs a latent reward, and oracle columns (gamma_t,
    oracle_kl_bound, kappa_t) need a constant beta.
    """
    cfg = trace.config
    world, model = instance.world, instance.model
    rho = world.prompt_dist
    opt = optimal_policy(model)
    oracle = cfg.constant_beta
    opt_mass = opt.mass_under(instance.pi_ref)
    T = len(trace.records) - 1

    kappa_aux = None
    if oracle:
        if isinstance(model, RewardTable):
            kappa_aux = auxiliary_policy(instance.pi_ref, model, T, cfg.alpha, cfg.beta)
        else:
            wins = [win_probabilities(model, pi) for pi in trace.pis[: T + 1]]
            kappa_aux = auxiliary_policy(instance.pi_ref, wins, T, cfg.alpha, cfg.beta)

    rows = []
    for rec in trace.records:
        t = rec.t
        pi_hat = rec.pi_hat_next
        pi_t = trace.pis[t]
        row = dict.fromkeys(COLUMNS)
        row["run_id"] = run_id
        row["t"] = t
        if opt.unique:
            row["tv_to_opt"] = float(rho @ opt.tv_from(pi_hat))
            row["kl_opt_to_pihat"] = float(rho @ opt.kl_from(pi_hat))
        if isinstance(model, RewardTable):
            row["subopt_gap"] = opt.expected_reward(model, rho) - expected_reward(pi_hat, model, world)
        if oracle:
            row["gamma_t"] = momentum_weights(t, cfg.alpha).gamma(cfg.beta)
            if opt.unique:
                row["oracle_kl_bound"] = float(rho @ kl_upper_bound(t, cfg.alpha, cfg.beta, opt.delta, opt_mass))
            row["kappa_t"] = coverage_coefficient(trace.final_policy, kappa_aux, pi_t)
        if rec.target is not None:
            row["est_error"] = estimation_error(pi_hat, pi_t, rec.target, rec.beta, world)
        row["loss_value"] = rec.loss_value
        row["inner_steps"] = rec.inner_steps
        row["R_max"] = rec.reward_max
        rows.append(row)
    return rows


def subopt_diagnostics(trace: RunTrace, instance: Instance, rows: Sequence[dict]) -> list[dict]:
    """Sub-optimality ceiling per iteration next to the measured gap.

    The ceiling is not a valid upper bound in general, so instances where the
    measured gap exceeds it are flagged rather than treated as failures.
    """
    cfg = trace.config
    model = instance.model
    if not isinstance(model, RewardTable) or not cfg.constant_beta:
        return []
    opt = optimal_policy(model)
    p = opt.mass_under(instance.pi_ref)
    if np.any(p >= 1):
        return []
    out = []
    for row in rows:
        bound = float(instance.world.prompt_dist @ suboptimality_bound(row["t"], cfg.alpha, cfg.beta, p))
        out.append({"t": row["t"], "oracle_subopt_bound": bound, "exceeds": bool(row["subopt_gap"] > bound)})
    return out


class RateFit(NamedTuple):
    slope: float
    r_squared: float


def default_window(T: int) -> tuple[int, int]:
    """Latter half of the iterations 0..T."""
    return ((T + 1) // 2, T)


def fit_rate(kl_by_t: Sequence[float] | Iterable[dict], window: tuple[int, int] | None = None) -> RateFit:
    """Least-squares slope of log KL(pi* || pi_hat_{t+1}) against t over the window.

    Accepts either KL values indexed by t or metric rows with ``t`` and
    ``kl_opt_to_pihat``.
    """
    values = list(kl_by_t)
    if values and isinstance(values[0], dict):
        series = {int(r["t"]): r["kl_opt_to_pihat"] for r in values}
    else:
        series = dict(enumerate(values))
    if window is None:
        window = default_window(max(series))
    lo, hi = window
    ts = [t for t in range(lo, hi + 1) if t in series]
    if len(ts) < 3:
        raise InvalidInput("need at least 3 points in the fit window")
    kl = np.array([series[t] for t in ts], dtype=float)
    if np.any(~np.isfinite(kl)) or np.any(kl <= 0):
        raise InvalidInput("KL values in the fit window must be positive")
    fit = linregress(np.array(ts, dtype=float), np.log(kl))
    return RateFit(float(fit.slope), float(fit.rvalue**2))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in COLUMNS])
    return buf.getvalue()


def read_csv(text: str) -> list[dict]:
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != COLUMNS:
        raise InvalidInput("metrics header does not match the documented columns")
    rows = []
    for raw in reader:
        row = {}
        for k, v in raw.items():
            if k == "run_id":
                row[k] = v
            elif v == "":
                row[k] = None
            elif k in ("t", "inner_steps"):
                row[k] = int(v)
            else:
                row[k] = float(v)
        rows.append(row)
    return rows


def trace_to_json(trace: RunTrace, rows: Sequence[dict], extra: dict | None = None) -> dict:
    iterations = []
    for rec, row in zip(trace.records, rows):
        iterations.append(
            {
                "t": rec.t,
                "beta": rec.beta,
                "pi_hat_next": rec.pi_hat_next.log_probs.tolist(),
                "pi_next": rec.pi_next.log_probs.tolist(),
                "reward": rec.reward.tolist(),
                "R": rec.reward_max,
                "extrapolation_log_partition": rec.extrapolation_log_partition.tolist(),
                "grad_norm": rec.grad_norm,
                "metrics": {k: row[k] for k in COLUMNS if k != "run_id"},
            }
        )
    out = {
        "pi_hat_0": trace.pi_hats[0].log_probs.tolist(),
        "final_policy": trace.final_policy.to_json(),
        "iterations": iterations,
    }
    if extra:
        out.update(extra)
    return out
