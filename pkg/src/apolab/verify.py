"""Oracle-equivalence and invariant checks, runnable from the CLI (``apolab verify``).

Each check returns a CheckResult; ``run_checks`` runs a selection and the CLI
exits nonzero if any fails.
"""

from __future__ import annotations

import math
import tempfile
import time
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from .config import parse_spec
from .engine import InnerSolver, RunConfig, estimation_error, exact_update, minimize_loss, run_apo
from .instance import Instance, random_bt_instance, random_general_instance
from .losses import LossKind, make_objective
from .policy import TabularPolicy, World, kl_divergence, normalize_log_policy, tv_distance
from .preferences import (
    RewardTable,
    general_minimal_gap,
    make_rng,
    minimal_gap,
    population_dataset,
    sample_dataset,
)
from .metrics import fit_rate
from .sweep import cli_run
from .theory import (
    closed_form_policy,
    gamma_beta_closed_form,
    kl_upper_bound,
    log_ratio_inequality_slack,
    momentum_weights,
    optimal_policy,
)


class CheckResult(NamedTuple):
    name: str
    passed: bool
    detail: str
    seconds: float


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    start = time.perf_counter()
    passed, detail = fn()
    return CheckResult(name, bool(passed), detail, time.perf_counter() - start)


def random_exact_runs(n_runs: int = 50, seed: int = 1):
    """Random exact-mode BT runs: |X| <= 3, |Y| <= 5, T <= 6, alpha in {0, .3, .6, .9}, beta in {.5, 1, 2}."""
    rng = make_rng(seed)
    for i in range(n_runs):
        nx = int(rng.integers(1, 4))
        ny = int(rng.integers(2, 6))
        inst = random_bt_instance(seed * 1000 + i, 0.05, nx, ny, ref="random")
        cfg = RunConfig(
            beta=float(rng.choice([0.5, 1.0, 2.0])),
            alpha=float(rng.choice([0.0, 0.3, 0.6, 0.9])),
            T=int(rng.integers(1, 7)),
        )
        yield inst, cfg, run_apo(inst.world, inst.model, inst.pi_ref, cfg)


def check_closed_form_equivalence(n_runs: int = 50) -> tuple[bool, str]:
    worst = 0.0
    for inst, cfg, trace in random_exact_runs(n_runs):
        closed = closed_form_policy(inst.pi_ref, trace.rewards, cfg.alpha, cfg.beta)
        worst = max(worst, float(tv_distance(trace.final_policy, closed, inst.world).per_prompt.max()))
    return worst <= 1e-10, f"max TV over {n_runs} runs = {worst:.3e} (tol 1e-10)"


def check_kl_bound(n_runs: int = 50) -> tuple[bool, str]:
    violations = checked = 0
    for inst, cfg, trace in random_exact_runs(n_runs):
        gap = minimal_gap(inst.model)
        if not gap.unique:
            continue
        opt = optimal_policy(inst.model)
        mass = opt.mass_under(inst.pi_ref)
        for rec in trace.records:
            measured = opt.kl_from(rec.pi_hat_next)
            bound = kl_upper_bound(rec.t, cfg.alpha, cfg.beta, gap.delta, mass)
            violations += int(np.sum(measured > bound))
            checked += measured.size
    return violations == 0, f"{violations} violations in {checked} (run, t, prompt) checks"


def acceleration_slopes() -> dict[float, float]:
    world = World.uniform(1, 2)
    reward = RewardTable([[1.0, 0.0]])
    pi_ref = TabularPolicy.uniform(1, 2)
    opt = optimal_policy(reward)
    slopes = {}
    for alpha in (0.0, 0.5, 0.75):
        trace = run_apo(world, reward, pi_ref, RunConfig(beta=1.0, alpha=alpha, T=15))
        kl = [float(opt.kl_from(p)[0]) for p in trace.pi_hats[1:]]
        slopes[alpha] = fit_rate(kl, (8, 15)).slope
    return slopes


def check_acceleration() -> tuple[bool, str]:
    s = acceleration_slopes()
    r_half, r_three_quarter = s[0.5] / s[0.0], s[0.75] / s[0.0]
    ok = abs(r_half - 2.0) <= 0.2 and abs(r_three_quarter - 4.0) <= 0.6
    return ok, f"slope ratios {r_half:.4f} (2 +/- 10%), {r_three_quarter:.4f} (4 +/- 15%)"


def check_sppo_reduction(n_instances: int = 20) -> tuple[bool, str]:
    worst = 0.0
    solver = InnerSolver(grad_tol=1e-10)
    for i in range(n_instances):
        nx, ny = 1 + i % 3, 2 + i % 4
        inst = random_general_instance(500 + i, 0.05, nx, ny, ref="random")
        beta = (0.5, 1.0, 2.0)[i % 3]
        data = population_dataset(inst.model, inst.pi_ref, inst.world)
        fit = minimize_loss(LossKind("sppo"), data, inst.pi_ref, solver, pref=inst.model, beta=beta)
        closed = exact_update(inst.pi_ref, inst.model, beta)
        worst = max(worst, float(tv_distance(fit.policy, closed, inst.world).per_prompt.max()))
    return worst <= 1e-6, f"max TV over {n_instances} instances = {worst:.3e} (tol 1e-6)"


def iterations_to_threshold(inst: Instance, alpha: float, beta: float, t_max: int, tol: float = 1e-3):
    """Smallest T <= t_max with E_rho TV(pi_hat_{T+1}, pi*) <= tol, or None."""
    opt = optimal_policy(inst.model)
    cfg = RunConfig(beta=beta, alpha=alpha, T=t_max, loss=LossKind("sppo"))
    trace = run_apo(inst.world, inst.model, inst.pi_ref, cfg)
    for rec in trace.records:
        if inst.world.prompt_dist @ opt.tv_from(rec.pi_hat_next) <= tol:
            return rec.t
    return None


def check_general_convergence(n_instances: int = 10, beta: float = 1.0) -> tuple[bool, str]:
    details, ok = [], True
    seed = 700
    found = 0
    while found < n_instances:
        seed += 1
        inst = random_general_instance(seed, 0.1, 1 + seed % 3, 3 + seed % 3)
        gap = general_minimal_gap(inst.model)
        if not gap.unique or gap.delta < 0.1:
            continue
        found += 1
        needed = {}
        for alpha in (0.0, 0.5):
            t_max = math.ceil(40 * beta * (1 - alpha) / gap.delta)
            needed[alpha] = iterations_to_threshold(inst, alpha, beta, t_max)
        if needed[0.0] is None or needed[0.5] is None:
            ok = False
            details.append(f"seed {seed}: threshold not reached {needed}")
            continue
        # iterations = number of updates producing pi_hat_{T+1}
        ratio = (needed[0.5] + 1) / (needed[0.0] + 1)
        ok &= ratio <= 0.6
        details.append(f"{needed[0.0] + 1}->{needed[0.5] + 1}")
    return ok, f"iterations alpha=0 -> alpha=0.5: {', '.join(details)}"


RATE_SIZES = (250, 1000, 4000, 16000)


def rate_instance() -> Instance:
    world = World.uniform(2, 3)
    return Instance(world, TabularPolicy.uniform(2, 3), RewardTable([[0.5, 0.0, -0.3], [0.2, -0.4, 0.1]]))


def estimation_errors(sizes=RATE_SIZES, seeds: int = 20, beta: float = 1.0) -> list[float]:
    inst = rate_instance()
    pref = inst.preferences
    means = []
    for n in sizes:
        errs = []
        for seed in range(seeds):
            data = sample_dataset(pref, inst.pi_ref, inst.world, n, make_rng(seed, n))
            fit = minimize_loss(LossKind("dpo"), data, inst.pi_ref, InnerSolver(), beta=beta)
            errs.append(estimation_error(fit.policy, inst.pi_ref, inst.model, beta, inst.world))
        means.append(float(np.mean(errs)))
    return means


def check_statistical_rate() -> tuple[bool, str]:
    means = estimation_errors()
    slope = float(np.polyfit(np.log(RATE_SIZES), np.log(means), 1)[0])
    return -1.4 <= slope <= -0.6, f"log-log slope {slope:.4f} in [-1.4, -0.6]; mean errors {['%.3e' % m for m in means]}"


def finite_difference_gradient(objective, logits: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(logits)
    for idx in np.ndindex(logits.shape):
        up, down = logits.copy(), logits.copy()
        up[idx] += h
        down[idx] -= h
        grad[idx] = (objective(up)[0] - objective(down)[0]) / (2 * h)
    return grad


def random_loss_case(rng: np.random.Generator, tag: str):
    nx, ny = int(rng.integers(1, 4)), int(rng.integers(2, 6))
    inst = random_general_instance(int(rng.integers(1 << 30)), 0.1, nx, ny)
    pi_t = normalize_log_policy(np.log(rng.dirichlet(np.ones(ny), size=nx)))
    pi = normalize_log_policy(np.log(rng.dirichlet(np.ones(ny), size=nx)))
    beta = float(rng.uniform(0.3, 3.0))
    data = sample_dataset(inst.model, pi_t, inst.world, int(rng.integers(5, 60)), rng)
    loss = LossKind(tag, ipo_tau=float(rng.uniform(0.5, 5.0)))
    return loss, pi, pi_t, beta, data, inst.model


def check_gradients(n_configs: int = 100, seed: int = 3) -> tuple[bool, str]:
    rng = make_rng(seed)
    worst = {}
    for tag in ("dpo", "sppo", "ipo"):
        worst[tag] = 0.0
        for _ in range(n_configs):
            loss, pi, pi_t, beta, data, pref = random_loss_case(rng, tag)
            objective = make_objective(loss, pi_t, beta, data, pref)
            logits = pi.log_probs + rng.normal(size=pi.shape)
            _, grad = objective(logits)
            fd = finite_difference_gradient(objective, logits)
            rel = np.linalg.norm(grad - fd) / max(np.linalg.norm(grad), 1e-300)
            worst[tag] = max(worst[tag], float(rel))
    ok = all(v <= 1e-5 for v in worst.values())
    return ok, "max relative error " + ", ".join(f"{k}={v:.2e}" for k, v in worst.items())


def check_log_ratio_inequality(n: int = 10**6, seed: int = 5) -> tuple[bool, str]:
    x = np.exp(make_rng(seed).uniform(np.log(1e-6), np.log(1e6), size=n))
    slack = log_ratio_inequality_slack(x)
    at_one = float(log_ratio_inequality_slack(1.0))
    return bool(np.all(slack >= 0) and at_one == 0.0), f"min slack {slack.min():.3e}; slack at x=1: {at_one}"


def check_momentum_identity() -> tuple[bool, str]:
    worst = 0.0
    for alpha in np.round(np.arange(0.1, 1.0, 0.1), 1):
        for t in range(101):
            mw = momentum_weights(t, float(alpha))
            worst = max(worst, abs(math.fsum(mw.weights.tolist()) - gamma_beta_closed_form(t, float(alpha))))
    return worst <= 1e-12, f"max |direct - closed form| = {worst:.3e} (tol 1e-12)"


DETERMINISM_SPEC = """\
gen_kind = bt
gen_seed = 11
gen_delta = 0.3
num_prompts = 2
num_responses = 3
mode = empirical
loss = dpo, ipo
alpha = 0, 0.5
beta = 1
T = 3
N = 200
seed = 7
"""


def check_determinism(workers: int = 2) -> tuple[bool, str]:
    spec = parse_spec(DETERMINISM_SPEC)
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a", Path(tmp) / "b"
        status = (cli_run(spec, a, workers=workers), cli_run(spec, b, workers=1))
        same = (a / "metrics.csv").read_bytes() == (b / "metrics.csv").read_bytes()
    return same and status == (0, 0), f"byte-identical metrics.csv: {same}; exit codes {status}"


def check_recursion_identity() -> tuple[bool, str]:
    """l_{t+1} = r_{t+1} - beta log Z'_t + alpha l_t with l_t = beta (log pi_hat_{t+1} - log pi_hat_t)."""
    worst = 0.0
    for inst, cfg, trace in random_exact_runs(20, seed=2):
        b = cfg.beta
        ls = [b * (trace.pi_hats[t + 1].log_probs - trace.pi_hats[t].log_probs) for t in range(cfg.T + 1)]
        for t in range(cfg.T):
            rhs = trace.records[t + 1].reward - b * trace.records[t].extrapolation_log_partition[:, None] + cfg.alpha * ls[t]
            worst = max(worst, float(np.max(np.abs(ls[t + 1] - rhs))))
    return worst <= 1e-9, f"max entrywise residual {worst:.3e} (tol 1e-9)"


def check_exp_weights() -> tuple[bool, str]:
    """alpha = 0 exact BT runs equal pi_ref exp((t+1) r*/beta) normalized."""
    worst = 0.0
    for inst, cfg, trace in random_exact_runs(20, seed=4):
        if cfg.alpha != 0:
            cfg = RunConfig(beta=cfg.beta, alpha=0.0, T=cfg.T)
            trace = run_apo(inst.world, inst.model, inst.pi_ref, cfg)
        for t, pi_hat in enumerate(trace.pi_hats[1:]):
            direct = normalize_log_policy(inst.pi_ref.log_probs + (t + 1) * inst.model.rewards / cfg.beta)
            worst = max(worst, float(tv_distance(pi_hat, direct, inst.world).per_prompt.max()))
    return worst <= 1e-10, f"max TV {worst:.3e} (tol 1e-10)"


def check_pinsker_chain() -> tuple[bool, str]:
    """TV(pi*, pi_hat_{t+1}) <= sqrt(KL(pi* || pi_hat_{t+1}) / 2) along exact traces."""
    bad = 0
    for inst, cfg, trace in random_exact_runs(20, seed=6):
        opt = optimal_policy(inst.model)
        if not opt.unique:
            continue
        for p in trace.pi_hats[1:]:
            bad += int(np.sum(opt.tv_from(p) > np.sqrt(opt.kl_from(p) / 2) + 1e-15))
            bad += int(np.sum(kl_divergence(p, inst.pi_ref, inst.world).per_prompt < 0))
    return bad == 0, f"{bad} violations"


CHECKS: dict[str, tuple[str, Callable[[], tuple[bool, str]]]] = {
    "closed_form_equivalence": ("acceptance", check_closed_form_equivalence),
    "acceleration_factor": ("acceptance", check_acceleration),
    "certified_kl_bound": ("acceptance", check_kl_bound),
    "sppo_reduction": ("acceptance", check_sppo_reduction),
    "general_convergence": ("acceptance", check_general_convergence),
    "statistical_rate": ("acceptance", check_statistical_rate),
    "gradient_correctness": ("acceptance", check_gradients),
    "log_ratio_inequality": ("acceptance", check_log_ratio_inequality),
    "momentum_identity": ("acceptance", check_momentum_identity),
    "sweep_determinism": ("acceptance", check_determinism),
    "recursion_identity": ("invariant", check_recursion_identity),
    "exp_weights_alpha0": ("invariant", check_exp_weights),
    "pinsker_chain": ("invariant", check_pinsker_chain),
}


def run_checks(names: list[str] | None = None) -> list[CheckResult]:
    selected = names or list(CHECKS)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {', '.join(unknown)}")
    return [_timed(name, CHECKS[name][1]) for name in selected]
