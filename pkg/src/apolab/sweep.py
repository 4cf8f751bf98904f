"""Execution of experiment specs: parallel runs, CSV/JSON artifacts, anchor ablation."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ExperimentSpec, config_hash, config_to_dict
from .engine import RunConfig, run_apo
from .errors import ApoError, ConfigError
from .instance import Instance
from .metrics import COLUMNS, default_window, fit_rate, rows_to_csv, subopt_diagnostics, trace_metrics, trace_to_json
from .preferences import RNG_ALGORITHM

log = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    run_id: str
    config: RunConfig
    rows: list[dict]
    trace_json: dict | None
    summary: dict

    @property
    def ok(self) -> bool:
        return self.summary["status"] == "ok"


def execute_run(run_id: str, instance: Instance, config: RunConfig, window: tuple[int, int] | None) -> RunOutcome:
    summary = {
        "run_id": run_id,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "rng": RNG_ALGORITHM,
    }
    try:
        trace = run_apo(instance.world, instance.model, instance.pi_ref, config)
        rows = trace_metrics(trace, instance, run_id)
    except ApoError as err:
        summary.update(status="failed", error=f"{type(err).__name__}: {err}")
        return RunOutcome(run_id, config, [], None, summary)

    final = rows[-1]
    summary.update(
        status="ok",
        final_tv_to_opt=final["tv_to_opt"],
        final_kl_opt_to_pihat=final["kl_opt_to_pihat"],
        final_subopt_gap=final["subopt_gap"],
    )
    win = window or default_window(config.T)
    try:
        fit = fit_rate(rows, win)
        summary["rate_fit"] = {"window": list(win), "slope": fit.slope, "r_squared": fit.r_squared}
    except (ApoError, TypeError):
        # KL undefined (no unique optimum) or underflowed to zero in the window
        summary["rate_fit"] = None
    diagnostics = subopt_diagnostics(trace, instance, rows)
    summary["subopt_bound_exceeded"] = any(d["exceeds"] for d in diagnostics)
    trace_json = trace_to_json(
        trace, rows, {"run_id": run_id, "config": summary["config"], "subopt_diagnostics": diagnostics}
    )
    return RunOutcome(run_id, config, rows, trace_json, summary)


def _execute(args) -> RunOutcome:
    return execute_run(*args)


def run_all(
    instance: Instance, configs: list[RunConfig], window=None, workers: int = 1, prefix: str = "r"
) -> list[RunOutcome]:
    jobs = [(f"{prefix}{i:03d}", instance, cfg, window) for i, cfg in enumerate(configs)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_execute, jobs))
    return [_execute(job) for job in jobs]


def write_artifacts(outcomes: list[RunOutcome], out_dir: Path, instance: Instance) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [row for o in outcomes for row in o.rows]
    (out_dir / "metrics.csv").write_text(rows_to_csv(rows))
    traces = out_dir / "traces"
    traces.mkdir(exist_ok=True)
    for o in outcomes:
        if o.trace_json is not None:
            (traces / f"{o.run_id}.json").write_text(json.dumps(o.trace_json, indent=1) + "\n")
    summary = {
        "columns": list(COLUMNS),
        "instance": instance.to_json(),
        "runs": [o.summary for o in outcomes],
        "failed": [o.run_id for o in outcomes if not o.ok],
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")


def cli_run(spec: ExperimentSpec, out_dir: str | Path, workers: int = 1) -> int:
    """Run every config of ``spec`` and write metrics.csv, traces/*.json and summary.json.

    Returns the process exit status: 0 all runs succeeded, 1 some run failed.
    Raises ConfigError (exit status 2 at the CLI) for a vacuous or invalid spec.
    """
    if not spec.runs:
        raise ConfigError("no runs")
    instance = spec.load_instance()
    outcomes = run_all(instance, spec.runs, spec.window, workers)
    write_artifacts(outcomes, Path(out_dir), instance)
    failed = [o.run_id for o in outcomes if not o.ok]
    for run_id in failed:
        log.error("run %s failed", run_id)
    return 1 if failed else 0


ABLATION_METRICS = ("tv_to_opt", "kl_opt_to_pihat", "subopt_gap", "est_error")


def ablation_anchor(spec: ExperimentSpec, workers: int = 1) -> tuple[list[dict], list[RunOutcome]]:
    """Run each config with both momentum anchors and pair their metrics per iteration.

    Rows hold the default-anchor value, the alternative-anchor value and
    their difference (alternative minus default) for each compared metric.
    """
    if not spec.runs:
        raise ConfigError("no runs")
    instance = spec.load_instance()
    seen, base = set(), []
    for cfg in spec.runs:
        key = replace(cfg, momentum_anchor="pi_hat")
        if key not in seen:
            seen.add(key)
            base.append(key)
    configs = [c for cfg in base for c in (cfg, replace(cfg, momentum_anchor="pi"))]
    outcomes = run_all(instance, configs, spec.window, workers)
    table = []
    for pair_idx in range(len(base)):
        default, alt = outcomes[2 * pair_idx], outcomes[2 * pair_idx + 1]
        for row_d, row_a in zip(default.rows, alt.rows):
            entry = {"pair": f"p{pair_idx:03d}", "t": row_d["t"]}
            for m in ABLATION_METRICS:
                d, a = row_d[m], row_a[m]
                entry[f"{m}_pi_hat"] = d
                entry[f"{m}_pi"] = a
                entry[f"{m}_delta"] = None if d is None or a is None else a - d
            table.append(entry)
    return table, outcomes
