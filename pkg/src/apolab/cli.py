"""Command-line front end.

Exit codes: 0 success, 1 a run or check failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import config as cfgmod
from .errors import ApoError, ConfigError
from .instance import generate
from .metrics import COLUMNS, read_csv
from .sweep import ABLATION_METRICS, ablation_anchor, cli_run

log = logging.getLogger("apolab")


def cmd_gen(args) -> int:
    inst = generate(args.kind, args.seed, args.delta, args.prompts, args.responses, args.ref)
    text = json.dumps(inst.to_json(), indent=2) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _spec_with_instance(path: str, instance: str | None) -> cfgmod.ExperimentSpec:
    spec = cfgmod.load_spec(path)
    if instance:
        spec.instance_source = {"instance": str(Path(instance).resolve())}
    return spec


def cmd_run(args) -> int:
    spec = _spec_with_instance(args.config, args.instance)
    if len(spec.runs) != 1:
        raise ConfigError(f"run expects a single configuration, got {len(spec.runs)}; use sweep")
    return cli_run(spec, args.out)


def cmd_sweep(args) -> int:
    spec = _spec_with_instance(args.spec, args.instance)
    return cli_run(spec, args.out, workers=args.workers)


def cmd_ablate(args) -> int:
    spec = _spec_with_instance(args.spec, args.instance)
    table, outcomes = ablation_anchor(spec, workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    fields = ["pair", "t"] + [f"{m}_{s}" for m in ABLATION_METRICS for s in ("pi_hat", "pi", "delta")]
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for row in table:
            writer.writerow(["" if row[f] is None else repr(row[f]) if isinstance(row[f], float) else row[f] for f in fields])
    return 0 if all(o.ok for o in outcomes) else 1


def cmd_verify(args) -> int:
    from .verify import CHECKS, run_checks

    if args.list:
        for name, (kind, _) in CHECKS.items():
            print(f"{name}\t{kind}")
        return 0
    try:
        results = run_checks(args.checks or None)
    except KeyError as err:
        raise ConfigError(str(err.args[0])) from None
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<22} {r.seconds:7.2f}s  {r.detail}")
    return 0 if all(r.passed for r in results) else 1


def cmd_plotdata(args) -> int:
    if args.metric not in COLUMNS[2:]:
        raise ConfigError(f"unknown metric {args.metric!r}; choose from {', '.join(COLUMNS[2:])}")
    rows = read_csv(Path(args.metrics).read_text())
    out = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["x", "y", "series"])
        for row in rows:
            if row[args.metric] is not None:
                writer.writerow([row["t"], repr(float(row[args.metric])), row["run_id"]])
    finally:
        if args.output:
            out.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apolab", description="Tabular accelerated preference optimization laboratory.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="emit a random instance fixture")
    g.add_argument("--kind", choices=("bt", "general"), default="bt")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--delta", type=float, default=0.5, help="target minimal gap")
    g.add_argument("--prompts", type=int, default=1)
    g.add_argument("--responses", type=int, default=3)
    g.add_argument("--ref", choices=("uniform", "random"), default="uniform", help="reference policy")
    g.add_argument("-o", "--output")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="execute a single run configuration")
    r.add_argument("config")
    r.add_argument("--instance", help="instance fixture (overrides the config's instance keys)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_run)

    for name, func, helptext in (
        ("sweep", cmd_sweep, "execute every configuration of a sweep spec"),
        ("ablate", cmd_ablate, "compare momentum anchors pi_hat and pi"),
    ):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("spec")
        s.add_argument("--instance")
        s.add_argument("--out", required=True)
        s.add_argument("--workers", type=int, default=1)
        s.set_defaults(func=func)

    v = sub.add_parser("verify", help="run the oracle-equivalence and invariant checks")
    v.add_argument("checks", nargs="*")
    v.add_argument("--list", action="store_true")
    v.set_defaults(func=cmd_verify)

    pd = sub.add_parser("plotdata", help="emit (x, y, series) triples from metrics.csv")
    pd.add_argument("metrics")
    pd.add_argument("--metric", default="kl_opt_to_pihat")
    pd.add_argument("-o", "--output")
    pd.set_defaults(func=cmd_plotdata)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except ApoError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
