"""``craci`` command line.

Exit codes: 0 ok, 1 config or input error, 2 invariant violation during a
run, 3 broken audit chain.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .errors import CraciError
from .harness import (DEFAULT_FLEETS, ScenarioConfig, compare_placements, load_config, run_scenario,
                      sweep_fleet)

log = logging.getLogger("craci")

EXIT_OK, EXIT_CONFIG, EXIT_INVARIANT, EXIT_AUDIT = 0, 1, 2, 3


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _seed(args) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("CRACI_SEED")
    if env is None or env == "":
        return None
    try:
        return int(env)
    except ValueError:
        raise _Fail(EXIT_CONFIG, f"CRACI_SEED must be an integer, got {env!r}") from None


def _config(args) -> ScenarioConfig:
    if args.config is None:
        cfg = ScenarioConfig()
    else:
        if not Path(args.config).is_file():
            raise _Fail(EXIT_CONFIG, f"config file not found: {args.config}")
        cfg = load_config(args.config)
    seed = _seed(args)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    fleets = getattr(args, "fleets", None)
    if fleets:
        cfg = replace(cfg, fleet_sizes=list(fleets))
    cfg.validate()
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, text: str) -> None:
    if not args.quiet:
        sys.stdout.write(text)


def _write_run_outputs(report, out: Path, figures: bool, sweep: bool = False) -> None:
    (out / "report.csv").write_text(report.to_csv())
    (out / "summary.txt").write_text(report.summary())
    (out / "config.json").write_text(json.dumps(report.config.to_dict(), indent=2, sort_keys=True)
                                     + "\n")
    for f in report.fleets:
        f.artifacts["audit"].write(out / f"audit-fleet{f.fleet}.jsonl")
    if figures:
        from . import plotting
        plotting.plot_breakdown(report, out / "breakdown.png")
        plotting.plot_gaps(report, out / "gaps.png")
        if sweep:
            plotting.plot_sweep(report, out / "sweep.png")


def _finish(args, report) -> int:
    _emit(args, report.summary())
    bad = report.invariant_violations
    if bad:
        for v in bad:
            log.error("invariant violated: %s", v)
        return EXIT_INVARIANT
    return EXIT_OK


# ---------------------------------------------------------------- commands

def cmd_run(args) -> int:
    cfg = _config(args)
    report = run_scenario(cfg)
    _write_run_outputs(report, _out_dir(args), not args.no_figures)
    return _finish(args, report)


def cmd_sweep(args) -> int:
    cfg = _config(args)
    if not args.fleets:
        cfg = replace(cfg, fleet_sizes=list(DEFAULT_FLEETS))
    report = sweep_fleet(cfg, fleet_sizes=cfg.fleet_sizes)
    _write_run_outputs(report, _out_dir(args), not args.no_figures, sweep=True)
    return _finish(args, report)


def cmd_compare(args) -> int:
    cfg = _config(args)
    cmp = compare_placements(cfg)
    out = _out_dir(args)
    (out / "compare.csv").write_text(cmp.to_csv())
    lines = [f"placement comparison  seed={cfg.seed} profile={cfg.link_profile}"]
    for c in cmp.fleets:
        d = list(c.deltas.values())
        if d:
            lines.append(f"fleet {c.fleet:>4}: {len(d)} requests  mean delta {c.mean_delta:.3f}"
                         f"  min {min(d):.3f}  edge always faster: {c.edge_always_faster}")
        else:
            lines.append(f"fleet {c.fleet:>4}: no requests")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    if not args.no_figures:
        from . import plotting
        plotting.plot_compare(cmp, out / "compare.png")
    _emit(args, text)
    return EXIT_OK


def cmd_verify_audit(args) -> int:
    from .trust import verify_audit_export

    try:
        data = Path(args.log).read_bytes()
    except OSError as exc:
        raise _Fail(EXIT_CONFIG, f"cannot read audit log {args.log}: {exc.strerror}") from None
    verdict = verify_audit_export(data)
    if verdict.intact:
        records = data.count(b"\n") - 1
        _emit(args, f"audit chain intact: {records} records\n")
        return EXIT_OK
    print(f"audit chain broken at seq {verdict.broken_at}")
    return EXIT_AUDIT


def cmd_export(args) -> int:
    cfg = _config(args)
    report = run_scenario(cfg)
    out = _out_dir(args)
    (out / "report.csv").write_text(report.to_csv())
    for f in report.fleets:
        d = out / f"fleet-{f.fleet}"
        d.mkdir(exist_ok=True)
        art = f.artifacts
        (d / "history.csv").write_text(art["twin"].export_history_csv())
        (d / "snapshots.json").write_text(art["twin"].export_snapshots())
        (d / "traces.jsonl").write_text(art["traces"].export_jsonl())
        (d / "manifest.json").write_text(json.dumps(art["manifest"].to_dict(), indent=2,
                                                    sort_keys=True) + "\n")
        art["audit"].write(d / "audit.jsonl")
    return _finish(args, report)


def cmd_reconcile(args) -> int:
    from .observability import ManifestRepository, action_to_dict

    root = Path(args.repo)
    if not root.is_dir():
        raise _Fail(EXIT_CONFIG, f"manifest repository not found: {root}")
    actions = ManifestRepository(root).reconcile()
    for act in actions:
        _emit(args, json.dumps(action_to_dict(act), sort_keys=True) + "\n")
    if not actions:
        _emit(args, "in sync\n")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="craci", description="Desk-scale compute-continuum kit.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="no summary on stdout")

    scenario = argparse.ArgumentParser(add_help=False, parents=[common])
    scenario.add_argument("--config", help="scenario JSON (defaults apply when omitted)")
    scenario.add_argument("--out", default="craci-out", help="output directory")
    scenario.add_argument("--seed", type=int, help="overrides config and $CRACI_SEED")
    scenario.add_argument("--fleets", type=int, nargs="+", metavar="N", help="fleet sizes")
    scenario.add_argument("--no-figures", action="store_true", help="skip PNG rendering")

    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[scenario], help="run a scenario").set_defaults(fn=cmd_run)
    sub.add_parser("sweep", parents=[scenario],
                   help="fleet-size sweep (1,10,50,100,150 unless --fleets)").set_defaults(fn=cmd_sweep)
    sub.add_parser("compare", parents=[scenario],
                   help="predictor at edge vs cloud, same seed").set_defaults(fn=cmd_compare)
    sub.add_parser("export", parents=[scenario],
                   help="run and export history, snapshots, traces, manifest and audit log"
                   ).set_defaults(fn=cmd_export)
    va = sub.add_parser("verify-audit", parents=[common], help="verify an exported audit log")
    va.add_argument("log")
    va.set_defaults(fn=cmd_verify_audit)
    rc = sub.add_parser("reconcile", parents=[common],
                        help="bring deployed.json in a manifest directory to the latest version")
    rc.add_argument("repo")
    rc.set_defaults(fn=cmd_reconcile)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="craci: %(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _Fail as exc:
        log.error("%s", exc)
        return exc.code
    except CraciError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG
    except AssertionError as exc:
        log.error("internal invariant tripped: %s", exc)
        return EXIT_INVARIANT
    except (OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
