"""Command-line entry point (``krf-lab``)."""

import argparse
import json
import logging
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from . import runner
from ._exceptions import KRFError
from .config import parse_config, write_echo
from .identities import IDENTITY_IDS, run_suite
from .persistence import RunDirectory
from .toric_models import MODEL_NAMES, REFERENCE_KINDS, build_model, chart_consistency, model_info

logger = logging.getLogger(__name__)

__all__ = ["main", "build_parser", "shipped_configs"]


def shipped_configs() -> list:
    """Acceptance configurations shipped with the package."""
    root = resources.files("krf_lab") / "configs"
    return sorted(Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml"))


def _floats(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _ints(text: str) -> tuple:
    return tuple(int(x) for x in _floats(text))


def _emit(payload, out=None) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, default=str)
    if out is not None:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="krf-lab",
        description="Numerical Kähler-Ricci flow laboratory on toric Fano models.",
    )
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-identities", help="check the chart tensor identities")
    p.add_argument("--ids", default="all", help="comma-separated identity ids or 'all'")
    p.add_argument("--n", type=_ints, default=(1, 2), help="dimensions, e.g. 1,2")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--off-shell", action="store_true", help="random velocities where allowed")
    p.add_argument("--out", type=Path)

    p = sub.add_parser("model-info", help="describe a toric model")
    p.add_argument("name", choices=MODEL_NAMES)
    p.add_argument("--L", type=float, default=8.0)
    p.add_argument("--grid", type=int, default=513)
    p.add_argument("--reference", choices=REFERENCE_KINDS, default="bergman")
    p.add_argument("--chart-check", action="store_true", help="compare with chart calculus")

    p = sub.add_parser("run-flow", help="integrate the flow into a run directory")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--config", type=Path)
    group.add_argument("--resume", type=Path, metavar="DIR")
    p.add_argument("--output", type=Path, help="run directory (default [run] output)")
    p.add_argument("--t-end", type=float, help="new final time when resuming")

    p = sub.add_parser("diagnose", help="normalize and evaluate the diagnostics of a run")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--check", choices=("all", "none"), default="none")

    p = sub.add_parser("mis-scan", help="L^p scans and limit extraction")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--p", type=_floats, help="exponents, e.g. 1,1.5,2,3")
    p.add_argument("--out", default="mis.json")

    p = sub.add_parser("report", help="write report.json and plots")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("orchestrate", help="run every stage for a configuration")
    p.add_argument("--config", type=Path, required=True)
    p.add_argument("--output", type=Path)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--configs", type=Path, nargs="*", help="default: shipped configurations")
    p.add_argument("--output", type=Path, default=Path("acceptance"))
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--skip-runs", action="store_true")
    return parser


def _config_of(run_dir: Path):
    return parse_config(Path(run_dir) / "run.toml")


def _cmd_verify(args) -> int:
    ids = None if args.ids == "all" else [i.strip() for i in args.ids.split(",")]
    reports = run_suite(ids, args.n, args.trials, args.seed, on_shell=not args.off_shell)
    summary = {}
    for identity in ids or IDENTITY_IDS:
        rows = [r for r in reports if r.identity == identity.upper()]
        summary[identity.upper()] = {
            "passed": all(r.passed for r in rows),
            "count": len(rows),
            "worst_residual": max((r.rel_residual for r in rows), default=0.0),
        }
    payload = {"passed": all(r.passed for r in reports), "identities": summary}
    _emit(payload, args.out)
    return 0 if payload["passed"] else 1


def _cmd_model_info(args) -> int:
    model = build_model(args.name, L=args.L, grid=args.grid, reference=args.reference)
    info = model_info(model)
    if args.chart_check:
        info["chart_consistency"] = chart_consistency(model)
    _emit(info)
    return 0


def _cmd_run_flow(args) -> int:
    if args.resume is not None:
        run_dir = RunDirectory(args.resume)
        config = _config_of(args.resume)
        if args.t_end is not None:
            config = replace(config, flow=replace(config.flow, t_end=args.t_end))
            write_echo(config, run_dir.file("run.toml"))
        with run_dir.lock():
            result = runner.stage_run_flow(config, run_dir, resume_run=True)
    else:
        config = parse_config(args.config)
        run_dir = RunDirectory(args.output or config.run.output, create=True)
        with run_dir.lock():
            result = runner.stage_run_flow(config, run_dir)
    _emit(result.payload)
    return 0


def _cmd_diagnose(args) -> int:
    config = _config_of(args.run_dir)
    run_dir = RunDirectory(args.run_dir)
    with run_dir.lock():
        if "normalize" not in run_dir.status():
            runner.stage_normalize(config, run_dir)
        result = runner.stage_diagnose(config, run_dir)
    checks = result.payload["checks"]
    failed = [k for k, v in checks.items() if v.get("asserted") and not v["passed"]]
    _emit({"gauge": result.payload["gauge"], "passed": result.passed, "failed": failed})
    if args.check == "all" and not result.passed:
        return 1
    return 0


def _cmd_mis_scan(args) -> int:
    config = _config_of(args.run_dir)
    run_dir = RunDirectory(args.run_dir)
    with run_dir.lock():
        result = runner.stage_mis_scan(config, run_dir, p_list=args.p, out=args.out)
    payload = result.payload
    _emit(
        {
            "blowup": [tr["p"] for tr in payload["traces"] if tr["blowup"]],
            "control_passed": payload["control"]["passed"],
            "psi": payload["psi"],
            "estimates": payload["estimates"],
        }
    )
    return 0


def _cmd_report(args) -> int:
    config = _config_of(args.run_dir)
    run_dir = RunDirectory(args.run_dir)
    with run_dir.lock():
        result = runner.stage_report(config, run_dir, plots=not args.no_plots)
    _emit({k: result.payload[k] for k in ("converged", "blowup", "checks_passed")})
    return 0 if result.passed else 1


def _cmd_orchestrate(args) -> int:
    config = parse_config(args.config)
    return runner.orchestrate(config, args.output)


def _cmd_accept(args) -> int:
    configs = args.configs if args.configs else shipped_configs()
    result = runner.accept(configs, args.output, args.trials, runs=not args.skip_runs)
    _emit({"passed": result["passed"], "output": str(args.output / "acceptance.json")})
    return 0 if result["passed"] else 1


_COMMANDS = {
    "verify-identities": _cmd_verify,
    "model-info": _cmd_model_info,
    "run-flow": _cmd_run_flow,
    "diagnose": _cmd_diagnose,
    "mis-scan": _cmd_mis_scan,
    "report": _cmd_report,
    "orchestrate": _cmd_orchestrate,
    "accept": _cmd_accept,
}


def main(argv=None) -> int:
    from . import set_log_level

    args = build_parser().parse_args(argv)
    level = logging.getLevelName(args.log_level.upper())
    if not isinstance(level, int):
        level = logging.WARNING
    level = max(logging.DEBUG, level - 10 * args.verbose)
    set_log_level(level)

    try:
        return _COMMANDS[args.command](args)
    except KRFError as e:
        record = e.to_record()
        if record["stage"] is None:
            record["stage"] = args.command
        print(json.dumps(record, sort_keys=True, default=str), file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
