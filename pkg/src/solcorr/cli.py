"""Command-line entry point: ``solcorr run|preset|presets``."""

from __future__ import annotations

import argparse
import json
import sys

from .scenario import ConfigError, ScenarioConfig, get_preset, list_presets, run_scenario

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _grid(text: str) -> tuple[int, float]:
    try:
        n, span = text.split(",")
        return int(n), float(span)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,SPAN, got {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory (default: the config's output field)")
    p.add_argument("--threads", type=int, default=1, help="worker pool size")
    p.add_argument("--oracle", action="store_true", help="cross-check against the full Green matrix (n <= 256)")
    p.add_argument("--step", type=float, help="override solver z_step")
    p.add_argument("--grid", type=_grid, help="override grid as N,SPAN")
    p.add_argument("--fluctuation-scale", type=float, help="input noise scale n0")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="solcorr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario file")
    run.add_argument("--scenario", required=True)
    _common(run)
    preset = sub.add_parser("preset", help="run a named preset")
    preset.add_argument("name")
    _common(preset)
    sub.add_parser("presets", help="list presets as JSON")
    return parser


def _apply_overrides(cfg: ScenarioConfig, args) -> ScenarioConfig:
    if args.step is not None:
        cfg.solver.z_step = args.step
    if args.grid is not None:
        cfg.grid.n, cfg.grid.t_half_span = args.grid
    if args.oracle:
        cfg.oracle = True
    if args.fluctuation_scale is not None:
        cfg.fluctuation_scale = args.fluctuation_scale
    cfg.validate()
    return cfg


def _error(kind: str, message: str) -> None:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "presets":
        print(json.dumps(list_presets(), indent=2))
        return EXIT_OK
    try:
        cfg = ScenarioConfig.load(args.scenario) if args.command == "run" else get_preset(args.name)
        cfg = _apply_overrides(cfg, args)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        _error("config", str(exc))
        return EXIT_CONFIG
    report = run_scenario(cfg, args.out, threads=args.threads)
    print(json.dumps(report.summary(), indent=2, default=float))
    if report.failed:
        _error("numerical", "every parameter tuple failed")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
