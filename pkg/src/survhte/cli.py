"""Command line entry point: ``survhte {simulate,benchmark,case-study,plots}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import __version__
from .harness.config import PRESETS, ConfigError, load_case_study, load_config, preset_config


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _run_config(args):
    if args.config and args.preset:
        raise ConfigError("use either --config or --preset, not both")
    if args.config:
        return load_config(args.config, seed=args.seed)
    if args.preset:
        return preset_config(args.preset, seed=args.seed)
    raise ConfigError("one of --config or --preset is required")


def cmd_simulate(args) -> int:
    from .simgen import export_csv, simulate

    cfg = _run_config(args)
    out = Path(args.out)
    for name, scenario in cfg.scenarios.items():
        target = out / name
        target.mkdir(parents=True, exist_ok=True)
        for r in range(scenario.reps):
            sim = simulate(scenario.replicate(r))
            export_csv(sim, target / f"rep_{r:05d}.csv", target / f"rep_{r:05d}_truth.csv")
        print(f"{name}: {scenario.reps} replication(s) written to {target}")
    return 0


def cmd_benchmark(args) -> int:
    from .harness.runner import METRICS_CSV, run_benchmark

    cfg = _run_config(args)
    run_benchmark(cfg, args.out, threads=args.threads, resume=args.resume,
                  plots=not args.no_plots)
    print(f"metrics written to {Path(args.out) / METRICS_CSV}")
    return 0


def cmd_case_study(args) -> int:
    from .harness.casestudy import run_case_study

    if not args.config:
        raise ConfigError("case-study requires --config")
    data, mapping, spec, opts = load_case_study(args.config, seed=args.seed)
    res = run_case_study(data, mapping, spec, args.out, opts)
    print(f"{res.data.n} subjects analysed; outputs in {args.out}")
    return 0


def cmd_plots(args) -> int:
    from .harness.plots import emit_plots

    paths = emit_plots(args.out)
    print(f"{len(paths)} figure(s) written to {Path(args.out) / 'plots'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="survhte", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, presets=True):
        p.add_argument("--config", metavar="PATH", help="configuration file")
        if presets:
            p.add_argument("--preset", choices=PRESETS, help="shipped configuration")
        p.add_argument("--seed", type=_u64, metavar="U64", help="override the master seed")
        p.add_argument("--out", metavar="DIR", default="results", help="output directory")

    p = sub.add_parser("simulate", help="export simulated datasets and ground truth as CSV")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("benchmark", help="run the scenario x method benchmark")
    common(p)
    p.add_argument("--threads", type=_positive, metavar="N", help="worker processes")
    p.add_argument("--resume", action="store_true", help="reuse completed replication shards")
    p.add_argument("--no-plots", action="store_true", help="skip SVG figures")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("case-study", help="two-stage analysis of a CSV dataset")
    common(p, presets=False)
    p.set_defaults(func=cmd_case_study)

    p = sub.add_parser("plots", help="redraw figures for a finished benchmark")
    p.add_argument("--out", metavar="DIR", default="results", help="benchmark output directory")
    p.set_defaults(func=cmd_plots)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"survhte: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
