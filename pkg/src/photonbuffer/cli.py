"""``photonbuffer`` command line.

Exit codes: 0 success, 2 config error, 3 physics-validation error,
4 analysis error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments
from .config import ExperimentConfig, default_config_yaml, load_config
from .errors import ConfigError, PhotonBufferError

EXIT_OK = 0


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _jobs(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("--jobs must be >= 1")
    return n


def _print_json(doc) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


def cmd_simulate(args) -> int:
    cfg = _load(args)
    manifest = experiments.cmd_simulate(cfg, cfg.output_dir, fmt=args.format, jobs=args.jobs)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    ks = experiments.parse_k_list(args.k) if args.k else cfg.analysis.sweep_k
    manifest = experiments.cmd_sweep_storage(cfg, ks, cfg.output_dir, fmt=args.format, jobs=args.jobs)
    doc = json.loads(manifest.read_text())
    fit = doc["results"].get("loss_fit")
    if fit:
        print(f"loss slope {fit['slope_db_per_trip']:.4f} dB/round trip over {fit['n_points']} peaks")
    for name, err in doc["errors"].items():
        print(f"{name}: {err}", file=sys.stderr)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}")
        return ConfigError.exit_code
    violations, notes = experiments.validation_report(cfg)
    for v in violations:
        print(f"violation {v}")
    for note in notes:
        print(f"warning {note}")
    if violations:
        return 3
    print("ok: configuration is valid")
    return EXIT_OK


def cmd_g2(args) -> int:
    cfg = _load(args)
    result = experiments.reanalyze_g2(cfg, args.events, args.k, args.n_triggers)
    doc = result.to_json()
    if args.output:
        experiments.write_json_atomic(args.output, doc)
    _print_json(doc)
    return EXIT_OK


def cmd_fit_loss(args) -> int:
    cfg = _load(args)
    ks = experiments.parse_k_list(args.k) if args.k else None
    series, fit = experiments.reanalyze_loss(cfg, args.histograms, ks)
    doc = fit.to_json()
    doc["k"] = series.k.tolist()
    doc["normalized_amplitude"] = series.amplitude.tolist()
    if args.output:
        experiments.write_json_atomic(args.output, doc)
    _print_json(doc)
    return EXIT_OK


def cmd_default_config(args) -> int:
    sys.stdout.write(default_config_yaml())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML (or .json) experiment config; defaults if omitted")
    common.add_argument("--seed", type=int, help="override master_seed")
    common.add_argument("--out", help="override output_dir")
    common.add_argument("--jobs", type=_jobs, default=1, help="worker threads (results do not depend on it)")
    common.add_argument("--format", choices=experiments.FORMATS, default="csv",
                        help="histogram file format")

    parser = argparse.ArgumentParser(prog="photonbuffer",
                                     description="Recirculating single-photon buffer simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run the full chain for the configured hold")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep-storage", parents=[common], help="one run per storage time k")
    p.add_argument("--k", help="k list such as 1..5 or 0,2,4 (default: analysis.sweep_k)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", parents=[common], help="check a config without simulating")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("g2", parents=[common], help="g2(0) from an events.csv dump")
    p.add_argument("events", type=Path)
    p.add_argument("--k", type=int, help="storage round trips that set the gate (default: config hold)")
    p.add_argument("--n-triggers", type=int, help="number of pulses (default: config n_pulses)")
    p.add_argument("-o", "--output", type=Path, help="also write the result as JSON")
    p.set_defaults(func=cmd_g2)

    p = sub.add_parser("fit-loss", parents=[common], help="loss per round trip from histogram files")
    p.add_argument("histograms", type=Path, nargs="+")
    p.add_argument("--k", help="k of each file, in order (default: parsed from 'k<N>' in the name)")
    p.add_argument("-o", "--output", type=Path, help="also write the fit as JSON")
    p.set_defaults(func=cmd_fit_loss)

    p = sub.add_parser("default-config", help="print the fully resolved default config")
    p.set_defaults(func=cmd_default_config)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PhotonBufferError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
