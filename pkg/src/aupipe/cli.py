"""Command line entry point: ``aupipe {synth,train,eval,regions,report}``.

Exit codes: 0 success, 1 invalid input/config, 2 some AUs failed, 3 all failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import ConfigError, FormatError
from .evaluation import comparison_table
from .synth import SyntheticSpec, write_synthetic

log = logging.getLogger("aupipe")

# desk-scale LSTM settings; the full-size defaults live in LstmConfig
DESK_LSTM = {"hidden_units": 32, "learning_rate": 0.01, "momentum": 0.9,
             "weight_noise_std": 0.01, "epochs": 15}


def default_experiment(paths: dict, network: str, output_dir: str = "run") -> dict:
    """Experiment config using LDA, SVM and LSTM plus their 3-way vote."""
    root = paths["labels"].parent

    def rel(p):
        return None if p is None else str(Path(p).relative_to(root))

    return {
        "features": {network: rel(paths["features"])},
        "labels": rel(paths["labels"]),
        "landmarks": rel(paths["landmarks"]),
        "splits": rel(paths["splits"]),
        "classifiers": [
            {"name": "lda", "kind": "lda", "network": network, "params": {}},
            {"name": "svm", "kind": "svm", "network": network, "params": {}},
            {"name": "lstm", "kind": "lstm", "network": network, "params": dict(DESK_LSTM)},
        ],
        "ensembles": [{"name": "vote", "members": ["lda", "svm", "lstm"]}],
        "seed": 0,
        "output_dir": output_dir,
    }


def _parse_features(items):
    out = {}
    for item in items or []:
        tag, sep, path = item.partition("=")
        if not sep:
            raise ConfigError(f"--feature expects TAG=DIR, got {item!r}")
        out[tag] = path
    return out or None


def _config_from_args(args) -> pipeline.ExperimentConfig:
    overrides = {
        "labels": args.labels,
        "landmarks": args.landmarks,
        "splits": args.splits,
        "features": _parse_features(args.feature),
        "au_list": [int(a) for a in args.au_list.split(",")] if args.au_list else None,
        "threshold": args.threshold,
        "seed": args.seed,
        "output_dir": args.output_dir,
    }
    if args.config:
        cfg = pipeline.load_config(args.config, overrides)
    else:
        data = {k: v for k, v in overrides.items() if v is not None}
        data.setdefault("features", {})
        if "labels" not in data:
            raise ConfigError("either --config or --labels is required")
        cfg = pipeline.ExperimentConfig.from_dict(data, base_dir=Path.cwd())
    return cfg


def _add_experiment_flags(p):
    p.add_argument("--config", help="experiment config JSON; flags below override its keys")
    p.add_argument("--labels")
    p.add_argument("--landmarks")
    p.add_argument("--splits")
    p.add_argument("--feature", action="append", metavar="TAG=DIR",
                   help="feature directory for a network tag (repeatable)")
    p.add_argument("--au-list", help="comma-separated AU ids")
    p.add_argument("--threshold", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir")
    p.add_argument("--workers", type=int, help="worker cap (AU_PIPELINE_THREADS also caps)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aupipe", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a seeded synthetic dataset and experiment config")
    p.add_argument("--out", required=True)
    p.add_argument("--subjects", type=int, default=27)
    p.add_argument("--frames", type=int, default=500)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--active-run", type=float, default=40.0)
    p.add_argument("--inactive-run", type=float, default=80.0)
    p.add_argument("--landmark-noise", type=float, default=1.0)
    p.add_argument("--network", default="synthetic")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train per-AU classifiers")
    _add_experiment_flags(p)

    p = sub.add_parser("eval", help="evaluate trained models and ensembles on the test split")
    _add_experiment_flags(p)
    p.add_argument("--ensemble", action="append", default=[], metavar="JSON",
                   help="extra ensemble config file (repeatable)")

    p = sub.add_parser("regions", help="write the per-frame crop manifest")
    _add_experiment_flags(p)
    p.add_argument("--out", help="manifest path (default <output_dir>/regions/crop_manifest.csv)")

    p = sub.add_parser("report", help="print a comparison table of evaluation reports")
    p.add_argument("paths", nargs="+", help="report JSON files or run directories")
    p.add_argument("--out", help="also write the table to this file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "synth":
            spec = SyntheticSpec(
                n_subjects=args.subjects, frames_per_subject=args.frames, feature_dim=args.dim,
                class_separation=args.separation, mean_active_run=args.active_run,
                mean_inactive_run=args.inactive_run, landmark_noise=args.landmark_noise,
                seed=args.seed, network=args.network,
            )
            paths = write_synthetic(spec, args.out)
            cfg_path = Path(args.out) / "experiment.json"
            cfg_path.write_text(json.dumps(default_experiment(paths, spec.network), indent=2) + "\n")
            print(f"wrote synthetic data and {cfg_path}")
            return pipeline.EXIT_OK
        if args.command == "report":
            reports = pipeline.load_reports(args.paths)
            if not reports:
                raise ConfigError("no reports found")
            table = comparison_table(reports)
            if args.out:
                Path(args.out).write_text(table, encoding="utf-8")
            print(table, end="")
            return pipeline.EXIT_OK
        cfg = _config_from_args(args)
        if args.command == "train":
            return pipeline.run_train(cfg, workers=args.workers)
        if args.command == "eval":
            return pipeline.run_eval(cfg, args.ensemble)
        if args.command == "regions":
            return pipeline.run_regions(cfg, args.out)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        log.error("%s", exc)
        return pipeline.EXIT_INVALID
    return pipeline.EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
