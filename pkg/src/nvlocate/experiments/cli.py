"""Command-line experiment runner.

Subcommands mirror the studies; every run writes a self-describing
directory (config, data tables, model containers, report, manifest)
under the output root.  The root defaults to ./nvlocate-results and can
be overridden by --out or the NVLOCATE_OUT environment variable.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from ..errors import ConfigError, NvlocateError
from .config import ScenarioConfig
from .report import aggregate_reports

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _load_config(path: str | None) -> ScenarioConfig:
    if path is None:
        return ScenarioConfig()
    return ScenarioConfig.load(path)


def _fast_config(config: ScenarioConfig) -> ScenarioConfig:
    """CI profile: one-decade reduction of samples, repeats, and epochs."""
    scene = dataclasses.replace(
        config.scene, n_samples=max(32, config.scene.n_samples // 10)
    )
    training = dataclasses.replace(
        config.training, epochs=max(50, config.training.epochs // 10)
    )
    scaling = dataclasses.replace(
        config.scaling,
        repeats=max(1, config.scaling.repeats // 5),
        epochs=max(50, config.scaling.epochs // 10),
    )
    tracking = dataclasses.replace(
        config.tracking, n_seeds=max(2, config.tracking.n_seeds // 10)
    )
    microrobot = dataclasses.replace(
        config.microrobot,
        n_samples=max(100, config.microrobot.n_samples // 10),
        single_n_samples=max(100, config.microrobot.single_n_samples // 10),
        epochs=max(50, config.microrobot.epochs // 10),
        single_epochs=max(50, config.microrobot.single_epochs // 10),
        eval_repeats=1,
    )
    return dataclasses.replace(
        config, name=f"{config.name}-fast", scene=scene, training=training,
        scaling=scaling, tracking=tracking, microrobot=microrobot,
    )


def _out_dir(args: argparse.Namespace, leaf: str) -> Path:
    root = args.out or os.environ.get("NVLOCATE_OUT") or "nvlocate-results"
    return Path(root) / leaf


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nvlocate",
        description="Simulated NV-array magnetometry studies",
    )
    parser.add_argument(
        "--config", help="scenario config JSON (defaults built in)"
    )
    parser.add_argument(
        "--out", help="output root (overrides NVLOCATE_OUT)"
    )
    parser.add_argument(
        "--fast", action="store_true",
        help="reduced CI profile (10x fewer samples/epochs/repeats)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-dataset", help="synthesize a labelled dataset")
    gen.add_argument("--samples", type=int, help="override scene.n_samples")

    tr = sub.add_parser("train", help="train a localisation model")
    tr.add_argument("--dataset", help="dataset CSV (generated when omitted)")

    study = sub.add_parser("study", help="run a named study")
    study.add_argument(
        "kind", choices=["static", "scaling", "tracking", "microrobot"]
    )
    study.add_argument(
        "--axis", choices=["time", "dataset", "sensors"],
        help="scaling axis (required for the scaling study)",
    )
    study.add_argument(
        "--model", help="trained model container for the tracking study"
    )

    sub.add_parser("sensitivity-curve", help="CW sensitivity vs field")

    sub.add_parser("report", help="aggregate all reports under the root")

    return parser


def _run(args: argparse.Namespace) -> int:
    config = _load_config(args.config)
    if args.fast:
        config = _fast_config(config)

    if args.command == "gen-dataset":
        from .datasets import generate_dataset

        out = _out_dir(args, "dataset")
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
        dataset, report = generate_dataset(config, n_samples=args.samples)
        dataset.save_csv(out / "dataset.csv")
        print(
            f"dataset: kept {report.n_kept}/{report.n_requested} samples "
            f"-> {out / 'dataset.csv'}"
        )
        return EXIT_OK

    if args.command == "train":
        import numpy as np

        from ..inverse import LabelledDataset, build_model, train
        from .datasets import generate_dataset

        out = _out_dir(args, "train")
        out.mkdir(parents=True, exist_ok=True)
        config.save(out / "config.json")
        if args.dataset:
            dataset = LabelledDataset.load_csv(args.dataset)
        else:
            dataset, _ = generate_dataset(config)
            dataset.save_csv(out / "dataset.csv")
        model = build_model(
            dataset.n_sensors, dataset.out_dim, seed=config.seed,
            dtype=np.dtype(config.training.dtype),
        )
        result = train(
            model, dataset, config.training.to_train_config(seed=config.seed)
        )
        result.model.to_json(out / "model.json")
        result.history_to_csv(out / "history.csv")
        print(
            f"trained: best epoch {result.best_epoch}, "
            f"val loss {min(result.val_loss):.3e} -> {out / 'model.json'}"
        )
        return EXIT_OK

    if args.command == "study":
        if args.kind == "static":
            from .studies import study_static

            report = study_static(config, _out_dir(args, "static"))
        elif args.kind == "scaling":
            if not args.axis:
                raise ConfigError("the scaling study requires --axis")
            from .studies import study_scaling

            report = study_scaling(
                config, args.axis, _out_dir(args, f"scaling-{args.axis}")
            )
        elif args.kind == "tracking":
            from .studies import study_tracking

            report = study_tracking(
                config, _out_dir(args, "tracking"), model=args.model
            )
        else:
            from .microrobot import study_microrobot

            report = study_microrobot(config, _out_dir(args, "microrobot"))
        print(json.dumps(report.metrics, indent=2, sort_keys=True))
        return EXIT_OK

    if args.command == "sensitivity-curve":
        from .studies import study_sensitivity_curve

        report = study_sensitivity_curve(
            config, _out_dir(args, "sensitivity-curve")
        )
        print(json.dumps(report.metrics, indent=2, sort_keys=True))
        return EXIT_OK

    if args.command == "report":
        root = Path(args.out or os.environ.get("NVLOCATE_OUT") or "nvlocate-results")
        summary = aggregate_reports(root)
        payload = json.dumps(summary, indent=2, sort_keys=True)
        (root / "summary.json").write_text(payload)
        print(payload)
        return EXIT_OK

    raise ConfigError(f"unknown command {args.command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NvlocateError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
