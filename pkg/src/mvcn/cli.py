"""Command-line driver: ``synth``, ``pretrain``, ``run`` and ``analyze``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
Set ``FSN_LOG`` (e.g. ``INFO``, ``DEBUG``) to control log verbosity.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ABLATIONS, PipelineConfig, load_config
from .evaluation import (aggregate, aggregate_row, write_aggregate_csv,
                         write_confusion_csv, write_reports_json)
from .experiment import base_accuracy, prepare_splits, pretrain, run_episodes
from .features import (DatasetError, SyntheticConfig, generate_synthetic,
                       load_dataset, save_dataset)
from .normalization import compute_stats
from .training import NumericalError

log = logging.getLogger("mvcn")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


def _pipeline_config(path, seed: int | None) -> PipelineConfig:
    try:
        cfg = PipelineConfig.from_dict(_read_json(path)) if path else PipelineConfig()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config: {exc}") from None
    if seed is not None:
        cfg = dataclasses.replace(cfg, data_seed=seed, init_seed=seed, episode_seed=seed)
    return cfg


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _ablations(text: str) -> list[str]:
    names = [v.strip() for v in text.split(",") if v.strip()]
    bad = [n for n in names if n not in ABLATIONS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown ablation(s) {bad}; choose from {', '.join(ABLATIONS)}")
    return names


def cmd_synth(args) -> int:
    try:
        raw = _read_json(args.config)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = SyntheticConfig(**raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synthetic config: {exc}") from None
    ds = generate_synthetic(cfg)
    save_dataset(ds, args.out, args.format)
    log.info("wrote %s (%d samples, dim %d)", args.out, len(ds), ds.dim)
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = _pipeline_config(args.config, args.seed)
    ds = load_dataset(args.data, args.format)
    splits = prepare_splits(ds, cfg)
    start = time.perf_counter()
    clf = pretrain(splits, cfg)
    save_checkpoint(clf, args.out)
    record = {
        "event": "pretrain",
        "checkpoint": str(args.out),
        "dim": ds.dim,
        "base_classes": clf.base_class_count,
        "train_samples": len(splits.base_train),
        "iterations": cfg.pretrain.iterations,
        "train_accuracy": base_accuracy(clf, splits.base_train),
        "test_accuracy": base_accuracy(clf, splits.base_test),
        "seconds": round(time.perf_counter() - start, 3),
    }
    print(json.dumps(record))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _pipeline_config(args.config, args.seed)
    if args.mode is not None:
        cfg = dataclasses.replace(
            cfg, mode="zero_base" if args.mode == "zero-base" else "undersampled_balanced")
    if args.ways is not None:
        cfg = dataclasses.replace(cfg, n_way=args.ways)
    if args.data is not None:
        ds = load_dataset(args.data, args.format)
    elif cfg.synthetic is not None:
        ds = generate_synthetic(cfg.synthetic)
    else:
        raise UsageError("--data is required unless the config has a 'synthetic' section")
    splits = prepare_splits(ds, cfg)
    if args.checkpoint:
        pretrained, _ = load_checkpoint(args.checkpoint)
        if pretrained.dim != ds.dim or pretrained.base_class_count != len(splits.base_train.classes):
            raise DatasetError("checkpoint does not match the dataset's base classes")
        if not pretrained.is_finite():
            raise NumericalError("checkpoint contains non-finite weights")
    else:
        pretrained = pretrain(splits, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    shots = args.shots or [cfg.k_shot]
    rows, summary = [], {"config": cfg.to_dict(), "episodes": args.episodes, "results": []}
    for shot in shots:
        for name in args.ablation:
            run_cfg = dataclasses.replace(cfg.with_ablation(name), k_shot=shot)
            if args.mode == "balanced":
                run_cfg = dataclasses.replace(run_cfg, mode="undersampled_balanced")
            start = time.perf_counter()
            reports = run_episodes(splits, run_cfg, pretrained, args.episodes, args.workers)
            agg = aggregate(reports)
            tag = f"{name}_{shot}shot"
            rows.append(aggregate_row(name, shot, agg))
            write_reports_json(reports, out / f"episodes_{tag}.json",
                               {"ablation": name, "shot": shot})
            write_confusion_csv(sum(r.confusion for r in reports), out / f"confusion_{tag}.csv")
            summary["results"].append({"ablation": name, "shot": shot, **agg.to_dict()})
            log.info("%s: %d episodes in %.2fs, all=%.2f", tag, len(reports),
                     time.perf_counter() - start, agg.mean["all_acc_mean"])
    write_aggregate_csv(rows, out / "aggregate.csv")
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    return EXIT_OK


def cmd_analyze(args) -> int:
    try:
        clf, _ = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DatasetError(f"checkpoint not found: {args.checkpoint}") from None
    if not clf.is_finite():
        raise NumericalError("checkpoint contains non-finite weights")
    stats = compute_stats(clf)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stats.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["class_id", "partition", "mu", "sigma", "norm"])
        for i in range(clf.n_classes):
            writer.writerow([clf.class_map[i], stats.partition(i), repr(float(stats.mu[i])),
                             repr(float(stats.sigma[i])), repr(float(stats.norms[i]))])
    with open(out / "summary.json", "w") as fh:
        json.dump(stats.summary(), fh, indent=1)
        fh.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mvcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic feature dataset")
    p.add_argument("--config", required=True, help="JSON SyntheticConfig")
    p.add_argument("--out", required=True, help="output dataset file")
    p.add_argument("--format", choices=("binary", "text"), help="default: by suffix")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="train the base classifier")
    p.add_argument("--data", required=True, help="dataset file (FSF1 or CSV)")
    p.add_argument("--config", help="JSON PipelineConfig")
    p.add_argument("--out", required=True, help="output FSC1 checkpoint")
    p.add_argument("--format", choices=("binary", "text"))
    p.add_argument("--seed", type=int, help="override data/init/episode seeds")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run episodes for one or more ablations")
    p.add_argument("--data", help="dataset file (FSF1 or CSV)")
    p.add_argument("--config", help="JSON PipelineConfig")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--checkpoint", help="pretrained FSC1 checkpoint (else pretrain)")
    p.add_argument("--episodes", type=int, default=600)
    p.add_argument("--shots", type=_int_list, help="comma-separated shot counts")
    p.add_argument("--ways", type=int, help="novel classes per episode")
    p.add_argument("--seed", type=int, help="override data/init/episode seeds")
    p.add_argument("--ablation", type=_ablations, default=["mc+vb+lo"],
                   help=f"comma-separated, from: {'|'.join(ABLATIONS)}")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--mode", choices=("zero-base", "balanced"))
    p.add_argument("--format", choices=("binary", "text"))
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="per-class weight statistics of a checkpoint")
    p.add_argument("--checkpoint", required=True, help="FSC1 checkpoint")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("FSN_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if getattr(args, "episodes", 1) < 1 or getattr(args, "workers", 1) < 1:
        print("mvcn: error: --episodes and --workers must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"mvcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"mvcn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, CheckpointError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"mvcn: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
