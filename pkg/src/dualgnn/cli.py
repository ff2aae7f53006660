"""Command-line interface.

Subcommands:

``make-split``
    Sample a class-imbalanced train/validation/test split for a dataset
    directory and save it as JSON.  Either give ``--num-minority`` and
    ``--rho`` (the standard protocol) or explicit per-class training counts
    via ``--counts``.
``train``
    Train a model and write ``epochs.jsonl`` (one JSON record per epoch),
    ``checkpoint.bin`` (best weights plus the cluster assignments of the
    semantic adjacencies), and ``summary.json`` (resolved configuration,
    configuration hash, metrics, best epoch, wall time) to the run
    directory.  The summary is also printed to stdout.
``ablate``
    Same as ``train`` but a named model variant is required.
``eval``
    Score a saved checkpoint on the validation and test nodes of a split
    and print the metrics as JSON.
``grad-check``
    Run the finite-difference gradient checks over every differentiable
    operation; prints one line per check and exits non-zero on any failure.

The run directory for ``train``/``ablate`` is ``--out`` if given, otherwise
``$DUALGNN_OUT/<config-hash>-seed<seed>``.  All files are written
atomically (temp file + rename), so concurrent runs with distinct output
directories never interleave.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from .data import (SplitSpec, load_dataset, make_explicit_split,
                   make_imbalanced_split)
from .errors import DualGnnError
from .gradcheck import standard_checks
from .ioutil import atomic_write_json, canonical_json, config_hash
from .trainer import (VARIANTS, apply_variant, evaluate, train,
                      train_config_from_dict, train_config_to_dict)

OUT_ENV_VAR = "DUALGNN_OUT"


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualgnn",
        description="Class-imbalanced node classification with dual "
                    "structural/semantic connectivity encoders.")
    parser.add_argument("--verbose", action="store_true",
                        help="log progress at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    p_split = sub.add_parser(
        "make-split", help="sample an imbalanced split and save it as JSON")
    p_split.add_argument("--dataset", required=True,
                         help="dataset directory")
    p_split.add_argument("--out", required=True, help="output split JSON")
    p_split.add_argument("--seed", type=int, required=True)
    group = p_split.add_mutually_exclusive_group(required=True)
    group.add_argument("--num-minority", type=int,
                       help="number of minority classes (paired with --rho)")
    group.add_argument("--counts", type=_int_list,
                       help="explicit per-class training counts, "
                            "comma-separated, one per class")
    p_split.add_argument("--rho", type=float,
                         help="imbalance ratio: minority training count = "
                              "round(majority count * rho)")
    p_split.add_argument("--minority-classes", type=_int_list,
                         help="override which classes are minority "
                              "(default: the highest class indices)")
    p_split.add_argument("--val-per-class", type=int, default=25)
    p_split.add_argument("--test-per-class", type=int, default=55)

    for name, help_text in (("train", "train a model and write run files"),
                            ("ablate", "train a named model variant")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--dataset", required=True, help="dataset directory")
        p.add_argument("--split", required=True, help="split JSON file")
        p.add_argument("--config", help="training config JSON file "
                                        "(defaults used when omitted)")
        p.add_argument("--seed", type=int,
                       help="override the config's random seed")
        p.add_argument("--variant", required=(name == "ablate"),
                       choices=sorted(VARIANTS),
                       help="model variant to train")
        p.add_argument("--out",
                       help=f"run directory (default: "
                            f"${OUT_ENV_VAR}/<config-hash>-seed<seed>)")

    p_eval = sub.add_parser(
        "eval", help="score a checkpoint on a split's val/test nodes")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--split", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", help="config the checkpoint was "
                                         "trained with (defaults if omitted)")
    p_eval.add_argument("--out", help="also write the metrics JSON here")

    p_grad = sub.add_parser(
        "grad-check", help="finite-difference checks for every "
                           "differentiable op")
    p_grad.add_argument("--seed", type=int, default=0)

    return parser


def _load_config(args):
    """Resolve the training configuration from file, variant and seed
    overrides, in that order."""
    data = {}
    if args.config:
        with open(args.config, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        if not isinstance(data, dict):
            raise DualGnnError(f"{args.config}: config must be a JSON "
                               f"object")
    cfg = train_config_from_dict(data)
    variant = getattr(args, "variant", None)
    if variant:
        cfg = apply_variant(cfg, variant)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg, variant


def _resolve_out_dir(args, hash_text: str, seed: int) -> str:
    if args.out:
        return args.out
    base = os.environ.get(OUT_ENV_VAR)
    if not base:
        raise DualGnnError(
            f"no output directory: pass --out or set ${OUT_ENV_VAR}")
    return os.path.join(base, f"{hash_text}-seed{seed}")


def _cmd_make_split(args) -> int:
    dataset = load_dataset(args.dataset)
    if args.counts is not None:
        split = make_explicit_split(
            dataset, args.counts, args.seed,
            val_per_class=args.val_per_class,
            test_per_class=args.test_per_class)
    else:
        if args.rho is None:
            raise DualGnnError("--num-minority requires --rho")
        split = make_imbalanced_split(
            dataset, args.num_minority, args.rho, args.seed,
            val_per_class=args.val_per_class,
            test_per_class=args.test_per_class,
            minority_classes=args.minority_classes)
    split.save(args.out)
    counts = [int(c) for c in np.bincount(dataset.labels[split.train_ids],
                                          minlength=dataset.num_classes)]
    print(canonical_json({
        "split": args.out,
        "train_per_class": counts,
        "train": int(split.train_ids.size),
        "val": int(split.val_ids.size),
        "test": int(split.test_ids.size),
        "minority": split.minority,
        "rho": split.rho,
        "seed": split.seed,
    }))
    return 0


def _cmd_train(args, command: str) -> int:
    cfg, variant = _load_config(args)
    resolved = train_config_to_dict(cfg)
    hash_text = config_hash(resolved)
    out_dir = _resolve_out_dir(args, hash_text, cfg.seed)
    dataset = load_dataset(args.dataset)
    split = SplitSpec.load(args.split)

    result = train(dataset, split, cfg, out_dir=out_dir)

    summary = {
        "command": command,
        "dataset": os.path.abspath(args.dataset),
        "dataset_name": dataset.name,
        "split": os.path.abspath(args.split),
        "split_minority": split.minority,
        "split_rho": split.rho,
        "split_seed": split.seed,
        "variant": variant,
        "seed": cfg.seed,
        "config": resolved,
        "config_hash": hash_text,
        "best_epoch": result.best_epoch,
        "best_val_balanced_accuracy": result.best_val_balanced_accuracy,
        "epochs_run": result.epochs_run,
        "wall_time_sec": result.wall_time_sec,
        "metrics": result.test_metrics.to_dict(),
        "quotas": result.quotas,
        "pseudo_pool_size": result.pseudo_pool_size,
        "out_dir": os.path.abspath(out_dir),
    }
    atomic_write_json(os.path.join(out_dir, "summary.json"), summary)
    print(canonical_json(summary))
    return 0


def _cmd_eval(args) -> int:
    cfg, _ = _load_config(args)
    dataset = load_dataset(args.dataset)
    split = SplitSpec.load(args.split)
    reports = evaluate(dataset, split, cfg, args.checkpoint)
    payload = {
        "checkpoint": os.path.abspath(args.checkpoint),
        "val": reports["val"].to_dict(),
        "test": reports["test"].to_dict(),
    }
    if args.out:
        atomic_write_json(args.out, payload)
    print(canonical_json(payload))
    return 0


def _cmd_grad_check(args) -> int:
    results = standard_checks(seed=args.seed)
    failures = 0
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        failures += 0 if res.passed else 1
        print(f"{status} {res.name}: max_rel_err={res.max_rel_err:.3e} "
              f"(tolerance {res.tolerance:.1e})")
    print(f"{len(results) - failures}/{len(results)} gradient checks passed")
    return 0 if failures == 0 else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        if args.command == "make-split":
            return _cmd_make_split(args)
        if args.command in ("train", "ablate"):
            return _cmd_train(args, args.command)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "grad-check":
            return _cmd_grad_check(args)
        raise AssertionError(f"unhandled command {args.command!r}")
    except DualGnnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
