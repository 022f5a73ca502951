"""Command-line entry point.

Subcommands map to the run modes: meta-train, evaluate, baseline, report,
class-split, plus a gradcheck self-test. Every subcommand accepts --config
pointing at a JSON file; flags override individual keys. Errors print a
single machine-parsable line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_experiment_config
from .data import load_dataset, split_classes, split_meta_sets
from .errors import FewtsError
from .gradcheck import gradient_check
from .network import build_model, load_checkpoint, save_checkpoint
from .protocol import DEFAULT_FINETUNE, report_from_records, run_protocol
from .training import fixed_task_pool, fs1_train, fs2_train, make_validation_hook, meta_task_stream

GRADCHECK_THRESHOLD = 1e-4


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--data-root", dest="data_root", default=None,
                        help="directory containing the dataset folders")
    parser.add_argument("--split-manifest", dest="split_manifest", default=None,
                        help="JSON manifest of train/validation/test dataset names")
    parser.add_argument("--out-dir", dest="out_dir", default=None,
                        help="directory for run artifacts")
    parser.add_argument("--seed", type=int, default=None, help="run seed")
    parser.add_argument("--k", type=int, default=None, help="shots per class (train split)")
    parser.add_argument("--k-prime", dest="k_prime", type=int, default=None,
                        help="test samples per class")
    parser.add_argument("--tasks-per-dataset", dest="tasks_per_dataset", type=int,
                        default=None, help="tasks sampled per dataset")


def _overrides(args: argparse.Namespace, mode: str) -> dict:
    keys = ("data_root", "split_manifest", "out_dir", "seed", "k", "k_prime",
            "tasks_per_dataset", "methods", "variant", "records", "dataset")
    out = {k: getattr(args, k, None) for k in keys}
    out["mode"] = mode
    return out


def _load_bundles(config: ExperimentConfig, names) -> list:
    root = config.require("data_root")
    return [load_dataset(root, name) for name in names]


def cmd_meta_train(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, _overrides(args, "meta-train"))
    split = split_meta_sets(config.require("split_manifest"))
    train_bundles = _load_bundles(config, split.train)
    model = build_model(config.arch, np.random.default_rng(config.seed))
    stream = meta_task_stream(train_bundles, config.meta.k_train, 0, config.seed)
    hook = None
    if split.validation:
        pool = fixed_task_pool(_load_bundles(config, split.validation),
                               config.meta.k_train, 0, config.seed,
                               config.meta.validation_tasks)
        hook = make_validation_hook(pool, margin=config.meta.margin)
    train = fs1_train if config.variant == "fs1" else fs2_train
    result = train(model, config.meta, stream, validation_hook=hook, run_dir=config.out_dir)
    final = Path(config.out_dir) / "final.ckpt"
    save_checkpoint(result.model, final)
    selected = Path(config.out_dir) / "selected.ckpt"
    save_checkpoint(result.selected, selected)
    print(f"{config.variant}: {config.meta.meta_iterations} meta-iterations, "
          f"{result.total_inner_steps} inner steps, checkpoint {selected}")
    if result.best_validation is not None:
        print(f"selected iteration {result.best_iteration} "
              f"(validation loss {result.best_validation:.6f})")
    return 0


def _run_evaluation(config: ExperimentConfig) -> int:
    split = split_meta_sets(config.require("split_manifest"))
    bundles = _load_bundles(config, split.test)
    models = {}
    for method in config.methods:
        if method in ("fs1", "fs2"):
            if method not in config.checkpoints:
                raise FewtsError(f"method {method!r} needs a checkpoint (config key "
                                 f"checkpoints.{method})")
            models[method] = load_checkpoint(config.checkpoints[method])
    finetune = {**DEFAULT_FINETUNE, **config.finetune}
    records = run_protocol(
        bundles,
        config.methods,
        config.k,
        config.k_prime,
        config.tasks_per_dataset,
        config.seed,
        config.out_dir,
        models=models,
        finetune=finetune,
        scratch_spec=config.arch,
        dtw_config=config.dtw,
    )
    n_records = len(bundles) * config.tasks_per_dataset * len(config.methods)
    print(f"{n_records} records ({len(bundles)} datasets x {config.tasks_per_dataset} tasks "
          f"x {len(config.methods)} methods) -> {records}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, _overrides(args, "evaluate"))
    return _run_evaluation(config)


def cmd_baseline(args: argparse.Namespace) -> int:
    overrides = _overrides(args, "baseline")
    if overrides.get("methods") is None:
        overrides["methods"] = ("ed", "dtw")
    config = load_experiment_config(args.config, overrides)
    for method in config.methods:
        if method not in ("ed", "dtw"):
            raise FewtsError(f"baseline mode runs ed/dtw only, got {method!r}")
    return _run_evaluation(config)


def cmd_report(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, _overrides(args, "report"))
    records = config.records
    if records is None:
        records = Path(config.out_dir) / "records.jsonl"
    paths = report_from_records(records, config.out_dir)
    summary = json.loads(paths["summary"].read_text())
    ranks = ", ".join(f"{m}={summary['mean_ranks'][m]:.3f}" for m in summary["methods"])
    print(f"mean ranks: {ranks}")
    print(f"friedman chi2 {summary['friedman_chi2']:.4f}, "
          f"CD {summary['critical_difference']:.4f} at alpha {summary['alpha']}")
    print(f"report -> {paths['table']}, {paths['summary']}, {paths['cd_plot']}")
    return 0


def cmd_class_split(args: argparse.Namespace) -> int:
    config = load_experiment_config(args.config, _overrides(args, "class-split"))
    name = config.require("dataset")
    bundle = load_dataset(config.require("data_root"), name)
    partition = split_classes(bundle.n_classes, np.random.default_rng(config.seed))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"class_split_{name}.json"
    payload = {
        "dataset": name,
        "seed": config.seed,
        "n_classes": bundle.n_classes,
        "train": list(partition.train),
        "validation": list(partition.validation),
        "test": list(partition.test),
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    print(f"{name}: {bundle.n_classes} classes -> {len(partition.train)} train / "
          f"{len(partition.validation)} validation / {len(partition.test)} test -> {path}")
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    error = gradient_check(h=args.step, seed=args.seed if args.seed is not None else 0)
    print(f"max relative gradient error: {error:.3e}")
    return 0 if error < GRADCHECK_THRESHOLD else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fewts",
        description="Few-shot time series classification toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("meta-train", help="train an embedding initialization")
    _add_common(p)
    p.add_argument("--variant", choices=("fs1", "fs2"), default=None,
                   help="batched (fs1) or sequential (fs2) meta-training")
    p.set_defaults(func=cmd_meta_train)

    p = sub.add_parser("evaluate", help="run the shared-task protocol")
    _add_common(p)
    p.add_argument("--method", dest="methods", action="append", default=None,
                   help="method to evaluate (repeatable): fs1 fs2 resnet ed dtw")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baseline", help="run the classical baselines")
    _add_common(p)
    p.add_argument("--method", dest="methods", action="append", default=None,
                   help="baseline to run (repeatable): ed dtw")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("report", help="aggregate records into a report")
    _add_common(p)
    p.add_argument("--records", default=None, help="records file (default: out-dir/records.jsonl)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("class-split", help="partition one dataset's classes")
    _add_common(p)
    p.add_argument("--dataset", default=None, help="dataset name to partition")
    p.set_defaults(func=cmd_class_split)

    p = sub.add_parser("gradcheck", help="finite-difference self-test")
    p.add_argument("--step", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FewtsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
