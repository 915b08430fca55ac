"""Command-line entry point wiring simulation, training, and evaluation.

Every artifact-producing run writes a ``run.json`` provenance record
(command, resolved config, seeds, version) into its output directory;
re-running from that record reproduces the outputs bit for bit.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, format_config, load_config
from .dataset import GenerationConfig, generate_dataset, load_dataset
from .deconv import DEFAULT_SUPPORT, FULL_SUPPORT, ForwardOperator, TikhonovConfig, solve_tikhonov_cg
from .diffnet import CorruptCheckpointError
from .evaluation import evaluate_model, export_latents, format_summary_table, load_bundle
from .storage import BlobFormatError, write_blob
from .training import MAX_EPOCHS, TrainRunConfig, infer_batch, train_onestep, train_step1, train_step2

__all__ = ["main", "run_command"]

SUBCOMMANDS = (
    "gen",
    "train-step1",
    "train-step2",
    "train-onestep",
    "infer",
    "deconv",
    "eval",
    "export-latents",
)


@dataclass(frozen=True)
class CommandSpec:
    """What was asked: subcommand, config source, overrides, output directory."""

    subcommand: str
    config_path: str | None
    overrides: tuple[str, ...]
    out_dir: str


def _write_run_record(spec: CommandSpec, config: dict, seeds: dict) -> None:
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": spec.subcommand,
        "config": config,
        "config_path": spec.config_path,
        "overrides": list(spec.overrides),
        "seeds": seeds,
        "version": f"qpiextract-{__version__}",
    }
    (out / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")


def _echo_config(config: dict) -> None:
    print("# resolved configuration")
    print(format_config(config), end="")


def _training_config(step: str, config: dict) -> TrainRunConfig:
    epochs = config["epochs"] if config["epochs"] > 0 else MAX_EPOCHS[step]
    return TrainRunConfig(
        step=step,
        epochs=epochs,
        batch_size=config["batch"],
        learning_rate=config["lr"],
        seed=config["seed"],
        alpha=config["alpha"],
        kl_weight=config["kl_weight"],
        fold_for_a0=config["fold_for_a0"],
        val_fraction=config["val_fraction"],
        patience=config["patience"],
        encoder_y_init=config["encoder_y_init"],
    )


def _cmd_gen(args) -> int:
    config = GenerationConfig(
        kernel_count=args.kernels,
        observations_per_kernel=args.obs,
        master_seed=args.seed,
    )
    generate_dataset(config, out_dir=args.out)
    spec = CommandSpec("gen", None, (), args.out)
    _write_run_record(
        spec,
        {"kernels": args.kernels, "obs": args.obs, "seed": args.seed},
        {"master_seed": args.seed},
    )
    print(f"dataset written to {args.out}")
    return 0


def _cmd_train(step: str, args) -> int:
    config = load_config(args.config, tuple(args.override))
    dataset = load_dataset(args.data)
    run_config = _training_config(step, config)
    config = dict(config, epochs=run_config.epochs)
    _echo_config(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / f"{step}.qpiw"
    metrics_path = out / "metrics.csv"
    if step == "step1":
        result = train_step1(
            dataset, run_config, checkpoint_path=checkpoint_path, metrics_path=metrics_path
        )
    elif step == "step2":
        step1_path = Path(args.step1)
        if not step1_path.is_file():
            raise FileNotFoundError(
                f"step-1 checkpoint not found: {step1_path}; run train-step1 first"
            )
        result = train_step2(
            dataset,
            step1_path,
            run_config,
            checkpoint_path=checkpoint_path,
            metrics_path=metrics_path,
        )
    else:
        result = train_onestep(
            dataset, run_config, checkpoint_path=checkpoint_path, metrics_path=metrics_path
        )
    spec = CommandSpec(f"train-{step}", args.config, tuple(args.override), args.out)
    _write_run_record(spec, config, {"seed": run_config.seed})
    stopped = " (stopped early)" if result.stopped_early else ""
    print(
        f"best epoch {result.best_epoch}: {result.checkpoint_metadata['selection']}="
        f"{result.best_value:.6g}{stopped}; checkpoint {checkpoint_path}"
    )
    return 0


def _cmd_infer(args) -> int:
    dataset = load_dataset(args.data)
    if args.split not in dataset.splits:
        raise ValueError(f"unknown split {args.split!r}, expected one of {tuple(dataset.splits)}")
    bundle = load_bundle(args.checkpoint)
    split = dataset.splits[args.split]
    predictions = infer_batch(bundle, split.observations, split.maps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blob_path = out / f"predictions_{args.split}.qpi"
    write_blob(blob_path, predictions.astype(np.float32))
    spec = CommandSpec("infer", None, (), args.out)
    _write_run_record(
        spec,
        {"checkpoint": str(args.checkpoint), "split": args.split, "data": str(args.data)},
        {},
    )
    print(f"{len(split)} predictions written to {blob_path}")
    return 0


def _cmd_deconv(args) -> int:
    config = load_config(args.config, tuple(args.override))
    _echo_config(config)
    dataset = load_dataset(args.data)
    if not 0 <= args.kernel_id < dataset.kernel_count:
        raise ValueError(
            f"kernel id {args.kernel_id} outside dataset range 0..{dataset.kernel_count - 1}"
        )
    maps, observations = [], []
    for split in dataset.splits.values():
        for idx, meta in enumerate(split.metas):
            if meta.kernel_id == args.kernel_id and len(maps) < config["obs_per_solve"]:
                maps.append(split.maps[idx].astype(np.float64))
                observations.append(split.observations[idx].astype(np.float64))
    support = DEFAULT_SUPPORT if config["support"] == 64 else FULL_SUPPORT
    op = ForwardOperator(np.stack(maps), support=support)
    solver_config = TikhonovConfig(
        lam=config["lam"],
        max_iterations=config["max_iterations"],
        tolerance=config["tolerance"],
    )
    result = solve_tikhonov_cg(op, np.stack(observations), solver_config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    blob_path = out / f"deconv_kernel_{args.kernel_id}.qpi"
    write_blob(blob_path, result.kernel.astype(np.float32))
    report = [
        f"kernel_id: {args.kernel_id}",
        f"observations: {len(maps)}",
        f"support: {support[0]}x{support[1]}",
        f"lam: {config['lam']!r}",
        f"iterations: {result.iterations}",
        f"residual: {result.residual!r}",
        f"converged: {result.converged}",
    ]
    (out / "convergence.txt").write_text("\n".join(report) + "\n")
    spec = CommandSpec("deconv", args.config, tuple(args.override), args.out)
    _write_run_record(spec, dict(config, kernel_id=args.kernel_id), {})
    print("\n".join(report))
    if not result.converged:
        print("error: solver did not converge within max_iterations", file=sys.stderr)
        return 1
    print(f"estimate written to {blob_path}")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    bundles = {"two_step": args.two_step, "one_step": args.one_step}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for method in args.method:
        if method != "deconv" and bundles[method] is None:
            raise ValueError(f"method {method} needs --{method.replace('_', '-')} CHECKPOINT")
        for split in args.split:
            csv_path = out / f"eval_{method}_{split}.csv"
            records.append(
                evaluate_model(
                    method,
                    bundles.get(method),
                    dataset,
                    split,
                    csv_path=csv_path,
                )
            )
    table = format_summary_table(records)
    (out / "summary.txt").write_text(table)
    spec = CommandSpec("eval", None, (), args.out)
    _write_run_record(
        spec,
        {
            "methods": list(args.method),
            "splits": list(args.split),
            "two_step": str(args.two_step) if args.two_step else None,
            "one_step": str(args.one_step) if args.one_step else None,
        },
        {},
    )
    print(table, end="")
    return 0


def _cmd_export_latents(args) -> int:
    dataset = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "latents.csv"
    count = export_latents(
        args.checkpoint, dataset, args.split, csv_path, component=args.component
    )
    spec = CommandSpec("export-latents", None, (), args.out)
    _write_run_record(
        spec,
        {"checkpoint": str(args.checkpoint), "split": args.split, "component": args.component},
        {},
    )
    print(f"{count} rows written to {csv_path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qpiextract",
        description="Simulate multi-scatterer observations and extract interference kernels.",
        epilog="QPI_NUM_THREADS caps worker parallelism (default: machine core count).",
    )
    parser.add_argument("--version", action="version", version=f"qpiextract-{__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    gen = sub.add_parser("gen", help="generate a dataset directory")
    gen.add_argument("--kernels", type=int, required=True)
    gen.add_argument("--obs", type=int, required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)

    def add_common(p, config_keys=True):
        p.add_argument("--data", required=True, help="dataset directory")
        p.add_argument("--out", required=True, help="output directory")
        if config_keys:
            p.add_argument("--config", default=None, help="key=value config file")
            p.add_argument(
                "override",
                nargs="*",
                default=[],
                metavar="key=value",
                help="config overrides",
            )

    step1 = sub.add_parser("train-step1", help="train the kernel autoencoder")
    add_common(step1)
    step2 = sub.add_parser("train-step2", help="align the observation encoder to kernel codes")
    step2.add_argument("--step1", required=True, help="step-1 checkpoint path")
    add_common(step2)
    onestep = sub.add_parser("train-onestep", help="train the direct observation-to-kernel baseline")
    add_common(onestep)

    infer = sub.add_parser("infer", help="predict kernels for every sample of a split")
    infer.add_argument("--checkpoint", required=True)
    infer.add_argument("--split", default="id_test")
    add_common(infer, config_keys=False)

    deconv = sub.add_parser("deconv", help="classical Tikhonov recovery for one kernel")
    deconv.add_argument("--kernel-id", type=int, required=True)
    add_common(deconv)

    evalp = sub.add_parser("eval", help="evaluate methods over splits")
    evalp.add_argument("--method", action="append", required=True, choices=["two_step", "one_step", "deconv"])
    evalp.add_argument("--split", action="append", required=True, choices=["train", "id_test", "ood_test"])
    evalp.add_argument("--two-step", dest="two_step", default=None, help="two-step checkpoint")
    evalp.add_argument("--one-step", dest="one_step", default=None, help="one-step checkpoint")
    add_common(evalp, config_keys=False)

    export = sub.add_parser("export-latents", help="write mean latents as CSV")
    export.add_argument("--checkpoint", required=True)
    export.add_argument("--split", required=True)
    export.add_argument("--component", default="encoder_k", choices=["encoder_k", "encoder_y"])
    add_common(export, config_keys=False)
    return parser


def run_command(argv: list[str] | None = None) -> int:
    """Dispatch one subcommand; 0 success, 1 domain error, 2 usage error."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        if args.subcommand == "gen":
            return _cmd_gen(args)
        if args.subcommand == "train-step1":
            return _cmd_train("step1", args)
        if args.subcommand == "train-step2":
            return _cmd_train("step2", args)
        if args.subcommand == "train-onestep":
            return _cmd_train("onestep", args)
        if args.subcommand == "infer":
            return _cmd_infer(args)
        if args.subcommand == "deconv":
            return _cmd_deconv(args)
        if args.subcommand == "eval":
            return _cmd_eval(args)
        if args.subcommand == "export-latents":
            return _cmd_export_latents(args)
        raise AssertionError(f"unhandled subcommand {args.subcommand!r}")
    except (
        ConfigError,
        ValueError,
        FileNotFoundError,
        KeyError,
        RuntimeError,
        BlobFormatError,
        CorruptCheckpointError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command())
