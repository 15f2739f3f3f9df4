"""
Command-line entry point: synth, select, train, eval and summarize subcommands.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""

import csv
import sys
import logging
import argparse
from pathlib import Path
from typing import Any, Callable, Dict, List, NoReturn, Optional

from pydantic import ValidationError

from .colormap import ColorMap, cityscapes_colormap, load_colormap
from .embedding_workers import build_backbone
from .errors import ConfigError, HybridTranslateError, InvalidInputError, MissingFileError
from .evaluation import evaluate, summarize_reports
from .manifest import load_manifest
from .selection import load_selection, save_selection, select_paired_samples
from .settings_manager import BackboneConfig, RunConfig, SettingsManager
from .synth import synth_toy_dataset
from .trainer import Trainer

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

# random projections stay small; the pretrained backbone uses its native resolution
BACKBONE_DEFAULTS: Dict[str, Dict[str, int]] = {
    "resnet50": {"input_size": 224, "dim": 2048},
    "random_projection": {"input_size": 32, "dim": 256},
}


class CliArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE instead of argparse's default 2."""

    def error(self, message: str) -> NoReturn:
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# --- commands ---
def cmd_synth(args: argparse.Namespace) -> int:
    manifest = synth_toy_dataset(
        n_paired=args.n_paired,
        n_unpaired=args.n_unpaired,
        image_size=args.size,
        seed=args.seed,
        out_dir=args.out,
        n_test=args.n_test,
    )
    n_files = 2 * (manifest.n_paired + manifest.n_unpaired + args.n_test)
    logging.info(f"synth: {n_files} images, manifest at {Path(args.out) / 'manifest.json'}")
    return EXIT_OK


def cmd_select(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    backbone = None
    if args.strategy == "kmedoids":
        defaults = BACKBONE_DEFAULTS[args.backbone]
        cfg = BackboneConfig(
            kind=args.backbone,
            input_size=args.backbone_size or defaults["input_size"],
            dim=defaults["dim"],
            seed=args.seed,
            batch_size=args.batch_size,
        )
        backbone = build_backbone(cfg, device=args.device or "cpu")
    result = select_paired_samples(
        manifest,
        args.budget,
        backbone,
        args.seed,
        strategy=args.strategy,
        pool=args.pool,
        batch_size=args.batch_size,
    )
    save_selection(result, args.out)
    logging.info(f"select: {result.selected_ids} -> {args.out}")
    return EXIT_OK


def _train_overrides(args: argparse.Namespace) -> Dict[str, Any]:
    weights = {
        name: value
        for name, value in (
            ("lambda1", args.lambda1),
            ("lambda2", args.lambda2),
            ("lambda3", args.lambda3),
            ("lambda4", args.lambda4),
        )
        if value is not None
    }
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "epochs_total": args.epochs,
        "iteration_budget": args.iterations,
        "lr_base": args.lr,
        "pool_capacity": args.pool_size,
        "checkpoint_interval": args.checkpoint_interval,
        "max_steps": args.max_steps,
        "num_workers": args.num_workers,
        "device": args.device,
        "disable_cycle": True if args.no_cycle else None,
        "disable_identity": True if args.no_idt else None,
        "balanced": False if args.unbalanced else None,
    }
    if weights:
        overrides["weights"] = weights
    return overrides


def cmd_train(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    if args.unpaired_only and args.selection:
        raise ConfigError("--unpaired-only and --selection exclude each other")
    selection = load_selection(args.selection) if args.selection else None
    unpaired_selection = load_selection(args.unpaired_selection) if args.unpaired_selection else None
    run_info: Optional[Dict[str, Any]] = None
    if args.unpaired_only:
        manifest = manifest.unpaired_only()
        run_info = {"strategy": "unpaired", "budget": 0}

    overrides = _train_overrides(args)
    if args.resume:
        # the stop step of the interrupted run does not carry over
        resume_overrides = {k: v for k, v in overrides.items() if k in ("num_workers", "device") and v is not None}
        resume_overrides["max_steps"] = args.max_steps
        trainer = Trainer.resume(
            args.resume,
            manifest,
            args.out,
            selection=selection,
            overrides=resume_overrides,
            unpaired_selection=unpaired_selection,
        )
    else:
        config = SettingsManager.load_training_config(args.config, args.profile)
        config = SettingsManager.apply_overrides(config, overrides)
        trainer = Trainer(
            config,
            manifest,
            args.out,
            selection=selection,
            run_info=run_info,
            unpaired_selection=unpaired_selection,
        )
        Path(args.out).mkdir(parents=True, exist_ok=True)
        SettingsManager.save_training_config(config, str(Path(args.out) / "train-settings.json"))

    run_config = RunConfig(
        command="train",
        manifest=str(args.manifest),
        selection=args.selection,
        unpaired_selection=args.unpaired_selection,
        checkpoint=args.resume,
        out_dir=str(args.out),
        profile=trainer.config.profile,
        seed=trainer.config.seed,
        overrides={k: v for k, v in overrides.items() if v is not None},
    )
    SettingsManager.save_run_config(run_config, Path(args.out) / "run.json")

    result = trainer.run()
    checkpoint = result.final_checkpoint or result.latest_checkpoint
    if args.plot:
        from .plots import plot_training_log

        plot_training_log(Path(args.out) / "train_log.csv", Path(args.out) / "training_curves.png")
    logging.info(f"train: {len(result.history)} steps this run, checkpoint {checkpoint}")
    return EXIT_OK


def _resolve_colormap(value: Optional[str]) -> Optional[ColorMap]:
    if value is None:
        return None
    if value == "cityscapes":
        return cityscapes_colormap()
    return load_colormap(value)


def cmd_eval(args: argparse.Namespace) -> int:
    manifest = load_manifest(args.manifest)
    out = Path(args.out)
    report = evaluate(
        args.checkpoint,
        manifest,
        args.protocol,
        colormap=_resolve_colormap(args.colormap),
        out=out,
        direction=args.direction,
        save_images=args.save_images,
        threshold=args.threshold,
        device=args.device or "cpu",
    )
    if args.plot:
        from .plots import plot_report

        plot_report(report, out.parent / f"{out.stem}_plots")
    for name, value in report.aggregate.items():
        logging.info(f"eval: {name} = {value:.4f}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    rows = summarize_reports(args.reports)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics = sorted({m for row in rows for m in row.mean})
    csv_path = out_dir / "summary.csv"
    with open(csv_path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["strategy", "n_paired", "n_runs"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")])
        for row in rows:
            writer.writerow(
                [row.strategy, row.n_paired, row.n_runs]
                + [f"{d.get(m, float('nan')):.6f}" for m in metrics for d in (row.mean, row.std)]
            )
    if args.plot:
        from .plots import plot_summary

        plot_summary(rows, out_dir / "summary.png")
    logging.info(f"summarize: {len(rows)} groups from {len(args.reports)} reports -> {csv_path}")
    return EXIT_OK


# --- parser ---
def build_parser() -> argparse.ArgumentParser:
    parser = CliArgumentParser(
        prog="hybrid-translate",
        description="Hybrid paired/unpaired image-to-image translation.",
    )
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a procedural toy dataset")
    p.add_argument("--n-paired", type=int, required=True)
    p.add_argument("--n-unpaired", type=int, required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-test", type=int, default=0, help="held-out pairs written to test_manifest.json")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select", help="choose which paired samples keep their annotation")
    p.add_argument("--manifest", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--strategy", choices=["kmedoids", "random"], default="kmedoids")
    p.add_argument("--pool", choices=["paired", "unpaired"], default="paired", help="candidates: paired samples or unpaired X images")
    p.add_argument("--backbone", choices=sorted(BACKBONE_DEFAULTS), default="resnet50")
    p.add_argument("--backbone-size", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=BackboneConfig().batch_size, help="images per feature-extraction batch")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--device", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", help="train both generators and discriminators")
    p.add_argument("--manifest", required=True)
    p.add_argument("--selection", default=None)
    p.add_argument("--unpaired-selection", default=None, help="selection over unpaired X images (select --pool unpaired)")
    p.add_argument("--unpaired-only", action="store_true", help="demote every pair (unpaired baseline)")
    p.add_argument("--config", default=None, help="JSON settings file (default: train-settings.json if present)")
    p.add_argument("--profile", choices=["desk", "paper"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None, help="iteration budget used when --epochs is absent")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--lambda1", type=float, default=None)
    p.add_argument("--lambda2", type=float, default=None)
    p.add_argument("--lambda3", type=float, default=None)
    p.add_argument("--lambda4", type=float, default=None)
    p.add_argument("--pool-size", type=int, default=None)
    p.add_argument("--no-cycle", action="store_true")
    p.add_argument("--no-idt", action="store_true")
    p.add_argument("--unbalanced", action="store_true", help="skip replication of the paired samples")
    p.add_argument("--checkpoint-interval", type=int, default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--num-workers", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint written by a previous run")
    p.add_argument("--plot", action="store_true", help="write training_curves.png from the step log")
    p.add_argument("--device", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="translate a manifest and score the outputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=["segmentation", "maps"], required=True)
    p.add_argument("--colormap", default=None, help="colormap file, or 'cityscapes'")
    p.add_argument("--direction", choices=["x2y", "y2x"], default="x2y")
    p.add_argument("--threshold", type=float, default=20.0)
    p.add_argument("--save-images", default=None)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--device", default=None)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("summarize", help="aggregate reports by strategy and paired count")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", action="store_true")
    p.set_defaults(func=cmd_summarize)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.getLogger().setLevel(args.log_level)
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except (ConfigError, InvalidInputError, MissingFileError, ValidationError) as e:
        logging.error(f"{args.command}: {e}")
        return EXIT_USAGE
    except (HybridTranslateError, OSError, RuntimeError) as e:
        logging.error(f"{args.command} failed: {e}", exc_info=True)
        return EXIT_RUNTIME
