# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""CLI interface for training, evaluating and running the referring COD model."""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

import torch
import torch.nn.functional as F
from PIL import Image

from .config import RunConfig
from .dataset import EpisodeDataset, Split, load_index, read_image, read_mask, write_mask
from .errors import ConfigError, DataError, NumericError, RefCODError
from .evaluation import evaluate_dataset, format_table, write_report
from .model import R2CNet, build_model
from .stats import collect_stats, format_summary, summarize, write_stats_csv
from .toydata import generate_toy_dataset
from .training import (
    CHECKPOINT_FILE,
    Trainer,
    load_checkpoint,
    restore_model,
    seed_everything,
)

STATS_FILE = "stats.csv"
PREDICTION_FILE = "prediction.png"

# Exit code per error category; anything else derived from RefCODError exits with 1
EXIT_CODES: list[tuple[type[RefCODError], int]] = [
    (ConfigError, 2),
    (DataError, 3),
    (NumericError, 4),
]


def exit_code_for(error: RefCODError) -> int:
    """Map an error to the process exit code of its category."""
    for error_class, code in EXIT_CODES:
        if isinstance(error, error_class):
            return code
    return 1


def parse_args(argv: Sequence[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", metavar="FILE", help="YAML configuration file")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override a configuration key, e.g. --set data.k=3 (repeatable)",
    )
    common.add_argument("--verbose", "-v", action="store_true", help="Enable debug logging")
    common.add_argument("--no-progress", action="store_true", help="Hide progress bars")

    parser = argparse.ArgumentParser(
        prog="refcod",
        description="Reference-guided camouflaged object detection.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""\
Examples:
  # Generate the toy dataset and train on it
  refcod toygen --set data.root=data/toy
  refcod train --set data.root=data/toy --set data.image_size=64 --set model.c_d=16

  # Evaluate with 3 referring images per episode
  refcod eval --set data.root=data/toy --set data.image_size=64 --set model.c_d=16 --k 3

  # Segment one image given two references
  refcod predict scene.jpg --ref a.jpg --ref b.jpg --set reference.provider=constant
""",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[common], help="Train a model")

    p_eval = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", metavar="FILE", help="Default: <output.dir>/checkpoint.bin")
    p_eval.add_argument("--k", type=int, metavar="N", help="Referring images per episode")
    p_eval.add_argument(
        "--split", choices=[s.value for s in Split], default=Split.TEST.value, help="Split"
    )

    p_predict = sub.add_parser("predict", parents=[common], help="Segment a single image")
    p_predict.add_argument("image", help="Camouflaged image")
    p_predict.add_argument(
        "--ref", action="append", default=[], metavar="FILE", help="Referring image (repeatable)"
    )
    p_predict.add_argument(
        "--ref-mask",
        action="append",
        default=[],
        metavar="FILE",
        help="Mask of the matching --ref (needed by the gt provider)",
    )
    p_predict.add_argument(
        "--checkpoint", metavar="FILE", help="Default: <output.dir>/checkpoint.bin"
    )
    p_predict.add_argument(
        "--out", "-o", metavar="FILE", help="Default: <output.dir>/prediction.png"
    )

    sub.add_parser("stats", parents=[common], help="Compute dataset attribute statistics")

    p_toygen = sub.add_parser("toygen", parents=[common], help="Generate the toy dataset")
    p_toygen.add_argument("--out", "-o", metavar="DIR", help="Default: data.root")

    return parser.parse_args(argv)


def cmd_train(config: RunConfig, progress: bool = True) -> int:
    """Train on the train split and write checkpoint, loss log and config to output.dir."""
    seed_everything(config.train.seed, config.train.deterministic)
    index = load_index(config.data.root, Split.TRAIN)
    dataset = EpisodeDataset(
        index,
        config.data.k,
        config.data.image_size,
        seed=config.train.seed,
        with_ref_masks=config.provider_spec[0] == "gt" and config.data.k > 0,
    )
    trainer = Trainer(build_model(config), config)
    history = trainer.fit(dataset, progress=progress)
    path = trainer.save(config.output.dir)
    print(f"Trained {trainer.step} steps, final loss {history[-1]['total']:.4f}")
    print(f"Checkpoint: {path}")
    return 0


def _load_trained_model(
    config: RunConfig, checkpoint: str | None
) -> tuple[R2CNet, RunConfig]:
    """Rebuild the checkpointed model from the configuration stored with it."""
    payload = load_checkpoint(checkpoint or Path(config.output.dir) / CHECKPOINT_FILE)
    trained = RunConfig.from_dict(payload["config"])
    trained.validate()
    return restore_model(build_model(trained), payload), trained


def cmd_eval(
    config: RunConfig, checkpoint: str | None, k: int | None, split: str, progress: bool = True
) -> int:
    """Evaluate a checkpoint and write report.json and curves.csv to output.dir."""
    if k is not None:
        config.set("data.k", k)
        config.validate()
    seed_everything(config.eval.seed, config.train.deterministic)
    model, trained = _load_trained_model(config, checkpoint)
    index = load_index(config.data.root, split)
    result = evaluate_dataset(
        model,
        index,
        config.data.k,
        config.data.image_size,
        repeats=config.eval.repeats,
        seed=config.eval.seed,
        batch_size=config.eval.batch_size,
        with_ref_masks=trained.provider_spec[0] == "gt",
        progress=progress,
    )
    report_path, curves_path = write_report(config.output.dir, result)
    print(format_table(result))
    print(f"Report: {report_path}")
    print(f"Curves: {curves_path}")
    return 0


def cmd_predict(
    config: RunConfig,
    checkpoint: str | None,
    image: str,
    refs: list[str],
    ref_masks: list[str],
    out: str | None,
) -> int:
    """Write the segmentation of one image as an 8-bit PNG at its original resolution."""
    if not refs:
        raise ConfigError("predict needs at least one --ref image")
    if ref_masks and len(ref_masks) != len(refs):
        raise ConfigError("Give either no --ref-mask or one per --ref")

    seed_everything(config.train.seed, config.train.deterministic)
    model, trained = _load_trained_model(config, checkpoint)
    if trained.provider_spec[0] == "gt" and not ref_masks:
        raise ConfigError("The model uses the gt provider; give a --ref-mask per --ref")
    size = config.data.image_size
    try:
        with Image.open(image) as img:
            width, height = img.size
    except OSError as e:
        raise DataError(f"Cannot read image '{image}': {e}", original_error=e) from e

    camo = torch.from_numpy(read_image(image, size))[None]
    ref_tensor = torch.stack([torch.from_numpy(read_image(r, size)) for r in refs])[None]
    mask_tensor = (
        torch.stack([torch.from_numpy(read_mask(m, size)) for m in ref_masks])[None]
        if ref_masks
        else torch.ones(1, len(refs), 1, size, size)
    )
    with torch.no_grad():
        pred = model.predict(camo, ref_tensor, mask_tensor)
        pred = F.interpolate(pred, size=(height, width), mode="bilinear", align_corners=False)

    out_path = Path(out) if out else Path(config.output.dir) / PREDICTION_FILE
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_mask(out_path, pred[0].clamp(0.0, 1.0).numpy())
    print(f"Prediction: {out_path} ({width}x{height})")
    return 0


def cmd_stats(config: RunConfig, progress: bool = True) -> int:
    """Write per-image attribute statistics and print per-subset quantiles."""
    index = load_index(config.data.root, None)
    rows = collect_stats(index, progress=progress)
    out = Path(config.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    write_stats_csv(out / STATS_FILE, rows)
    print(format_summary(summarize(rows)))
    print(f"Statistics: {out / STATS_FILE}")
    return 0


def cmd_toygen(config: RunConfig, out: str | None) -> int:
    """Generate the toy dataset in the canonical layout."""
    toy = config.toygen
    try:
        index = generate_toy_dataset(
            out or config.data.root,
            toy.n_categories,
            toy.n_camo_per_cat,
            toy.n_ref_per_cat,
            toy.image_size,
            toy.seed,
            toy.camo_test_fraction,
        )
    except ValueError as e:
        raise ConfigError(f"Invalid toygen settings: {e}", original_error=e) from e
    print(
        f"Generated {len(index.camo_records)} camouflaged and {len(index.ref_records)} "
        f"referring images in {index.root}"
    )
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    """Run the command-line interface."""
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    progress = not args.no_progress

    try:
        config = RunConfig.load(args.config, args.overrides)
        print(config.to_yaml(), end="")

        if args.command == "train":
            return cmd_train(config, progress)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, args.k, args.split, progress)
        if args.command == "predict":
            return cmd_predict(
                config, args.checkpoint, args.image, args.ref, args.ref_mask, args.out
            )
        if args.command == "stats":
            return cmd_stats(config, progress)
        return cmd_toygen(config, args.out)
    except RefCODError as e:
        print(f"Error: {e}", file=sys.stderr)
        return exit_code_for(e)
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
