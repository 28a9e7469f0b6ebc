# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Optimisation loop, checkpoints and the per-step loss log."""

import csv
import json
import logging
import pickle
import random
from collections.abc import Iterator
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import CosineAnnealingLR
from torch.utils.data import DataLoader
from tqdm import tqdm

from .config import RunConfig
from .dataset import EpisodeDataset, collate_episodes
from .errors import CheckpointError, NonFiniteLossError, WriteFailureError
from .loss import TERM_NAMES, LossReport, structure_loss
from .model import R2CNet

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.bin"
MANIFEST_SUFFIX = ".manifest.json"
LOSS_LOG_FILE = "loss.csv"
CONFIG_FILE = "config.yaml"
LOSS_LOG_COLUMNS = ["step", "lr", "total"] + [
    f"{name}_{term}" for name in TERM_NAMES for term in ("bce", "iou")
]


def seed_everything(seed: int, deterministic: bool = True) -> None:
    """Seed every RNG; in deterministic mode also pin torch to one thread."""
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True, warn_only=True)


def make_loader(
    dataset: EpisodeDataset, batch_size: int, seed: int, num_workers: int = 0, shuffle: bool = True
) -> DataLoader:
    """Return a loader with a seeded shuffle order."""
    generator = torch.Generator()
    generator.manual_seed(seed)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        num_workers=num_workers,
        collate_fn=collate_episodes,
        generator=generator,
    )


def _to_device(batch: dict[str, torch.Tensor], device: torch.device) -> dict[str, torch.Tensor]:
    return {key: value.to(device) for key, value in batch.items()}


class Trainer:
    """Adam with cosine-annealed learning rate over a fixed number of steps.

    Only parameters with ``requires_grad`` are optimised, so the frozen
    foreground provider is never updated.

    Parameters
    ----------
    model : R2CNet
        Model to train.
    config : RunConfig
        Supplies ``train.*`` and ``loss.weighted``.
    """

    def __init__(self, model: R2CNet, config: RunConfig) -> None:
        self.model = model
        self.config = config
        self.device = torch.device(config.train.device)
        self.model.to(self.device)
        self.optimizer = Adam(
            [p for p in model.parameters() if p.requires_grad], lr=config.train.lr
        )
        self.scheduler = CosineAnnealingLR(
            self.optimizer, T_max=config.train.steps, eta_min=config.train.lr_floor
        )
        self.step = 0
        self.history: list[dict[str, float]] = []

    @property
    def lr(self) -> float:
        """Learning rate the next step will use."""
        return float(self.optimizer.param_groups[0]["lr"])

    def training_step(self, batch: dict[str, torch.Tensor]) -> LossReport:
        """Run one forward/backward pass and one optimiser update.

        Raises
        ------
        NonFiniteLossError
            If the loss is NaN or infinite; no update is applied.
        """
        self.model.train()
        batch = _to_device(batch, self.device)
        result = self.model(batch["camo"], batch["refs"], batch["ref_masks"])
        report = structure_loss(result.predictions, batch["gt"], self.config.loss.weighted)
        if not report.is_finite():
            terms = ", ".join(f"{k}={v:.4g}" for k, v in report.as_dict().items())
            raise NonFiniteLossError(f"Non-finite loss at step {self.step}: {terms}")

        lr = self.lr
        self.optimizer.zero_grad(set_to_none=True)
        report.total.backward()
        self.optimizer.step()
        self.scheduler.step()
        self.step += 1
        self.history.append({"step": self.step, "lr": lr, **report.as_dict()})
        return report

    def _batches(self, loader: DataLoader) -> Iterator[dict[str, torch.Tensor]]:
        epoch = 0
        while True:
            dataset = loader.dataset
            if isinstance(dataset, EpisodeDataset):
                dataset.set_epoch(epoch)
            yield from loader
            epoch += 1

    def fit(self, dataset: EpisodeDataset, progress: bool = True) -> list[dict[str, float]]:
        """Train for ``train.steps`` steps, cycling through the dataset.

        Returns
        -------
        list[dict[str, float]]
            One loss-log row per step.
        """
        train = self.config.train
        loader = make_loader(
            dataset,
            min(train.batch_size, len(dataset)),
            train.seed,
            self.config.data.num_workers,
        )
        batches = self._batches(loader)
        bar = tqdm(total=train.steps - self.step, desc="train", disable=not progress)
        while self.step < train.steps:
            report = self.training_step(next(batches))
            bar.update(1)
            bar.set_postfix(loss=f"{float(report.total.detach()):.4f}")
            if self.step % train.log_every == 0 or self.step == train.steps:
                logger.info(
                    f"step {self.step}/{train.steps} loss {float(report.total.detach()):.4f} "
                    f"lr {self.lr:.3g}"
                )
        bar.close()
        return self.history

    def save(self, out_dir: str | Path) -> Path:
        """Write checkpoint, manifest, loss log and config snapshot to ``out_dir``."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / CONFIG_FILE).write_text(self.config.to_yaml(), encoding="utf-8")
        except OSError as e:
            raise WriteFailureError(f"Cannot write to '{out}': {e}", original_error=e) from e
        write_loss_log(out / LOSS_LOG_FILE, self.history)
        return save_checkpoint(
            out / CHECKPOINT_FILE,
            self.model,
            self.optimizer,
            self.scheduler,
            self.step,
            self.config,
        )


def write_loss_log(path: str | Path, history: list[dict[str, float]]) -> None:
    """Write one CSV row per training step."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=LOSS_LOG_COLUMNS)
            writer.writeheader()
            for row in history:
                writer.writerow({key: row[key] for key in LOSS_LOG_COLUMNS})
    except OSError as e:
        raise WriteFailureError(f"Cannot write loss log '{path}': {e}", original_error=e) from e


def checkpoint_manifest(state: dict[str, torch.Tensor]) -> dict[str, dict[str, Any]]:
    """Describe every parameter array by shape and dtype."""
    return {
        key: {"shape": list(value.shape), "dtype": str(value.dtype).removeprefix("torch.")}
        for key, value in state.items()
    }


def save_checkpoint(
    path: str | Path,
    model: R2CNet,
    optimizer: torch.optim.Optimizer | None,
    scheduler: CosineAnnealingLR | None,
    step: int,
    config: RunConfig,
) -> Path:
    """Serialise model, optimiser and scheduler state with a JSON key manifest.

    The manifest is written next to the checkpoint as ``<name>.manifest.json``.
    """
    path = Path(path)
    state = model.state_dict()
    payload = {
        "model": state,
        "optimizer": optimizer.state_dict() if optimizer is not None else None,
        "scheduler": scheduler.state_dict() if scheduler is not None else None,
        "step": step,
        "config": config.to_dict(),
    }
    manifest = {"step": step, "parameters": checkpoint_manifest(state)}
    try:
        torch.save(payload, path)
        path.with_name(path.stem + MANIFEST_SUFFIX).write_text(
            json.dumps(manifest, sort_keys=True, indent=2), encoding="utf-8"
        )
    except OSError as e:
        raise WriteFailureError(f"Cannot write checkpoint '{path}': {e}", original_error=e) from e
    logger.info(f"Saved checkpoint at step {step} to {path}")
    return path


def load_checkpoint(path: str | Path) -> dict[str, Any]:
    """Read a checkpoint written by :func:`save_checkpoint`.

    Checkpoints carry optimiser state and a config mapping, so they are loaded
    with full unpickling; only load files you wrote yourself.

    Raises
    ------
    CheckpointError
        If the file is missing or unreadable.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"Checkpoint '{path}' not found")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except (OSError, RuntimeError, EOFError, pickle.UnpicklingError) as e:
        raise CheckpointError(f"Cannot read checkpoint '{path}': {e}", original_error=e) from e
    if not isinstance(payload, dict) or "model" not in payload:
        raise CheckpointError(f"'{path}' is not a refcod checkpoint")
    return payload


def restore_model(model: R2CNet, payload: dict[str, Any]) -> R2CNet:
    """Load a checkpoint's weights into ``model`` and switch it to eval mode."""
    try:
        model.load_state_dict(payload["model"])
    except RuntimeError as e:
        raise CheckpointError(
            f"Checkpoint does not match the configured model: {e}", original_error=e
        ) from e
    return model.eval()
