# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Dataset-level evaluation with reference re-draws and object-multiplicity splits.

When ``0 < k`` is smaller than the number of referring images available, the
result depends on which references are drawn, so the set is evaluated
``repeats`` times with different draws and the reports are averaged.
"""

import csv
import json
import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
from tqdm import tqdm

from .dataset import DatasetIndex, EpisodeDataset
from .errors import InsufficientReferencesError, WriteFailureError
from .metrics import CurveAccumulator, CurveData, MetricAccumulator, MetricsReport
from .model import R2CNet
from .training import make_loader

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
CURVES_FILE = "curves.csv"

Predictor = Callable[[dict[str, torch.Tensor]], torch.Tensor]


@dataclass
class EvaluationResult:
    """Averaged report, per-split reports, curves and per-image scores.

    Attributes
    ----------
    report : MetricsReport
        Overall averages.
    splits : dict[str, MetricsReport]
        ``single``, ``multi`` and ``overall`` reports when object multiplicity
        is known for the evaluated records; empty otherwise.
    curves : CurveData
        Precision/recall and F-beta curves over every draw.
    per_image : list[dict[str, Any]]
        One entry per (draw, record) with ``sm``, ``ae``, ``wf`` and ``mae``.
    k : int
        Referring images per episode.
    repeats : int
        Number of reference draws that were averaged.
    """

    report: MetricsReport
    splits: dict[str, MetricsReport]
    curves: CurveData
    per_image: list[dict[str, Any]] = field(default_factory=list)
    k: int = 0
    repeats: int = 1

    def to_dict(self) -> dict[str, Any]:
        """Return the JSON report structure."""
        return {
            **self.report.to_dict(),
            "k": self.k,
            "repeats": self.repeats,
            "splits": {name: r.to_dict() for name, r in self.splits.items()},
        }


def _min_available(index: DatasetIndex) -> int:
    counts = [
        len(index.refs_for(category_id, split))
        for category_id, split in {(r.category_id, r.split) for r in index.camo_records}
    ]
    return min(counts) if counts else 0


def draw_count(index: DatasetIndex, k: int, repeats: int) -> int:
    """Return how many reference draws an evaluation at ``k`` averages."""
    if k == 0 or k >= _min_available(index):
        return 1
    return repeats


def _predictor(model: R2CNet | Predictor) -> Predictor:
    if not isinstance(model, R2CNet):
        return model
    model.eval()
    device = next(model.parameters()).device

    def predict(batch: dict[str, torch.Tensor]) -> torch.Tensor:
        return model.predict(
            batch["camo"].to(device), batch["refs"].to(device), batch["ref_masks"].to(device)
        )

    return predict


def evaluate_dataset(
    model: R2CNet | Predictor,
    index: DatasetIndex,
    k: int,
    image_size: int,
    repeats: int = 3,
    seed: int = 0,
    batch_size: int = 8,
    with_ref_masks: bool = True,
    progress: bool = True,
) -> EvaluationResult:
    """Run inference on every camouflaged record and average the four measures.

    Parameters
    ----------
    model : R2CNet or callable
        Trained model, or any callable mapping a collated batch to
        ``B x 1 x H x W`` predictions.
    index : DatasetIndex
        Index of the evaluated split.
    k : int
        Referring images per episode; 0 bypasses the reference branch.
    image_size : int
        Evaluation resolution; metrics are computed at this size.
    repeats : int, default 3
        Reference draws averaged when ``0 < k <`` available references.
    seed : int, default 0
        Base seed of the reference draws.
    batch_size : int, default 8
        Episodes per inference batch.
    with_ref_masks : bool, default True
        Load referring masks (required by the ``gt`` provider).
    progress : bool, default True
        Show a progress bar.

    Raises
    ------
    InsufficientReferencesError
        If ``k`` exceeds the references of some evaluated category.
    """
    if k > 0 and k > _min_available(index):
        raise InsufficientReferencesError(
            f"k={k} exceeds the {_min_available(index)} referring images available per category"
        )
    predict = _predictor(model)
    n_draws = draw_count(index, k, repeats)
    multiplicity = {
        i: r.n_objects for i, r in enumerate(index.camo_records) if r.n_objects is not None
    }
    has_splits = len(multiplicity) == len(index.camo_records) and bool(multiplicity)

    curves = CurveAccumulator()
    per_image: list[dict[str, Any]] = []
    draw_reports: list[MetricsReport] = []
    split_reports: dict[str, list[MetricsReport]] = {"single": [], "multi": [], "overall": []}
    for draw in range(n_draws):
        dataset = EpisodeDataset(
            index, k, image_size, seed=seed, with_ref_masks=with_ref_masks and k > 0
        )
        dataset.set_epoch(draw)
        loader = make_loader(dataset, batch_size, seed, shuffle=False)
        overall = MetricAccumulator()
        by_split = {"single": MetricAccumulator(), "multi": MetricAccumulator()}
        with torch.no_grad():
            for batch in tqdm(loader, desc=f"eval k={k} draw {draw + 1}", disable=not progress):
                preds = predict(batch).detach().cpu().numpy().astype(np.float64)
                gts = batch["gt"].numpy().astype(np.float64)
                for p, g, record_id in zip(preds, gts, batch["record_id"].tolist()):
                    scores = overall.step(p, g)
                    curves.step(p, g)
                    per_image.append({"draw": draw, "record_id": record_id, **scores})
                    if has_splits:
                        name = "single" if multiplicity[record_id] <= 1 else "multi"
                        by_split[name].step(p, g)
        draw_reports.append(overall.report())
        if has_splits:
            split_reports["overall"].append(draw_reports[-1])
            for name, accumulator in by_split.items():
                if len(accumulator):
                    split_reports[name].append(accumulator.report())

    report = MetricsReport.mean(draw_reports)
    splits = {name: MetricsReport.mean(r) for name, r in split_reports.items() if r}
    logger.info(
        f"Evaluated {report.n_images} images (k={k}, draws={n_draws}): "
        f"Sm {report.s_measure:.4f} aE {report.e_measure_adaptive:.4f} "
        f"wF {report.weighted_f:.4f} MAE {report.mae:.4f}"
    )
    return EvaluationResult(report, splits, curves.result(), per_image, k, n_draws)


def format_table(result: EvaluationResult) -> str:
    """Render the report and its splits as an aligned plain-text table."""
    rows = [("all", result.report)] + [
        (name, result.splits[name]) for name in ("single", "multi") if name in result.splits
    ]
    lines = [f"{'split':<8} {'n':>6} {'Sm':>8} {'aE':>8} {'wF':>8} {'MAE':>8}"]
    for name, r in rows:
        lines.append(
            f"{name:<8} {r.n_images:>6d} {r.s_measure:>8.4f} {r.e_measure_adaptive:>8.4f} "
            f"{r.weighted_f:>8.4f} {r.mae:>8.4f}"
        )
    return "\n".join(lines)


def write_report(out_dir: str | Path, result: EvaluationResult) -> tuple[Path, Path]:
    """Write ``report.json`` and ``curves.csv`` to ``out_dir``."""
    out = Path(out_dir)
    report_path, curves_path = out / REPORT_FILE, out / CURVES_FILE
    try:
        out.mkdir(parents=True, exist_ok=True)
        report_path.write_text(
            json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
        )
        with open(curves_path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "precision", "recall", "fbeta"])
            writer.writerows(result.curves.rows())
    except OSError as e:
        raise WriteFailureError(f"Cannot write report to '{out}': {e}", original_error=e) from e
    return report_path, curves_path
