# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Per-object attribute statistics of the camouflaged and referring subsets."""

import csv
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from tqdm import tqdm

from .dataset import DatasetIndex, read_image, read_mask
from .errors import DataError, EmptyMaskError, WriteFailureError

logger = logging.getLogger(__name__)

QUANTILES = {"min": 0.0, "q25": 0.25, "median": 0.5, "q75": 0.75, "max": 1.0}
ATTRIBUTES = ("area", "ratio", "distance", "global_contrast")


@dataclass(frozen=True)
class ObjectStats:
    """Attributes describing how hard an object is to detect.

    Attributes
    ----------
    area : int
        Foreground pixel count.
    ratio : float
        ``area / (H * W)``.
    distance : float
        Distance from the mask centroid to the image centre, divided by half the
        image diagonal. Pixel ``(i, j)`` sits at ``(i + 0.5, j + 0.5)``.
    global_contrast : float
        Euclidean distance between the mean foreground and mean background RGB.
    """

    area: int
    ratio: float
    distance: float
    global_contrast: float


def compute_object_stats(image: np.ndarray, mask: np.ndarray) -> ObjectStats:
    """Compute :class:`ObjectStats` for one ``3 x H x W`` image and ``1 x H x W`` mask.

    An all-foreground mask has no background; its contrast is reported as 0.

    Raises
    ------
    EmptyMaskError
        If the mask has no foreground pixel.
    """
    fg = np.asarray(mask).reshape(mask.shape[-2:]) >= 0.5
    h, w = fg.shape
    area = int(fg.sum())
    if area == 0:
        raise EmptyMaskError("Object statistics need at least one foreground pixel")

    rows, cols = np.nonzero(fg)
    cy, cx = rows.mean() + 0.5, cols.mean() + 0.5
    distance = math.hypot(cx - w / 2, cy - h / 2) / (0.5 * math.hypot(w, h))

    pixels = np.asarray(image, dtype=np.float64).reshape(3, h * w)
    flat = fg.reshape(-1)
    if flat.all():
        contrast = 0.0
    else:
        difference = pixels[:, flat].mean(axis=1) - pixels[:, ~flat].mean(axis=1)
        contrast = float(np.linalg.norm(difference))

    return ObjectStats(
        area=area,
        ratio=area / (h * w),
        distance=min(distance, 1.0),
        global_contrast=contrast,
    )


@dataclass(frozen=True)
class StatsRow:
    """One image's statistics tagged with its subset (``camo`` or ``ref``)."""

    subset: str
    split: str
    category: str
    image_path: str
    area: int
    ratio: float
    distance: float
    global_contrast: float


def collect_stats(
    index: DatasetIndex, image_size: int | None = None, progress: bool = True
) -> list[StatsRow]:
    """Compute statistics for every camouflaged and referring image of an index.

    Parameters
    ----------
    index : DatasetIndex
        Dataset index; referring images need masks.
    image_size : int or None
        Resize before measuring; ``None`` measures at the stored resolution.
    progress : bool, default True
        Show a progress bar.

    Raises
    ------
    DataError
        If the index is empty or a referring image has no mask.
    """
    items = [
        ("camo", r.split, r.category_id, r.image_path, r.mask_path) for r in index.camo_records
    ] + [("ref", r.split, r.category_id, r.image_path, r.mask_path) for r in index.ref_records]
    if not items:
        raise DataError(f"Dataset at '{index.root}' contains no images")

    rows = []
    for subset, split, category_id, image_path, mask_path in tqdm(
        items, desc="stats", disable=not progress
    ):
        if mask_path is None:
            raise DataError(f"Referring image '{image_path}' has no mask")
        stats = compute_object_stats(
            read_image(index.path(image_path), image_size),
            read_mask(index.path(mask_path), image_size),
        )
        rows.append(
            StatsRow(subset, split, index.categories[category_id], image_path, **asdict(stats))
        )
    logger.info(f"Computed statistics for {len(rows)} images")
    return rows


def summarize(rows: list[StatsRow]) -> dict[str, dict[str, dict[str, float]]]:
    """Return ``{subset: {attribute: {min, q25, median, q75, max, mean}}}``."""
    summary: dict[str, dict[str, dict[str, float]]] = {}
    for subset in sorted({r.subset for r in rows}):
        selected = [r for r in rows if r.subset == subset]
        summary[subset] = {}
        for attribute in ATTRIBUTES:
            values = np.array([getattr(r, attribute) for r in selected], dtype=np.float64)
            entry = {name: float(np.quantile(values, q)) for name, q in QUANTILES.items()}
            entry["mean"] = float(values.mean())
            summary[subset][attribute] = entry
    return summary


def write_stats_csv(path: str | Path, rows: list[StatsRow]) -> None:
    """Write one CSV row per image with a header."""
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow([column.name for column in fields(StatsRow)])
            for row in rows:
                writer.writerow(list(asdict(row).values()))
    except OSError as e:
        raise WriteFailureError(
            f"Cannot write statistics to '{path}': {e}", original_error=e
        ) from e


def format_summary(summary: dict[str, dict[str, dict[str, float]]]) -> str:
    """Render a summary as an aligned plain-text table."""
    columns = [*QUANTILES, "mean"]
    lines = [f"{'subset':<6} {'attribute':<16} " + " ".join(f"{c:>10}" for c in columns)]
    for subset, attributes in summary.items():
        for attribute, entry in attributes.items():
            values = " ".join(f"{entry[c]:>10.4f}" for c in columns)
            lines.append(f"{subset:<6} {attribute:<16} {values}")
    return "\n".join(lines)
