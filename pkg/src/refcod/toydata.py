# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Synthetic toy-camouflage dataset generator.

Each category is a shape family with its own stripe texture (orientation and
period). A camouflaged scene always holds two objects of different categories
whose colours are matched to the background, so only shape and texture give
them away and only a reference tells which one is the target. Referring images
show one object of the category on a plain, high-contrast background.
"""

import json
import logging
import math
from abc import ABC, abstractmethod
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .dataset import SCENES_FILE, DatasetIndex, Split, load_index
from .errors import PlacementError, WriteFailureError

logger = logging.getLogger(__name__)

Point = tuple[float, float]


class ShapeFamily(ABC):
    """Abstract base class for toy object categories.

    Subclasses define the texture statistics as class attributes and the
    outline in :meth:`outline`.

    Attributes
    ----------
    name : str
        Category folder name.
    stripe_angle : float
        Stripe orientation in degrees.
    stripe_period : float
        Stripe period as a fraction of the object radius.
    """

    name: str
    stripe_angle: float
    stripe_period: float

    @abstractmethod
    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Return the object polygon in pixel coordinates."""

    def holes(self, cx: float, cy: float, radius: float, rotation: float) -> list[list[Point]]:
        """Return polygons cut out of the outline (none by default)."""
        return []

    def render_mask(
        self, size: int, cx: float, cy: float, radius: float, rotation: float
    ) -> np.ndarray:
        """Rasterise the shape into a boolean ``size x size`` mask."""
        canvas = Image.new("L", (size, size), 0)
        draw = ImageDraw.Draw(canvas)
        draw.polygon(self.outline(cx, cy, radius, rotation), fill=255)
        for hole in self.holes(cx, cy, radius, rotation):
            draw.polygon(hole, fill=0)
        return np.asarray(canvas) >= 128

    def texture(self, size: int, radius: float, phase: float) -> np.ndarray:
        """Return the category stripe pattern in [-0.5, 0.5] over the whole canvas."""
        theta = math.radians(self.stripe_angle)
        period = max(2.0, self.stripe_period * radius)
        y, x = np.mgrid[0:size, 0:size].astype(np.float64)
        coord = x * math.cos(theta) + y * math.sin(theta)
        return 0.5 * np.sin(2.0 * math.pi * coord / period + phase)


def _polygon(
    cx: float, cy: float, radii: list[float], rotation: float, ry_scale: float = 1.0
) -> list[Point]:
    points = []
    n = len(radii)
    for i, r in enumerate(radii):
        a = 2.0 * math.pi * i / n
        x, y = r * math.cos(a), r * ry_scale * math.sin(a)
        points.append(
            (
                cx + x * math.cos(rotation) - y * math.sin(rotation),
                cy + x * math.sin(rotation) + y * math.cos(rotation),
            )
        )
    return points


class Ellipse(ShapeFamily):
    """Elongated ellipse with diagonal fine stripes."""

    name = "ellipse"
    stripe_angle = 45.0
    stripe_period = 0.35

    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Ellipse with a 0.6 axis ratio."""
        return _polygon(cx, cy, [radius] * 48, rotation, ry_scale=0.6)


class Triangle(ShapeFamily):
    """Equilateral triangle with horizontal coarse stripes."""

    name = "triangle"
    stripe_angle = 90.0
    stripe_period = 0.8

    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Three vertices on the circumcircle."""
        return _polygon(cx, cy, [radius] * 3, rotation)


class Cross(ShapeFamily):
    """Plus-shaped cross with vertical stripes."""

    name = "cross"
    stripe_angle = 0.0
    stripe_period = 0.5

    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Twelve-vertex plus sign with arms of width 0.7 radius."""
        w = 0.35 * radius
        corners = [
            (w, -radius), (w, -w), (radius, -w), (radius, w), (w, w), (w, radius),
            (-w, radius), (-w, w), (-radius, w), (-radius, -w), (-w, -w), (-w, -radius),
        ]  # fmt: skip
        c, s = math.cos(rotation), math.sin(rotation)
        return [(cx + x * c - y * s, cy + x * s + y * c) for x, y in corners]


class Ring(ShapeFamily):
    """Annulus with anti-diagonal stripes."""

    name = "ring"
    stripe_angle = 135.0
    stripe_period = 0.6

    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Outer circle."""
        return _polygon(cx, cy, [radius] * 48, rotation)

    def holes(self, cx: float, cy: float, radius: float, rotation: float) -> list[list[Point]]:
        """Inner circle of radius 0.5."""
        return [_polygon(cx, cy, [0.5 * radius] * 48, rotation)]


class Square(ShapeFamily):
    """Square with shallow-angled stripes."""

    name = "square"
    stripe_angle = 20.0
    stripe_period = 1.0

    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Four vertices at 0.85 radius."""
        return _polygon(cx, cy, [0.85 * radius] * 4, rotation + math.pi / 4)


class Star(ShapeFamily):
    """Five-pointed star with steep stripes."""

    name = "star"
    stripe_angle = 70.0
    stripe_period = 0.3

    def outline(self, cx: float, cy: float, radius: float, rotation: float) -> list[Point]:
        """Ten vertices alternating between radius and 0.45 radius."""
        return _polygon(cx, cy, [radius, 0.45 * radius] * 5, rotation)


SHAPE_FAMILIES: list[type[ShapeFamily]] = [Ellipse, Triangle, Cross, Ring, Square, Star]

# Fraction of each category's referring images held out for testing (5 of 25)
REF_TEST_FRACTION = 0.2
# Object radius range in fractions of the image side
CAMO_RADIUS = (0.14, 0.22)
REF_RADIUS = (0.26, 0.34)
STRIPE_AMPLITUDE = 0.35


def _smooth_noise(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    """Low-frequency colour noise of shape ``size x size x 3``."""
    coarse = rng.uniform(-amplitude, amplitude, size=(6, 6, 3)).astype(np.float32)
    channels = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(coarse[..., c])).resize(
                (size, size), Image.Resampling.BILINEAR
            )
        )
        for c in range(3)
    ]
    return np.stack(channels, axis=-1).astype(np.float64)


def _place_disjoint(
    rng: np.random.Generator,
    families: list[ShapeFamily],
    size: int,
    radius_range: tuple[float, float],
) -> list[np.ndarray]:
    """Place one object per family so that no two masks touch.

    Raises
    ------
    PlacementError
        If 200 attempts leave no room for every family.
    """
    for _ in range(200):
        masks = []
        occupied = np.zeros((size, size), dtype=bool)
        for family in families:
            radius = rng.uniform(*radius_range) * size
            cx, cy = rng.uniform(radius, size - radius, size=2)
            mask = family.render_mask(size, cx, cy, radius, rng.uniform(0, 2 * math.pi))
            grown = np.zeros_like(mask)
            ys, xs = np.nonzero(mask)
            grown[
                np.clip(ys.min() - 1, 0, None) : ys.max() + 2,
                np.clip(xs.min() - 1, 0, None) : xs.max() + 2,
            ] = True
            if (grown & occupied).any() or not mask.any():
                break
            occupied |= grown
            masks.append(mask)
        if len(masks) == len(families):
            return masks
    raise PlacementError(f"Could not place {len(families)} disjoint objects on a {size}px canvas")


def render_camo_scene(
    rng: np.random.Generator, target: ShapeFamily, distractor: ShapeFamily, size: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Render a two-object camouflaged scene.

    Returns
    -------
    tuple of numpy.ndarray
        ``(image, target_mask, distractor_mask)``; the image is ``size x size x 3``
        in [0, 1] and the masks are boolean.
    """
    base = rng.uniform(0.25, 0.75, size=3)
    image = base + _smooth_noise(rng, size, 0.08)
    masks = _place_disjoint(rng, [target, distractor], size, CAMO_RADIUS)
    for family, mask in zip([target, distractor], masks):
        ys, xs = np.nonzero(mask)
        radius = 0.5 * max(np.ptp(ys), np.ptp(xs)) + 1.0
        stripes = family.texture(size, radius, rng.uniform(0, 2 * math.pi))
        camouflaged = image * (1.0 + STRIPE_AMPLITUDE * stripes[..., None])
        image = np.where(mask[..., None], camouflaged, image)
    return np.clip(image, 0.0, 1.0), masks[0], masks[1]


def render_reference(
    rng: np.random.Generator, family: ShapeFamily, size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render one salient object on a plain contrasting background."""
    color = rng.uniform(0.55, 0.95, size=3)
    background = 1.0 - color + rng.uniform(-0.05, 0.05, size=3)
    image = np.broadcast_to(np.clip(background, 0.0, 1.0), (size, size, 3)).copy()
    (mask,) = _place_disjoint(rng, [family], size, REF_RADIUS)
    ys, xs = np.nonzero(mask)
    radius = 0.5 * max(np.ptp(ys), np.ptp(xs)) + 1.0
    stripes = family.texture(size, radius, rng.uniform(0, 2 * math.pi))
    textured = color * (1.0 + STRIPE_AMPLITUDE * stripes[..., None])
    image = np.where(mask[..., None], textured, image)
    return np.clip(image, 0.0, 1.0), mask


def _split_counts(n: int, test_fraction: float) -> tuple[int, int]:
    n_test = min(n - 1, max(1, round(n * test_fraction)))
    return n - n_test, n_test


def _save_rgb(path: Path, image: np.ndarray) -> None:
    Image.fromarray(np.round(image * 255.0).astype(np.uint8)).save(
        path, format="JPEG", quality=95
    )


def _save_mask(path: Path, mask: np.ndarray) -> None:
    Image.fromarray(mask.astype(np.uint8) * 255).save(path, format="PNG")


def generate_toy_dataset(
    out_path: str | Path,
    n_categories: int,
    n_camo_per_cat: int,
    n_ref_per_cat: int,
    image_size: int,
    rng_seed: int,
    camo_test_fraction: float = 0.2,
) -> DatasetIndex:
    """Write a toy-camouflage dataset in the canonical layout.

    Parameters
    ----------
    out_path : str or Path
        Output root; created if missing.
    n_categories : int
        Number of shape families, ``2 <= n_categories <= len(SHAPE_FAMILIES)``.
    n_camo_per_cat : int
        Camouflaged scenes per category (>= 2, split between train and test).
    n_ref_per_cat : int
        Referring images per category (>= 2, 20 % held out for testing).
    image_size : int
        Side length in pixels, >= 32.
    rng_seed : int
        Seed; equal arguments produce identical files.
    camo_test_fraction : float, default 0.2
        Fraction of camouflaged scenes per category assigned to the test split.

    Returns
    -------
    DatasetIndex
        Index over both splits of the written dataset.

    Raises
    ------
    ValueError
        If a count or the image size is out of range.
    WriteFailureError
        If the output cannot be written.
    PlacementError
        If the objects of a scene do not fit on the canvas.
    """
    if not 2 <= n_categories <= len(SHAPE_FAMILIES):
        raise ValueError(f"n_categories must be in [2, {len(SHAPE_FAMILIES)}], got {n_categories}")
    if image_size < 32:
        raise ValueError(f"image_size must be >= 32, got {image_size}")
    if n_camo_per_cat < 2 or n_ref_per_cat < 2:
        raise ValueError("n_camo_per_cat and n_ref_per_cat must be >= 2 to fill both splits")

    root = Path(out_path)
    rng = np.random.default_rng(rng_seed)
    families = [cls() for cls in SHAPE_FAMILIES[:n_categories]]
    scenes: dict[str, dict[str, object]] = {}

    try:
        for family in families:
            n_train, _ = _split_counts(n_camo_per_cat, camo_test_fraction)
            order = rng.permutation(n_camo_per_cat)
            for i in range(n_camo_per_cat):
                split = Split.TRAIN if order[i] < n_train else Split.TEST
                others = [f for f in families if f is not family]
                distractor = others[rng.integers(len(others))]
                image, target_mask, distractor_mask = render_camo_scene(
                    rng, family, distractor, image_size
                )
                stem = f"{family.name}_{i:04d}"
                folder = root / "Camo" / split.value / family.name
                audit = root / "Audit" / split.value / family.name
                folder.mkdir(parents=True, exist_ok=True)
                audit.mkdir(parents=True, exist_ok=True)
                _save_rgb(folder / f"{stem}.jpg", image)
                _save_mask(folder / f"{stem}.png", target_mask)
                _save_mask(audit / f"{stem}.png", target_mask | distractor_mask)
                scenes[f"Camo/{split.value}/{family.name}/{stem}.jpg"] = {
                    "n_objects": 1,
                    "category": family.name,
                    "distractor": distractor.name,
                }

            n_train, _ = _split_counts(n_ref_per_cat, REF_TEST_FRACTION)
            order = rng.permutation(n_ref_per_cat)
            for i in range(n_ref_per_cat):
                split = Split.TRAIN if order[i] < n_train else Split.TEST
                image, mask = render_reference(rng, family, image_size)
                folder = root / "Ref" / split.value / family.name
                folder.mkdir(parents=True, exist_ok=True)
                _save_rgb(folder / f"{family.name}_ref_{i:04d}.jpg", image)
                _save_mask(folder / f"{family.name}_ref_{i:04d}.png", mask)

        (root / SCENES_FILE).write_text(
            json.dumps(scenes, sort_keys=True, indent=2), encoding="utf-8"
        )
    except OSError as e:
        raise WriteFailureError(
            f"Cannot write toy dataset to '{root}': {e}", original_error=e
        ) from e

    logger.info(
        f"Generated toy dataset at {root}: {n_categories} categories, "
        f"{n_categories * n_camo_per_cat} camo / {n_categories * n_ref_per_cat} ref images"
    )
    return load_index(root, None)
