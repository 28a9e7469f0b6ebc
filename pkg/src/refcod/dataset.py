# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Dataset index, image I/O and reference-conditioned episode sampling.

The canonical on-disk layout is::

    <root>/Camo/<split>/<category>/<stem>.jpg   camouflaged image
    <root>/Camo/<split>/<category>/<stem>.png   its binary mask
    <root>/Ref/<split>/<category>/<stem>.jpg    referring image
    <root>/Ref/<split>/<category>/<stem>.png    optional referring mask
    <root>/scenes.json                          optional object multiplicity

Masks are 8-bit single-channel PNGs and are binarised at 0.5 after resizing.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
import torch
from PIL import Image
from torch.utils.data import Dataset

from .errors import (
    DataError,
    EmptyCategoryError,
    InsufficientReferencesError,
    MissingDirectoryError,
    WriteFailureError,
)

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".jpg", ".jpeg")
MASK_SUFFIX = ".png"
SCENES_FILE = "scenes.json"


class Split(str, Enum):
    """Dataset split identifiers."""

    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class CamoRecord:
    """A camouflaged image with its mask.

    Attributes
    ----------
    image_path : str
        Image path relative to the dataset root (POSIX separators).
    mask_path : str
        Mask path relative to the dataset root.
    category_id : int
        Index into :attr:`DatasetIndex.categories`.
    split : str
        ``train`` or ``test``.
    n_objects : int or None
        Number of labelled objects in the scene, when known.
    """

    image_path: str
    mask_path: str
    category_id: int
    split: str
    n_objects: int | None = None


@dataclass(frozen=True)
class RefRecord:
    """A referring image with an optional foreground mask."""

    image_path: str
    category_id: int
    split: str
    mask_path: str | None = None


@dataclass(frozen=True)
class DatasetIndex:
    """Immutable listing of a dataset's camouflaged and referring images.

    Attributes
    ----------
    root : str
        Dataset root directory.
    camo_records : tuple[CamoRecord, ...]
        Camouflaged images in deterministic (category, file name) order.
    ref_records : tuple[RefRecord, ...]
        Referring images in deterministic (category, file name) order.
    categories : tuple[str, ...]
        Lexicographically sorted category names.
    """

    root: str
    camo_records: tuple[CamoRecord, ...]
    ref_records: tuple[RefRecord, ...]
    categories: tuple[str, ...]

    def refs_for(self, category_id: int, split: str | None = None) -> list[RefRecord]:
        """Return the referring records of a category, optionally restricted to a split."""
        return [
            r
            for r in self.ref_records
            if r.category_id == category_id and (split is None or r.split == split)
        ]

    def path(self, relative: str) -> Path:
        """Resolve a record path against the dataset root."""
        return Path(self.root) / relative

    def to_manifest(self) -> dict[str, Any]:
        """Return a JSON-serialisable manifest of the index."""
        return {
            "root": self.root,
            "categories": list(self.categories),
            "camo": [vars(r) for r in self.camo_records],
            "ref": [vars(r) for r in self.ref_records],
        }

    def to_json(self) -> str:
        """Serialise the index; equal indices serialise to identical strings."""
        return json.dumps(self.to_manifest(), sort_keys=True, indent=2)

    def save(self, path: str | Path) -> None:
        """Write the JSON manifest to ``path`` (used as a cache)."""
        try:
            Path(path).write_text(self.to_json(), encoding="utf-8")
        except OSError as e:
            raise WriteFailureError(f"Cannot write index to '{path}': {e}", original_error=e) from e

    @classmethod
    def from_json(cls, text: str) -> "DatasetIndex":
        """Rebuild an index from :meth:`to_json` output."""
        data = json.loads(text)
        return cls(
            root=data["root"],
            camo_records=tuple(CamoRecord(**r) for r in data["camo"]),
            ref_records=tuple(RefRecord(**r) for r in data["ref"]),
            categories=tuple(data["categories"]),
        )


@dataclass
class Episode:
    """One camouflaged image, its mask and K referring images of the same category.

    Attributes
    ----------
    camo_image : numpy.ndarray
        ``3 x H x W`` float32 image in [0, 1].
    gt_mask : numpy.ndarray
        ``1 x H x W`` float32 mask with values in {0, 1}.
    ref_images : list[numpy.ndarray]
        K referring images, each ``3 x H x W`` in [0, 1].
    category_id : int
        Category shared by the target object and all references.
    category_name : str
        Name of the category.
    ref_masks : list[numpy.ndarray] or None
        Referring masks (``1 x H x W``) when the dataset ships them.
    n_objects : int or None
        Object multiplicity of the camouflaged scene, when known.
    """

    camo_image: np.ndarray
    gt_mask: np.ndarray
    ref_images: list[np.ndarray]
    category_id: int
    category_name: str
    ref_masks: list[np.ndarray] | None = None
    n_objects: int | None = None

    def __post_init__(self) -> None:
        if not self.ref_images:
            raise ValueError("An episode needs at least one referring image")
        size = self.camo_image.shape[1:]
        if self.gt_mask.shape != (1, *size):
            raise ValueError(f"Mask shape {self.gt_mask.shape} does not match image {size}")
        for ref in self.ref_images:
            if ref.shape != (3, *size):
                raise ValueError(f"Referring image shape {ref.shape} does not match {size}")

    @property
    def k(self) -> int:
        """Number of referring images."""
        return len(self.ref_images)


def read_image(path: str | Path, size: int | None = None) -> np.ndarray:
    """Read an RGB image as a ``3 x H x W`` float32 array in [0, 1].

    Parameters
    ----------
    path : str or Path
        Image file.
    size : int or None
        If given, the image is stretched to ``size x size`` (bilinear).

    Raises
    ------
    DataError
        If the file cannot be opened or decoded.
    """
    try:
        with Image.open(path) as img:
            img = img.convert("RGB")
            if size is not None:
                img = img.resize((size, size), Image.Resampling.BILINEAR)
            array = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as e:
        raise DataError(f"Cannot read image '{path}': {e}", original_error=e) from e
    return np.ascontiguousarray(array.transpose(2, 0, 1))


def read_mask(path: str | Path, size: int | None = None) -> np.ndarray:
    """Read a mask as a ``1 x H x W`` float32 array binarised at 0.5."""
    try:
        with Image.open(path) as img:
            img = img.convert("L")
            if size is not None:
                img = img.resize((size, size), Image.Resampling.BILINEAR)
            array = np.asarray(img, dtype=np.float32) / 255.0
    except OSError as e:
        raise DataError(f"Cannot read mask '{path}': {e}", original_error=e) from e
    return (array >= 0.5).astype(np.float32)[None]


def write_mask(path: str | Path, mask: np.ndarray) -> None:
    """Write a map in [0, 1] (``H x W`` or ``1 x H x W``) as an 8-bit grayscale PNG."""
    values = np.asarray(mask, dtype=np.float64).reshape(mask.shape[-2:])
    pixels = np.clip(np.round(values * 255.0), 0, 255).astype(np.uint8)
    try:
        Image.fromarray(pixels).save(path, format="PNG")
    except OSError as e:
        raise WriteFailureError(f"Cannot write mask '{path}': {e}", original_error=e) from e


def _list_images(folder: Path) -> list[Path]:
    return sorted(p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def _relative(path: Path, root: Path) -> str:
    return path.relative_to(root).as_posix()


def _load_scenes(root: Path) -> dict[str, Any]:
    scenes_path = root / SCENES_FILE
    if not scenes_path.is_file():
        return {}
    try:
        return json.loads(scenes_path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise DataError(f"Cannot read '{scenes_path}': {e}", original_error=e) from e


def load_index(root_path: str | Path, split: Split | str | None) -> DatasetIndex:
    """Scan a dataset root in the canonical layout.

    Parameters
    ----------
    root_path : str or Path
        Directory containing ``Camo/`` and ``Ref/``.
    split : Split or str or None
        Split to index. ``None`` indexes both splits.

    Returns
    -------
    DatasetIndex
        Index filtered to ``split``. Category ids come from the sorted union of
        category folders over both subsets and both splits, so they are stable.

    Raises
    ------
    MissingDirectoryError
        If ``Camo/<split>`` or ``Ref/<split>`` is absent.
    EmptyCategoryError
        If a category with camouflaged images has no referring image in the split.
    """
    root = Path(root_path)
    splits = [Split(split).value] if split is not None else [s.value for s in Split]
    camo_dir, ref_dir = root / "Camo", root / "Ref"
    for s in splits:
        for base in (camo_dir, ref_dir):
            if not (base / s).is_dir():
                raise MissingDirectoryError(
                    f"Expected directory '{base / s}'. The dataset root must contain "
                    "Camo/<split>/<category>/ and Ref/<split>/<category>/ folders."
                )

    categories = sorted(
        {
            d.name
            for base in (camo_dir, ref_dir)
            for s in Split
            if (base / s.value).is_dir()
            for d in (base / s.value).iterdir()
            if d.is_dir()
        }
    )
    category_ids = {name: i for i, name in enumerate(categories)}
    scenes = _load_scenes(root)

    camo_records: list[CamoRecord] = []
    ref_records: list[RefRecord] = []
    for s in splits:
        for name in categories:
            folder = camo_dir / s / name
            if not folder.is_dir():
                continue
            for image_path in _list_images(folder):
                mask_path = image_path.with_suffix(MASK_SUFFIX)
                if not mask_path.is_file():
                    raise DataError(f"Mask '{mask_path}' missing for '{image_path}'")
                relative = _relative(image_path, root)
                n_objects = scenes.get(relative, {}).get("n_objects")
                camo_records.append(
                    CamoRecord(
                        image_path=relative,
                        mask_path=_relative(mask_path, root),
                        category_id=category_ids[name],
                        split=s,
                        n_objects=n_objects,
                    )
                )

        for name in categories:
            folder = ref_dir / s / name
            if not folder.is_dir():
                continue
            for image_path in _list_images(folder):
                mask_path = image_path.with_suffix(MASK_SUFFIX)
                ref_records.append(
                    RefRecord(
                        image_path=_relative(image_path, root),
                        category_id=category_ids[name],
                        split=s,
                        mask_path=_relative(mask_path, root) if mask_path.is_file() else None,
                    )
                )

        used = {r.category_id for r in camo_records if r.split == s}
        available = {r.category_id for r in ref_records if r.split == s}
        missing = sorted(used - available)
        if missing:
            raise EmptyCategoryError(
                f"Category '{categories[missing[0]]}' has no referring images in split '{s}'"
            )

    index = DatasetIndex(
        root=str(root_path),
        camo_records=tuple(camo_records),
        ref_records=tuple(ref_records),
        categories=tuple(categories),
    )
    logger.info(
        f"Indexed {root}: {len(camo_records)} camo / {len(ref_records)} ref images, "
        f"{len(categories)} categories, split={split if split is not None else 'all'}"
    )
    return index


def sample_episode(
    index: DatasetIndex,
    camo_record_id: int,
    k: int,
    rng_seed: int,
    image_size: int = 352,
    with_ref_masks: bool = False,
) -> Episode:
    """Build an episode for one camouflaged record.

    Referring images are drawn without replacement from the record's category
    and split. The draw depends only on ``rng_seed``.

    Parameters
    ----------
    index : DatasetIndex
        Dataset index.
    camo_record_id : int
        Position of the record in ``index.camo_records``.
    k : int
        Number of referring images, ``k >= 1``.
    rng_seed : int
        Seed of the reference draw.
    image_size : int, default 352
        Every image is stretched to ``image_size x image_size``.
    with_ref_masks : bool, default False
        Also load the referring masks (required by the ``gt`` provider).

    Raises
    ------
    InsufficientReferencesError
        If the category offers fewer than ``k`` referring images.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    record = index.camo_records[camo_record_id]
    candidates = index.refs_for(record.category_id, record.split)
    if k > len(candidates):
        raise InsufficientReferencesError(
            f"Requested {k} referring images but category "
            f"'{index.categories[record.category_id]}' has {len(candidates)} in split "
            f"'{record.split}'"
        )
    rng = np.random.default_rng(rng_seed)
    chosen = [candidates[i] for i in rng.choice(len(candidates), size=k, replace=False)]

    ref_masks = None
    if with_ref_masks:
        missing = [r.image_path for r in chosen if r.mask_path is None]
        if missing:
            raise DataError(f"Referring masks missing for {missing[0]} (needed by gt provider)")
        ref_masks = [read_mask(index.path(r.mask_path), image_size) for r in chosen if r.mask_path]

    return Episode(
        camo_image=read_image(index.path(record.image_path), image_size),
        gt_mask=read_mask(index.path(record.mask_path), image_size),
        ref_images=[read_image(index.path(r.image_path), image_size) for r in chosen],
        category_id=record.category_id,
        category_name=index.categories[record.category_id],
        ref_masks=ref_masks,
        n_objects=record.n_objects,
    )


def episode_seed(base_seed: int, record_id: int, epoch: int = 0) -> int:
    """Derive the reference-draw seed of one record in one pass over the data."""
    return int(np.random.SeedSequence([base_seed, epoch, record_id]).generate_state(1)[0])


@dataclass
class EpisodeDataset(Dataset):
    """Map-style torch dataset of episodes over the camouflaged records of an index.

    With ``k == 0`` (baseline mode) no referring images are loaded and the
    ``refs`` tensor has a zero-length K axis.
    """

    index: DatasetIndex
    k: int
    image_size: int
    seed: int = 0
    with_ref_masks: bool = False
    epoch: int = field(default=0)

    def set_epoch(self, epoch: int) -> None:
        """Select a fresh reference draw for each record."""
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.index.camo_records)

    def __getitem__(self, i: int) -> dict[str, Any]:
        record = self.index.camo_records[i]
        size = self.image_size
        if self.k == 0:
            camo = read_image(self.index.path(record.image_path), size)
            gt = read_mask(self.index.path(record.mask_path), size)
            refs = np.zeros((0, 3, size, size), dtype=np.float32)
            ref_masks = np.zeros((0, 1, size, size), dtype=np.float32)
        else:
            episode = sample_episode(
                self.index,
                i,
                self.k,
                episode_seed(self.seed, i, self.epoch),
                image_size=size,
                with_ref_masks=self.with_ref_masks,
            )
            camo, gt = episode.camo_image, episode.gt_mask
            refs = np.stack(episode.ref_images)
            ref_masks = (
                np.stack(episode.ref_masks)
                if episode.ref_masks is not None
                else np.ones((self.k, 1, size, size), dtype=np.float32)
            )
        return {
            "camo": torch.from_numpy(camo),
            "gt": torch.from_numpy(gt),
            "refs": torch.from_numpy(refs),
            "ref_masks": torch.from_numpy(ref_masks),
            "category_id": record.category_id,
            "n_objects": record.n_objects if record.n_objects is not None else -1,
            "record_id": i,
        }


def collate_episodes(items: list[dict[str, Any]]) -> dict[str, torch.Tensor]:
    """Stack episode dictionaries into a batch (``refs`` becomes ``B x K x 3 x H x W``)."""
    batch: dict[str, torch.Tensor] = {}
    for key in ("camo", "gt", "refs", "ref_masks"):
        batch[key] = torch.stack([item[key] for item in items])
    for key in ("category_id", "n_objects", "record_id"):
        batch[key] = torch.tensor([item[key] for item in items], dtype=torch.long)
    return batch
