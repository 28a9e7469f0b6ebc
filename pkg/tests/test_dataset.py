# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Tests for the refcod.dataset module."""

import shutil
from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image

from refcod.dataset import (
    DatasetIndex,
    Episode,
    EpisodeDataset,
    Split,
    collate_episodes,
    episode_seed,
    load_index,
    read_mask,
    sample_episode,
    write_mask,
)
from refcod.errors import (
    DataError,
    EmptyCategoryError,
    InsufficientReferencesError,
    MissingDirectoryError,
)


class TestLoadIndex:
    """Test scanning the canonical layout."""

    def test_categories(self, toy_root: Path) -> None:
        """Test that two sorted categories are found."""
        index = load_index(toy_root, Split.TEST)
        assert index.categories == ("ellipse", "triangle")

    def test_split_filter(self, toy_root: Path) -> None:
        """Test that records belong to the requested split."""
        train = load_index(toy_root, "train")
        test = load_index(toy_root, "test")
        assert {r.split for r in train.camo_records} == {"train"}
        assert {r.split for r in test.ref_records} == {"test"}
        assert len(train.camo_records) + len(test.camo_records) == 8
        assert len(train.ref_records) + len(test.ref_records) == 50

    def test_both_splits(self, toy_root: Path) -> None:
        """Test that split=None indexes everything."""
        index = load_index(toy_root, None)
        assert len(index.camo_records) == 8
        assert len(index.ref_records) == 50

    def test_five_test_references_per_category(self, toy_root: Path) -> None:
        """Test the 20/5 reference split of the toy data."""
        index = load_index(toy_root, Split.TEST)
        for category_id in range(len(index.categories)):
            assert len(index.refs_for(category_id, "test")) == 5

    def test_repeated_loads_serialise_identically(self, toy_root: Path) -> None:
        """Test that the index is a pure function of the filesystem."""
        assert load_index(toy_root, "train").to_json() == load_index(toy_root, "train").to_json()

    def test_json_round_trip(self, toy_root: Path, tmp_path: Path) -> None:
        """Test that a saved manifest rebuilds the same index."""
        index = load_index(toy_root, None)
        index.save(tmp_path / "index.json")
        assert DatasetIndex.from_json((tmp_path / "index.json").read_text()) == index

    def test_scene_multiplicity(self, toy_root: Path) -> None:
        """Test that object multiplicity is read from scenes.json."""
        index = load_index(toy_root, None)
        assert all(r.n_objects == 1 for r in index.camo_records)

    def test_missing_layout(self, tmp_path: Path) -> None:
        """Test that a root without Camo/ and Ref/ is rejected."""
        with pytest.raises(MissingDirectoryError):
            load_index(tmp_path, "train")

    def test_empty_reference_folder(self, toy_root: Path, tmp_path: Path) -> None:
        """Test that a category without test references raises EmptyCategoryError."""
        root = tmp_path / "copy"
        shutil.copytree(toy_root, root)
        for path in (root / "Ref" / "test" / "ellipse").iterdir():
            path.unlink()
        with pytest.raises(EmptyCategoryError, match="ellipse"):
            load_index(root, "test")

    def test_missing_camo_mask(self, toy_root: Path, tmp_path: Path) -> None:
        """Test that a camouflaged image without mask is a data error."""
        root = tmp_path / "copy"
        shutil.copytree(toy_root, root)
        next((root / "Camo" / "train" / "triangle").glob("*.png")).unlink()
        with pytest.raises(DataError, match="Mask"):
            load_index(root, "train")


class TestMaskIO:
    """Test reading and writing masks."""

    def test_masks_binarise_at_half(self, tmp_path: Path) -> None:
        """Test that anti-aliased edges are binarised at 0.5."""
        pixels = np.array([[0, 100, 127], [128, 200, 255]], dtype=np.uint8)
        Image.fromarray(pixels).save(tmp_path / "m.png")
        mask = read_mask(tmp_path / "m.png")
        assert mask.shape == (1, 2, 3)
        np.testing.assert_array_equal(mask[0], [[0, 0, 0], [1, 1, 1]])

    def test_write_mask_scales_to_8_bit(self, tmp_path: Path) -> None:
        """Test that [0, 1] maps are written as 0..255."""
        write_mask(tmp_path / "p.png", np.array([[[0.0, 0.5, 1.0]]]))
        with Image.open(tmp_path / "p.png") as img:
            assert img.mode == "L"
            np.testing.assert_array_equal(np.asarray(img), [[0, 128, 255]])


class TestSampleEpisode:
    """Test episode construction."""

    def test_shapes(self, toy_root: Path) -> None:
        """Test image, mask and reference shapes."""
        index = load_index(toy_root, "test")
        episode = sample_episode(index, 0, 3, 11, image_size=32)
        assert episode.camo_image.shape == (3, 32, 32)
        assert episode.gt_mask.shape == (1, 32, 32)
        assert episode.k == 3
        assert all(ref.shape == (3, 32, 32) for ref in episode.ref_images)

    def test_exhausts_five_references(self, toy_root: Path) -> None:
        """Test that k=5 on a category with 5 test references uses all of them."""
        index = load_index(toy_root, "test")
        a = sample_episode(index, 0, 5, 1, image_size=64)
        b = sample_episode(index, 0, 5, 2, image_size=64)
        key = lambda e: sorted(ref.tobytes() for ref in e.ref_images)  # noqa: E731
        assert key(a) == key(b)

    def test_too_many_references(self, toy_root: Path) -> None:
        """Test that k=6 with 5 references raises InsufficientReferencesError."""
        index = load_index(toy_root, "test")
        with pytest.raises(InsufficientReferencesError):
            sample_episode(index, 0, 6, 0, image_size=64)

    def test_deterministic(self, toy_root: Path) -> None:
        """Test that the same seed gives bitwise identical episodes."""
        index = load_index(toy_root, "train")
        a = sample_episode(index, 2, 3, 99, image_size=64)
        b = sample_episode(index, 2, 3, 99, image_size=64)
        np.testing.assert_array_equal(a.camo_image, b.camo_image)
        for ra, rb in zip(a.ref_images, b.ref_images):
            np.testing.assert_array_equal(ra, rb)

    def test_references_share_category(self, toy_root: Path) -> None:
        """Test that references come from the record's category."""
        index = load_index(toy_root, "train")
        episode = sample_episode(index, 0, 2, 3, image_size=64)
        assert episode.category_id == index.camo_records[0].category_id
        assert episode.category_name == index.categories[episode.category_id]

    def test_reference_masks(self, toy_root: Path) -> None:
        """Test that referring masks are loaded on request."""
        index = load_index(toy_root, "train")
        episode = sample_episode(index, 0, 2, 3, image_size=64, with_ref_masks=True)
        assert episode.ref_masks is not None
        assert len(episode.ref_masks) == 2
        assert all(m.sum() > 0 for m in episode.ref_masks)

    def test_k_must_be_positive(self, toy_root: Path) -> None:
        """Test that k=0 is not a valid episode."""
        index = load_index(toy_root, "train")
        with pytest.raises(ValueError):
            sample_episode(index, 0, 0, 0)

    def test_episode_rejects_mismatched_shapes(self) -> None:
        """Test Episode shape checks."""
        with pytest.raises(ValueError):
            Episode(
                camo_image=np.zeros((3, 8, 8), np.float32),
                gt_mask=np.zeros((1, 4, 4), np.float32),
                ref_images=[np.zeros((3, 8, 8), np.float32)],
                category_id=0,
                category_name="a",
            )


class TestEpisodeDataset:
    """Test the torch dataset and collation."""

    def test_item_layout(self, toy_root: Path) -> None:
        """Test tensor shapes of one item."""
        dataset = EpisodeDataset(load_index(toy_root, "train"), 3, 64, with_ref_masks=True)
        item = dataset[0]
        assert item["camo"].shape == (3, 64, 64)
        assert item["gt"].shape == (1, 64, 64)
        assert item["refs"].shape == (3, 3, 64, 64)
        assert item["ref_masks"].shape == (3, 1, 64, 64)
        assert item["n_objects"] == 1

    def test_baseline_mode_has_empty_reference_axis(self, toy_root: Path) -> None:
        """Test that k=0 yields a zero-length K axis."""
        dataset = EpisodeDataset(load_index(toy_root, "train"), 0, 64)
        assert dataset[0]["refs"].shape == (0, 3, 64, 64)

    def test_epoch_changes_draw(self, toy_root: Path) -> None:
        """Test that set_epoch selects a different reference draw."""
        dataset = EpisodeDataset(load_index(toy_root, "train"), 2, 64)
        first = dataset[0]["refs"].clone()
        assert torch.equal(dataset[0]["refs"], first)
        draws = []
        for epoch in range(1, 6):
            dataset.set_epoch(epoch)
            draws.append(torch.equal(dataset[0]["refs"], first))
        assert not all(draws)

    def test_episode_seed_depends_on_inputs(self) -> None:
        """Test that seeds differ per record and epoch."""
        assert episode_seed(0, 1, 0) != episode_seed(0, 2, 0)
        assert episode_seed(0, 1, 0) != episode_seed(0, 1, 1)
        assert episode_seed(5, 3, 2) == episode_seed(5, 3, 2)

    def test_collate(self, toy_root: Path) -> None:
        """Test batching of items."""
        dataset = EpisodeDataset(load_index(toy_root, "train"), 2, 64)
        batch = collate_episodes([dataset[0], dataset[1]])
        assert batch["refs"].shape == (2, 2, 3, 64, 64)
        assert batch["record_id"].tolist() == [0, 1]
        assert batch["category_id"].dtype == torch.long
