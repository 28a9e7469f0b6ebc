# SPDX-FileCopyrightText: 2024-2026 Nicolai Buchwitz <nb@tipi-net.de>
#
# SPDX-License-Identifier: LGPL-2.1-or-later

"""Tests for dataset-level evaluation."""

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np
import pytest
import torch

from refcod.dataset import DatasetIndex, load_index
from refcod.errors import InsufficientReferencesError
from refcod.evaluation import (
    draw_count,
    evaluate_dataset,
    format_table,
    write_report,
)
from refcod.model import R2CNet

SIZE = 64


def _gt_predictor(batch: dict[str, torch.Tensor]) -> torch.Tensor:
    return batch["gt"].clone()


def _constant_predictor(batch: dict[str, torch.Tensor]) -> torch.Tensor:
    return torch.full_like(batch["gt"], 0.3)


@pytest.fixture
def split_index(toy_root: Path) -> DatasetIndex:
    """Index of the toy test split."""
    return load_index(toy_root, "test")


class TestEvaluateDataset:
    """Test evaluation runs."""

    def test_perfect_predictor(self, split_index: DatasetIndex) -> None:
        """Test that returning the ground truth scores perfectly."""
        result = evaluate_dataset(_gt_predictor, split_index, 3, SIZE, repeats=2, progress=False)
        assert result.report.s_measure == pytest.approx(1.0)
        assert result.report.e_measure_adaptive == pytest.approx(1.0)
        assert result.report.weighted_f == pytest.approx(1.0)
        assert result.report.mae == 0.0
        assert result.report.n_images == len(split_index.camo_records)

    def test_draws_are_averaged(self, split_index: DatasetIndex) -> None:
        """Test that k below the available references triggers repeated draws."""
        result = evaluate_dataset(_gt_predictor, split_index, 3, SIZE, repeats=2, progress=False)
        assert result.repeats == 2
        assert len(result.per_image) == 2 * len(split_index.camo_records)
        assert {entry["draw"] for entry in result.per_image} == {0, 1}

    def test_report_is_mean_of_images(self, split_index: DatasetIndex) -> None:
        """Test that averages can be recomputed from the per-image scores."""
        result = evaluate_dataset(
            _constant_predictor, split_index, 3, SIZE, repeats=2, progress=False
        )
        assert result.report.mae == pytest.approx(np.mean([e["mae"] for e in result.per_image]))
        assert result.report.s_measure == pytest.approx(
            np.mean([e["sm"] for e in result.per_image])
        )

    def test_schema_is_independent_of_k(self, split_index: DatasetIndex) -> None:
        """Test that baseline and full-reference runs report the same keys."""
        baseline = evaluate_dataset(_gt_predictor, split_index, 0, SIZE, progress=False)
        full = evaluate_dataset(_gt_predictor, split_index, 5, SIZE, progress=False)
        assert set(baseline.to_dict()) == set(full.to_dict())
        assert baseline.repeats == full.repeats == 1
        assert baseline.to_dict()["k"] == 0
        assert full.to_dict()["k"] == 5

    def test_object_multiplicity_splits(self, split_index: DatasetIndex) -> None:
        """Test that toy scenes with one object land in the single split."""
        result = evaluate_dataset(_gt_predictor, split_index, 0, SIZE, progress=False)
        assert set(result.splits) == {"single", "overall"}
        assert result.splits["single"].n_images == len(split_index.camo_records)
        assert "single" in format_table(result)

    def test_mixed_multiplicity_splits(self, toy_root: Path) -> None:
        """Test single and multi splits partition the images and average their own records."""
        index = load_index(toy_root, None)
        records = tuple(
            dataclasses.replace(r, n_objects=1 if i % 3 else 2 + i % 2)
            for i, r in enumerate(index.camo_records)
        )
        mixed = dataclasses.replace(index, camo_records=records)
        result = evaluate_dataset(_constant_predictor, mixed, 0, SIZE, progress=False)
        assert set(result.splits) == {"single", "multi", "overall"}
        single, multi = result.splits["single"], result.splits["multi"]
        assert single.n_images + multi.n_images == result.splits["overall"].n_images
        assert result.splits["overall"].n_images == len(records)
        for name, report in (("single", single), ("multi", multi)):
            wanted = {i for i, r in enumerate(records) if (r.n_objects > 1) == (name == "multi")}
            entries = [e for e in result.per_image if e["record_id"] in wanted]
            assert report.n_images == len(wanted)
            assert report.s_measure == pytest.approx(np.mean([e["sm"] for e in entries]))
            assert report.weighted_f == pytest.approx(np.mean([e["wf"] for e in entries]))
            assert report.mae == pytest.approx(np.mean([e["mae"] for e in entries]))
            assert report.e_measure_adaptive == pytest.approx(
                np.mean([e["ae"] for e in entries])
            )
        assert "multi" in format_table(result)

    def test_insufficient_references(self, split_index: DatasetIndex) -> None:
        """Test that k above the available references is rejected."""
        with pytest.raises(InsufficientReferencesError):
            evaluate_dataset(_gt_predictor, split_index, 6, SIZE, progress=False)

    def test_model_is_deterministic(self, split_index: DatasetIndex, small_model: R2CNet) -> None:
        """Test that evaluating a model twice gives identical reports."""
        a = evaluate_dataset(small_model, split_index, 3, SIZE, repeats=2, progress=False)
        b = evaluate_dataset(small_model, split_index, 3, SIZE, repeats=2, progress=False)
        assert a.to_dict() == b.to_dict()
        assert 0.0 <= a.report.mae <= 1.0
        assert small_model.training is False


class TestDrawCount:
    """Test the number of reference draws."""

    @pytest.mark.parametrize(("k", "expected"), [(0, 1), (1, 3), (4, 3), (5, 1), (6, 1)])
    def test_draws(self, split_index: DatasetIndex, k: int, expected: int) -> None:
        """Test draws for the five test references per category."""
        assert draw_count(split_index, k, 3) == expected


class TestWriteReport:
    """Test report files."""

    def test_files(self, split_index: DatasetIndex, tmp_path: Path) -> None:
        """Test report.json keys and the 256-row curves.csv."""
        result = evaluate_dataset(_gt_predictor, split_index, 3, SIZE, repeats=2, progress=False)
        report_path, curves_path = write_report(tmp_path / "eval", result)
        report = json.loads(report_path.read_text())
        assert set(report) >= {"sm", "ae", "wf", "mae", "n", "k", "repeats", "splits"}
        assert report["k"] == 3
        assert report["mae"] == 0.0
        with open(curves_path, newline="") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["threshold", "precision", "recall", "fbeta"]
        assert len(rows) == 257

    def test_repeatable_bytes(self, split_index: DatasetIndex, tmp_path: Path) -> None:
        """Test that repeated evaluation writes byte-identical reports."""
        paths = []
        for name in ("a", "b"):
            result = evaluate_dataset(
                _constant_predictor, split_index, 3, SIZE, repeats=2, progress=False
            )
            paths.append(write_report(tmp_path / name, result)[0])
        assert paths[0].read_bytes() == paths[1].read_bytes()
