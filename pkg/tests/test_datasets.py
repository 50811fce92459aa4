import rtcnet.augment
import rtcnet.datasets
from rtcnet.datasets import fuse_expert_labels, load, make_split, resize_to_input, split
from rtcnet.structure import AugmentSpec, FundusSample, SplitPlan

from conftest import blob_dataset

from pathlib import Path
import os

from PIL import Image
import numpy as np
import pytest

def test_every_layout_is_registered():
    assert set(rtcnet.datasets.methods) == {"eophtha", "diaretdb1", "heimed", "dir"}

def test_unknown_dataset(tmp_path):
    with pytest.raises(ValueError, match="Dataset not in"):
        load("messidor", tmp_path)

def test_missing_root(tmp_path):
    with pytest.raises(FileNotFoundError):
        load("heimed", tmp_path / "absent")


class TestEophtha:
    def test_loads_lesioned_and_healthy(self, eophtha_root):
        samples, report = load("eophtha", eophtha_root)
        assert [s.id for s in samples] == ["C0001", "C0002", "H0001"]
        assert report.loaded == 3 and report.skipped == 1
        skipped = [row for row in report.rows if row[1] == "skipped"]
        assert "C0003" in skipped[0][0] and "no annotation" in skipped[0][2]

    def test_masks(self, eophtha_root):
        samples, _ = load("eophtha", eophtha_root)
        by_id = {s.id: s for s in samples}
        assert by_id["H0001"].mask.sum() == 0
        assert by_id["C0001"].mask.sum() == 6 * 14
        for sample in samples:
            assert sample.source == "eophtha"
            assert sample.dims == sample.original_dims == (32, 48)
            assert set(np.unique(sample.mask)) <= {0.0, 1.0}

    def test_resizes_in_workers(self, eophtha_root):
        samples, _ = load("eophtha", eophtha_root, workers=2, dims=(64, 96))
        assert all(s.dims == (64, 96) and s.original_dims == (32, 48) for s in samples)

    def test_report_tsv(self, eophtha_root, tmp_path):
        _, report = load("eophtha", eophtha_root)
        report.save(tmp_path / "load-report.tsv")
        lines = (tmp_path / "load-report.tsv").read_text().splitlines()
        assert lines[0] == "file\tstatus\treason"
        assert len(lines) == 5

    def test_empty_root(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load("eophtha", tmp_path)


class TestDiaretdb1:
    def test_fused_masks_match_majority(self, diaretdb1_root):
        samples, report = load("diaretdb1", diaretdb1_root)
        assert [s.id for s in samples] == ["image001", "image002"]
        assert report.skipped == 0
        groundtruth = next(diaretdb1_root.rglob("ddb1_groundtruth"))
        for sample in samples:
            votes = sum(np.asarray(Image.open(groundtruth / f"expert{k}" / f"{sample.id}.png")) > 127
                        for k in range(1, 5))
            np.testing.assert_array_equal(sample.mask[0, 0], (votes >= 2).astype(np.float32))

    def test_threshold_is_honoured(self, diaretdb1_root):
        majority, _ = load("diaretdb1", diaretdb1_root, fusion_threshold=0.5)
        unanimous, _ = load("diaretdb1", diaretdb1_root, fusion_threshold=1.0)
        for a, b in zip(majority, unanimous):
            assert b.mask.sum() <= a.mask.sum()
            assert not (b.mask > a.mask).any()

    def test_missing_expert_map_skips(self, diaretdb1_root):
        (next(diaretdb1_root.rglob("ddb1_groundtruth")) / "expert3" / "image002.png").unlink()
        samples, report = load("diaretdb1", diaretdb1_root)
        assert [s.id for s in samples] == ["image001"]
        assert report.skipped == 1


class TestHeimed:
    def test_loads_annotated_images(self, heimed_root):
        samples, report = load("heimed", heimed_root)
        assert [s.id for s in samples] == ["IMG0001", "IMG0002"]
        assert report.skipped == 1
        assert samples[0].mask.sum() == 3 * 6
        assert samples[0].dims == (20, 28)


def test_directory_round_trip(tmp_path):
    expanded = rtcnet.augment.expand_dataset(blob_dataset(count=2, size=32), AugmentSpec(target_count=4))
    rtcnet.augment.materialize(expanded, tmp_path)
    samples, report = load("dir", tmp_path)
    assert [s.id for s in samples] == ["0000", "0001", "0002", "0003"]
    assert report.loaded == 4
    for sample, entry in zip(samples, expanded):
        assert sample.source == "synthetic"
        np.testing.assert_array_equal(sample.mask, entry.sample.mask)


class TestFusion:
    def test_all_zero(self):
        assert not fuse_expert_labels([np.zeros((3, 3))] * 4).any()

    def test_tie_is_positive(self):
        maps = [np.ones((1, 1)), np.ones((1, 1)), np.zeros((1, 1)), np.zeros((1, 1))]
        assert fuse_expert_labels(maps, 0.5)[0, 0] == 1.0

    def test_matches_per_pixel_count(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            maps = list(rng.integers(0, 5, (4, 3, 3)) / 4)
            threshold = float(rng.choice([0.25, 0.5, 0.75, 1.0]))
            fused = fuse_expert_labels(maps, threshold)
            for i in range(3):
                for j in range(3):
                    mean = sum(m[i, j] for m in maps) / 4
                    assert fused[i, j] == (1.0 if mean >= threshold else 0.0)

    def test_monotone(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            maps = list(rng.random((4, 5, 5)))
            before = fuse_expert_labels(maps)
            k = int(rng.integers(0, 4))
            maps[k] = np.minimum(maps[k] + rng.random((5, 5)), 1.0)
            assert not (before > fuse_expert_labels(maps)).any()

    def test_incongruent_maps(self):
        with pytest.raises(ValueError, match="congruent"):
            fuse_expert_labels([np.zeros((3, 3))] * 3 + [np.zeros((3, 4))])

    def test_needs_four_maps(self):
        with pytest.raises(ValueError, match="4 expert maps"):
            fuse_expert_labels([np.zeros((3, 3))] * 3)


class TestResize:
    def test_native_eophtha_size(self):
        rng = np.random.default_rng(0)
        image = rng.uniform(0, 1, (1, 3, 1360, 2048)).astype(np.float32)
        mask = (rng.random((1, 1, 1360, 2048)) < 0.05).astype(np.float32)
        resized = resize_to_input(FundusSample("x", "eophtha", image, mask, (1360, 2048)))
        assert resized.image.shape == (1, 3, 448, 512)
        assert resized.mask.shape == (1, 1, 448, 512)
        assert set(np.unique(resized.mask)) <= {0.0, 1.0}
        assert resized.original_dims == (1360, 2048)
        assert 0.0 <= resized.image.min() and resized.image.max() <= 1.0

    def test_background_stays_background(self):
        sample = FundusSample("x", "heimed", np.full((1, 3, 50, 70), 0.5, np.float32),
                              np.zeros((1, 1, 50, 70), np.float32), (50, 70))
        assert resize_to_input(sample, (32, 48)).mask.sum() == 0

    def test_dims_must_divide_by_16(self):
        sample = blob_dataset(count=1, size=32)[0]
        with pytest.raises(ValueError, match="multiple of 16"):
            resize_to_input(sample, (440, 512))


class TestSplit:
    ids = [f"C{k:04d}" for k in range(82)]

    def test_default_counts(self):
        plan = make_split(self.ids)
        assert len(plan.train_ids) == 60 and len(plan.test_ids) == 22
        assert not set(plan.train_ids) & set(plan.test_ids)
        assert set(plan.train_ids) | set(plan.test_ids) == set(self.ids)

    def test_stable_and_order_independent(self):
        assert make_split(self.ids, seed=3) == make_split(list(reversed(self.ids)), seed=3)
        assert make_split(self.ids, seed=3) != make_split(self.ids, seed=4)

    def test_bad_count(self):
        with pytest.raises(ValueError):
            make_split(self.ids[:10])

    def test_split_samples(self):
        samples = blob_dataset(count=5, size=32)
        plan = make_split([s.id for s in samples], test_count=2, seed=0)
        train, test = split(samples, plan)
        assert [s.id for s in train] == list(plan.train_ids)
        assert [s.id for s in test] == list(plan.test_ids)

    def test_plan_must_partition(self):
        samples = blob_dataset(count=3, size=32)
        with pytest.raises(ValueError, match="partition"):
            split(samples, SplitPlan(("blob00",), ("blob01",), 0))

    def test_overlap_rejected(self):
        with pytest.raises(ValueError, match="overlap"):
            SplitPlan(("a", "b"), ("b",), 0)


def dataset_root(variable: str) -> Path:
    value = os.environ.get(variable)
    if not value:
        pytest.skip(f"{variable} not set")
    return Path(value)

@pytest.mark.parametrize("variable,name,count", [("RTCNET_EOPHTHA", "eophtha", 82),
                                                 ("RTCNET_DIARETDB1", "diaretdb1", 89),
                                                 ("RTCNET_HEIMED", "heimed", 169)])
def test_full_dataset_counts(variable, name, count):
    samples, _ = load(name, dataset_root(variable), dims=(448, 512))
    assert len(samples) == count

def test_full_eophtha_composition():
    _, report = load("eophtha", dataset_root("RTCNET_EOPHTHA"), dims=(448, 512))
    reasons = [reason for _, status, reason in report.rows if status == "loaded"]
    assert reasons.count("lesioned") == 47
    assert reasons.count("healthy") == 35
