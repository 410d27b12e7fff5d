"""Dataset loading, resizing, augmentation, splitting, and synthesis."""
import logging
import math

import numpy as np
import pytest
from PIL import Image

from wdffu import data
from wdffu.errors import DataError, DimensionError


def write_png(path, arr):
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").save(path)


def make_pair(class_dir, stem, size=16, mask_value=255):
    rng = np.random.default_rng(abs(hash(stem)) % (2 ** 32))
    write_png(class_dir / f"{stem}.png", rng.integers(0, 256, (size, size)))
    mask = np.zeros((size, size))
    mask[4:10, 4:10] = mask_value
    write_png(class_dir / f"{stem}_mask.png", mask)


@pytest.fixture
def dataset_root(tmp_path):
    for d in ("benign", "malignant"):
        (tmp_path / d).mkdir()
    return tmp_path


class TestLoadDataset:
    def test_pairs_and_labels(self, dataset_root):
        make_pair(dataset_root / "benign", "b1")
        make_pair(dataset_root / "benign", "b2")
        make_pair(dataset_root / "malignant", "m1")
        samples = data.load_dataset(dataset_root)
        assert [s.id for s in samples] == ["benign/b1", "benign/b2", "malignant/m1"]
        assert [s.class_label for s in samples] == ["benign", "benign", "malignant"]
        for s in samples:
            assert s.image.shape == (1, 16, 16) and s.mask.shape == (1, 16, 16)
            assert 0.0 <= s.image.min() and s.image.max() <= 1.0

    def test_mask_binarized_exactly(self, dataset_root):
        make_pair(dataset_root / "benign", "b1", mask_value=255)
        sample = data.load_dataset(dataset_root)[0]
        assert set(np.unique(sample.mask)) == {0.0, 1.0}
        assert sample.mask[0, 5, 5] == 1.0 and sample.mask[0, 0, 0] == 0.0

    def test_threshold_at_127(self, dataset_root):
        class_dir = dataset_root / "benign"
        write_png(class_dir / "b1.png", np.full((8, 8), 100))
        mask = np.zeros((8, 8))
        mask[0, 0] = 127     # not above threshold
        mask[0, 1] = 128
        write_png(class_dir / "b1_mask.png", mask)
        sample = data.load_dataset(dataset_root)[0]
        assert sample.mask[0, 0, 0] == 0.0 and sample.mask[0, 0, 1] == 1.0

    def test_multi_mask_union(self, dataset_root):
        class_dir = dataset_root / "benign"
        write_png(class_dir / "b1.png", np.full((8, 8), 50))
        m1 = np.zeros((8, 8))
        m1[0:2, 0:2] = 255
        m2 = np.zeros((8, 8))
        m2[5:7, 5:7] = 255
        write_png(class_dir / "b1_mask.png", m1)
        write_png(class_dir / "b1_mask_1.png", m2)
        sample = data.load_dataset(dataset_root)[0]
        want = ((m1 > 127) | (m2 > 127)).astype(np.float64)
        assert np.array_equal(sample.mask[0], want)

    def test_image_without_mask_skipped_and_logged(self, dataset_root, caplog):
        make_pair(dataset_root / "benign", "b1")
        write_png(dataset_root / "benign" / "orphan.png", np.zeros((8, 8)))
        with caplog.at_level(logging.WARNING, logger="wdffu.data"):
            samples = data.load_dataset(dataset_root)
        assert [s.id for s in samples] == ["benign/b1"]
        assert "orphan" in caplog.text

    def test_undecodable_file_raises_with_path(self, dataset_root):
        class_dir = dataset_root / "benign"
        (class_dir / "b1.png").write_bytes(b"not a png at all")
        write_png(class_dir / "b1_mask.png", np.zeros((8, 8)))
        with pytest.raises(DataError, match="b1.png"):
            data.load_dataset(dataset_root)

    def test_mask_extent_mismatch_rejected(self, dataset_root):
        class_dir = dataset_root / "benign"
        write_png(class_dir / "b1.png", np.zeros((8, 8)))
        write_png(class_dir / "b1_mask.png", np.zeros((9, 9)))
        with pytest.raises(DataError, match="extents"):
            data.load_dataset(dataset_root)

    def test_missing_class_directories_rejected(self, tmp_path):
        with pytest.raises(DataError):
            data.load_dataset(tmp_path)

    def test_single_class_directory_suffices(self, tmp_path):
        (tmp_path / "malignant").mkdir()
        make_pair(tmp_path / "malignant", "m1")
        samples = data.load_dataset(tmp_path)
        assert [s.class_label for s in samples] == ["malignant"]

    def test_normal_directory_ignored(self, dataset_root):
        make_pair(dataset_root / "benign", "b1")
        (dataset_root / "normal").mkdir()
        make_pair(dataset_root / "normal", "n1")
        samples = data.load_dataset(dataset_root)
        assert [s.id for s in samples] == ["benign/b1"]


def toy_sample(image, mask, id="t", class_label="benign"):
    return data.Sample(image=np.asarray(image, dtype=np.float64)[None],
                       mask=np.asarray(mask, dtype=np.float64)[None],
                       id=id, class_label=class_label)


class TestResize:
    def test_identity_on_matching_grid(self):
        rng = np.random.default_rng(0)
        image = rng.random((12, 12))
        mask = (rng.random((12, 12)) < 0.5).astype(np.float64)
        out = data.resize_to(toy_sample(image, mask), size=(12, 12))
        assert np.array_equal(out.image[0], image)
        assert np.array_equal(out.mask[0], mask)

    def test_constant_image_stays_constant(self):
        out = data.resize_to(toy_sample(np.full((37, 51), 0.3), np.zeros((37, 51))))
        assert out.image.shape == (1, 224, 224)
        assert np.allclose(out.image, 0.3, atol=1e-12)

    def test_half_plane_mask_keeps_boundary_position(self):
        mask = np.zeros((100, 100))
        mask[:, :50] = 1.0
        out = data.resize_to(toy_sample(np.zeros((100, 100)), mask))
        resized = out.mask[0]
        assert set(np.unique(resized)) <= {0.0, 1.0}
        # The analytic cutoff sits at column 112 of 224; allow one pixel.
        assert resized[:, :111].all()
        assert not resized[:, 113:].any()
        assert (np.diff(resized, axis=1) <= 0).all()   # single transition per row

    def test_mask_remains_binary_downscale(self):
        rng = np.random.default_rng(1)
        mask = (rng.random((61, 45)) < 0.4).astype(np.float64)
        out = data.resize_to(toy_sample(rng.random((61, 45)), mask), size=(32, 32))
        assert set(np.unique(out.mask)) <= {0.0, 1.0}

    def test_empty_extent_rejected(self):
        sample = data.Sample(image=np.zeros((1, 0, 5)), mask=np.zeros((1, 0, 5)),
                             id="e", class_label="benign")
        with pytest.raises(DimensionError):
            data.resize_to(sample)


class _ScriptedRng:
    """Plays back fixed draws for the augmentation decision sequence."""

    def __init__(self, randoms, ints):
        self._randoms = list(randoms)
        self._ints = list(ints)

    def random(self):
        return self._randoms.pop(0)

    def integers(self, _n):
        return self._ints.pop(0)


def checkered_sample(n=8):
    rng = np.random.default_rng(3)
    image = rng.random((n, n))
    mask = np.zeros((n, n))
    mask[1:4, 2:7] = 1.0
    return toy_sample(image, mask)


class TestAugment:
    def test_deterministic_for_fixed_seed(self):
        s = checkered_sample()
        a = data.augment(s, np.random.default_rng(7))
        b = data.augment(s, np.random.default_rng(7))
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)

    def test_hflip_twice_is_identity(self):
        s = checkered_sample()
        once = data.augment(s, _ScriptedRng([0.0, 0.9], [0]))
        twice = data.augment(once, _ScriptedRng([0.0, 0.9], [0]))
        assert np.array_equal(twice.image, s.image)
        assert np.array_equal(twice.mask, s.mask)
        assert not np.array_equal(once.image, s.image)

    def test_four_quarter_turns_are_identity(self):
        s = checkered_sample()
        out = s
        for _ in range(4):
            out = data.augment(out, _ScriptedRng([0.9, 0.9], [1]))
        assert np.array_equal(out.image, s.image)
        assert np.array_equal(out.mask, s.mask)

    def test_alignment_preserved(self):
        s = checkered_sample()
        for seed in range(16):
            out = data.augment(s, np.random.default_rng(seed))
            assert out.mask.sum() == s.mask.sum()
            assert set(np.unique(out.mask)) <= {0.0, 1.0}
            lesion = np.sort(out.image[out.mask == 1.0])
            assert np.array_equal(lesion, np.sort(s.image[s.mask == 1.0]))

    def test_produces_distinct_outputs(self):
        s = checkered_sample()
        outs = {data.augment(s, np.random.default_rng(seed)).image.tobytes()
                for seed in range(32)}
        assert len(outs) > 1

    def test_non_square_rejected(self):
        s = toy_sample(np.zeros((4, 6)), np.zeros((4, 6)))
        with pytest.raises(DimensionError):
            data.augment(s, np.random.default_rng(0))


def tiny_samples(counts):
    out = []
    i = 0
    for label, n in counts.items():
        for _ in range(n):
            out.append(data.Sample(image=np.zeros((1, 2, 2)), mask=np.zeros((1, 2, 2)),
                                   id=f"{label}/{i:03d}", class_label=label))
            i += 1
    return out


class TestSplit:
    def test_per_class_flooring_on_163(self):
        samples = tiny_samples({"benign": 110, "malignant": 53})
        train, val, test = data.split(samples, data.SplitSpec(seed=0))

        def counts(part):
            return (sum(s.class_label == "benign" for s in part),
                    sum(s.class_label == "malignant" for s in part))

        assert counts(train) == (77, 37)
        assert counts(val) == (16, 7)
        assert counts(test) == (17, 9)
        assert (len(train), len(val), len(test)) == (114, 23, 26)

    def test_partition_property(self):
        samples = tiny_samples({"benign": 21, "malignant": 13})
        train, val, test = data.split(samples, data.SplitSpec(seed=1))
        ids = [s.id for s in train] + [s.id for s in val] + [s.id for s in test]
        assert sorted(ids) == sorted(s.id for s in samples)
        assert len(set(ids)) == len(ids)

    def test_twenty_single_class(self):
        samples = tiny_samples({"benign": 20})
        train, val, test = data.split(samples, data.SplitSpec(seed=2))
        assert (len(train), len(val), len(test)) == (14, 3, 3)

    def test_deterministic_membership(self):
        samples = tiny_samples({"benign": 40, "malignant": 25})
        a = data.split(samples, data.SplitSpec(seed=5))
        b = data.split(samples, data.SplitSpec(seed=5))
        for part_a, part_b in zip(a, b):
            assert [s.id for s in part_a] == [s.id for s in part_b]
        c = data.split(samples, data.SplitSpec(seed=6))
        assert any([s.id for s in x] != [s.id for s in y] for x, y in zip(a, c))

    def test_order_invariance(self):
        samples = tiny_samples({"benign": 17, "malignant": 9})
        rng = np.random.default_rng(3)
        shuffled = list(samples)
        rng.shuffle(shuffled)
        a = data.split(samples, data.SplitSpec(seed=4))
        b = data.split(shuffled, data.SplitSpec(seed=4))
        for part_a, part_b in zip(a, b):
            assert [s.id for s in part_a] == [s.id for s in part_b]

    def test_tiny_class_all_to_train(self, caplog):
        samples = tiny_samples({"benign": 10, "malignant": 2})
        with caplog.at_level(logging.WARNING, logger="wdffu.data"):
            train, val, test = data.split(samples, data.SplitSpec(seed=7))
        assert sum(s.class_label == "malignant" for s in train) == 2
        assert all(s.class_label == "benign" for s in val + test)
        assert "malignant" in caplog.text


def ellipse_perimeter(a, b):
    return math.pi * (3.0 * (a + b) - math.sqrt((3.0 * a + b) * (a + 3.0 * b)))


class TestSynthDataset:
    def test_deterministic(self):
        a = data.synth_dataset(4, 64, np.random.default_rng(9))
        b = data.synth_dataset(4, 64, np.random.default_rng(9))
        for sa, sb in zip(a, b):
            assert np.array_equal(sa.image, sb.image)
            assert np.array_equal(sa.mask, sb.mask)

    def test_value_ranges_and_labels(self):
        samples = data.synth_dataset(6, 48, np.random.default_rng(10))
        assert {s.class_label for s in samples} == {"benign", "malignant"}
        for s in samples:
            assert s.image.min() >= 0.0 and s.image.max() <= 1.0
            assert set(np.unique(s.mask)) == {0.0, 1.0}

    def test_lesion_brighter_than_background(self):
        for s in data.synth_dataset(20, 48, np.random.default_rng(11)):
            lesion = s.image[s.mask == 1.0].mean()
            background = s.image[s.mask == 0.0].mean()
            assert lesion > background

    def test_mask_area_matches_analytic_ellipse(self):
        seed, size, n = 12, 64, 10
        samples = data.synth_dataset(n, size, np.random.default_rng(seed))
        replay = np.random.default_rng(seed)
        for s in samples:
            replay.uniform(0.10, 0.25)
            replay.uniform(0.55, 0.85)
            replay.uniform(0.3 * size, 0.7 * size, size=2)
            a, b = replay.uniform(0.12 * size, 0.30 * size, size=2)
            replay.uniform(0.0, math.pi)
            replay.uniform(-1.0, 1.0, (size, size))
            area = s.mask.sum()
            assert abs(area - math.pi * a * b) <= ellipse_perimeter(a, b) + 8.0

    def test_too_small_rejected(self):
        with pytest.raises(DimensionError):
            data.synth_dataset(1, 16, np.random.default_rng(0))


class TestSaveMaskPng:
    def test_values_are_zero_and_255(self, tmp_path):
        mask = np.zeros((1, 9, 9))
        mask[0, 2:5, 3:8] = 1.0
        path = tmp_path / "pred.png"
        data.save_mask_png(path, mask)
        arr = np.asarray(Image.open(path))
        assert arr.dtype == np.uint8
        assert set(np.unique(arr)) == {0, 255}
        assert np.array_equal(arr > 127, mask[0].astype(bool))

    def test_bad_shape_rejected(self, tmp_path):
        with pytest.raises(DimensionError):
            data.save_mask_png(tmp_path / "x.png", np.zeros((2, 4, 4)))
