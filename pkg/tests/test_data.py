import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rmagg import data
from rmagg.data import Dataset, DatasetError, IdxFormatError


def write_idx_pair(directory, images: np.ndarray, labels: np.ndarray, compress=False):
    count, rows, cols = images.shape
    img_bytes = struct.pack(">iiii", data.IMAGES_MAGIC, count, rows, cols) + images.tobytes()
    lab_bytes = struct.pack(">ii", data.LABELS_MAGIC, count) + labels.tobytes()
    if compress:
        img_bytes, lab_bytes = gzip.compress(img_bytes), gzip.compress(lab_bytes)
    img_path = directory / ("img.gz" if compress else "img.idx")
    lab_path = directory / ("lab.gz" if compress else "lab.idx")
    img_path.write_bytes(img_bytes)
    lab_path.write_bytes(lab_bytes)
    return img_path, lab_path


class TestIdx:
    @settings(max_examples=25, deadline=None)
    @given(
        count=st.integers(1, 8),
        rows=st.integers(1, 6),
        cols=st.integers(1, 6),
        seed=st.integers(0, 1000),
    )
    def test_round_trip_random_files(self, tmp_path_factory, count, rows, cols, seed):
        rng = np.random.default_rng(seed)
        images = rng.integers(0, 256, (count, rows, cols), dtype=np.uint8)
        labels = rng.integers(0, 10, count, dtype=np.uint8)
        directory = tmp_path_factory.mktemp("idx")
        img, lab = write_idx_pair(directory, images, labels)
        ds = data.load_idx(img, lab)
        assert ds.inputs.shape == (count, rows * cols)
        assert np.array_equal(ds.inputs, images.reshape(count, -1) / 255.0)
        assert np.array_equal(ds.labels, labels)

    def test_pixel_scaling_endpoints(self, tmp_path):
        images = np.array([[[0, 255]]], dtype=np.uint8)
        img, lab = write_idx_pair(tmp_path, images, np.array([1], dtype=np.uint8))
        ds = data.load_idx(img, lab)
        assert ds.inputs[0, 0] == 0.0 and ds.inputs[0, 1] == 1.0

    def test_gzip_transparent(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, (4, 3, 3), dtype=np.uint8)
        labels = np.array([0, 1, 2, 3], dtype=np.uint8)
        plain = data.load_idx(*write_idx_pair(tmp_path, images, labels))
        zipped = data.load_idx(*write_idx_pair(tmp_path, images, labels, compress=True))
        assert np.array_equal(plain.inputs, zipped.inputs)
        assert np.array_equal(plain.labels, zipped.labels)

    def test_transpose_flag(self, tmp_path):
        image = np.arange(6, dtype=np.uint8).reshape(1, 2, 3)
        img, lab = write_idx_pair(tmp_path, image, np.array([0], dtype=np.uint8))
        straight = data.load_idx(img, lab)
        flipped = data.load_idx(img, lab, transpose=True)
        assert np.array_equal(
            flipped.inputs.reshape(3, 2), straight.inputs.reshape(2, 3).T
        )

    def test_wrong_magic_reports_offset(self, tmp_path):
        img, lab = write_idx_pair(
            tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), np.zeros(1, dtype=np.uint8)
        )
        raw = bytearray(img.read_bytes())
        raw[3] = 9
        img.write_bytes(bytes(raw))
        with pytest.raises(IdxFormatError, match="byte 0"):
            data.load_idx(img, lab)

    def test_swapped_files_rejected(self, tmp_path):
        img, lab = write_idx_pair(
            tmp_path, np.zeros((1, 2, 2), dtype=np.uint8), np.zeros(1, dtype=np.uint8)
        )
        with pytest.raises(IdxFormatError, match="magic"):
            data.load_idx(lab, img)

    def test_truncated_pixels_report_expected_size(self, tmp_path):
        img, lab = write_idx_pair(
            tmp_path, np.zeros((2, 3, 3), dtype=np.uint8), np.zeros(2, dtype=np.uint8)
        )
        img.write_bytes(img.read_bytes()[:-5])
        with pytest.raises(IdxFormatError, match="expected 34"):
            data.load_idx(img, lab)

    def test_count_mismatch_rejected(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        a.mkdir()
        b.mkdir()
        img, _ = write_idx_pair(
            a, np.zeros((2, 2, 2), dtype=np.uint8), np.zeros(2, dtype=np.uint8)
        )
        _, lab = write_idx_pair(
            b, np.zeros((3, 2, 2), dtype=np.uint8), np.zeros(3, dtype=np.uint8)
        )
        with pytest.raises(IdxFormatError, match="3 labels for 2 images"):
            data.load_idx(img, lab)


class TestCifar:
    def test_binary_batch_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        records = []
        labels = []
        for i in range(5):
            label = i % 10
            pixels = rng.integers(0, 256, 3072, dtype=np.uint8)
            records.append(bytes([label]) + pixels.tobytes())
            labels.append(label)
        path = tmp_path / "batch.bin"
        path.write_bytes(b"".join(records))
        ds = data.load_cifar10_batches([path])
        assert ds.inputs.shape == (5, 3072)
        assert ds.labels.tolist() == labels
        assert ds.num_classes == 10

    def test_ragged_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"\x00" * 100)
        with pytest.raises(IdxFormatError, match="multiple"):
            data.load_cifar10_batches([path])


class TestSynthetic:
    def test_blobs_shape_range_balance(self):
        ds = data.synth_blobs(num_classes=4, per_class=30, dim=7, spread=0.05, seed=0)
        assert len(ds) == 120 and ds.dim == 7 and ds.num_classes == 4
        assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0
        assert np.bincount(ds.labels).tolist() == [30] * 4

    def test_blobs_deterministic(self):
        a = data.synth_blobs(3, 10, 5, 0.05, seed=4)
        b = data.synth_blobs(3, 10, 5, 0.05, seed=4)
        c = data.synth_blobs(3, 10, 5, 0.05, seed=5)
        assert np.array_equal(a.inputs, b.inputs)
        assert not np.array_equal(a.inputs, c.inputs)

    def test_blob_classes_are_separated(self):
        ds = data.synth_blobs(3, 50, 6, 0.03, seed=1)
        means = np.stack([ds.inputs[ds.labels == c].mean(axis=0) for c in range(3)])
        for i in range(3):
            for j in range(i + 1, 3):
                assert np.linalg.norm(means[i] - means[j]) > 0.2

    def test_noise_moments_and_determinism(self):
        ds = data.uniform_noise(4000, 10, seed=2)
        assert len(ds) == 4000 and ds.dim == 10
        se = 1.0 / np.sqrt(12 * 4000)
        assert np.all(np.abs(ds.inputs.mean(axis=0) - 0.5) < 4 * se)
        again = data.uniform_noise(4000, 10, seed=2)
        assert np.array_equal(ds.inputs, again.inputs)

    def test_noise_count_zero(self):
        assert len(data.uniform_noise(0, 4, seed=0)) == 0


class TestDigits:
    def test_shape_and_range(self):
        ds = data.digits()
        assert ds.dim == 64 and ds.num_classes == 10
        assert len(ds) == 1797
        assert ds.inputs.min() >= 0.0 and ds.inputs.max() <= 1.0
        assert set(np.unique(ds.labels)) == set(range(10))


class TestSplitTake:
    def test_split_partitions(self):
        ds = data.synth_blobs(3, 40, 5, 0.05, seed=0)
        train, test = data.split(ds, 0.25, seed=1)
        assert len(train) == 90 and len(test) == 30
        joined = np.concatenate([train.inputs, test.inputs])
        assert np.array_equal(np.sort(joined, axis=0), np.sort(ds.inputs, axis=0))

    def test_split_deterministic(self):
        ds = data.synth_blobs(3, 40, 5, 0.05, seed=0)
        a, _ = data.split(ds, 0.25, seed=1)
        b, _ = data.split(ds, 0.25, seed=1)
        assert np.array_equal(a.inputs, b.inputs)

    def test_degenerate_fractions_rejected(self):
        ds = data.synth_blobs(2, 5, 3, 0.05, seed=0)
        for bad in (0.0, 1.0, -0.5):
            with pytest.raises(DatasetError):
                data.split(ds, bad, seed=0)

    def test_take_bounds(self):
        ds = data.synth_blobs(2, 10, 3, 0.05, seed=0)
        sub = data.take(ds, 6, seed=0)
        assert len(sub) == 6
        with pytest.raises(DatasetError):
            data.take(ds, 21, seed=0)


class TestContract:
    def test_out_of_box_inputs_rejected(self):
        with pytest.raises(DatasetError):
            Dataset(inputs=np.array([[1.5]]), labels=np.array([0]), num_classes=1, name="x")

    def test_label_range_enforced(self):
        with pytest.raises(DatasetError):
            Dataset(inputs=np.array([[0.5]]), labels=np.array([3]), num_classes=2, name="x")

    def test_shape_enforced(self):
        with pytest.raises(DatasetError):
            Dataset(inputs=np.zeros((2, 2, 2)), labels=np.zeros(2, dtype=int), num_classes=1, name="x")


class TestFlatCache:
    def test_round_trip_identical(self, tmp_path):
        ds = data.synth_blobs(3, 20, 6, 0.05, seed=3)
        data.write_flat(ds, tmp_path / "cache", extra_index={"epsilon": 0.1})
        loaded, index = data.read_flat(tmp_path / "cache")
        assert np.array_equal(loaded.inputs, ds.inputs)
        assert np.array_equal(loaded.labels, ds.labels)
        assert loaded.num_classes == ds.num_classes and loaded.name == ds.name
        assert index["epsilon"] == 0.1 and index["count"] == 60

    def test_size_mismatch_detected(self, tmp_path):
        ds = data.synth_blobs(2, 5, 3, 0.05, seed=0)
        data.write_flat(ds, tmp_path / "cache")
        raw = (tmp_path / "cache" / data.INPUTS_FILE).read_bytes()
        (tmp_path / "cache" / data.INPUTS_FILE).write_bytes(raw[:-8])
        with pytest.raises(DatasetError):
            data.read_flat(tmp_path / "cache")
