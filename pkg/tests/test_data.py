import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from xbarmap.data import Dataset, load_idx, subset, synthetic_blobs, write_idx
from xbarmap.errors import (
    BoundsError,
    ConsistencyError,
    IdxFormatError,
    IdxLengthError,
    InvalidInputError,
)

# Two 2x2 images, bytes written out by hand.
FIXTURE_IMAGES = bytes([
    0x00, 0x00, 0x08, 0x03,  # magic: ubyte, 3 dims
    0x00, 0x00, 0x00, 0x02,  # count
    0x00, 0x00, 0x00, 0x02,  # rows
    0x00, 0x00, 0x00, 0x02,  # cols
    0, 255, 51, 102,
    255, 0, 0, 255,
])
FIXTURE_LABELS = bytes([
    0x00, 0x00, 0x08, 0x01,
    0x00, 0x00, 0x00, 0x02,
    7, 3,
])


@pytest.fixture
def fixture_paths(tmp_path):
    img, lab = tmp_path / "img.idx", tmp_path / "lab.idx"
    img.write_bytes(FIXTURE_IMAGES)
    lab.write_bytes(FIXTURE_LABELS)
    return img, lab


class TestLoadIdx:
    def test_fixture_values(self, fixture_paths):
        ds = load_idx(*fixture_paths)
        np.testing.assert_allclose(ds.images, [[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 1.0]])
        np.testing.assert_array_equal(ds.labels, [7, 3])
        assert ds.image_shape == (2, 2)
        assert len(ds) == 2 and ds.n_features == 4

    def test_gzip_detected_by_content(self, tmp_path, fixture_paths):
        img = tmp_path / "img.bin"
        img.write_bytes(gzip.compress(FIXTURE_IMAGES))
        ds = load_idx(img, fixture_paths[1])
        assert ds.images[0, 1] == 1.0

    def test_bad_magic(self, tmp_path, fixture_paths):
        bad = tmp_path / "bad.idx"
        bad.write_bytes(b"\x00\x00\x08\x04" + FIXTURE_IMAGES[4:])
        with pytest.raises(IdxFormatError, match="0x00000804"):
            load_idx(bad, fixture_paths[1])

    def test_labels_file_as_images(self, fixture_paths):
        with pytest.raises(IdxFormatError):
            load_idx(fixture_paths[1], fixture_paths[1])

    def test_truncated_payload(self, tmp_path, fixture_paths):
        short = tmp_path / "short.idx"
        short.write_bytes(FIXTURE_IMAGES[:-1])
        with pytest.raises(IdxLengthError):
            load_idx(short, fixture_paths[1])

    def test_truncated_header(self, tmp_path, fixture_paths):
        short = tmp_path / "short.idx"
        short.write_bytes(FIXTURE_IMAGES[:10])
        with pytest.raises(IdxLengthError):
            load_idx(short, fixture_paths[1])

    def test_count_mismatch(self, tmp_path, fixture_paths):
        lab = tmp_path / "lab1.idx"
        lab.write_bytes(b"\x00\x00\x08\x01\x00\x00\x00\x01\x05")
        with pytest.raises(ConsistencyError):
            load_idx(fixture_paths[0], lab)

    def test_label_out_of_range(self, fixture_paths):
        with pytest.raises(ConsistencyError):
            load_idx(*fixture_paths, n_classes=5)

    def test_errors_are_value_errors(self, tmp_path, fixture_paths):
        bad = tmp_path / "bad.idx"
        bad.write_bytes(b"nope")
        with pytest.raises(ValueError):
            load_idx(bad, fixture_paths[1])


class TestWriteIdx:
    @pytest.mark.parametrize("name", ["x", "x.gz"])
    def test_round_trip(self, tmp_path, fixture_paths, name):
        ds = load_idx(*fixture_paths)
        img, lab = tmp_path / f"i{name}", tmp_path / f"l{name}"
        write_idx(ds, img, lab)
        back = load_idx(img, lab)
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_uncompressed_bytes_match_fixture(self, tmp_path, fixture_paths):
        img, lab = tmp_path / "i", tmp_path / "l"
        write_idx(load_idx(*fixture_paths), img, lab)
        assert img.read_bytes() == FIXTURE_IMAGES
        assert lab.read_bytes() == FIXTURE_LABELS

    def test_gzip_deterministic(self, tmp_path, fixture_paths):
        ds = load_idx(*fixture_paths)
        write_idx(ds, tmp_path / "a.gz", tmp_path / "b.gz")
        first = (tmp_path / "a.gz").read_bytes()
        write_idx(ds, tmp_path / "a.gz", tmp_path / "b.gz")
        assert (tmp_path / "a.gz").read_bytes() == first

    def test_needs_image_shape(self, tmp_path):
        ds = Dataset(np.zeros((2, 3)), np.array([0, 1]), 2)
        with pytest.raises(InvalidInputError):
            write_idx(ds, tmp_path / "i", tmp_path / "l")


class TestDataset:
    def test_rejects_out_of_range_features(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[1.5]]), np.array([0]), 2)

    def test_rejects_bad_labels(self):
        with pytest.raises(InvalidInputError):
            Dataset(np.array([[0.5]]), np.array([2]), 2)

    def test_rejects_length_mismatch(self):
        with pytest.raises(ConsistencyError):
            Dataset(np.zeros((2, 1)), np.array([0]), 2)


class TestSyntheticBlobs:
    def test_shape_and_balance(self):
        ds = synthetic_blobs(3, 8, 40, 6.0, seed=0)
        assert ds.images.shape == (120, 8)
        np.testing.assert_array_equal(np.bincount(ds.labels), [40, 40, 40])
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_deterministic(self):
        a = synthetic_blobs(2, 16, 30, 5.0, seed=4)
        b = synthetic_blobs(2, 16, 30, 5.0, seed=4)
        assert a.images.tobytes() == b.images.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_too_many_classes(self):
        with pytest.raises(InvalidInputError):
            synthetic_blobs(5, 4, 10, 1.0, seed=0)

    def test_means_equidistant(self):
        ds = synthetic_blobs(4, 8, 2000, 8.0, seed=1)
        means = np.stack([ds.images[ds.labels == c].mean(axis=0) for c in range(4)])
        d = np.linalg.norm(means[:, None] - means[None], axis=-1)[np.triu_indices(4, 1)]
        assert d.max() / d.min() < 1.05

    def test_linearly_separable(self):
        train = synthetic_blobs(2, 64, 250, 10.0, seed=0)
        test = synthetic_blobs(2, 64, 100, 10.0, seed=1, split="test")
        clf = LogisticRegression(max_iter=1000).fit(train.images, train.labels)
        assert clf.score(test.images, test.labels) >= 0.99


class TestSubset:
    def test_stratified(self):
        ds = synthetic_blobs(4, 8, 50, 4.0, seed=0)
        sub = subset(ds, 40, seed=3)
        np.testing.assert_array_equal(np.bincount(sub.labels, minlength=4), 10)

    def test_too_large(self):
        ds = synthetic_blobs(2, 4, 5, 1.0, seed=0)
        with pytest.raises(BoundsError):
            subset(ds, 11, seed=0)

    def test_whole_and_empty(self):
        ds = synthetic_blobs(2, 4, 5, 1.0, seed=0)
        assert len(subset(ds, 10, 0)) == 10
        assert len(subset(ds, 0, 0)) == 0

    @given(st.lists(st.integers(0, 20), min_size=2, max_size=6).filter(lambda c: sum(c) > 0),
           st.data())
    @settings(max_examples=60, deadline=None)
    def test_water_filling(self, counts, data):
        labels = np.repeat(np.arange(len(counts)), counts)
        ds = Dataset(np.zeros((len(labels), 1)), labels, len(counts))
        n = data.draw(st.integers(0, len(labels)))
        sub = subset(ds, n, seed=data.draw(st.integers(0, 100)))
        got = np.bincount(sub.labels, minlength=len(counts))
        assert got.sum() == n
        assert np.all(got <= counts)
        # a class with items left is never more than one below any other class
        open_counts = got[got < np.array(counts)]
        if open_counts.size:
            assert got.max() - open_counts.min() <= 1

    def test_deterministic(self):
        ds = synthetic_blobs(3, 4, 30, 2.0, seed=0)
        assert subset(ds, 20, 5).images.tobytes() == subset(ds, 20, 5).images.tobytes()

    def test_vendored_mnist_subset(self):
        from pathlib import Path

        root = Path(__file__).resolve().parents[1] / "data" / "mnist-5k"
        train = load_idx(root / "train-images-idx3-ubyte.gz", root / "train-labels-idx1-ubyte.gz")
        test = load_idx(root / "t10k-images-idx3-ubyte.gz", root / "t10k-labels-idx1-ubyte.gz")
        assert train.images.shape == (4000, 784) and len(test) == 1000
        np.testing.assert_array_equal(np.bincount(train.labels), 400)
