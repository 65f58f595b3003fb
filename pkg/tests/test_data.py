"""IDX container round-trips and synthetic task determinism."""

import numpy as np
import pytest

from potq.data import Dataset, dataset_from_idx, load_idx, save_idx, synthetic_blobs


def test_idx_roundtrip_ubyte(tmp_path):
    arr = np.arange(24, dtype=np.uint8).reshape(2, 3, 4)
    path = str(tmp_path / "a.idx")
    save_idx(path, arr)
    np.testing.assert_array_equal(load_idx(path), arr)


def test_idx_roundtrip_float32(tmp_path):
    arr = np.random.default_rng(0).normal(size=(5, 2)).astype(np.float32)
    path = str(tmp_path / "f.idx")
    save_idx(path, arr)
    np.testing.assert_array_equal(load_idx(path), arr)


def test_idx_bad_magic_rejected(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(b"\x01\x02\x03\x04more")
    with pytest.raises(ValueError, match="not an IDX file"):
        load_idx(str(path))


def test_idx_truncated_payload_rejected(tmp_path):
    arr = np.zeros((4, 4), dtype=np.uint8)
    path = str(tmp_path / "t.idx")
    save_idx(path, arr)
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-3])
    with pytest.raises(ValueError, match="payload"):
        load_idx(path)


def test_dataset_from_idx_scales_ubyte_images(tmp_path):
    images = np.random.default_rng(1).integers(0, 256, size=(6, 8, 8)).astype(np.uint8)
    labels = np.array([0, 1, 2, 0, 1, 2], dtype=np.uint8)
    ip, lp = str(tmp_path / "im.idx"), str(tmp_path / "lb.idx")
    save_idx(ip, images)
    save_idx(lp, labels)
    ds = dataset_from_idx(ip, lp)
    assert ds.images.shape == (6, 1, 8, 8)
    assert ds.images.max() <= 1.0 and ds.images.min() >= 0.0
    assert ds.classes == 3


def test_csv_dataset_roundtrip(tmp_path):
    from potq.data import dataset_from_csv

    rng = np.random.default_rng(3)
    images = rng.uniform(0, 1, size=(5, 4, 4)).astype(np.float32)
    labels = np.array([0, 1, 2, 1, 0])
    rows = np.column_stack([labels, images.reshape(5, -1)])
    path = str(tmp_path / "d.csv")
    np.savetxt(path, rows, delimiter=",")
    ds = dataset_from_csv(path)
    assert ds.images.shape == (5, 1, 4, 4)
    np.testing.assert_allclose(ds.images[:, 0], images, rtol=1e-5)
    np.testing.assert_array_equal(ds.labels, labels)


def test_csv_dataset_rejects_non_square(tmp_path):
    from potq.data import dataset_from_csv

    path = tmp_path / "bad.csv"
    path.write_text("1,0.1,0.2,0.3\n")  # 3 pixels: not square
    with pytest.raises(ValueError, match="square"):
        dataset_from_csv(str(path))


def test_blobs_deterministic_per_seed():
    a = synthetic_blobs(50, seed=42)
    b = synthetic_blobs(50, seed=42)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    c = synthetic_blobs(50, seed=43)
    assert not np.array_equal(a.images, c.images)


def test_blobs_shapes_and_ranges():
    ds = synthetic_blobs(30, classes=4, size=10, seed=1)
    assert ds.images.shape == (30, 1, 10, 10)
    assert ds.images.dtype == np.float32
    assert ds.labels.min() >= 0 and ds.labels.max() < 4
    assert 0.0 <= ds.images.min() and ds.images.max() <= 1.0


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 8, 8), np.float32), np.zeros(2, np.int64))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 8, 8), np.float32), np.zeros(3, np.int64))
