import gzip

import numpy as np
import pytest

from sgdlab.datasets import (gaussian_blobs, load_csv, load_idx_dataset, make_tiny_mlp, pool_images,
                             read_idx, write_idx)


def test_blobs_are_seeded_and_balanced():
    X1, y1 = gaussian_blobs(50, 4, 5, seed=3)
    X2, y2 = gaussian_blobs(50, 4, 5, seed=3)
    np.testing.assert_array_equal(X1, X2)
    assert np.bincount(y1).tolist() == [10] * 5


def test_pool_images_averages_blocks():
    img = np.arange(16, dtype=float).reshape(1, 4, 4)
    np.testing.assert_allclose(pool_images(img, 2)[0], [[2.5, 4.5], [10.5, 12.5]])
    with pytest.raises(ValueError):
        pool_images(np.zeros((1, 5, 5)), 4)


def test_idx_roundtrip_and_gzip(tmp_path):
    rng = np.random.default_rng(0)
    imgs = rng.integers(0, 256, (6, 28, 28), dtype=np.uint8)
    labels = np.array([0, 1, 2, 3, 4, 1], dtype=np.uint8)
    write_idx(tmp_path / "i.idx", imgs)
    write_idx(tmp_path / "l.idx", labels)
    np.testing.assert_array_equal(read_idx(tmp_path / "i.idx"), imgs)
    with open(tmp_path / "l.idx", "rb") as src, gzip.open(tmp_path / "l.idx.gz", "wb") as dst:
        dst.write(src.read())
    np.testing.assert_array_equal(read_idx(tmp_path / "l.idx.gz"), labels)
    X, y = load_idx_dataset(tmp_path / "i.idx", tmp_path / "l.idx", classes=3)
    assert X.shape == (4, 49) and y.max() == 2
    assert 0 <= X.min() and X.max() <= 1


def test_bad_idx_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"\x00\x00\x09\x99" + b"\x00" * 8)
    with pytest.raises(ValueError):
        read_idx(tmp_path / "x")


def test_csv_ingest(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("0.5,1.0,0\n-1.0,2.0,2\n")
    X, y = load_csv(p)
    np.testing.assert_allclose(X, [[0.5, 1.0], [-1.0, 2.0]])
    assert y.tolist() == [0, 2]
    m = make_tiny_mlp(classes=3, hidden=4, data={"csv": p})
    assert m.n_samples == 2 and m.input_dim == 2
