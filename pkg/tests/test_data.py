import struct

import numpy as np
import pytest
from PIL import Image

from gvt.data import (
    DatasetSpec,
    iterate_batches,
    load_dataset,
    load_splits,
    make_synthetic,
    read_packed,
    write_packed,
)
from gvt.errors import ConfigError, FormatError, IngestionError


def _class_tree(root, classes=2, per_class=3, size=(8, 8)):
    rng = np.random.default_rng(0)
    for c in range(classes):
        d = root / f"class_{c}"
        d.mkdir(parents=True)
        for i in range(per_class):
            Image.fromarray(rng.integers(0, 256, size=size + (3,), dtype=np.uint8)).save(d / f"{i}.png")


def test_empty_root(tmp_path):
    with pytest.raises(IngestionError):
        load_dataset(DatasetSpec(str(tmp_path), "class-folders"))


def test_missing_root(tmp_path):
    with pytest.raises(IngestionError, match="missing"):
        load_dataset(DatasetSpec(str(tmp_path / "missing")))


def test_class_folders(tmp_path):
    _class_tree(tmp_path)
    ds = load_dataset(DatasetSpec(str(tmp_path), "class-folders"))
    assert len(ds) == 6
    assert set(ds.labels.tolist()) == {0, 1}
    assert ds.images.shape == (6, 3, 8, 8)
    samples = list(ds)
    assert len(samples) == 6 and samples[0][0].shape == (3, 8, 8)
    np.testing.assert_allclose(ds.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    np.testing.assert_allclose(ds.images.std(axis=(0, 2, 3)), 1.0, atol=1e-4)


def test_empty_class_dir(tmp_path):
    _class_tree(tmp_path)
    (tmp_path / "class_9").mkdir()
    with pytest.raises(IngestionError, match="class_9"):
        load_dataset(DatasetSpec(str(tmp_path), "class-folders"))


def test_unreadable_image_named(tmp_path):
    _class_tree(tmp_path)
    (tmp_path / "class_0" / "bad.png").write_bytes(b"not an image")
    with pytest.raises(IngestionError, match="bad.png"):
        load_dataset(DatasetSpec(str(tmp_path), "class-folders"))


def test_packed_roundtrip(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(5, 4, 6, 3), dtype=np.uint8)
    labels = np.array([0, 2, 1, 2, 0])
    path = write_packed(tmp_path / "d.gvtd", imgs, labels, 3)
    buf = path.read_bytes()
    assert buf[:28] == struct.pack("<4sIIIIII", b"GVTD", 1, 5, 4, 6, 3, 3)
    assert buf[28:32] == struct.pack("<I", 0) and buf[32:32 + 72] == imgs[0].tobytes()
    out_imgs, out_labels, classes = read_packed(path)
    assert np.array_equal(out_imgs, imgs) and np.array_equal(out_labels, labels) and classes == 3


def test_truncated_packed(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(10, 4, 4, 1), dtype=np.uint8)
    path = write_packed(tmp_path / "d.gvtd", imgs, np.zeros(10, dtype=int), 2)
    path.write_bytes(path.read_bytes()[:-7])
    with pytest.raises(FormatError, match="10 samples"):
        load_dataset(DatasetSpec(str(path)))


def test_bad_magic_and_label(tmp_path, rng):
    imgs = rng.integers(0, 256, size=(2, 2, 2, 1), dtype=np.uint8)
    path = write_packed(tmp_path / "d.gvtd", imgs, [0, 1], 2)
    buf = path.read_bytes()
    path.write_bytes(b"ABCD" + buf[4:])
    with pytest.raises(FormatError, match="magic"):
        read_packed(path)
    path.write_bytes(buf[:28] + struct.pack("<I", 7) + buf[32:])
    with pytest.raises(FormatError, match="out of range"):
        read_packed(path)


def test_layout_validated():
    with pytest.raises(ConfigError):
        DatasetSpec("x", layout="tfrecord")


def test_splits_deterministic_and_disjoint(tmp_path):
    imgs, labels = make_synthetic(50, 5, 8, 1, seed=1)
    write_packed(tmp_path / "all.gvtd", imgs, labels, 5)
    spec = DatasetSpec(str(tmp_path), eval_fraction=0.2)
    tr1, ev1, _ = load_splits(spec, seed=3)
    tr2, ev2, _ = load_splits(spec, seed=3)
    assert len(tr1) == 40 and len(ev1) == 10
    assert np.array_equal(tr1.images, tr2.images) and np.array_equal(ev1.labels, ev2.labels)


def test_train_test_files(tmp_path):
    for split, n, seed in (("train", 20, 0), ("test", 8, 1)):
        imgs, labels = make_synthetic(n, 4, 8, 3, seed=seed)
        write_packed(tmp_path / f"{split}.gvtd", imgs, labels, 4)
    tr, ev, (mean, std) = load_splits(DatasetSpec(str(tmp_path)))
    assert (len(tr), len(ev)) == (20, 8)
    np.testing.assert_allclose(tr.images.mean(axis=(0, 2, 3)), 0.0, atol=1e-5)
    assert mean.shape == std.shape == (3,)


def test_synthetic_balanced_and_deterministic():
    a, la = make_synthetic(40, 10, 16, 3, seed=2)
    b, lb = make_synthetic(40, 10, 16, 3, seed=2)
    assert np.array_equal(a, b) and np.array_equal(la, lb)
    assert a.shape == (40, 16, 16, 3) and a.dtype == np.uint8
    assert np.bincount(la).tolist() == [4] * 10


def test_iterate_batches_covers_all(rng):
    idx = np.concatenate(list(iterate_batches(10, 3, rng)))
    assert sorted(idx.tolist()) == list(range(10))
    assert [len(b) for b in iterate_batches(10, 4)] == [4, 4, 2]
