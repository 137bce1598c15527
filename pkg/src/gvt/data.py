"""Dataset ingestion: class-folder image trees and the packed ``GVTD`` binary format."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, IngestionError
from .tensor import Tensor

PACKED_MAGIC = b"GVTD"
PACKED_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".ppm", ".pgm", ".tif", ".tiff"}


@dataclass(frozen=True)
class DatasetSpec:
    root: str
    layout: str = "packed"  # or "class-folders"
    image_size: tuple[int, int] | None = None
    channels: int | None = None
    num_classes: int | None = None
    eval_fraction: float = 0.2

    def __post_init__(self):
        if self.layout not in ("packed", "class-folders"):
            raise ConfigError(f"unknown dataset layout {self.layout!r}")


@dataclass
class Dataset:
    """Images as float32 (N, C, H, W) plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        for img, lab in zip(self.images, self.labels):
            yield Tensor(img), int(lab)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def subset(self, idx) -> Dataset:
        return Dataset(self.images[idx], self.labels[idx], self.num_classes)

    def channel_stats(self) -> tuple[np.ndarray, np.ndarray]:
        mean = self.images.mean(axis=(0, 2, 3), dtype=np.float64)
        std = self.images.std(axis=(0, 2, 3), dtype=np.float64)
        return mean, np.where(std > 1e-8, std, 1.0)

    def standardized(self, mean, std) -> Dataset:
        imgs = (self.images - mean[None, :, None, None]) / std[None, :, None, None]
        return Dataset(imgs.astype(np.float32), self.labels, self.num_classes)


# -- packed binary ---------------------------------------------------------------------


def write_packed(path, images: np.ndarray, labels, num_classes: int) -> Path:
    """Write uint8 images (N, H, W, C) with labels in the GVTD layout."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.int64)
    if images.ndim != 4 or len(images) != len(labels):
        raise FormatError(f"expected (N, H, W, C) images matching labels, got {images.shape} / {labels.shape}")
    count, height, width, channels = images.shape
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PACKED_MAGIC, PACKED_VERSION, count, height, width, channels, num_classes))
        for img, lab in zip(images, labels):
            fh.write(struct.pack("<I", int(lab)))
            fh.write(img.tobytes())
    return path


def read_packed(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Read a GVTD file -> (uint8 images (N, H, W, C), labels, class count)."""
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than header")
    magic, version, count, height, width, channels, classes = _HEADER.unpack_from(buf)
    if magic != PACKED_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != PACKED_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    record = 4 + height * width * channels
    expected = _HEADER.size + count * record
    if len(buf) != expected:
        raise FormatError(f"{path}: header declares {count} samples ({expected} bytes), file has {len(buf)} bytes")
    body = np.frombuffer(buf, dtype=np.uint8, offset=_HEADER.size).reshape(count, record)
    labels = body[:, :4].copy().view("<u4").reshape(count).astype(np.int64)
    images = body[:, 4:].reshape(count, height, width, channels).copy()
    if count and (labels.max() >= classes):
        raise FormatError(f"{path}: label {labels.max()} out of range for {classes} classes")
    return images, labels, classes


# -- class folders ------------------------------------------------------------------------


def read_class_folders(root, image_size=None, channels=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Read ``root/<class>/<image>`` trees; classes are sorted directory names."""
    from PIL import Image, UnidentifiedImageError

    root = Path(root)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    classes = sorted(p for p in root.iterdir() if p.is_dir())
    if not classes:
        raise IngestionError(f"{root}: no class directories")
    mode = {None: None, 1: "L", 3: "RGB"}.get(channels)
    if channels is not None and mode is None:
        raise ConfigError(f"class-folder images support 1 or 3 channels, got {channels}")
    images, labels = [], []
    for label, cdir in enumerate(classes):
        files = sorted(p for p in cdir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise IngestionError(f"{cdir}: class directory has no images")
        for f in files:
            try:
                with Image.open(f) as im:
                    im = im.convert(mode or ("L" if im.mode in ("1", "L", "I", "F") else "RGB"))
                    mode = mode or im.mode
                    if image_size is not None and im.size != (image_size[1], image_size[0]):
                        im = im.resize((image_size[1], image_size[0]), Image.BILINEAR)
                    arr = np.asarray(im, dtype=np.uint8)
            except (OSError, UnidentifiedImageError) as exc:
                raise IngestionError(f"{f}: unreadable image ({exc})") from exc
            if arr.ndim == 2:
                arr = arr[:, :, None]
            if images and arr.shape != images[0].shape:
                raise IngestionError(f"{f}: size {arr.shape} differs from {images[0].shape}; set image_size")
            images.append(arr)
            labels.append(label)
    return np.stack(images), np.asarray(labels, dtype=np.int64), len(classes)


# -- loading -------------------------------------------------------------------------------


def _to_dataset(images: np.ndarray, labels: np.ndarray, classes: int) -> Dataset:
    x = images.astype(np.float32).transpose(0, 3, 1, 2) / 255.0
    return Dataset(np.ascontiguousarray(x), labels, classes)


def _read_source(path: Path, spec: DatasetSpec) -> Dataset:
    if spec.layout == "packed" or path.is_file():
        images, labels, classes = read_packed(path)
    else:
        images, labels, classes = read_class_folders(path, spec.image_size, spec.channels)
    ds = _to_dataset(images, labels, classes)
    if spec.image_size is not None and ds.images.shape[2:] != tuple(spec.image_size):
        raise FormatError(f"{path}: images are {ds.images.shape[2:]}, expected {tuple(spec.image_size)}")
    if spec.channels is not None and ds.images.shape[1] != spec.channels:
        raise FormatError(f"{path}: images have {ds.images.shape[1]} channels, expected {spec.channels}")
    if spec.num_classes is not None and classes != spec.num_classes:
        raise FormatError(f"{path}: {classes} classes, expected {spec.num_classes}")
    return ds


def load_raw(spec: DatasetSpec) -> Dataset:
    """Single source in [0, 1], no standardization or splitting."""
    root = Path(spec.root)
    if not root.exists():
        raise IngestionError(f"{root}: does not exist")
    if root.is_dir() and spec.layout == "packed":
        packed = sorted(root.glob("*.gvtd"))
        if len(packed) != 1:
            raise IngestionError(f"{root}: expected exactly one .gvtd file, found {len(packed)}")
        root = packed[0]
    return _read_source(root, spec)


def load_splits(spec: DatasetSpec, seed: int = 0) -> tuple[Dataset, Dataset, tuple[np.ndarray, np.ndarray]]:
    """Load train/eval splits, standardized with train-split channel statistics.

    A directory holding ``train``/``test`` entries (``.gvtd`` files or class
    folders) supplies both splits; otherwise one source is split by
    ``spec.eval_fraction`` with a seeded permutation.
    """
    root = Path(spec.root)
    if not root.exists():
        raise IngestionError(f"{root}: does not exist")
    pairs = [(root / "train.gvtd", root / "test.gvtd"), (root / "train", root / "test")]
    for tr, te in pairs:
        if tr.exists() and te.exists():
            layout = "packed" if tr.is_file() else "class-folders"
            sub = DatasetSpec(str(tr), layout, spec.image_size, spec.channels, spec.num_classes)
            train = _read_source(tr, sub)
            test = _read_source(te, DatasetSpec(str(te), layout, spec.image_size, spec.channels,
                                                spec.num_classes))
            break
    else:
        full = load_raw(spec)
        if len(full) < 2:
            raise IngestionError(f"{root}: need at least two samples to split")
        perm = np.random.default_rng(seed).permutation(len(full))
        n_eval = min(max(1, int(round(len(full) * spec.eval_fraction))), len(full) - 1)
        test, train = full.subset(perm[:n_eval]), full.subset(perm[n_eval:])
    stats = train.channel_stats()
    return train.standardized(*stats), test.standardized(*stats), stats


def load_dataset(spec: DatasetSpec) -> Dataset:
    """Whole source, standardized per channel with its own statistics."""
    ds = load_raw(spec)
    return ds.standardized(*ds.channel_stats())


def iterate_batches(n: int, batch_size: int, rng: np.random.Generator | None = None):
    """Yield index arrays covering range(n); shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# -- synthetic stand-in data -----------------------------------------------------------------


def make_synthetic(num_samples: int, num_classes: int = 10, size: int = 32, channels: int = 3,
                   seed: int = 0, noise: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """Procedural textures: class k is a sinusoidal grating at orientation k*pi/K.

    Phase, spatial frequency, contrast and colour are drawn per image, and
    pixel noise is added, so the class is carried only by the orientation.
    Returns uint8 images (N, H, W, C) and balanced labels.
    """
    rng = np.random.default_rng(seed)
    labels = np.arange(num_samples) % num_classes
    rng.shuffle(labels)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    images = np.empty((num_samples, size, size, channels), dtype=np.uint8)
    for i, k in enumerate(labels):
        theta = np.pi * k / num_classes + rng.normal(0, 0.05)
        freq = rng.uniform(2.5, 4.5)
        phase = rng.uniform(0, 2 * np.pi)
        wave = np.sin(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        contrast = rng.uniform(0.25, 0.5)
        tint = rng.uniform(0.3, 0.7, size=channels)
        img = tint[None, None, :] + contrast * wave[:, :, None]
        img = img + noise * rng.standard_normal(img.shape)
        images[i] = np.clip(np.round(img * 255), 0, 255).astype(np.uint8)
    return images, labels
