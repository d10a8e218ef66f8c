"""Dataset ingestion: IDX files and small synthetic image sets."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import ImageBatch

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IDXError(ValueError):
    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} (offset {offset})")


def _read_idx(path, magic, ndim):
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IDXError("truncated header", len(raw))
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IDXError(f"bad magic 0x{found:08x}, expected 0x{magic:08x}", 0)
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXError("truncated header", len(raw))
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) < header + count:
        raise IDXError(f"truncated data: need {count} bytes", len(raw))
    data = np.frombuffer(raw, dtype=np.uint8, count=count, offset=header)
    return data.reshape(dims)


def read_idx_images(path):
    """(count, rows, cols) uint8 array from an IDX3 image file."""
    return _read_idx(path, IDX_IMAGES_MAGIC, 3)


def read_idx_labels(path):
    return _read_idx(path, IDX_LABELS_MAGIC, 1)


def load_idx(images_path, labels_path=None, limit=None):
    """Load an IDX image file (and optional label file) as an ImageBatch.

    Pixels are scaled to [0, 1].  Without a label file every label is 0.
    """
    images = read_idx_images(images_path)
    if labels_path is not None:
        labels = read_idx_labels(labels_path)
        if len(labels) != len(images):
            raise IDXError(f"{len(labels)} labels for {len(images)} images", 0)
    else:
        labels = np.zeros(len(images), dtype=np.int64)
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    return ImageBatch(images[:, None, :, :].astype(np.float64) / 255.0, labels.astype(np.int64))


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, len(labels)) + labels.tobytes())


def _class_prototypes(kind, classes, shape, rng):
    c, h, w = shape
    yy, xx = np.mgrid[0:h, 0:w] / max(h - 1, 1)
    protos = np.empty((classes, c, h, w))
    for k in range(classes):
        if kind == "gaussian_blobs":
            cy, cx = rng.uniform(0.2, 0.8, size=2)
            sigma = rng.uniform(0.15, 0.3)
            img = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        elif kind == "stripes":
            angle = np.pi * k / classes
            freq = 1.5 + k % 3
            phase = rng.uniform(0, 2 * np.pi)
            img = 0.5 + 0.5 * np.sin(2 * np.pi * freq * (np.cos(angle) * xx + np.sin(angle) * yy) + phase)
        else:
            raise ValueError(f"unknown synthetic kind {kind!r}")
        protos[k] = img
    return protos


def synth_dataset(kind, n, classes, seed, shape=(1, 8, 8), noise=0.1):
    """Class-structured synthetic images in [0, 1].

    Labels cycle through the classes before being shuffled, so every class
    appears whenever ``n >= classes``.
    """
    if n < classes:
        raise ValueError(f"need N >= classes, got N={n}, classes={classes}")
    rng = np.random.default_rng(seed)
    protos = _class_prototypes(kind, classes, tuple(shape), rng)
    labels = rng.permutation(np.arange(n) % classes)
    images = protos[labels] + noise * rng.standard_normal((n, *shape))
    return ImageBatch(np.clip(images, 0.0, 1.0), labels)
