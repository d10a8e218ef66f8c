import struct

import numpy as np
import pytest

from nlsme.datasets import IDXError, load_idx, synth_dataset, write_idx_images, write_idx_labels


def _fixture_bytes():
    pixels = bytes(range(0, 32 * 8, 8))  # 32 pixels: 0, 8, ..., 248
    return struct.pack(">IIII", 0x00000803, 2, 4, 4) + pixels, pixels


def test_handcrafted_idx_fixture(tmp_path):
    raw, pixels = _fixture_bytes()
    img_path = tmp_path / "images.idx3"
    img_path.write_bytes(raw)
    lbl_path = tmp_path / "labels.idx1"
    lbl_path.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([7, 3]))
    batch = load_idx(img_path, lbl_path)
    assert batch.images.shape == (2, 1, 4, 4)
    expected = np.frombuffer(pixels, dtype=np.uint8).reshape(2, 1, 4, 4) / 255.0
    np.testing.assert_array_equal(batch.images, expected)
    assert batch.labels.tolist() == [7, 3]


def test_bad_magic(tmp_path):
    path = tmp_path / "x.idx"
    path.write_bytes(struct.pack(">IIII", 0x00000801, 1, 2, 2) + bytes(4))
    with pytest.raises(IDXError, match="bad magic"):
        load_idx(path)


def test_empty_file(tmp_path):
    path = tmp_path / "empty.idx"
    path.write_bytes(b"")
    with pytest.raises(IDXError, match="truncated header") as info:
        load_idx(path)
    assert info.value.offset == 0


def test_truncated_pixels_report_offset(tmp_path):
    raw, _ = _fixture_bytes()
    path = tmp_path / "short.idx"
    path.write_bytes(raw[:-5])
    with pytest.raises(IDXError, match="truncated data") as info:
        load_idx(path)
    assert info.value.offset == len(raw) - 5


def test_write_read_roundtrip(tmp_path, rng):
    images = rng.integers(0, 256, size=(3, 5, 6), dtype=np.uint8)
    labels = np.array([1, 0, 2])
    write_idx_images(tmp_path / "i", images)
    write_idx_labels(tmp_path / "l", labels)
    batch = load_idx(tmp_path / "i", tmp_path / "l")
    np.testing.assert_array_equal(np.rint(batch.images[:, 0] * 255), images)
    assert batch.labels.tolist() == [1, 0, 2]


@pytest.mark.parametrize("kind", ["gaussian_blobs", "stripes"])
def test_synthetic_is_deterministic(kind):
    a = synth_dataset(kind, 12, 4, seed=3)
    b = synth_dataset(kind, 12, 4, seed=3)
    assert a.images.tobytes() == b.images.tobytes()
    assert a.labels.tolist() == b.labels.tolist()
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0


@pytest.mark.parametrize("kind", ["gaussian_blobs", "stripes"])
def test_synthetic_covers_all_classes(kind):
    assert set(synth_dataset(kind, 10, 4, seed=0).labels.tolist()) == {0, 1, 2, 3}


@pytest.mark.parametrize("kind", ["gaussian_blobs", "stripes"])
def test_class_means_differ(kind):
    data = synth_dataset(kind, 40, 4, seed=1)
    means = np.array([data.images[data.labels == k].mean(axis=0).ravel() for k in range(4)])
    dists = [np.linalg.norm(means[i] - means[j]) for i in range(4) for j in range(i + 1, 4)]
    assert min(dists) > 0.0


def test_synthetic_needs_enough_samples():
    with pytest.raises(ValueError):
        synth_dataset("stripes", 3, 4, seed=0)
