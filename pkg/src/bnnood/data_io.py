"""Dataset ingestion and synthesis.

Covers the IDX container format used by the MNIST-family archives (big-endian
magic + dimension header + raw byte payload) and two deterministic synthetic
generators used for desk-scale experiments: isotropic Gaussian blobs as the
in-distribution surrogate and a noisy ring as the far-away OoD surrogate.

Images load as float64 scaled to [0, 1] (byte / 255, so 255 -> 1.0 exactly).
"""

from dataclasses import dataclass, replace
import struct

import numpy as np

from .errors import ConfigError, DataError

IDX_IMAGE_MAGIC = 0x00000803  # ubyte dtype, 3 dims
IDX_LABEL_MAGIC = 0x00000801  # ubyte dtype, 1 dim


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable (inputs, labels) pair with its class count and a report tag."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    tag: str

    def __len__(self):
        return self.inputs.shape[0]

    def validate(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(
                f"{self.tag}: {self.inputs.shape[0]} inputs vs {self.labels.shape[0]} labels")
        if len(self) and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise DataError(f"{self.tag}: labels outside [0, {self.class_count})")
        return self

    def reshaped(self, input_shape) -> "LabeledDataset":
        """Same records with each input reshaped to ``input_shape``."""
        shape = (self.inputs.shape[0],) + tuple(int(d) for d in input_shape)
        return replace(self, inputs=self.inputs.reshape(shape))

    def subset(self, indices) -> "LabeledDataset":
        return replace(self, inputs=self.inputs[indices], labels=self.labels[indices])


def _read_idx_header(raw: bytes, path, expected_magic: int, n_dims: int):
    need = 4 + 4 * n_dims
    if len(raw) < need:
        raise DataError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise DataError(
            f"{path}: bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    dims = struct.unpack(f">{n_dims}I", raw[4:need])
    total = 1
    for d in dims:
        total *= d
    if total > len(raw):  # cheap sanity bound before the exact check
        raise DataError(f"{path}: dimension header {dims} overflows the payload")
    payload = len(raw) - need
    if payload != total:
        raise DataError(
            f"{path}: payload holds {payload} bytes but header {dims} needs {total}")
    return dims, raw[need:]


def load_idx_images(path) -> np.ndarray:
    """[N, H, W] float64 tensor in [0, 1] from an IDX image file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    (n, h, w), payload = _read_idx_header(raw, path, IDX_IMAGE_MAGIC, 3)
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(n, h, w)
    return pixels.astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    """int64 [N] label vector from an IDX label file."""
    with open(path, "rb") as fh:
        raw = fh.read()
    (n,), payload = _read_idx_header(raw, path, IDX_LABEL_MAGIC, 1)
    return np.frombuffer(payload, dtype=np.uint8).astype(np.int64)


def write_idx_images(path, images):
    """Inverse of load_idx_images for fixtures; expects values in [0, 1]."""
    arr = np.asarray(images)
    if arr.ndim != 3:
        raise ConfigError("images must be [N, H, W]")
    raw = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, *raw.shape))
        fh.write(raw.tobytes())


def write_idx_labels(path, labels):
    arr = np.asarray(labels)
    if arr.ndim != 1 or arr.min(initial=0) < 0 or arr.max(initial=0) > 255:
        raise ConfigError("labels must be a 1-D array of bytes")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, arr.shape[0]))
        fh.write(arr.astype(np.uint8).tobytes())


def load_labeled_idx(images_path, labels_path, class_count: int, tag: str) -> LabeledDataset:
    """Load and pair an IDX image/label file set; counts must agree."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataError(
            f"{tag}: {images.shape[0]} images but {labels.shape[0]} labels")
    return LabeledDataset(images, labels, class_count, tag).validate()


def make_gaussian_blobs(class_count: int, n_per_class: int, centers, sigma: float,
                        seed: int, tag: str = "blobs") -> LabeledDataset:
    """Isotropic 2-D Gaussian clusters, one per class, deterministic per seed."""
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (class_count, 2):
        raise ConfigError(f"centers must be [{class_count}, 2]")
    for i in range(class_count):
        for j in range(i + 1, class_count):
            if np.array_equal(centers[i], centers[j]):
                raise ConfigError(f"centers {i} and {j} coincide")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((class_count, n_per_class, 2)) * sigma
    inputs = (centers[:, None, :] + noise).reshape(-1, 2)
    labels = np.repeat(np.arange(class_count, dtype=np.int64), n_per_class)
    return LabeledDataset(inputs, labels, class_count, tag).validate()


def make_ring_ood(radius: float, n: int, noise_sigma: float, seed: int,
                  tag: str = "ring") -> LabeledDataset:
    """Points spread uniformly around a circle plus isotropic Gaussian noise.

    Labels are all zero and carry no meaning; the dataset exists to sit far
    from any blob mass.
    """
    if radius <= 0:
        raise ConfigError("radius must be positive")
    rng = np.random.default_rng(seed)
    angles = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    inputs = ring + rng.standard_normal((n, 2)) * noise_sigma
    labels = np.zeros(n, dtype=np.int64)
    return LabeledDataset(inputs, labels, 1, tag).validate()
