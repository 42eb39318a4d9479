"""Datasets: MNIST IDX files, synthetic Gaussian blobs, splits and a cache format."""

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError, ParseError
from .linalg import FLOAT

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
CACHE_VERSION = 1
DATA_DIR_ENV = "TIGHTPROP_DATA_DIR"


@dataclass(frozen=True)
class Dataset:
    samples: np.ndarray
    labels: np.ndarray
    class_count: int
    declared_range: tuple = None

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=FLOAT)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            x = x.reshape(len(y), -1)
        if x.shape[0] != y.shape[0]:
            raise ParameterError(f"{x.shape[0]} samples but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise ParameterError("label outside [0, class_count)")
        if self.declared_range is not None and x.size:
            lo, hi = self.declared_range
            if x.min() < lo or x.max() > hi:
                raise ParameterError("samples fall outside the declared range")
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    def subset(self, index):
        return Dataset(self.samples[index], self.labels[index], self.class_count,
                       self.declared_range)


def data_dir(default=None):
    """Dataset root: ``$TIGHTPROP_DATA_DIR`` if set, else ``default``."""
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return Path(env)
    return Path(default) if default is not None else Path.home() / ".cache" / "tightprop"


def _read_bytes(path):
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def _header(raw, ndims, magic, what):
    need = 4 + 4 * ndims
    if len(raw) < need:
        raise ParseError(f"{what} file truncated inside its header", field="header")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise ParseError(f"{what} file has magic 0x{found:08x}, expected 0x{magic:08x}",
                         field="magic")
    dims = struct.unpack(f">{ndims}I", raw[4:need])
    return dims, need


def load_idx(images_path, labels_path, limit=None):
    """Parse an IDX image/label pair; pixels are scaled to [0, 1] by /255."""
    img_raw = _read_bytes(images_path)
    lab_raw = _read_bytes(labels_path)
    (count, rows, cols), off = _header(img_raw, 3, IMAGES_MAGIC, "images")
    (lab_count,), lab_off = _header(lab_raw, 1, LABELS_MAGIC, "labels")
    if count != lab_count:
        raise ParseError(f"images declare {count} records, labels declare {lab_count}",
                         field="count")
    size = rows * cols
    if len(img_raw) - off < count * size:
        raise ParseError("images file truncated: fewer pixel bytes than declared",
                         field="pixels")
    if len(lab_raw) - lab_off < count:
        raise ParseError("labels file truncated: fewer label bytes than declared",
                         field="labels")
    n = count if limit is None else min(int(limit), count)
    pixels = np.frombuffer(img_raw, dtype=np.uint8, count=n * size, offset=off)
    labels = np.frombuffer(lab_raw, dtype=np.uint8, count=n, offset=lab_off)
    samples = pixels.reshape(n, size).astype(FLOAT) / 255.0
    return Dataset(samples, labels.astype(np.int64), 10, (0.0, 1.0))


def find_mnist(root=None):
    """Locate an IDX image/label pair under ``root`` (or the data dir).

    Accepts the official names (``train-images-idx3-ubyte``,
    ``t10k-images-idx3-ubyte``) and the generic ``images-idx3-ubyte``,
    each optionally gzipped, directly under the root or in ``mnist/``.
    """
    root = data_dir() if root is None else Path(root)
    for base in (root / "mnist", root):
        for prefix in ("train-", "", "t10k-"):
            for ext in ("", ".gz"):
                img = base / f"{prefix}images-idx3-ubyte{ext}"
                lab = base / f"{prefix}labels-idx1-ubyte{ext}"
                if img.exists() and lab.exists():
                    return img, lab
    raise FileNotFoundError(f"no MNIST IDX files under {root}")


def synthetic_blobs(rng, n_classes, n_per_class, dim, separation, noise=1.0):
    """Isotropic Gaussian clusters centred at ``separation * e_c``.

    The centres are the vertices of a regular simplex with edge
    ``separation * sqrt(2)``; samples are ordered class by class.
    """
    if not separation > 0:
        raise ParameterError("separation must be positive")
    if n_classes < 2 or dim < n_classes:
        raise ParameterError("need n_classes >= 2 and dim >= n_classes")
    if n_per_class < 0:
        raise ParameterError("n_per_class must be >= 0")
    centres = separation * np.eye(n_classes, dim)
    x = np.repeat(centres, n_per_class, axis=0)
    x = x + noise * rng.standard_normal(size=x.shape)
    y = np.repeat(np.arange(n_classes), n_per_class)
    return Dataset(x, y, n_classes)


def split(dataset, fraction, rng):
    """Seeded shuffle, then the first ``round(fraction * N)`` rows train."""
    if not 0 < fraction < 1:
        raise ParameterError(f"fraction must lie in (0, 1), got {fraction}")
    order = rng.permutation(len(dataset))
    cut = int(round(fraction * len(dataset)))
    return dataset.subset(order[:cut]), dataset.subset(order[cut:])


def save_cache(dataset, path):
    """Write a ``.npz`` cache holding the arrays plus a format version tag."""
    rng_lo, rng_hi = dataset.declared_range if dataset.declared_range else (np.nan, np.nan)
    with open(path, "wb") as fh:
        np.savez(fh, version=np.int64(CACHE_VERSION), samples=dataset.samples,
                 labels=dataset.labels, class_count=np.int64(dataset.class_count),
                 declared_range=np.array([rng_lo, rng_hi], dtype=FLOAT))


def load_cache(path):
    with np.load(path) as z:
        if int(z["version"]) != CACHE_VERSION:
            raise ParseError(f"cache version {int(z['version'])} unsupported", field="version")
        rng = z["declared_range"]
        declared = None if np.isnan(rng).any() else (float(rng[0]), float(rng[1]))
        return Dataset(z["samples"].copy(), z["labels"].copy(), int(z["class_count"]), declared)
