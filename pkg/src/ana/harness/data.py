"""Dataset loaders (IDX, CIFAR-10 binary) and synthetic generators."""

from __future__ import annotations

import gzip
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2430, 0.2610)
CIFAR_RECORD = 1 + 3 * 32 * 32


class DataFormatError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    name: str = ""

    def __len__(self):
        return len(self.x)

    def subset(self, limit: int) -> "Dataset":
        if limit and limit < len(self):
            return Dataset(self.x[:limit], self.y[:limit], self.name)
        return self


# -- IDX ---------------------------------------------------------------------------

# IDX type byte -> numpy big-endian dtype
_IDX_TYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


def _read_bytes(path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as fh:
        return fh.read()


def read_idx(path) -> np.ndarray:
    """Parse an IDX file: 2 zero bytes, type byte, ndim byte, big-endian u32 dims, data."""
    data = _read_bytes(path)
    if len(data) < 4:
        raise DataFormatError(f"{path}: truncated header")
    zero, dtype_code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or dtype_code not in _IDX_TYPES or ndim == 0:
        raise DataFormatError(f"{path}: bad magic 0x{int.from_bytes(data[:4], 'big'):08x}")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DataFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    dtype = np.dtype(_IDX_TYPES[dtype_code])
    expected = int(np.prod(dims)) * dtype.itemsize
    body = data[header:]
    if len(body) < expected:
        raise DataFormatError(f"{path}: truncated body ({len(body)} of {expected} bytes)")
    if len(body) > expected:
        raise DataFormatError(f"{path}: {len(body) - expected} trailing bytes")
    return np.frombuffer(body, dtype=dtype).reshape(dims)


def load_idx(images_path, labels_path, mean: float = 0.0, std: float = 1.0) -> Dataset:
    """Images scaled to [0, 1], then ``(x - mean) / std``; labels as int64."""
    images = read_idx(images_path)
    labels = read_idx(labels_path)
    if labels.ndim != 1:
        raise DataFormatError(f"{labels_path}: labels must be one-dimensional")
    if len(images) != len(labels):
        raise DataFormatError(f"image/label count mismatch: {len(images)} vs {len(labels)}")
    x = images.astype(np.float64) / 255.0
    x = (x - mean) / std
    return Dataset(x, labels.astype(np.int64), Path(images_path).name)


def _find(directory: Path, stem: str) -> Path:
    for cand in (stem, stem.replace("-idx", ".idx"), stem + ".gz", stem.replace("-idx", ".idx") + ".gz"):
        p = directory / cand
        if p.exists():
            return p
    raise FileNotFoundError(f"no {stem}[.gz] in {directory}")


def load_mnist(directory, split: str = "train", mean: float = 0.1307, std: float = 0.3081) -> Dataset:
    d = Path(directory)
    prefix = "train" if split == "train" else "t10k"
    ds = load_idx(_find(d, f"{prefix}-images-idx3-ubyte"), _find(d, f"{prefix}-labels-idx1-ubyte"),
                  mean, std)
    ds.x = ds.x.reshape(len(ds.x), -1)
    ds.name = f"mnist-{split}"
    return ds


# -- CIFAR-10 binary -------------------------------------------------------------


def load_cifar_binary(path, mean=CIFAR_MEAN, std=CIFAR_STD) -> Dataset:
    """Records of 1 label byte + 3x32x32 channel-major pixel bytes."""
    data = _read_bytes(path)
    if len(data) % CIFAR_RECORD:
        raise DataFormatError(
            f"{path}: size {len(data)} is not a multiple of the {CIFAR_RECORD}-byte record"
        )
    n = len(data) // CIFAR_RECORD
    if n == 0:
        warnings.warn(f"{path}: empty CIFAR file", stacklevel=2)
        return Dataset(np.zeros((0, 3, 32, 32)), np.zeros(0, dtype=np.int64), Path(path).name)
    raw = np.frombuffer(data, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    y = raw[:, 0].astype(np.int64)
    x = raw[:, 1:].reshape(n, 3, 32, 32).astype(np.float64) / 255.0
    x = (x - np.asarray(mean)[None, :, None, None]) / np.asarray(std)[None, :, None, None]
    return Dataset(x, y, Path(path).name)


# -- synthetic -----------------------------------------------------------------------


def _disc(rng, n, centre, radius):
    r = radius * np.sqrt(rng.uniform(0, 1, n))
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([centre[0] + r * np.cos(t), centre[1] + r * np.sin(t)], axis=1)


def _annulus(rng, n, r0, r1):
    r = np.sqrt(rng.uniform(r0 * r0, r1 * r1, n))
    t = rng.uniform(0, 2 * math.pi, n)
    return np.stack([r * np.cos(t), r * np.sin(t)], axis=1)


def _blobs(rng, n):
    # discs of radius 1.5 centred 2.12 away from the line x + y = 0
    a, b = n // 2, n - n // 2
    x = np.concatenate([_disc(rng, a, (-1.5, -1.5), 1.5), _disc(rng, b, (1.5, 1.5), 1.5)])
    return x, np.concatenate([np.zeros(a), np.ones(b)]).astype(np.int64)


def _xor(rng, n):
    k = n // 4
    centres = [(1, 1), (-1, -1), (1, -1), (-1, 1)]
    parts = [_disc(rng, k if i < 3 else n - 3 * k, c, 0.3) for i, c in enumerate(centres)]
    y = np.concatenate([np.full(len(p), int(i >= 2)) for i, p in enumerate(parts)])
    return np.concatenate(parts), y.astype(np.int64)


def _rings(rng, n):
    a = n // 2
    x = np.concatenate([_disc(rng, a, (0, 0), 1.0), _annulus(rng, n - a, 1.5, 2.0)])
    return x, np.concatenate([np.zeros(a), np.ones(n - a)]).astype(np.int64)


def _field(rng, n):
    # 1-Lipschitz scalar field on [0, 1]^2 with range in [-1, 1]
    x = rng.uniform(0, 1, (n, 2))
    y = (np.sin(2 * math.pi * x[:, 0]) + np.cos(2 * math.pi * x[:, 1])) / (4 * math.pi)
    return x, y


GENERATORS = {"blobs": _blobs, "xor": _xor, "rings": _rings, "field": _field}


def synth_lipschitz(name: str, n_samples: int, seed: int = 0) -> Dataset:
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; expected one of {sorted(GENERATORS)}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    x, y = GENERATORS[name](rng, n_samples)
    perm = rng.permutation(n_samples)
    return Dataset(x[perm], y[perm], name)
