"""IDX-format digit corpus: parsing, serialization, and loading.

The on-disk format is the classic big-endian IDX layout: magic bytes
[0, 0, 0x08, ndims] (unsigned-byte element type), one big-endian u32 per
dimension, then the raw payload. Labels are 1-D, images are 3-D.

When no IDX files are available, `fallback_corpus` builds a small real
handwritten-digit corpus from scikit-learn's bundled 8x8 scans, upscaled to
28x28 so it flows through exactly the same pipeline as a full-size corpus.
"""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    DimensionMismatchError,
    MissingDataError,
    TruncatedFileError,
)

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def parse_idx(data: bytes) -> np.ndarray:
    """Decode an IDX byte string into a uint8 tensor of the declared shape."""
    if len(data) < 4:
        raise TruncatedFileError("file shorter than the 4-byte magic")
    if data[0] != 0 or data[1] != 0 or data[2] != 0x08 or data[3] not in (1, 3):
        magic = int.from_bytes(data[:4], "big")
        raise BadMagicError(f"unsupported IDX magic 0x{magic:08x}")
    ndim = data[3]
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise TruncatedFileError("file ends inside the dimension header")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    count = 1
    for d in dims:
        count *= d
    payload = data[header_len:]
    if len(payload) < count:
        raise TruncatedFileError(
            f"payload holds {len(payload)} bytes, header declares {count}"
        )
    if len(payload) > count:
        raise DimensionMismatchError(
            f"payload holds {len(payload)} bytes, header declares {count}"
        )
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def serialize_idx(tensor: np.ndarray) -> bytes:
    """Inverse of parse_idx for 1-D or 3-D uint8 tensors."""
    tensor = np.ascontiguousarray(tensor, dtype=np.uint8)
    if tensor.ndim not in (1, 3):
        raise DimensionMismatchError(f"IDX supports 1-D or 3-D tensors, got {tensor.ndim}-D")
    header = bytes([0, 0, 0x08, tensor.ndim])
    header += struct.pack(f">{tensor.ndim}I", *tensor.shape)
    return header + tensor.tobytes()


@dataclass
class MnistCorpus:
    """One split of a digit corpus: raw uint8 images with labels.

    Pixel values stay in [0, 255] here; normalization to [0, 1] happens when
    batches are extracted.
    """

    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8
    split: str

    def __post_init__(self) -> None:
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        if self.images.ndim != 3 or self.images.shape[1:] != (28, 28):
            raise DimensionMismatchError(f"expected (n, 28, 28) images, got {self.images.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.images.shape[0]:
            raise DimensionMismatchError("image count and label count differ")

    def __len__(self) -> int:
        return self.images.shape[0]

    def class_indices(self, digit: int) -> np.ndarray:
        return np.flatnonzero(self.labels == digit)


def _read_file(path: Path) -> bytes:
    raw = path.read_bytes()
    if raw[:2] == b"\x1f\x8b":
        return gzip.decompress(raw)
    return raw


def has_idx_files(data_dir: str | Path) -> bool:
    data_dir = Path(data_dir)
    for names in _FILES.values():
        for name in names:
            if not (data_dir / name).exists() and not (data_dir / (name + ".gz")).exists():
                return False
    return True


def load_corpus(data_dir: str | Path, split: str) -> MnistCorpus:
    """Load one split from IDX files (optionally gzipped) in `data_dir`."""
    if split not in _FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    data_dir = Path(data_dir)
    arrays = []
    for name in _FILES[split]:
        path = data_dir / name
        if not path.exists():
            path = data_dir / (name + ".gz")
        if not path.exists():
            raise MissingDataError(f"no {name}[.gz] under {data_dir}")
        arrays.append(parse_idx(_read_file(path)))
    images, labels = arrays
    if images.ndim != 3:
        raise DimensionMismatchError("image file does not hold a 3-D tensor")
    if labels.ndim != 1:
        raise DimensionMismatchError("label file does not hold a 1-D tensor")
    return MnistCorpus(images=images, labels=labels, split=split)


def fallback_corpus(split: str = "train") -> MnistCorpus:
    """Offline stand-in corpus built from scikit-learn's bundled digit scans.

    The 8x8 scans are upscaled 3x and padded to 28x28, with intensities
    rescaled to [0, 255]. Per class, the first 70% of samples (in dataset
    order) form the train split and the rest the test split; the assignment
    is deterministic with no randomness involved.
    """
    from sklearn.datasets import load_digits

    raw = load_digits()
    upscaled = np.kron(raw.images, np.ones((3, 3)))  # (n, 24, 24), values 0..16
    images = np.zeros((upscaled.shape[0], 28, 28), dtype=np.float64)
    images[:, 2:26, 2:26] = upscaled
    images = np.clip(np.round(images * (255.0 / 16.0)), 0, 255).astype(np.uint8)
    labels = raw.target.astype(np.uint8)

    keep = np.zeros(len(labels), dtype=bool)
    for digit in range(10):
        idx = np.flatnonzero(labels == digit)
        cut = int(round(0.7 * len(idx)))
        keep[idx[:cut] if split == "train" else idx[cut:]] = True
    return MnistCorpus(images=images[keep], labels=labels[keep], split=split)


def load_or_fallback(data_dir: str | Path | None, split: str) -> MnistCorpus:
    """The real corpus when IDX files are present, else the bundled fallback."""
    if data_dir is not None and has_idx_files(data_dir):
        return load_corpus(data_dir, split)
    return fallback_corpus(split)
