"""Dataset ingestion and the patch pipeline.

IDX files (big endian):
    images   i32 magic 2051 | i32 count | i32 rows | i32 cols | u8 pixels
    labels   i32 magic 2049 | i32 count | u8 labels

Each 28x28 image becomes a 49x16 token matrix: a 4x4 grid of 7x7 patches,
scanned row-major, each patch flattened row-major into one column.  A
synthetic class-conditional Gaussian generator stands in for the real
dataset in tests and quick runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "IdxFormatError",
    "BadMagicError",
    "DimensionMismatchError",
    "TruncatedFileError",
    "CountMismatchError",
    "ImageSample",
    "PatchedSample",
    "load_idx",
    "patchify",
    "unpatchify",
    "one_hot",
    "synth_class_means",
    "synth_dataset",
    "batches",
    "stack_samples",
]

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049
IMAGE_SIDE = 28
PATCH_SIDE = 7
GRID_SIDE = IMAGE_SIDE // PATCH_SIDE          # 4x4 patches
TOKEN_DIM = PATCH_SIDE * PATCH_SIDE           # 49
SEQ_LEN = GRID_SIDE * GRID_SIDE               # 16
N_CLASSES = 10


class IdxFormatError(ValueError):
    """Malformed IDX input."""


class BadMagicError(IdxFormatError):
    pass


class DimensionMismatchError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class ImageSample:
    pixels: np.ndarray  # (28, 28) floats in [0, 1]
    label: int          # 0..9


@dataclass(frozen=True)
class PatchedSample:
    tokens: np.ndarray  # (49, 16)
    target: np.ndarray  # (10,) one-hot


def _read_exact(f, size: int, path: str) -> bytes:
    data = f.read(size)
    if len(data) != size:
        raise TruncatedFileError(f"{path}: expected {size} more bytes, got {len(data)}")
    return data


def load_idx(images_path: str, labels_path: str, dtype=np.float32) -> list[ImageSample]:
    """Parse paired IDX image/label files into scaled samples.

    Pixels are divided by 255.  Raises BadMagicError, DimensionMismatchError,
    TruncatedFileError or CountMismatchError, naming the offending file.
    """
    with open(images_path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, images_path))
        if magic != IMAGE_MAGIC:
            raise BadMagicError(f"{images_path}: magic {magic}, expected {IMAGE_MAGIC}")
        if rows != IMAGE_SIDE or cols != IMAGE_SIDE:
            raise DimensionMismatchError(
                f"{images_path}: images are {rows}x{cols}, expected {IMAGE_SIDE}x{IMAGE_SIDE}"
            )
        raw = _read_exact(f, count * rows * cols, images_path)
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows, cols)

    with open(labels_path, "rb") as f:
        magic, label_count = struct.unpack(">ii", _read_exact(f, 8, labels_path))
        if magic != LABEL_MAGIC:
            raise BadMagicError(f"{labels_path}: magic {magic}, expected {LABEL_MAGIC}")
        labels = np.frombuffer(_read_exact(f, label_count, labels_path), dtype=np.uint8)

    if count != label_count:
        raise CountMismatchError(
            f"{images_path} holds {count} images but {labels_path} holds {label_count} labels"
        )
    if labels.size and labels.max() >= N_CLASSES:
        raise IdxFormatError(f"{labels_path}: label {labels.max()} out of range")

    scaled = pixels.astype(dtype) / 255.0
    return [ImageSample(pixels=scaled[i], label=int(labels[i])) for i in range(count)]


def one_hot(label: int, n_classes: int = N_CLASSES, dtype=np.float32) -> np.ndarray:
    target = np.zeros(n_classes, dtype=dtype)
    target[label] = 1.0
    return target


def patchify(sample: ImageSample) -> PatchedSample:
    """Split a 28x28 image into the 49x16 token matrix.

    Patch m = 4 * patch_row + patch_col fills column m with the patch's
    pixels in row-major order; the split is lossless (see unpatchify).
    """
    img = sample.pixels
    if img.shape != (IMAGE_SIDE, IMAGE_SIDE):
        raise ValueError(f"expected a {IMAGE_SIDE}x{IMAGE_SIDE} image, got {img.shape}")
    tokens = (
        img.reshape(GRID_SIDE, PATCH_SIDE, GRID_SIDE, PATCH_SIDE)
        .transpose(0, 2, 1, 3)
        .reshape(SEQ_LEN, TOKEN_DIM)
        .T
    )
    return PatchedSample(tokens=np.ascontiguousarray(tokens),
                         target=one_hot(sample.label, dtype=img.dtype))


def unpatchify(tokens: np.ndarray) -> np.ndarray:
    """Inverse of the patch split: 49x16 tokens back to the 28x28 image."""
    return (
        tokens.T.reshape(GRID_SIDE, GRID_SIDE, PATCH_SIDE, PATCH_SIDE)
        .transpose(0, 2, 1, 3)
        .reshape(IMAGE_SIDE, IMAGE_SIDE)
    )


def synth_class_means(rng: np.random.Generator, token_dim: int = TOKEN_DIM,
                      seq_len: int = SEQ_LEN,
                      n_classes: int = N_CLASSES) -> np.ndarray:
    """Per-class mean token matrices, drawn uniformly in [0.2, 0.8]."""
    return rng.uniform(0.2, 0.8, size=(n_classes, token_dim, seq_len))


def synth_dataset(n_samples: int, rng: np.random.Generator,
                  token_dim: int = TOKEN_DIM, seq_len: int = SEQ_LEN,
                  n_classes: int = N_CLASSES, noise: float = 0.1,
                  dtype=np.float32,
                  means: np.ndarray | None = None) -> list[PatchedSample]:
    """Class-conditional Gaussian token matrices.

    Each class gets a fixed mean matrix; samples add isotropic noise, which
    keeps the classes linearly separable.  Passing means explicitly lets a
    held-out split share the class structure of a training split.
    """
    if means is None:
        means = synth_class_means(rng, token_dim, seq_len, n_classes)
    labels = rng.integers(0, n_classes, size=n_samples)
    out = []
    for label in labels:
        tokens = means[label] + noise * rng.standard_normal((token_dim, seq_len))
        out.append(PatchedSample(tokens=tokens.astype(dtype),
                                 target=one_hot(int(label), n_classes, dtype=dtype)))
    return out


def stack_samples(samples: list[PatchedSample]) -> tuple[np.ndarray, np.ndarray]:
    """Stack a list of samples into (S, N, T) tokens and (S, C) targets."""
    tokens = np.stack([s.tokens for s in samples])
    targets = np.stack([s.target for s in samples])
    return tokens, targets


def batches(data: list[PatchedSample], batch_size: int, rng: np.random.Generator):
    """Yield shuffled (tokens, targets) batches; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    order = rng.permutation(len(data))
    for start in range(0, len(data), batch_size):
        chunk = [data[i] for i in order[start:start + batch_size]]
        yield stack_samples(chunk)
