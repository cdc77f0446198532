"""Desk-scale classification datasets and their on-disk formats.

Generators produce features inside the box [-1, 1]^d, which is what the
contamination model and the gradient-penalty scale assume.  Loaded files
are passed through unchanged when they already fit the box; otherwise each
column is affinely rescaled onto [-1, 1] (a constant column maps to 0).
Both the CSV and the IDX loaders apply this same policy.

Two formats:

* CSV with header ``label,f0,f1,...``; floats are written with ``repr`` so
  a save/load round trip is exact.
* IDX pairs (features file + labels file), big-endian, 4-byte magic
  ``00 00 <type> <ndim>``.  Features are written as float64 with ndim 2;
  unsigned bytes are accepted on read and mapped to [-1, 1] via v/127.5-1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np

RngLike = Union[int, np.random.Generator]

IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
_IDX_INTEGER_CODES = (0x08, 0x09, 0x0B, 0x0C)


class DatasetFormatError(ValueError):
    """A data file does not parse; the message names file, line or byte."""


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-d, got shape {feats.shape}")
        if labs.shape != (feats.shape[0],):
            raise ValueError(
                f"labels shape {labs.shape} does not match {feats.shape[0]} rows"
            )
        if labs.size and (labs.min() < 0 or labs.max() >= self.n_classes):
            raise ValueError(
                f"labels outside [0, {self.n_classes}): "
                f"range [{labs.min()}, {labs.max()}]"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def summary(self) -> dict:
        counts = np.bincount(self.labels, minlength=self.n_classes)
        return {
            "name": self.name,
            "n": self.n,
            "dim": self.dim,
            "n_classes": self.n_classes,
            "class_counts": counts.tolist(),
            "feature_min": float(self.features.min()) if self.n else None,
            "feature_max": float(self.features.max()) if self.n else None,
        }


def _as_rng(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def gaussian_blobs(
    n: int,
    rng: RngLike = 0,
    n_classes: int = 4,
    dim: int = 2,
    radius: float = 0.6,
    noise: float = 0.12,
) -> Dataset:
    """Isotropic Gaussian clusters with means on a circle of given radius.

    For dim > 2 the circle lives in the first two coordinates and the rest
    are pure noise, so the decision problem stays planar.
    """
    if dim < 2:
        raise ValueError("blobs need dim >= 2")
    gen = _as_rng(rng)
    angles = 2.0 * np.pi * np.arange(n_classes) / n_classes
    means = np.zeros((n_classes, dim))
    means[:, 0] = radius * np.cos(angles)
    means[:, 1] = radius * np.sin(angles)
    labels = gen.integers(0, n_classes, size=n)
    feats = means[labels] + noise * gen.standard_normal((n, dim))
    return Dataset(np.clip(feats, -1.0, 1.0), labels, n_classes, name="blobs")


def two_moons(n: int, rng: RngLike = 0, noise: float = 0.08) -> Dataset:
    """Two interleaved half circles, mapped into the box by a fixed affine."""
    gen = _as_rng(rng)
    labels = gen.integers(0, 2, size=n)
    t = gen.uniform(0.0, np.pi, size=n)
    feats = np.empty((n, 2))
    upper = labels == 0
    feats[upper, 0] = np.cos(t[upper])
    feats[upper, 1] = np.sin(t[upper])
    feats[~upper, 0] = 1.0 - np.cos(t[~upper])
    feats[~upper, 1] = 0.5 - np.sin(t[~upper])
    feats += noise * gen.standard_normal((n, 2))
    feats[:, 0] = (feats[:, 0] - 0.5) / 1.6
    feats[:, 1] = (feats[:, 1] + 0.25) / 1.5
    return Dataset(np.clip(feats, -1.0, 1.0), labels, 2, name="moons")


def digits_subset(n: int, rng: RngLike = 0) -> Dataset:
    """Random subset of the 8x8 handwritten digits, pixels scaled to [-1, 1].

    Needs scikit-learn; it is only imported here so the core package works
    without it.
    """
    try:
        from sklearn.datasets import load_digits
    except ImportError as exc:
        raise ImportError(
            "the digits dataset needs scikit-learn "
            "(pip install scikit-learn)"
        ) from exc
    pixels, labels = load_digits(return_X_y=True)
    if n > pixels.shape[0]:
        raise ValueError(f"only {pixels.shape[0]} digits available, asked for {n}")
    gen = _as_rng(rng)
    idx = gen.choice(pixels.shape[0], size=n, replace=False)
    feats = pixels[idx] / 8.0 - 1.0
    return Dataset(feats, labels[idx], 10, name="digits")


DATASET_KINDS = {
    "blobs": gaussian_blobs,
    "moons": two_moons,
    "digits": digits_subset,
}


def make_dataset(kind: str, n: int, rng: RngLike = 0, **params) -> Dataset:
    try:
        factory = DATASET_KINDS[kind]
    except KeyError:
        raise ValueError(
            f"unknown dataset kind {kind!r}; choose from {sorted(DATASET_KINDS)}"
        ) from None
    return factory(n, rng=rng, **params)


def _fit_to_box(features: np.ndarray) -> np.ndarray:
    """Shared load policy: passthrough when in-box, else per-column rescale."""
    if features.size == 0:
        return features
    lo = features.min(axis=0)
    hi = features.max(axis=0)
    if lo.min() >= -1.0 and hi.max() <= 1.0:
        return features
    span = hi - lo
    out = np.zeros_like(features)
    live = span > 0
    out[:, live] = 2.0 * (features[:, live] - lo[live]) / span[live] - 1.0
    return out


def save_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for label, row in zip(dataset.labels, dataset.features):
            writer.writerow([int(label)] + [repr(float(v)) for v in row])


def load_csv(path, n_classes: Optional[int] = None) -> Dataset:
    """Read ``label,f0,...`` rows; errors carry the 1-based line number."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}:1: empty file") from None
        if not header or header[0] != "label":
            raise DatasetFormatError(
                f"{path}:1: header must start with 'label', got {header[:3]}"
            )
        dim = len(header) - 1
        if dim < 1:
            raise DatasetFormatError(f"{path}:1: no feature columns")
        labels, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 1:
                raise DatasetFormatError(
                    f"{path}:{lineno}: expected {dim + 1} fields, got {len(row)}"
                )
            try:
                labels.append(int(row[0]))
            except ValueError:
                raise DatasetFormatError(
                    f"{path}:{lineno}: label {row[0]!r} is not an integer"
                ) from None
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError:
                bad = next(v for v in row[1:] if not _is_float(v))
                raise DatasetFormatError(
                    f"{path}:{lineno}: feature value {bad!r} is not a number"
                ) from None
    labels = np.array(labels, dtype=np.int64)
    if labels.size and labels.min() < 0:
        raise DatasetFormatError(f"{path}: negative label {labels.min()}")
    feats = _fit_to_box(np.array(rows, dtype=np.float64).reshape(len(labels), dim))
    classes = n_classes if n_classes is not None else int(labels.max()) + 1 if labels.size else 1
    return Dataset(feats, labels, classes, name=path.stem)


def _is_float(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def _write_idx(path: Path, array: np.ndarray, type_code: int) -> None:
    dims = np.array(array.shape, dtype=">u4")
    header = bytes([0, 0, type_code, array.ndim])
    path.write_bytes(header + dims.tobytes() + array.tobytes())


def save_idx(dataset: Dataset, features_path, labels_path) -> None:
    _write_idx(
        Path(features_path),
        np.ascontiguousarray(dataset.features, dtype=">f8"),
        0x0E,
    )
    _write_idx(
        Path(labels_path),
        np.ascontiguousarray(dataset.labels, dtype=">i4"),
        0x0C,
    )


def _read_idx(path) -> tuple[np.ndarray, int]:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise DatasetFormatError(f"{path}: only {len(raw)} bytes, no room for magic")
    if raw[0] != 0 or raw[1] != 0:
        raise DatasetFormatError(
            f"{path}: bytes 0-1 of the magic must be zero, got "
            f"{raw[0]:#04x} {raw[1]:#04x}"
        )
    type_code, ndim = raw[2], raw[3]
    if type_code not in IDX_DTYPES:
        raise DatasetFormatError(
            f"{path}: unknown type code {type_code:#04x} at byte 2"
        )
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DatasetFormatError(
            f"{path}: truncated dimension table, byte {len(raw)} of {header_end}"
        )
    dims = np.frombuffer(raw, dtype=">u4", count=ndim, offset=4)
    dtype = IDX_DTYPES[type_code]
    expected = header_end + int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: payload is {len(raw)} bytes, expected {expected} "
            f"for shape {tuple(int(d) for d in dims)} of {dtype.name}"
        )
    data = np.frombuffer(raw, dtype=dtype, offset=header_end)
    return data.reshape(tuple(int(d) for d in dims)), type_code


def load_idx(features_path, labels_path, n_classes: Optional[int] = None) -> Dataset:
    feats_raw, feats_code = _read_idx(features_path)
    labels_raw, labels_code = _read_idx(labels_path)
    if feats_raw.ndim < 2:
        raise DatasetFormatError(
            f"{features_path}: features need ndim >= 2, got {feats_raw.ndim}"
        )
    if labels_raw.ndim != 1:
        raise DatasetFormatError(
            f"{labels_path}: labels need ndim 1, got {labels_raw.ndim}"
        )
    if labels_code not in _IDX_INTEGER_CODES:
        raise DatasetFormatError(
            f"{labels_path}: labels must use an integer type code, "
            f"got {labels_code:#04x}"
        )
    n = feats_raw.shape[0]
    if labels_raw.shape[0] != n:
        raise DatasetFormatError(
            f"{labels_path}: {labels_raw.shape[0]} labels for {n} feature rows"
        )
    feats = feats_raw.reshape(n, -1).astype(np.float64)
    if feats_code == 0x08:
        feats = feats / 127.5 - 1.0
    else:
        feats = _fit_to_box(feats)
    labels = labels_raw.astype(np.int64)
    if labels.size and labels.min() < 0:
        raise DatasetFormatError(f"{labels_path}: negative label {labels.min()}")
    classes = n_classes if n_classes is not None else int(labels.max()) + 1 if labels.size else 1
    return Dataset(feats, labels, classes, name=Path(features_path).stem)
