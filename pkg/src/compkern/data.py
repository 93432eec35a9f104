"""Dataset ingestion and preprocessing.

Loaders for CIFAR-10 binary batches, MNIST IDX files, and numeric CSVs,
plus the preprocessing chain used ahead of kernel computation: per-channel
standardization, ZCA whitening, horizontal-flip augmentation, zero padding,
spatial flattening, and class-balanced subsampling.

Datasets are immutable value objects; every transformation returns a new
dataset and appends a short description to its provenance chain.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class ImageDataset:
    """Images with labels.

    Parameters
    ----------
    pixels : ndarray of shape (N, D1, D2, C)
        Pixel values (loaders scale raw bytes to [0, 1]).
    labels : ndarray of shape (N,)
        Integer class labels in ``[0, class_count)``.
    class_count : int
        Number of classes.
    provenance : tuple of str
        Source and preprocessing chain, oldest first.
    """

    pixels: np.ndarray
    labels: np.ndarray
    class_count: int
    provenance: tuple[str, ...] = ()

    def __post_init__(self):
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.class_count
        ):
            raise ValueError(
                f"labels outside [0, {self.class_count}): "
                f"range [{self.labels.min()}, {self.labels.max()}]"
            )
        if not np.isfinite(self.pixels).all():
            raise ValueError("pixels contain non-finite values")

    @property
    def spatial(self) -> tuple[int, int]:
        return self.pixels.shape[1], self.pixels.shape[2]

    def __len__(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class TabularDataset:
    """Numeric feature rows with labels.

    Parameters
    ----------
    rows : ndarray of shape (N, d)
    labels : ndarray of shape (N,)
    folds : ndarray of shape (N,) or None
        Optional fold assignments partitioning ``[0, N)``.
    """

    rows: np.ndarray
    labels: np.ndarray
    folds: np.ndarray | None = None

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class ZcaTransform:
    """Fitted ZCA whitening transform.

    Parameters
    ----------
    mean : ndarray of shape (d,)
        Feature means of the fitting data.
    matrix : ndarray of shape (d, d)
        Symmetric whitening matrix ``U diag((l_i + eps)^(-1/2)) U^T``.
    eps : float
        Eigenvalue floor used at fit time.
    """

    mean: np.ndarray
    matrix: np.ndarray
    eps: float


class DataFormatError(ValueError):
    """A dataset file failed structural validation."""


# ---------------------------------------------------------------------------
# Loaders
# ---------------------------------------------------------------------------

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 1024 pixel bytes
_CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST_FILES = ["test_batch.bin"]


def load_cifar10(path, split: str = "train") -> ImageDataset:
    """Load CIFAR-10 binary batches.

    Each record is 3073 bytes: one label byte then 1024 red, 1024 green and
    1024 blue bytes in row-major order.  Pixel bytes are scaled to [0, 1].

    Parameters
    ----------
    path : path-like
        Either one ``.bin`` file or a directory holding the standard batch
        files (``data_batch_1..5.bin`` / ``test_batch.bin``).
    split : {"train", "test"}, default="train"
        Which standard files to read when ``path`` is a directory.

    Returns
    -------
    ImageDataset
        ``(N, 32, 32, 3)`` float32 pixels, labels 0-9.

    Raises
    ------
    DataFormatError
        Missing files, truncated records, or out-of-range labels.
    """
    path = Path(path)
    if path.is_dir():
        names = {"train": _CIFAR_TRAIN_FILES, "test": _CIFAR_TEST_FILES}.get(split)
        if names is None:
            raise ValueError(f"split must be 'train' or 'test', got {split!r}")
        files = [path / name for name in names if (path / name).exists()]
        if not files:
            raise DataFormatError(f"no CIFAR-10 {split} batch files under {path}")
    else:
        files = [path]
    images, labels = [], []
    for file in files:
        raw = np.frombuffer(file.read_bytes(), dtype=np.uint8)
        if raw.size == 0 or raw.size % _CIFAR_RECORD != 0:
            raise DataFormatError(
                f"{file}: size {raw.size} is not a multiple of {_CIFAR_RECORD}"
            )
        records = raw.reshape(-1, _CIFAR_RECORD)
        labels.append(records[:, 0].astype(np.int64))
        planes = records[:, 1:].reshape(-1, 3, 32, 32)
        images.append(planes.transpose(0, 2, 3, 1))
    label_arr = np.concatenate(labels)
    if label_arr.max(initial=0) > 9:
        raise DataFormatError(f"label byte {label_arr.max()} out of range 0-9")
    pixels = (np.concatenate(images).astype(np.float32)) / 255.0
    return ImageDataset(
        pixels=pixels,
        labels=label_arr,
        class_count=10,
        provenance=(f"cifar10:{split}:{path.name}",),
    )


def load_mnist_idx(images_path, labels_path) -> ImageDataset:
    """Load an MNIST-style IDX image/label file pair.

    Parameters
    ----------
    images_path : path-like
        IDX file with big-endian magic 0x00000803 and dims (N, 28, 28).
    labels_path : path-like
        IDX file with magic 0x00000801 and dims (N,).

    Returns
    -------
    ImageDataset
        ``(N, 28, 28, 1)`` float32 pixels in [0, 1].

    Raises
    ------
    DataFormatError
        Magic mismatch, truncated data, or image/label count mismatch.
    """
    img_raw = Path(images_path).read_bytes()
    lab_raw = Path(labels_path).read_bytes()
    if len(img_raw) < 16 or int.from_bytes(img_raw[:4], "big") != 0x00000803:
        raise DataFormatError(f"{images_path}: bad image magic")
    if len(lab_raw) < 8 or int.from_bytes(lab_raw[:4], "big") != 0x00000801:
        raise DataFormatError(f"{labels_path}: bad label magic")
    n, d1, d2 = (int.from_bytes(img_raw[o:o + 4], "big") for o in (4, 8, 12))
    n_labels = int.from_bytes(lab_raw[4:8], "big")
    if n != n_labels:
        raise DataFormatError(
            f"image count {n} does not match label count {n_labels}"
        )
    if len(img_raw) != 16 + n * d1 * d2:
        raise DataFormatError(f"{images_path}: truncated pixel data")
    if len(lab_raw) != 8 + n:
        raise DataFormatError(f"{labels_path}: truncated label data")
    pixels = (
        np.frombuffer(img_raw, dtype=np.uint8, offset=16)
        .reshape(n, d1, d2, 1)
        .astype(np.float32)
        / 255.0
    )
    labels = np.frombuffer(lab_raw, dtype=np.uint8, offset=8).astype(np.int64)
    return ImageDataset(
        pixels=pixels,
        labels=labels,
        class_count=10,
        provenance=(f"mnist:{Path(images_path).name}",),
    )


def load_csv_tabular(path, label_col=-1, header: str = "auto") -> TabularDataset:
    """Load a numeric CSV with one label column.

    Categorical labels are mapped to integers by first appearance; feature
    cells must parse as numbers.

    Parameters
    ----------
    path : path-like
    label_col : int or str, default=-1
        Label column as an index (negative allowed) or, with a header, a
        column name.
    header : {"auto", "yes", "no"}, default="auto"
        Whether the first row is a header; "auto" treats it as one when any
        feature cell fails numeric parsing.

    Returns
    -------
    TabularDataset

    Raises
    ------
    DataFormatError
        Ragged rows or non-numeric feature cells (with row numbers).
    """
    with open(path, newline="") as fh:
        raw_rows = [row for row in csv.reader(fh) if row]
    if not raw_rows:
        raise DataFormatError(f"{path}: empty file")
    width = len(raw_rows[0])
    for idx, row in enumerate(raw_rows, start=1):
        if len(row) != width:
            raise DataFormatError(
                f"{path}: row {idx} has {len(row)} cells, expected {width}"
            )

    names = None
    start = 0
    if isinstance(label_col, str):
        if header == "no":
            raise ValueError("a named label column requires a header row")
        names, start = raw_rows[0], 1
    elif header == "yes":
        names, start = raw_rows[0], 1
    elif header == "auto":
        probe = raw_rows[0]
        if any(not _is_number(cell) for cell in probe):
            names, start = probe, 1

    if isinstance(label_col, str):
        if label_col not in names:
            raise DataFormatError(f"{path}: no column named {label_col!r}")
        label_idx = names.index(label_col)
    else:
        label_idx = label_col % width

    label_map: dict[str, int] = {}
    features, labels = [], []
    for idx in range(start, len(raw_rows)):
        row = raw_rows[idx]
        feats = []
        for col, cell in enumerate(row):
            if col == label_idx:
                continue
            try:
                feats.append(float(cell))
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {idx + 1}, column {col + 1}: "
                    f"non-numeric feature cell {cell!r}"
                ) from None
        raw_label = row[label_idx]
        if raw_label not in label_map:
            label_map[raw_label] = len(label_map)
        labels.append(label_map[raw_label])
        features.append(feats)
    return TabularDataset(
        rows=np.asarray(features, dtype=np.float64),
        labels=np.asarray(labels, dtype=np.int64),
    )


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def save_dataset_npz(path, dataset: ImageDataset) -> None:
    """Write an image dataset (with provenance) to a ``.npz`` file."""
    np.savez_compressed(
        path,
        pixels=dataset.pixels,
        labels=dataset.labels,
        class_count=np.int64(dataset.class_count),
        provenance=np.asarray(dataset.provenance, dtype=str),
    )


def load_dataset_npz(path) -> ImageDataset:
    """Read an image dataset written by :func:`save_dataset_npz`."""
    with np.load(path, allow_pickle=False) as archive:
        return ImageDataset(
            pixels=archive["pixels"],
            labels=archive["labels"],
            class_count=int(archive["class_count"]),
            provenance=tuple(str(p) for p in archive["provenance"]),
        )


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

_STD_FLOOR = 1e-8


def standardize(dataset):
    """Shift/scale to zero mean and unit variance.

    Images are standardized per channel (statistics over all images and
    pixels); tabular data per feature.  Standard deviations are floored at
    1e-8, so constant features map to zeros.

    Parameters
    ----------
    dataset : ImageDataset or TabularDataset

    Returns
    -------
    Same type as the input.
    """
    if isinstance(dataset, ImageDataset):
        pixels = dataset.pixels.astype(np.float64)
        mean = pixels.mean(axis=(0, 1, 2))
        std = np.maximum(pixels.std(axis=(0, 1, 2)), _STD_FLOOR)
        out = ((pixels - mean) / std).astype(np.float32)
        return replace(
            dataset, pixels=out, provenance=dataset.provenance + ("standardize",)
        )
    rows = dataset.rows.astype(np.float64)
    mean = rows.mean(axis=0)
    std = np.maximum(rows.std(axis=0), _STD_FLOOR)
    return replace(dataset, rows=(rows - mean) / std)


def zca_fit(dataset, eps: float | None = None) -> ZcaTransform:
    """Fit a ZCA whitening transform on (flattened) images.

    The transform is ``U diag((l_i + eps)^(-1/2)) U^T`` from the
    eigendecomposition of the sample covariance of the mean-centered
    flattened images.

    Parameters
    ----------
    dataset : ImageDataset or ndarray
        Fitting data; arrays are treated as (N, ...) and flattened.
    eps : float, optional
        Eigenvalue floor; default ``1e-5 * trace(cov) / d`` (scale-relative).

    Returns
    -------
    ZcaTransform
    """
    pixels = dataset.pixels if isinstance(dataset, ImageDataset) else dataset
    flat = np.asarray(pixels, dtype=np.float64).reshape(pixels.shape[0], -1)
    if flat.shape[0] < 2:
        raise ValueError("ZCA requires at least 2 examples")
    mean = flat.mean(axis=0)
    centered = flat - mean
    cov = centered.T @ centered / (flat.shape[0] - 1)
    if eps is None:
        eps = 1e-5 * float(np.trace(cov)) / cov.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    eigvals = np.maximum(eigvals, 0.0)
    matrix = (eigvecs * (eigvals + eps) ** -0.5) @ eigvecs.T
    return ZcaTransform(mean=mean, matrix=matrix, eps=float(eps))


def zca_apply(transform: ZcaTransform, dataset):
    """Apply a fitted ZCA transform.

    Parameters
    ----------
    transform : ZcaTransform
    dataset : ImageDataset or ndarray

    Returns
    -------
    Same type as the input, whitened (images keep their shape).
    """
    if isinstance(dataset, ImageDataset):
        shape = dataset.pixels.shape
        flat = dataset.pixels.astype(np.float64).reshape(shape[0], -1)
        out = ((flat - transform.mean) @ transform.matrix).reshape(shape)
        return replace(
            dataset,
            pixels=out.astype(np.float32),
            provenance=dataset.provenance + ("zca",),
        )
    flat = np.asarray(dataset, dtype=np.float64).reshape(dataset.shape[0], -1)
    return ((flat - transform.mean) @ transform.matrix).reshape(dataset.shape)


def flip_augment(dataset: ImageDataset) -> ImageDataset:
    """Append horizontal mirrors: originals first, then flipped copies.

    A pixel at (row, col) maps to (row, D2 - 1 - col) in the mirror; labels
    are duplicated in the same order.

    Parameters
    ----------
    dataset : ImageDataset

    Returns
    -------
    ImageDataset
        2N examples.
    """
    mirrored = dataset.pixels[:, :, ::-1, :]
    return replace(
        dataset,
        pixels=np.concatenate([dataset.pixels, mirrored]),
        labels=np.concatenate([dataset.labels, dataset.labels]),
        provenance=dataset.provenance + ("flip_augment",),
    )


def pad_to(dataset: ImageDataset, target: tuple[int, int]) -> ImageDataset:
    """Zero-pad images to a larger spatial size, centered.

    Odd margins put the extra row/column at the bottom/right (floor-biased
    leading border).

    Parameters
    ----------
    dataset : ImageDataset
    target : tuple of int
        Target (D1, D2); both must be >= the current dims.

    Returns
    -------
    ImageDataset
    """
    d1, d2 = dataset.spatial
    t1, t2 = target
    if t1 < d1 or t2 < d2:
        raise ValueError(f"target {target} smaller than current dims {d1}x{d2}")
    if (t1, t2) == (d1, d2):
        return dataset
    top, left = (t1 - d1) // 2, (t2 - d2) // 2
    pixels = np.pad(
        dataset.pixels,
        ((0, 0), (top, t1 - d1 - top), (left, t2 - d2 - left), (0, 0)),
    )
    return replace(
        dataset, pixels=pixels, provenance=dataset.provenance + (f"pad_to:{t1}x{t2}",)
    )


def flatten_spatial(dataset: ImageDataset) -> ImageDataset:
    """Reshape images to 1x1 spatial size with all values as channels.

    Composing the bare input kernel over a flattened dataset yields the
    plain dot-product (linear) kernel of the vectorized images.

    Parameters
    ----------
    dataset : ImageDataset

    Returns
    -------
    ImageDataset
        Pixels of shape (N, 1, 1, D1 * D2 * C).
    """
    n = dataset.pixels.shape[0]
    return replace(
        dataset,
        pixels=dataset.pixels.reshape(n, 1, 1, -1),
        provenance=dataset.provenance + ("flatten",),
    )


def subsample_balanced(dataset: ImageDataset, n: int, seed: int) -> ImageDataset:
    """Class-balanced subsample: ``n / class_count`` per class, seeded.

    Examples are drawn uniformly without replacement within each class and
    concatenated in class order (0, 1, ...), so the result is deterministic
    under the seed.

    Parameters
    ----------
    dataset : ImageDataset
    n : int
        Total sample size; must be divisible by ``class_count``.
    seed : int

    Returns
    -------
    ImageDataset

    Raises
    ------
    ValueError
        If ``n`` is not divisible by the class count or a class has too few
        examples.
    """
    c = dataset.class_count
    if n % c != 0:
        raise ValueError(f"subsample size {n} not divisible by {c} classes")
    per_class = n // c
    rng = np.random.default_rng(seed)
    picks = []
    for cls in range(c):
        members = np.flatnonzero(dataset.labels == cls)
        if members.size < per_class:
            raise ValueError(
                f"class {cls} has {members.size} examples, need {per_class}"
            )
        picks.append(rng.choice(members, size=per_class, replace=False))
    index = np.concatenate(picks)
    return replace(
        dataset,
        pixels=dataset.pixels[index],
        labels=dataset.labels[index],
        provenance=dataset.provenance + (f"subsample_balanced:n={n}:seed={seed}",),
    )
