"""Shared fixtures and dataset discovery for the test suite."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from compkern import ImageDataset

#: Search roots for real datasets (first hit wins).  Tests that need real
#: data skip loudly when nothing is found.
_DATA_ROOTS = (
    os.environ.get("COMPKERN_DATA_DIR", ""),
    "/root/data",
    "/root/pkg/data",
    "./data",
    str(Path.home() / "data"),
)

_CIFAR_REQUIRED = ("data_batch_1.bin", "test_batch.bin")
_MNIST_REQUIRED = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)


def _search(required, subdirs):
    for root in _DATA_ROOTS:
        if not root:
            continue
        for sub in subdirs:
            candidate = Path(root) / sub if sub else Path(root)
            if all((candidate / name).exists() for name in required):
                return candidate
    return None


def find_cifar10_dir():
    """Directory holding the CIFAR-10 binary batches, or None."""
    return _search(_CIFAR_REQUIRED, ("cifar-10-batches-bin", ""))


def find_mnist_dir():
    """Directory holding the four MNIST IDX files, or None."""
    return _search(_MNIST_REQUIRED, ("mnist", "MNIST/raw", ""))


def skip_missing_dataset(name: str, env_hint: str):
    """Build the loud skip used by data-gated acceptance tests."""
    roots = ", ".join(r for r in _DATA_ROOTS if r)
    return pytest.skip(
        f"{name} data not found (searched: {roots}). This check needs the "
        f"real dataset: place {env_hint} under one of those roots or point "
        "COMPKERN_DATA_DIR at it. The computation itself is exercised on "
        "synthetic data elsewhere in the suite.",
        allow_module_level=False,
    )


@pytest.fixture
def rng():
    """Fresh deterministic generator per test."""
    return np.random.default_rng(12345)


@pytest.fixture
def small_images(rng):
    """Five 4x4 RGB images."""
    return rng.standard_normal((5, 4, 4, 3)).astype(np.float32)


def make_dataset(rng, n=30, spatial=8, classes=3, shift=0.8) -> ImageDataset:
    """Synthetic learnable image dataset (class-dependent mean shift)."""
    per = n // classes
    labels = np.repeat(np.arange(classes), per).astype(np.int64)
    pixels = rng.standard_normal((per * classes, spatial, spatial, 3)).astype(np.float32)
    pixels += shift * labels[:, None, None, None].astype(np.float32)
    return ImageDataset(pixels=pixels, labels=labels, class_count=classes)
