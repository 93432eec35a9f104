"""Tiled, parallel composition of kernel pipelines into Gram matrices.

:func:`compose_kernel` drives a validated architecture over every required
pair of image batches.  Tiles span the full spatial extent and cover a
``tile x tile`` rectangle of image pairs, so convolution halos never cross
tile boundaries; per-stage pixel norms are computed once up front from the
self-kernel pipeline and shared read-only by all tiles.

Each tile's pipeline runs with a fixed reduction order, so the assembled
Gram matrix is bitwise identical for any tile size or worker count.
Completed tiles are persisted to a checksummed cache; interrupted runs
resume by recomputing only the missing tiles.
"""

from __future__ import annotations

import hashlib
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import multiprocessing
import numpy as np

from . import formats
from .arch import ArchSpec, LayerKind, render_arch, validate_arch
from .kernel_ops import (
    DiagCache,
    conv,
    gauss_embed,
    global_pool,
    input_kernel,
    pool,
    relu_embed,
    stage_norms,
)

# Default tile target: a float32 tile of (tile * D1 * D2)^2 values stays
# around 256 MB, leaving headroom for float64 accumulation temporaries.
_TILE_BUDGET_ELEMS = 1 << 26


@dataclass
class GramMatrix:
    """Dense matrix of final kernel values.

    Parameters
    ----------
    values : ndarray of shape (n_rows, n_cols)
        Kernel values; rows index query examples, columns reference examples.
    row_ids, col_ids : ndarray of int
        Example indices labeling rows and columns.
    symmetric : bool
        True when rows and columns reference the same example list.
    """

    values: np.ndarray
    row_ids: np.ndarray
    col_ids: np.ndarray
    symmetric: bool = False


@dataclass
class TileJob:
    """One unit of work: a rectangle of image pairs.

    Parameters
    ----------
    batch_a, batch_b : tuple of int
        Half-open ranges into datasets A and B.
    status : str
        One of ``pending``, ``done``, ``failed``.
    """

    batch_a: tuple[int, int]
    batch_b: tuple[int, int]
    status: str = "pending"


def default_tile(spatial: tuple[int, int]) -> int:
    """Largest batch tile whose float32 block stays within the size budget.

    Parameters
    ----------
    spatial : tuple of int
        Image spatial dimensions ``(D1, D2)``.

    Returns
    -------
    int
        Tile edge length (>= 1); 8 for 32x32 images.
    """
    per_pair = (spatial[0] * spatial[1]) ** 2
    return max(1, int((_TILE_BUDGET_ELEMS / per_pair) ** 0.5))


def schedule_tiles(n_a: int, n_b: int, tile: int, symmetric: bool) -> list[TileJob]:
    """Enumerate tile jobs covering every required pair exactly once.

    Parameters
    ----------
    n_a, n_b : int
        Dataset sizes.
    tile : int
        Tile edge length, >= 1.
    symmetric : bool
        When True, emit only jobs with ``batch_a start <= batch_b start``
        (upper-triangular cover; the assembler mirrors the rest).

    Returns
    -------
    list of TileJob
    """
    if tile < 1:
        raise ValueError(f"tile must be >= 1, got {tile}")
    jobs = []
    for a0 in range(0, n_a, tile):
        a1 = min(a0 + tile, n_a)
        for b0 in range(0, n_b, tile):
            b1 = min(b0 + tile, n_b)
            if symmetric and b0 < a0:
                continue
            jobs.append(TileJob(batch_a=(a0, a1), batch_b=(b0, b1)))
    return jobs


class TileCache:
    """Directory-backed store of completed tiles, keyed by content hash.

    Parameters
    ----------
    directory : path-like
        Cache directory (created on first put).
    content_hash : bytes
        32-byte hash of (architecture text, dataset contents, precision);
        tiles written under a different hash are never returned.
    """

    def __init__(self, directory, content_hash: bytes):
        self.directory = str(directory)
        self.content_hash = content_hash

    def _path(self, coords) -> str:
        a0, a1, b0, b1 = coords
        name = f"{self.content_hash.hex()[:20]}_{a0}_{a1}_{b0}_{b1}.cktl"
        return os.path.join(self.directory, name)

    def get(self, coords) -> np.ndarray | None:
        """Return the cached tile values, or None on miss/corruption."""
        path = self._path(coords)
        if not os.path.exists(path):
            return None
        try:
            stored_coords, values = formats.read_tile(path, self.content_hash)
        except formats.FormatError as exc:
            warnings.warn(f"discarding corrupt cache tile: {exc}")
            return None
        if stored_coords != tuple(coords):
            warnings.warn(f"discarding cache tile with wrong coords: {path}")
            return None
        return values

    def put(self, coords, values: np.ndarray) -> None:
        """Persist one tile atomically."""
        formats.write_tile(self._path(coords), self.content_hash, coords, values)


def content_hash(arch: ArchSpec, images_a: np.ndarray,
                 images_b: np.ndarray | None, dtype=np.float32) -> bytes:
    """Hash identifying a Gram computation: architecture, data, precision.

    Parameters
    ----------
    arch : ArchSpec
    images_a : ndarray
    images_b : ndarray or None
        None means the symmetric (A, A) computation.
    dtype : numpy dtype

    Returns
    -------
    bytes
        32-byte SHA-256 digest.
    """
    h = hashlib.sha256()
    h.update(render_arch(arch).encode())
    h.update(np.dtype(dtype).str.encode())
    for arr in (images_a, images_b):
        if arr is None:
            h.update(b"|same")
        else:
            h.update(b"|")
            h.update(str(arr.shape).encode())
            h.update(np.ascontiguousarray(arr, dtype=np.float32).tobytes())
    return h.digest()


def _run_tile(images_a, images_b, layers, norms_a, norms_b, coords):
    """Run the full pipeline for one tile; returns the final scalar block."""
    a0, a1, b0, b1 = coords
    block = input_kernel(
        images_a[a0:a1], images_b[b0:b1], batch_a=(a0, a1), batch_b=(b0, b1)
    )
    embed_index = 0
    for layer in layers:
        if layer.kind is LayerKind.CONV:
            block = conv(block, layer.half_width)
        elif layer.kind is LayerKind.POOL:
            block = pool(block, layer.size)
        elif layer.kind is LayerKind.GLOBAL_POOL:
            block = global_pool(block)
        else:
            diag_a = DiagCache(norms_a[embed_index][a0:a1])
            diag_b = DiagCache(norms_b[embed_index][b0:b1])
            if layer.kind is LayerKind.RELU_EMBED:
                block = relu_embed(block, diag_a, diag_b)
            else:
                block = gauss_embed(block, diag_a, diag_b)
            embed_index += 1
    if block.spatial != (1, 1):
        raise ValueError(
            f"pipeline left spatial dims {block.spatial}; the architecture "
            "must flatten to 1x1 (validate_arch flattens_to_scalar)"
        )
    return block.values[:, 0, 0, :, 0, 0]


_WORKER_CTX: dict | None = None


def _init_worker(ctx: dict) -> None:
    global _WORKER_CTX
    _WORKER_CTX = ctx


def _worker_tile(coords):
    ctx = _WORKER_CTX
    values = _run_tile(
        ctx["images_a"], ctx["images_b"], ctx["layers"],
        ctx["norms_a"], ctx["norms_b"], coords,
    )
    return coords, values


def compose_kernel(images_a: np.ndarray, images_b: np.ndarray | None,
                   arch: ArchSpec, tile: int | None = None,
                   workers: int = 1, cache: TileCache | None = None,
                   progress=None) -> GramMatrix:
    """Compose the architecture's kernel over all image pairs.

    Parameters
    ----------
    images_a : ndarray of shape (N_A, D1, D2, C)
        Query images (Gram rows).
    images_b : ndarray or None
        Reference images (Gram columns); None computes the symmetric
        (A, A) Gram, evaluating only the upper triangle and mirroring.
    arch : ArchSpec
        Must flatten the spatial dims to 1x1 (validated here).
    tile : int, optional
        Batch tile edge; default keeps a tile within the memory budget.
    workers : int, default=1
        Worker processes for tile execution; 1 runs inline.
    cache : TileCache or str, optional
        Completed tiles are read from / written to this cache.  A string
        (or path) names a cache directory, and the content-hashed cache is
        built here from the architecture, the images, and the precision.
    progress : callable, optional
        Called as ``progress(done, total, from_cache)`` after each tile.

    Returns
    -------
    GramMatrix
        Entry ``(a, b)`` is the composed kernel of images ``a`` and ``b``;
        deterministic for any tile size and worker count.

    Raises
    ------
    PoolIndivisibleError
        If pooling does not divide the spatial dims.
    ValueError
        If the architecture does not flatten to a scalar per pair.
    """
    d1, d2 = images_a.shape[1], images_a.shape[2]
    report = validate_arch(arch, (d1, d2))
    if not report.flattens_to_scalar:
        raise ValueError(
            f"architecture leaves spatial dims {report.final_spatial}; "
            "a Gram matrix requires flattening to 1x1 (add pool/gpool layers)"
        )
    symmetric = images_b is None
    ref_images = images_a if symmetric else images_b
    if ref_images.shape[1:] != images_a.shape[1:]:
        raise ValueError(
            f"image shapes do not match: {images_a.shape[1:]} vs {ref_images.shape[1:]}"
        )
    if isinstance(cache, (str, os.PathLike)):
        digest = content_hash(arch, images_a, images_b, np.float32)
        cache = TileCache(cache, digest)

    layers = arch.layers
    norm_caches_a = stage_norms(images_a, layers)
    norms_a = [c.norms for c in norm_caches_a]
    if symmetric:
        norms_b = norms_a
    else:
        norms_b = [c.norms for c in stage_norms(ref_images, layers)]

    n_a, n_b = images_a.shape[0], ref_images.shape[0]
    if tile is None:
        tile = min(default_tile((d1, d2)), max(n_a, n_b))
    jobs = schedule_tiles(n_a, n_b, tile, symmetric)

    gram = np.zeros((n_a, n_b), dtype=np.float32)
    total = len(jobs)
    done = 0

    def place(coords, values, from_cache):
        nonlocal done
        a0, a1, b0, b1 = coords
        gram[a0:a1, b0:b1] = values
        if symmetric and (a0, a1) != (b0, b1):
            gram[b0:b1, a0:a1] = values.T
        done += 1
        if progress is not None:
            progress(done, total, from_cache)

    pending = []
    for job in jobs:
        coords = (*job.batch_a, *job.batch_b)
        cached = cache.get(coords) if cache is not None else None
        if cached is not None:
            job.status = "done"
            place(coords, cached, True)
        else:
            pending.append((job, coords))

    if pending and workers > 1:
        ctx = {
            "images_a": images_a,
            "images_b": ref_images,
            "layers": layers,
            "norms_a": norms_a,
            "norms_b": norms_b,
        }
        mp_ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(
            max_workers=workers, mp_context=mp_ctx,
            initializer=_init_worker, initargs=(ctx,),
        ) as pool_exec:
            for coords, values in pool_exec.map(
                _worker_tile, [c for _, c in pending]
            ):
                if cache is not None:
                    cache.put(coords, values)
                place(coords, values, False)
        for job, _ in pending:
            job.status = "done"
    else:
        for job, coords in pending:
            values = _run_tile(images_a, ref_images, layers, norms_a, norms_b, coords)
            if cache is not None:
                cache.put(coords, values)
            job.status = "done"
            place(coords, values, False)

    ids_a = np.arange(n_a, dtype=np.int64)
    ids_b = ids_a if symmetric else np.arange(n_b, dtype=np.int64)
    return GramMatrix(values=gram, row_ids=ids_a, col_ids=ids_b, symmetric=symmetric)
