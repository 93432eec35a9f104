"""Exact kernel-space operators on 6-D kernel tensors.

A kernel block holds values ``K[i, j, k, l, m, n]``: the kernel between pixel
``(j, k)`` of image ``i`` (batch A) and pixel ``(m, n)`` of image ``l``
(batch B).  The operators below transform whole blocks:

- :func:`input_kernel` — channelwise dot products between all pixel pairs;
- :func:`conv` — sum of jointly shifted entries over a ``(2w+1)^2`` offset
  window, zero outside the image;
- :func:`pool` — average over aligned ``w^2 x w^2`` groups, downsampling the
  spatial dims by ``w``;
- :func:`relu_embed` / :func:`gauss_embed` — normalize by pixel norms, apply
  the dual activation, and rescale;
- :func:`global_pool` — average over all spatial positions, leaving 1x1.

Values are stored in float32 by default; every reduction (conv, pool, norms)
accumulates at float64, and the norm/diagonal path is carried entirely at
float64.  All operators are pure functions and safe to run concurrently on
distinct blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# Temporary-buffer budget for chunked accumulation, in float64 elements
# (~128 MB).  Keeps peak memory bounded for full-spatial tiles.
_TEMP_ELEMS = 1 << 24


class NegativeDiagonalError(ValueError):
    """A self-kernel diagonal entry is negative beyond rounding tolerance."""


@dataclass
class KernelBlock:
    """A tile of the 6-D kernel tensor for one pair of image batches.

    Parameters
    ----------
    values : ndarray of shape (B1, D1, D2, B2, D1, D2)
        Kernel values; float32 storage recommended.
    spatial : tuple of int
        Current spatial dimensions ``(D1, D2)``.
    batch_a, batch_b : tuple of int
        Half-open index ranges into the source datasets.
    stage : int
        Index of the last applied layer (-1 for the raw input kernel).
    """

    values: np.ndarray
    spatial: tuple[int, int]
    batch_a: tuple[int, int]
    batch_b: tuple[int, int]
    stage: int = -1

    @property
    def is_diagonal(self) -> bool:
        """True when both batch ranges are identical."""
        return self.batch_a == self.batch_b


@dataclass
class DiagCache:
    """Pixelwise self-kernel norms ``A[i, j, k] = sqrt(K[i,j,k,i,j,k])``.

    Parameters
    ----------
    norms : ndarray of shape (B, D1, D2)
        Nonnegative norms at one pipeline stage, float64.
    stage : int
        The stage the norms belong to (same convention as KernelBlock).
    """

    norms: np.ndarray
    stage: int = -1


def relu_dual(rho):
    """Dual activation of the variance-normalized rectifier.

    ``relu_dual(rho) = (sqrt(1 - rho^2) + rho * (pi - arccos(rho))) / pi``
    is ``E[s(X) s(Y)]`` for standard normals with correlation ``rho`` and
    ``s(x) = sqrt(2) * max(x, 0)`` (the sqrt(2) makes ``E[s(X)^2] = 1``, so
    the dual fixes 1).

    Parameters
    ----------
    rho : array_like
        Correlations; clamped into [-1, 1] before evaluation.

    Returns
    -------
    ndarray or float
        Dual values in [0, 1].
    """
    rho = np.clip(rho, -1.0, 1.0)
    return (np.sqrt(1.0 - rho * rho) + rho * (np.pi - np.arccos(rho))) / np.pi


def gauss_dual(rho):
    """Dual activation of the normalized Gaussian feature map: ``exp(rho - 1)``.

    Parameters
    ----------
    rho : array_like
        Correlations; clamped into [-1, 1].

    Returns
    -------
    ndarray or float
    """
    rho = np.clip(rho, -1.0, 1.0)
    return np.exp(rho - 1.0)


def _chunks(n: int, per_row: int):
    """Yield (start, stop) row ranges keeping temporaries under the budget."""
    rows = max(1, min(n, _TEMP_ELEMS // max(per_row, 1)))
    for s in range(0, n, rows):
        yield s, min(s + rows, n)


def _pair_product(a: np.ndarray, b: np.ndarray, out_dtype) -> np.ndarray:
    """All-pairs channel dot products, rank 6: out[i,j,k,l,m,n] = sum_c a.b.

    Accumulates at float64 with a fixed channel order (no BLAS reduction), so
    results are bitwise reproducible regardless of library threading.
    """
    b1, d1, d2, c = a.shape
    b2 = b.shape[0]
    e1, e2 = b.shape[1], b.shape[2]
    out = np.empty((b1, d1, d2, b2, e1, e2), dtype=out_dtype)
    per_row = d1 * d2 * b2 * e1 * e2
    a64 = a.astype(np.float64, copy=False)
    b64 = b.astype(np.float64, copy=False)
    for s, t in _chunks(b1, per_row):
        acc = np.zeros((t - s, d1, d2, b2, e1, e2), dtype=np.float64)
        for ch in range(c):
            acc += (
                a64[s:t, :, :, None, None, None, ch]
                * b64[None, None, None, :, :, :, ch]
            )
        out[s:t] = acc.astype(out_dtype, copy=False)
    return out


def input_kernel(images_a: np.ndarray, images_b: np.ndarray,
                 batch_a: tuple[int, int] | None = None,
                 batch_b: tuple[int, int] | None = None,
                 dtype=np.float32) -> KernelBlock:
    """Kernel of raw images: channel dot products between all pixel pairs.

    Parameters
    ----------
    images_a : ndarray of shape (B1, D1, D2, C)
    images_b : ndarray of shape (B2, D1, D2, C)
        Must share spatial dims and channel count with ``images_a``.
    batch_a, batch_b : tuple of int, optional
        Index ranges recorded on the block; default ``(0, B)``.
    dtype : numpy dtype, default=float32
        Storage precision of the result.

    Returns
    -------
    KernelBlock
        ``K[i,j,k,l,m,n] = sum_c images_a[i,j,k,c] * images_b[l,m,n,c]``.

    Raises
    ------
    ValueError
        On spatial or channel mismatch.
    """
    if images_a.ndim != 4 or images_b.ndim != 4:
        raise ValueError("images must be rank-4 (B, D1, D2, C) tensors")
    if images_a.shape[1:] != images_b.shape[1:]:
        raise ValueError(
            f"image shapes do not match: {images_a.shape[1:]} vs {images_b.shape[1:]}"
        )
    values = _pair_product(images_a, images_b, dtype)
    d1, d2 = images_a.shape[1], images_a.shape[2]
    return KernelBlock(
        values=values,
        spatial=(d1, d2),
        batch_a=batch_a or (0, images_a.shape[0]),
        batch_b=batch_b or (0, images_b.shape[0]),
        stage=-1,
    )


def _shift_sum(values: np.ndarray, w: int, axes: tuple[int, int]) -> np.ndarray:
    """Sum of jointly shifted copies along one spatial axis pair, zero-padded.

    ``out[..., j, ..., m, ...] = sum_{d=-w..w} values[..., j+d, ..., m+d, ...]``
    where out-of-range indices contribute zero.  Accumulates at float64,
    chunked over axis 0; returns the input dtype.
    """
    ax1, ax2 = axes
    d = values.shape[ax1]
    n0 = values.shape[0]
    per_row = int(np.prod(values.shape[1:], dtype=np.int64))
    out = np.empty_like(values)
    for s, t in _chunks(n0, per_row):
        chunk = values[s:t]
        acc = np.zeros(chunk.shape, dtype=np.float64)
        for off in range(-w, w + 1):
            lo, hi = max(0, -off), d - max(0, off)
            if lo >= hi:
                continue
            dst = [slice(None)] * chunk.ndim
            src = [slice(None)] * chunk.ndim
            dst[ax1] = slice(lo, hi)
            dst[ax2] = slice(lo, hi)
            src[ax1] = slice(lo + off, hi + off)
            src[ax2] = slice(lo + off, hi + off)
            acc[tuple(dst)] += chunk[tuple(src)]
        out[s:t] = acc.astype(values.dtype, copy=False)
    return out


def _conv_values(values: np.ndarray, w: int,
                 row_axes: tuple[int, int], col_axes: tuple[int, int]) -> np.ndarray:
    """Convolution on raw values: separable jointly-shifted sums."""
    tmp = _shift_sum(values, w, row_axes)
    return _shift_sum(tmp, w, col_axes)


def conv(block: KernelBlock, w: int) -> KernelBlock:
    """Kernel-space convolution with half-width ``w``.

    ``K_out[i,j,k,l,m,n] = sum_{dx,dy in [-w,w]} K_in[i,j+dx,k+dy,l,m+dx,n+dy]``
    with zero for out-of-bound accesses.  Both pixels shift together, so the
    double sum factorizes into two single-axis shifted sums.

    Parameters
    ----------
    block : KernelBlock
    w : int
        Half-width, >= 1 (side length ``2w + 1``).

    Returns
    -------
    KernelBlock
        Same shape and spatial dims.
    """
    if w < 1:
        raise ValueError(f"conv half-width must be >= 1, got {w}")
    values = _conv_values(block.values, w, (1, 4), (2, 5))
    return replace(block, values=values, stage=block.stage + 1)


def _pool_values(values: np.ndarray, w: int,
                 row_axes: tuple[int, int], col_axes: tuple[int, int]) -> np.ndarray:
    """Average pooling on raw values along two spatial axis pairs."""
    shape = list(values.shape)
    new_shape = []
    reduce_axes = []
    pooled_axes = sorted(row_axes + col_axes)
    for ax, size in enumerate(shape):
        if ax in pooled_axes:
            new_shape.extend([size // w, w])
            reduce_axes.append(len(new_shape) - 1)
        else:
            new_shape.append(size)
    grouped = values.reshape(new_shape)
    out = grouped.mean(axis=tuple(reduce_axes), dtype=np.float64)
    return out.astype(values.dtype, copy=False)


def pool(block: KernelBlock, w: int) -> KernelBlock:
    """Average pooling: downsample both spatial pairs by ``w``.

    Each output entry is the mean of the ``w^2 x w^2`` aligned input entries
    (equivalently ``1/w^4`` times their sum).

    Parameters
    ----------
    block : KernelBlock
    w : int
        Pooling width; must divide both spatial dims.

    Returns
    -------
    KernelBlock
        Spatial dims divided by ``w``.

    Raises
    ------
    ValueError
        When ``w`` does not divide the spatial dims.
    """
    d1, d2 = block.spatial
    if d1 % w != 0 or d2 % w != 0:
        raise ValueError(f"pool width {w} does not divide spatial dims {d1}x{d2}")
    values = _pool_values(block.values, w, (1, 4), (2, 5))
    return replace(
        block, values=values, spatial=(d1 // w, d2 // w), stage=block.stage + 1
    )


def global_pool(block: KernelBlock) -> KernelBlock:
    """Average over all spatial positions of both pixels, leaving 1x1.

    Parameters
    ----------
    block : KernelBlock

    Returns
    -------
    KernelBlock
        Spatial dims (1, 1); the single value per image pair is the mean of
        all ``D1*D2 x D1*D2`` input entries.
    """
    vals = block.values
    out = vals.mean(axis=(1, 2, 4, 5), keepdims=True, dtype=np.float64)
    return replace(
        block,
        values=out.astype(vals.dtype, copy=False),
        spatial=(1, 1),
        stage=block.stage + 1,
    )


def _embed_values(values: np.ndarray, dual, outer) -> np.ndarray:
    """Shared embedding core: rho = K / (A x A'), out = (A x A') * dual(rho).

    ``outer(s, t)`` builds the norm product for rows ``s:t`` with the same
    shape as ``values[s:t]``; entries with zero norm product map to 0.
    Chunked over axis 0.
    """
    n0 = values.shape[0]
    per_row = int(np.prod(values.shape[1:], dtype=np.int64))
    out = np.empty_like(values)
    for s, t in _chunks(n0, per_row):
        denom = outer(s, t)
        k64 = values[s:t].astype(np.float64, copy=False)
        rho = np.zeros_like(k64)
        np.divide(k64, denom, out=rho, where=denom > 0)
        np.clip(rho, -1.0, 1.0, out=rho)
        res = denom * dual(rho)
        out[s:t] = res.astype(values.dtype, copy=False)
    return out


def relu_embed(block: KernelBlock, diag_a: DiagCache, diag_b: DiagCache) -> KernelBlock:
    """Rectifier (arccosine) embedding.

    With ``rho = clamp(K_in / (A * A'), -1, 1)`` and ``B = arccos(rho)``::

        K_out = (A * A' / pi) * (sin B + (pi - B) * cos B)

    which equals ``A * A' * relu_dual(rho)``.  Entries where ``A * A' = 0``
    map to 0.  Shape preserving; the diagonal is a fixed point (rho = 1).

    Parameters
    ----------
    block : KernelBlock
    diag_a, diag_b : DiagCache
        Pixel norms for the two batches at the same stage as ``block``.

    Returns
    -------
    KernelBlock
    """
    a = diag_a.norms
    b = diag_b.norms

    def outer(s, t):
        return (
            a[s:t, :, :, None, None, None] * b[None, None, None, :, :, :]
        )

    values = _embed_values(block.values, relu_dual, outer)
    return replace(block, values=values, stage=block.stage + 1)


def gauss_embed(block: KernelBlock, diag_a: DiagCache, diag_b: DiagCache) -> KernelBlock:
    """Normalized Gaussian embedding: ``K_out = A * A' * exp(rho - 1)``.

    Same normalization and zero-norm handling as :func:`relu_embed`; equals 1
    on unit-norm identical pixels and decays smoothly with angle.

    Parameters
    ----------
    block : KernelBlock
    diag_a, diag_b : DiagCache

    Returns
    -------
    KernelBlock
    """
    a = diag_a.norms
    b = diag_b.norms

    def outer(s, t):
        return (
            a[s:t, :, :, None, None, None] * b[None, None, None, :, :, :]
        )

    values = _embed_values(block.values, gauss_dual, outer)
    return replace(block, values=values, stage=block.stage + 1)


def update_diag(self_values: np.ndarray, stage: int = -1) -> DiagCache:
    """Extract pixel norms from a self-kernel tensor.

    Parameters
    ----------
    self_values : ndarray
        Either rank-5 ``S[i, j, k, m, n]`` (each image against itself) or a
        rank-6 diagonal block ``K[i, j, k, l, m, n]`` with matching batches.
    stage : int, default=-1
        Stage label recorded on the cache.

    Returns
    -------
    DiagCache
        ``A[i, j, k] = sqrt(diag)`` with tiny negative diagonals clamped to 0.

    Raises
    ------
    NegativeDiagonalError
        If any diagonal entry is below ``-1e-4 * scale`` where ``scale`` is
        the largest absolute diagonal value — rounding cannot produce that,
        so it signals upstream corruption.
    """
    if self_values.ndim == 6:
        diag = np.einsum("ijkijk->ijk", self_values)
    elif self_values.ndim == 5:
        diag = np.einsum("ijkjk->ijk", self_values)
    else:
        raise ValueError(f"expected rank 5 or 6, got rank {self_values.ndim}")
    diag = diag.astype(np.float64, copy=True)
    scale = float(np.abs(diag).max()) if diag.size else 0.0
    if diag.size and diag.min() < -1e-4 * scale:
        raise NegativeDiagonalError(
            f"diagonal entry {diag.min():.3e} below -1e-4 * scale ({scale:.3e})"
        )
    np.maximum(diag, 0.0, out=diag)
    return DiagCache(norms=np.sqrt(diag), stage=stage)


# ---------------------------------------------------------------------------
# Self-kernel pipeline: rank-5 tensors S[i, j, k, m, n] (image i against
# itself), used to produce the per-stage DiagCache that the embeddings need.
# Carried at float64 throughout.
# ---------------------------------------------------------------------------

def self_input_kernel(images: np.ndarray) -> np.ndarray:
    """Self kernel of each image: ``S[i,j,k,m,n] = sum_c x[i,j,k,c] x[i,m,n,c]``.

    Parameters
    ----------
    images : ndarray of shape (B, D1, D2, C)

    Returns
    -------
    ndarray of shape (B, D1, D2, D1, D2), float64
    """
    x = images.astype(np.float64, copy=False)
    b, d1, d2, c = x.shape
    out = np.zeros((b, d1, d2, d1, d2), dtype=np.float64)
    for ch in range(c):
        out += x[:, :, :, None, None, ch] * x[:, None, None, :, :, ch]
    return out


def self_apply_layer(self_values: np.ndarray, layer, norms: np.ndarray | None):
    """Apply one architecture layer to a rank-5 self-kernel tensor.

    Parameters
    ----------
    self_values : ndarray of shape (B, D1, D2, E1, E2)
    layer : LayerDesc
    norms : ndarray of shape (B, D1, D2) or None
        Required for embedding layers (the stage norms); ignored otherwise.

    Returns
    -------
    ndarray
        The transformed self-kernel tensor.
    """
    from .arch import LayerKind

    kind = layer.kind
    if kind is LayerKind.CONV:
        return _conv_values(self_values, layer.half_width, (1, 3), (2, 4))
    if kind is LayerKind.POOL:
        return _pool_values(self_values, layer.size, (1, 3), (2, 4))
    if kind is LayerKind.GLOBAL_POOL:
        return self_values.mean(axis=(1, 2, 3, 4), keepdims=True, dtype=np.float64)
    if kind in (LayerKind.RELU_EMBED, LayerKind.GAUSS_EMBED):
        if norms is None:
            raise ValueError("embedding layers require stage norms")
        dual = relu_dual if kind is LayerKind.RELU_EMBED else gauss_dual
        a = norms

        def outer(s, t):
            return a[s:t, :, :, None, None] * a[s:t, None, None, :, :]

        return _embed_values(self_values, dual, outer)
    raise ValueError(f"unknown layer kind {kind}")


def stage_norms(images: np.ndarray, layers, chunk: int = 16) -> list[DiagCache]:
    """Pixel norms at the input of every embedding layer.

    Runs the self-kernel pipeline over all images (in chunks) and records a
    :class:`DiagCache` at each embedding layer's input stage — exactly the
    norms :func:`relu_embed` / :func:`gauss_embed` need when processing
    off-diagonal blocks.

    Parameters
    ----------
    images : ndarray of shape (B, D1, D2, C)
    layers : sequence of LayerDesc
    chunk : int, default=16
        Images processed per pass (memory control: each image's self kernel
        holds ``(D1*D2)^2`` float64 values).

    Returns
    -------
    list of DiagCache
        One entry per embedding layer, in layer order; ``stage`` on each
        cache is the index of the embedding layer it feeds.
    """
    from .arch import LayerKind

    b = images.shape[0]
    embed_ids = [
        i for i, layer in enumerate(layers)
        if layer.kind in (LayerKind.RELU_EMBED, LayerKind.GAUSS_EMBED)
    ]
    parts: dict[int, list[np.ndarray]] = {i: [] for i in embed_ids}
    for s in range(0, b, chunk):
        t = min(s + chunk, b)
        sv = self_input_kernel(images[s:t])
        for i, layer in enumerate(layers):
            if layer.kind in (LayerKind.RELU_EMBED, LayerKind.GAUSS_EMBED):
                cache = update_diag(sv, stage=i)
                parts[i].append(cache.norms)
                sv = self_apply_layer(sv, layer, cache.norms)
            else:
                sv = self_apply_layer(sv, layer, None)
    return [
        DiagCache(norms=np.concatenate(parts[i], axis=0), stage=i)
        for i in embed_ids
    ]
