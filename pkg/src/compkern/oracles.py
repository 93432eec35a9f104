"""Independent verification implementations.

Everything in this module exists to check the fast paths by a slower, simpler
route:

- :func:`quad_dual_relu` / :func:`quad_dual_gauss` — 2-D Gauss–Hermite
  quadrature of ``E[s(X) s(Y)]`` for correlated standard normals, checked
  against the closed-form dual activations;
- :func:`mc_relu_conv` — a Monte-Carlo random-feature network whose inner
  products converge to the rectifier kernel of a convolution;
- :func:`naive_compose` — a whole-tensor, loop-only, float64 re-implementation
  of the kernel pipeline with no tiling, separability tricks, or caching;
- :func:`brute_loo` — leave-one-out by N independent refits.

All oracles are deterministic under their seed arguments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import roots_hermite

from .arch import ArchSpec, LayerDesc, LayerKind, validate_arch
from .engine import GramMatrix

# Variance normalization of the rectifier: E[max(0, g)^2] = 1/2 for standard
# normal g, so doubling the raw product estimator makes it target the
# closed-form dual (which fixes 1 at correlation 1).  Equivalently, the
# random features use s(x) = sqrt(2) * max(0, x).
_RELU_VARIANCE_NORM = 2.0


@dataclass
class McEstimate:
    """Monte-Carlo estimate of a kernel tensor with per-entry uncertainty.

    Parameters
    ----------
    mean : ndarray
        Trial-averaged estimates, one per kernel-tensor entry.
    std_error : ndarray
        Sample standard deviation across trials divided by ``sqrt(trials)``.
    trials : int
        Number of independent weight draws (>= 2).
    width : int
        Random-feature channel count D4.
    seed : int
        Base seed; trial ``t`` uses ``seed + t``.
    """

    mean: np.ndarray
    std_error: np.ndarray
    trials: int
    width: int
    seed: int


@lru_cache(maxsize=8)
def _hermite_nodes(n: int):
    x, w = roots_hermite(n)
    return x, w


def _quad_dual(sigma, rho: float, nodes: int) -> float:
    """2-D Gauss-Hermite quadrature of E[sigma(X) sigma(Y)].

    X, Y are standard normals with correlation rho, realized by the
    substitution X = sqrt(2) x1, Y = sqrt(2) (rho x1 + sqrt(1-rho^2) x2)
    against the e^{-x^2} Hermite weight.
    """
    if nodes < 64:
        raise ValueError(f"need >= 64 nodes per axis, got {nodes}")
    if not -1.0 <= rho <= 1.0:
        raise ValueError(f"correlation must lie in [-1, 1], got {rho}")
    x, w = _hermite_nodes(nodes)
    s = math.sqrt(max(1.0 - rho * rho, 0.0))
    fx = sigma(math.sqrt(2.0) * x)
    inner = sigma(math.sqrt(2.0) * (rho * x[:, None] + s * x[None, :])) @ w
    return float((w * fx * inner).sum() / math.pi)


def quad_dual_relu(rho: float, nodes: int = 4096) -> float:
    """Quadrature value of the normalized-rectifier dual at ``rho``.

    Uses ``s(x) = sqrt(2) * max(0, x)``; the closed form it converges to is
    ``(sqrt(1 - rho^2) + rho (pi - arccos rho)) / pi``.  The rectifier kink
    limits Gauss-Hermite convergence to O(1/nodes), hence the large default.

    Parameters
    ----------
    rho : float
        Correlation in [-1, 1].
    nodes : int, default=4096
        Nodes per axis, >= 64.  4096 reaches max error ~6e-5 on [-1, 1].

    Returns
    -------
    float
    """
    return _quad_dual(lambda t: math.sqrt(2.0) * np.maximum(t, 0.0), rho, nodes)


def quad_dual_gauss(rho: float, nodes: int = 256) -> float:
    """Quadrature value of the normalized Gaussian-feature dual at ``rho``.

    Uses ``s(x) = exp(x - 1)``; the closed form is ``exp(rho - 1)``.  The
    integrand is smooth, so convergence is spectral.

    Parameters
    ----------
    rho : float
        Correlation in [-1, 1].
    nodes : int, default=256
        Nodes per axis, >= 64.

    Returns
    -------
    float
    """
    return _quad_dual(lambda t: np.exp(t - 1.0), rho, nodes)


def mc_relu_conv(images: np.ndarray, w: int, trials: int, d4: int,
                 seed: int) -> McEstimate:
    """Random-feature estimate of the rectifier kernel of a convolution.

    Each trial draws a weight tensor ``W`` of shape
    ``(2w+1, 2w+1, C, d4)`` with i.i.d. zero-mean Gaussian entries of
    variance ``1/d4``, forms ``Psi = relu(W * U)`` by explicit patch
    flattening (zero padding at the borders), and contributes the channel
    sums ``2 * sum_c Psi[i,j,k,c] Psi[l,m,n,c]`` — the factor 2 is the
    rectifier variance normalization (see ``_RELU_VARIANCE_NORM``).  The
    trial average converges to ``relu_embed(conv(input_kernel(U, U), w))``.
    Patches are not normalized: rectifier homogeneity makes the norm-carrying
    closed form the correct target.

    Parameters
    ----------
    images : ndarray of shape (N, D1, D2, C)
        Small inputs (spatial <= 8).
    w : int
        Convolution half-width.
    trials : int
        Independent weight draws, >= 2; ``trials * d4 <= 1e7``.
    d4 : int
        Random-feature width.
    seed : int
        Base seed; trial ``t`` draws from ``default_rng(seed + t)``.

    Returns
    -------
    McEstimate
        ``mean`` and ``std_error`` of shape (N, D1, D2, N, D1, D2).
    """
    n, d1, d2, c = images.shape
    if d1 > 8 or d2 > 8:
        raise ValueError(f"oracle restricted to spatial <= 8, got {d1}x{d2}")
    if trials < 2:
        raise ValueError(f"need >= 2 trials, got {trials}")
    if trials * d4 > 10**7:
        raise ValueError(f"trials * d4 = {trials * d4} exceeds the 1e7 budget")
    k = 2 * w + 1
    padded = np.pad(images, ((0, 0), (w, w), (w, w), (0, 0)))
    windows = sliding_window_view(padded, (k, k), axis=(1, 2))
    # rows: all patches, flattened (dx, dy, channel)-major
    patches = (
        windows.transpose(0, 1, 2, 4, 5, 3)
        .reshape(n * d1 * d2, k * k * c)
        .astype(np.float32)
    )
    m = n * d1 * d2
    total = np.zeros((m, m), dtype=np.float64)
    total_sq = np.zeros((m, m), dtype=np.float64)
    batch = 128
    scale = np.float32(1.0 / math.sqrt(d4))
    for start in range(0, trials, batch):
        nb = min(batch, trials - start)
        weights = np.empty((nb, k * k * c, d4), dtype=np.float32)
        for b in range(nb):
            rng = np.random.default_rng(seed + start + b)
            weights[b] = rng.standard_normal((k * k * c, d4), dtype=np.float32)
        weights *= scale
        psi = np.maximum(patches @ weights, 0.0)
        est = _RELU_VARIANCE_NORM * (psi @ psi.transpose(0, 2, 1))
        est64 = est.astype(np.float64)
        total += est64.sum(axis=0)
        total_sq += np.square(est64).sum(axis=0)
    mean = total / trials
    var = np.maximum(total_sq - trials * mean**2, 0.0) / (trials - 1)
    se = np.sqrt(var / trials)
    shape = (n, d1, d2, n, d1, d2)
    return McEstimate(
        mean=mean.reshape(shape),
        std_error=se.reshape(shape),
        trials=trials,
        width=d4,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Naive whole-tensor pipeline: explicit loops, float64, no shortcuts.
# ---------------------------------------------------------------------------

def _naive_input_kernel(x: np.ndarray) -> np.ndarray:
    n, d1, d2, c = x.shape
    out = np.zeros((n, d1, d2, n, d1, d2))
    for i in range(n):
        for j in range(d1):
            for k in range(d2):
                left = x[i, j, k]
                for l in range(n):
                    for m in range(d1):
                        for q in range(d2):
                            s = 0.0
                            right = x[l, m, q]
                            for ch in range(c):
                                s += left[ch] * right[ch]
                            out[i, j, k, l, m, q] = s
    return out


def _naive_conv(kern: np.ndarray, w: int) -> np.ndarray:
    n, d1, d2 = kern.shape[0], kern.shape[1], kern.shape[2]
    out = np.zeros_like(kern)
    for i in range(n):
        for j in range(d1):
            for k in range(d2):
                for l in range(n):
                    for m in range(d1):
                        for q in range(d2):
                            s = 0.0
                            for dx in range(-w, w + 1):
                                ja, ma = j + dx, m + dx
                                if ja < 0 or ja >= d1 or ma < 0 or ma >= d1:
                                    continue
                                for dy in range(-w, w + 1):
                                    ka, qa = k + dy, q + dy
                                    if ka < 0 or ka >= d2 or qa < 0 or qa >= d2:
                                        continue
                                    s += kern[i, ja, ka, l, ma, qa]
                            out[i, j, k, l, m, q] = s
    return out


def _naive_pool(kern: np.ndarray, w: int) -> np.ndarray:
    n, d1, d2 = kern.shape[0], kern.shape[1], kern.shape[2]
    e1, e2 = d1 // w, d2 // w
    out = np.zeros((n, e1, e2, n, e1, e2))
    inv = 1.0 / w**4
    for i in range(n):
        for j in range(e1):
            for k in range(e2):
                for l in range(n):
                    for m in range(e1):
                        for q in range(e2):
                            s = 0.0
                            for a in range(w):
                                for b in range(w):
                                    for cc in range(w):
                                        for dd in range(w):
                                            s += kern[
                                                i, j * w + a, k * w + b,
                                                l, m * w + cc, q * w + dd,
                                            ]
                            out[i, j, k, l, m, q] = s * inv
    return out


def _naive_global_pool(kern: np.ndarray) -> np.ndarray:
    n, d1, d2 = kern.shape[0], kern.shape[1], kern.shape[2]
    out = np.zeros((n, 1, 1, n, 1, 1))
    inv = 1.0 / (d1 * d2) ** 2
    for i in range(n):
        for l in range(n):
            s = 0.0
            for j in range(d1):
                for k in range(d2):
                    for m in range(d1):
                        for q in range(d2):
                            s += kern[i, j, k, l, m, q]
            out[i, 0, 0, l, 0, 0] = s * inv
    return out


def _naive_embed(kern: np.ndarray, kind: LayerKind) -> np.ndarray:
    n, d1, d2 = kern.shape[0], kern.shape[1], kern.shape[2]
    norms = np.zeros((n, d1, d2))
    for i in range(n):
        for j in range(d1):
            for k in range(d2):
                norms[i, j, k] = math.sqrt(max(kern[i, j, k, i, j, k], 0.0))
    out = np.zeros_like(kern)
    for i in range(n):
        for j in range(d1):
            for k in range(d2):
                a = norms[i, j, k]
                for l in range(n):
                    for m in range(d1):
                        for q in range(d2):
                            denom = a * norms[l, m, q]
                            if denom <= 0.0:
                                out[i, j, k, l, m, q] = 0.0
                                continue
                            rho = kern[i, j, k, l, m, q] / denom
                            rho = min(1.0, max(-1.0, rho))
                            if kind is LayerKind.RELU_EMBED:
                                angle = math.acos(rho)
                                val = (denom / math.pi) * (
                                    math.sin(angle)
                                    + (math.pi - angle) * math.cos(angle)
                                )
                            else:
                                val = denom * math.exp(rho - 1.0)
                            out[i, j, k, l, m, q] = val
    return out


def naive_compose(images_a: np.ndarray, images_b: np.ndarray | None,
                  arch: ArchSpec) -> GramMatrix:
    """Whole-tensor, loop-only composition of the kernel pipeline.

    Builds the full 6-D kernel tensor over the (concatenated) inputs at
    float64 and applies every layer with explicit loops — no tiling,
    separability, or caching — then slices out the requested Gram block.

    Parameters
    ----------
    images_a : ndarray of shape (N_A, D1, D2, C)
        N_A <= 8, spatial <= 8x8.
    images_b : ndarray or None
        Reference images; None for the symmetric (A, A) Gram.
    arch : ArchSpec
        Must flatten the spatial dims to 1x1.

    Returns
    -------
    GramMatrix
    """
    n_a, d1, d2 = images_a.shape[0], images_a.shape[1], images_a.shape[2]
    if n_a > 8 or d1 > 8 or d2 > 8:
        raise ValueError("oracle restricted to N <= 8 and spatial <= 8x8")
    report = validate_arch(arch, (d1, d2))
    if not report.flattens_to_scalar:
        raise ValueError(
            f"architecture leaves spatial dims {report.final_spatial}"
        )
    symmetric = images_b is None
    if symmetric:
        x = np.asarray(images_a, dtype=np.float64)
        n_b = n_a
        offset = 0
    else:
        if images_b.shape[0] > 8:
            raise ValueError("oracle restricted to N <= 8")
        x = np.concatenate([images_a, images_b]).astype(np.float64)
        n_b = images_b.shape[0]
        offset = n_a

    kern = _naive_input_kernel(x)
    for layer in arch.layers:
        if layer.kind is LayerKind.CONV:
            kern = _naive_conv(kern, layer.half_width)
        elif layer.kind is LayerKind.POOL:
            kern = _naive_pool(kern, layer.size)
        elif layer.kind is LayerKind.GLOBAL_POOL:
            kern = _naive_global_pool(kern)
        else:
            kern = _naive_embed(kern, layer.kind)

    gram = np.zeros((n_a, n_b))
    for a in range(n_a):
        for b in range(n_b):
            gram[a, b] = kern[a, 0, 0, (offset + b) if not symmetric else b, 0, 0]
    row_ids = np.arange(n_a, dtype=np.int64)
    col_ids = row_ids if symmetric else np.arange(n_b, dtype=np.int64)
    return GramMatrix(values=gram, row_ids=row_ids, col_ids=col_ids,
                      symmetric=symmetric)


def brute_loo(kernel: np.ndarray, labels: np.ndarray, lam: float) -> np.ndarray:
    """Leave-one-out predictions by N independent refits.

    For each example ``i``, fits ridge on the (N-1)-example system with row
    and column ``i`` removed, then predicts example ``i`` from the deleted
    model.

    Parameters
    ----------
    kernel : ndarray of shape (N, N)
        Symmetric kernel matrix, N <= 50.
    labels : ndarray of shape (N, C)
        Targets (one-hot or real-valued).
    lam : float
        Regularization; the submatrix systems must be solvable (a singular
        submatrix at ``lam = 0`` raises ``numpy.linalg.LinAlgError``).

    Returns
    -------
    ndarray of shape (N, C)
        Held-out prediction for each example.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    n = kernel.shape[0]
    if n > 50:
        raise ValueError(f"oracle restricted to N <= 50, got {n}")
    out = np.zeros_like(labels)
    for i in range(n):
        keep = np.r_[0:i, i + 1:n]
        sub = kernel[np.ix_(keep, keep)] + lam * np.eye(n - 1)
        alpha = np.linalg.solve(sub, labels[keep])
        out[i] = kernel[i, keep] @ alpha
    return out


def random_valid_arch(rng: np.random.Generator, spatial: tuple[int, int],
                      max_body_layers: int = 4) -> ArchSpec:
    """Draw a random architecture that flattens ``spatial`` to 1x1.

    Body layers are sampled from conv {3, 5}, relu, gauss, and pool 2 (when
    divisible); a global pool is appended when the dims are not yet 1x1.

    Parameters
    ----------
    rng : numpy Generator
    spatial : tuple of int
    max_body_layers : int, default=4

    Returns
    -------
    ArchSpec
    """
    d1, d2 = spatial
    layers: list[LayerDesc] = []
    for _ in range(int(rng.integers(0, max_body_layers + 1))):
        choices = ["conv", "relu", "gauss"]
        if d1 % 2 == 0 and d2 % 2 == 0 and (d1 > 1 or d2 > 1):
            choices.append("pool")
        pick = choices[int(rng.integers(0, len(choices)))]
        if pick == "conv":
            size = 3 if rng.random() < 0.7 else 5
            layers.append(LayerDesc(LayerKind.CONV, size))
        elif pick == "relu":
            layers.append(LayerDesc(LayerKind.RELU_EMBED))
        elif pick == "gauss":
            layers.append(LayerDesc(LayerKind.GAUSS_EMBED))
        else:
            layers.append(LayerDesc(LayerKind.POOL, 2))
            d1, d2 = d1 // 2, d2 // 2
    if (d1, d2) != (1, 1):
        layers.append(LayerDesc(LayerKind.GLOBAL_POOL))
    return ArchSpec(layers=tuple(layers), name="random")
