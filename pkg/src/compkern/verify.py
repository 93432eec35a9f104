"""Self-check gates comparing the engine against independent oracles.

Two levels:

- ``quick`` (seconds): format round-trips, small engine-vs-naive and
  leave-one-out-vs-brute comparisons, interval spot values, quadrature
  spot checks.
- ``full`` (minutes): everything in quick plus the Monte-Carlo estimator
  gate with standard-error scaling, positive-semidefiniteness and symmetry
  sweeps, tile/worker invariance, and the full-grid quadrature and
  brute-force comparisons.

Each gate returns a pass/fail line; the runner prints them and reports
overall success.
"""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass

import numpy as np

from . import metrics, oracles, ridge
from .arch import parse_arch, render_arch
from .engine import compose_kernel
from .formats import read_gram, read_model, read_tile, write_gram, write_model, write_tile
from .kernel_ops import conv, gauss_dual, input_kernel, relu_dual, relu_embed, update_diag

_RHO_GRID = tuple(np.round(np.linspace(-1.0, 1.0, 21), 10))


@dataclass(frozen=True)
class GateResult:
    """Outcome of one verification gate."""

    name: str
    passed: bool
    detail: str


def _random_images(rng, n, spatial, channels=3):
    return rng.standard_normal((n, spatial, spatial, channels)).astype(np.float32)


# ---------------------------------------------------------------------------
# Gates
# ---------------------------------------------------------------------------

def gate_arch_roundtrip() -> GateResult:
    """parse(render(arch)) must reproduce the architecture."""
    texts = [
        "conv 3\nrelu\npool 2\ngpool\n",
        "conv 5\ngauss\nconv 3\nrelu\ngpool\n",
        "",
    ]
    for text in texts:
        spec = parse_arch(text)
        again = parse_arch(render_arch(spec))
        if again.layers != spec.layers:
            return GateResult("arch-roundtrip", False, f"mismatch for {text!r}")
    return GateResult("arch-roundtrip", True, f"{len(texts)} specs round-tripped")


def gate_format_roundtrip() -> GateResult:
    """Tile, Gram, and model files must round-trip byte-exactly."""
    rng = np.random.default_rng(7)
    with tempfile.TemporaryDirectory() as tmp:
        tile_path = f"{tmp}/t.cktl"
        values = rng.standard_normal((3, 4)).astype(np.float32)
        write_tile(tile_path, bytes(32), (0, 3, 4, 8), values)
        coords, back = read_tile(tile_path)
        if coords != (0, 3, 4, 8) or not np.array_equal(back, values):
            return GateResult("format-roundtrip", False, "tile mismatch")

        gram_path = f"{tmp}/g.ckgm"
        gram = rng.standard_normal((4, 4)).astype(np.float32)
        ids = np.arange(4, dtype=np.int64)
        write_gram(gram_path, gram, ids, ids, symmetric=True)
        back, row_ids, col_ids, symmetric, _ = read_gram(gram_path)
        if not (np.array_equal(back, gram) and symmetric
                and np.array_equal(row_ids, ids)):
            return GateResult("format-roundtrip", False, "gram mismatch")

        model_path = f"{tmp}/m.ckrm"
        alpha = rng.standard_normal((5, 3))
        write_model(model_path, alpha, lam=0.5, tilt=0.25)
        alpha_back, lam, tilt = read_model(model_path)
        if not (np.array_equal(alpha_back, alpha) and lam == 0.5 and tilt == 0.25):
            return GateResult("format-roundtrip", False, "model mismatch")
    return GateResult("format-roundtrip", True, "tile/gram/model round-tripped")


def gate_engine_vs_naive(pairs: int, seed: int = 11) -> GateResult:
    """Tiled engine must match the direct formula evaluator."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for index in range(pairs):
        spatial = int(rng.choice([4, 6]))
        arch = oracles.random_valid_arch(rng, (spatial, spatial))
        n_a, n_b = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        a = _random_images(rng, n_a, spatial)
        b = _random_images(rng, n_b, spatial)
        fast = compose_kernel(a, b, arch, tile=2).values
        slow = oracles.naive_compose(a, b, arch).values
        scale = max(float(np.max(np.abs(slow))), 1e-12)
        worst = max(worst, float(np.max(np.abs(fast - slow))) / scale)
    passed = worst <= 1e-5
    return GateResult("engine-vs-naive", passed,
                      f"{pairs} pairs, worst rel err {worst:.2e} (gate 1e-5)")


def gate_loo_vs_brute(systems: int, seed: int = 13) -> GateResult:
    """Closed-form leave-one-out must match N explicit refits."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    count = 0
    for index in range(systems):
        n = int(rng.choice([10, 30]))
        feats = rng.standard_normal((n, n + 3))
        kernel = feats @ feats.T / (n + 3)
        labels = np.eye(3)[rng.integers(0, 3, size=n)]
        for lam in (0.01, 1.0):
            closed = ridge.loo_predict(kernel, labels, lam).values
            brute = oracles.brute_loo(kernel, labels, lam)
            worst = max(worst, float(np.max(np.abs(closed - brute))))
            count += 1
    passed = worst <= 1e-8
    return GateResult("loo-vs-brute", passed,
                      f"{count} systems, worst abs err {worst:.2e} (gate 1e-8)")


def gate_interval_values() -> GateResult:
    """Interval spot values against independently derived numbers."""
    lo, hi = metrics.clopper_pearson(60, 60, 0.95)
    if not (abs(100 * lo - 94.04) < 0.005 and hi == 1.0):
        return GateResult("interval-values", False,
                          f"k=n=60 gave ({100 * lo:.2f}, {100 * hi:.2f})")
    lo2, hi2 = metrics.clopper_pearson(1, 2, 0.95)
    if not (abs(lo2 - 0.0126) < 5e-5 and abs(hi2 - 0.9874) < 5e-5):
        return GateResult("interval-values", False,
                          f"k=1,n=2 gave ({lo2:.4f}, {hi2:.4f})")
    return GateResult("interval-values", True, "two-decimal spot values match")


def gate_quadrature(rhos, nodes: int, tol: float) -> GateResult:
    """Numerical duals must match the closed forms."""
    worst_relu = max(
        abs(oracles.quad_dual_relu(r, nodes=nodes) - relu_dual(r)) for r in rhos
    )
    worst_gauss = max(
        abs(oracles.quad_dual_gauss(r) - gauss_dual(r)) for r in rhos
    )
    worst = max(worst_relu, worst_gauss)
    passed = worst <= tol
    return GateResult(
        "quadrature", passed,
        f"{len(rhos)} correlations, worst abs err {worst:.2e} (gate {tol:g})",
    )


def gate_mc_relu_conv() -> GateResult:
    """Random-feature estimate must bracket the exact kernel, and its
    standard error must shrink like 1/sqrt(trials)."""
    rng = np.random.default_rng(5)
    images = rng.standard_normal((4, 6, 6, 3)).astype(np.float32)
    block = conv(input_kernel(images, images), 1)
    norms = update_diag(block.values)
    exact = relu_embed(block, norms, norms).values.astype(np.float64)

    est = oracles.mc_relu_conv(images, w=1, trials=4096, d4=256, seed=902)
    band = np.maximum(4.0 * est.std_error, 1e-12)
    frac = float(np.mean(np.abs(est.mean - exact) <= band))
    if frac < 0.95:
        return GateResult("mc-relu-conv", False,
                          f"only {100 * frac:.1f}% of entries within 4 SE")
    est4 = oracles.mc_relu_conv(images, w=1, trials=4 * 4096, d4=256, seed=902)
    ratio = float(np.median(est.std_error / np.maximum(est4.std_error, 1e-300)))
    if not 1.6 <= ratio <= 2.4:
        return GateResult("mc-relu-conv", False,
                          f"SE ratio at 4x trials {ratio:.2f}, want 2.0 +/- 0.4")
    return GateResult(
        "mc-relu-conv", True,
        f"{100 * frac:.1f}% of entries within 4 SE; SE ratio {ratio:.2f}",
    )


def gate_psd_properties(cases: int, seed: int = 17) -> GateResult:
    """Symmetric Grams must be PSD with nonnegative diagonals."""
    rng = np.random.default_rng(seed)
    min_eig_rel = np.inf
    for index in range(cases):
        spatial = int(rng.choice([4, 6]))
        arch = oracles.random_valid_arch(rng, (spatial, spatial))
        n = int(rng.integers(2, 7))
        images = _random_images(rng, n, spatial)
        gram = compose_kernel(images, None, arch).values.astype(np.float64)
        if not np.array_equal(gram, gram.T):
            return GateResult("psd-properties", False,
                              f"case {index}: Gram not symmetric")
        if np.any(np.diag(gram) < 0):
            return GateResult("psd-properties", False,
                              f"case {index}: negative diagonal")
        eigs = np.linalg.eigvalsh(gram)
        scale = max(float(eigs.max()), 1e-12)
        min_eig_rel = min(min_eig_rel, float(eigs.min()) / scale)
        if eigs.min() < -1e-6 * scale:
            return GateResult("psd-properties", False,
                              f"case {index}: min eigenvalue {eigs.min():.2e}")
    return GateResult("psd-properties", True,
                      f"{cases} Grams PSD; worst relative eigenvalue {min_eig_rel:.2e}")


def gate_tile_invariance(seed: int = 19) -> GateResult:
    """Gram bytes must not depend on tile size or worker count."""
    rng = np.random.default_rng(seed)
    images = _random_images(rng, 5, 4)
    arch = parse_arch("conv 3\nrelu\npool 2\ngpool\n")
    reference = compose_kernel(images, None, arch, tile=1, workers=1).values
    for tile in (1, 2, 5):
        for workers in (1, 4):
            gram = compose_kernel(images, None, arch, tile=tile, workers=workers).values
            if not np.array_equal(gram, reference):
                return GateResult(
                    "tile-invariance", False,
                    f"tile={tile}, workers={workers} differs from reference",
                )
    return GateResult("tile-invariance", True,
                      "bitwise identical over tile 1/2/5 x workers 1/4")


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------

def run_gates(level: str = "quick", out=print) -> list:
    """Run the verification gates at the requested level.

    Parameters
    ----------
    level : {"quick", "full"}
    out : callable, default=print
        Receives one line per gate plus a summary line.

    Returns
    -------
    list of GateResult
    """
    if level not in ("quick", "full"):
        raise ValueError(f"level must be 'quick' or 'full', got {level!r}")
    quick_rhos = (-1.0, -0.5, 0.0, 0.5, 1.0)
    gates = [
        gate_arch_roundtrip,
        gate_format_roundtrip,
        lambda: gate_engine_vs_naive(pairs=3),
        lambda: gate_loo_vs_brute(systems=3),
        gate_interval_values,
        lambda: gate_quadrature(quick_rhos, nodes=4096, tol=1e-4),
    ]
    if level == "full":
        gates += [
            lambda: gate_quadrature(_RHO_GRID, nodes=4096, tol=1e-4),
            gate_mc_relu_conv,
            lambda: gate_engine_vs_naive(pairs=25, seed=23),
            lambda: gate_loo_vs_brute(systems=10, seed=29),
            lambda: gate_psd_properties(cases=100),
            gate_tile_invariance,
        ]

    results = []
    for gate in gates:
        start = time.perf_counter()
        result = gate()
        elapsed = time.perf_counter() - start
        status = "PASS" if result.passed else "FAIL"
        out(f"{status} {result.name}: {result.detail} [{elapsed:.2f}s]")
        results.append(result)
    failed = [r.name for r in results if not r.passed]
    if failed:
        out(f"{len(failed)} gate(s) failed: {', '.join(failed)}")
    else:
        out(f"all {len(results)} gates passed ({level})")
    return results
