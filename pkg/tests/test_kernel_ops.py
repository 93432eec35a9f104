"""Kernel-space operators on rank-6 tensors, against literal hand loops."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from compkern import (
    DiagCache,
    KernelBlock,
    NegativeDiagonalError,
    conv,
    gauss_dual,
    gauss_embed,
    global_pool,
    input_kernel,
    pool,
    relu_dual,
    relu_embed,
    stage_norms,
    update_diag,
)
from compkern.arch import LayerDesc, LayerKind, parse_arch
from compkern.kernel_ops import self_apply_layer, self_input_kernel


def ref_input_kernel(a, b):
    n_a, d1, d2, _ = a.shape
    n_b = b.shape[0]
    out = np.zeros((n_a, d1, d2, n_b, d1, d2))
    for i in range(n_a):
        for j in range(d1):
            for k in range(d2):
                for l in range(n_b):
                    for m in range(d1):
                        for n in range(d2):
                            out[i, j, k, l, m, n] = float(
                                np.dot(a[i, j, k].astype(np.float64),
                                       b[l, m, n].astype(np.float64))
                            )
    return out


def ref_conv(values, w):
    n_a, d1, d2, n_b = values.shape[:4]
    out = np.zeros_like(values, dtype=np.float64)
    for i in range(n_a):
        for j in range(d1):
            for k in range(d2):
                for l in range(n_b):
                    for m in range(d1):
                        for n in range(d2):
                            total = 0.0
                            for dx in range(-w, w + 1):
                                for dy in range(-w, w + 1):
                                    ja, ka = j + dx, k + dy
                                    ma, na = m + dx, n + dy
                                    if 0 <= ja < d1 and 0 <= ka < d2 \
                                            and 0 <= ma < d1 and 0 <= na < d2:
                                        total += float(values[i, ja, ka, l, ma, na])
                            out[i, j, k, l, m, n] = total
    return out


def ref_pool(values, w):
    n_a, d1, d2, n_b = values.shape[:4]
    e1, e2 = d1 // w, d2 // w
    out = np.zeros((n_a, e1, e2, n_b, e1, e2))
    for i in range(n_a):
        for j in range(e1):
            for k in range(e2):
                for l in range(n_b):
                    for m in range(e1):
                        for n in range(e2):
                            total = 0.0
                            for p in range(w):
                                for q in range(w):
                                    for r in range(w):
                                        for s in range(w):
                                            total += float(
                                                values[i, j * w + p, k * w + q,
                                                       l, m * w + r, n * w + s]
                                            )
                            out[i, j, k, l, m, n] = total / w ** 4
    return out


def make_block(rng, n_a=2, n_b=3, spatial=4, channels=2):
    a = rng.standard_normal((n_a, spatial, spatial, channels)).astype(np.float32)
    b = rng.standard_normal((n_b, spatial, spatial, channels)).astype(np.float32)
    return a, b, input_kernel(a, b)


class TestInputKernel:
    def test_matches_hand_loop(self, rng):
        a, b, block = make_block(rng)
        assert_allclose(block.values, ref_input_kernel(a, b), rtol=1e-6)
        assert block.values.dtype == np.float32
        assert block.spatial == (4, 4)
        assert block.batch_a == (0, 2)
        assert block.batch_b == (0, 3)

    def test_float64_option(self, rng):
        a, b, _ = make_block(rng)
        block = input_kernel(a, b, dtype=np.float64)
        assert block.values.dtype == np.float64

    def test_diagonal_flag(self, rng):
        a, _, _ = make_block(rng)
        assert input_kernel(a, a, batch_a=(0, 2), batch_b=(0, 2)).is_diagonal
        assert not input_kernel(a, a, batch_a=(0, 2), batch_b=(2, 4)).is_diagonal

    def test_shape_validation(self, rng):
        a = rng.standard_normal((2, 4, 4, 3)).astype(np.float32)
        b = rng.standard_normal((2, 4, 4, 2)).astype(np.float32)
        with pytest.raises(ValueError):
            input_kernel(a, b)
        with pytest.raises(ValueError):
            input_kernel(a[0], a[0])


class TestConv:
    @pytest.mark.parametrize("w", [1, 2])
    def test_matches_hand_loop(self, rng, w):
        _, _, block = make_block(rng, spatial=5)
        out = conv(block, w)
        assert_allclose(out.values, ref_conv(block.values, w),
                        rtol=1e-5, atol=1e-6)
        assert out.spatial == block.spatial

    def test_zero_padding_at_borders(self, rng):
        # A corner output sums only the in-bound shifts; compare corners
        # of a constant-one tensor, where each entry counts valid offsets.
        values = np.ones((1, 3, 3, 1, 3, 3), dtype=np.float32)
        block = KernelBlock(values=values, spatial=(3, 3),
                            batch_a=(0, 1), batch_b=(0, 1))
        out = conv(block, 1).values
        assert out[0, 0, 0, 0, 0, 0] == 4.0  # 2x2 valid joint shifts
        assert out[0, 1, 1, 0, 1, 1] == 9.0  # full 3x3 window
        # Opposite corners move together, so only the zero shift stays
        # in bounds for both pixels at once.
        assert out[0, 0, 0, 0, 2, 2] == 1.0

    def test_rejects_bad_width(self, rng):
        _, _, block = make_block(rng)
        with pytest.raises(ValueError):
            conv(block, 0)

    def test_stage_advances(self, rng):
        _, _, block = make_block(rng)
        assert conv(block, 1).stage == block.stage + 1


class TestPool:
    def test_matches_hand_loop(self, rng):
        _, _, block = make_block(rng, spatial=4)
        out = pool(block, 2)
        assert_allclose(out.values, ref_pool(block.values, 2), rtol=1e-6)
        assert out.spatial == (2, 2)

    def test_indivisible_raises(self, rng):
        _, _, block = make_block(rng, spatial=5)
        with pytest.raises(ValueError, match="divide"):
            pool(block, 2)

    def test_constant_tensor_fixed_point(self):
        values = np.full((1, 4, 4, 1, 4, 4), 2.5, dtype=np.float32)
        block = KernelBlock(values=values, spatial=(4, 4),
                            batch_a=(0, 1), batch_b=(0, 1))
        assert_allclose(pool(block, 2).values, 2.5, rtol=1e-7)

    def test_global_pool(self, rng):
        _, _, block = make_block(rng)
        out = global_pool(block)
        assert out.spatial == (1, 1)
        expected = block.values.astype(np.float64).mean(axis=(1, 2, 4, 5),
                                                        keepdims=True)
        assert_allclose(out.values, expected.astype(np.float32), rtol=1e-6)


class TestDuals:
    def test_relu_dual_anchor_values(self):
        assert_allclose(relu_dual(np.float64(1.0)), 1.0, atol=1e-15)
        assert_allclose(relu_dual(np.float64(-1.0)), 0.0, atol=1e-15)
        assert_allclose(relu_dual(np.float64(0.0)), 1.0 / np.pi, atol=1e-15)

    def test_relu_dual_formula(self):
        rho = np.linspace(-1, 1, 41)
        expected = (np.sqrt(1 - rho ** 2) + rho * (np.pi - np.arccos(rho))) / np.pi
        assert_allclose(relu_dual(rho), expected, atol=1e-14)

    def test_relu_dual_monotone_and_bounded(self):
        rho = np.linspace(-1, 1, 201)
        vals = relu_dual(rho)
        assert np.all(np.diff(vals) >= 0)
        assert np.all(vals >= 0) and np.all(vals <= 1 + 1e-15)

    def test_relu_dual_clips_rounding_overshoot(self):
        assert np.isfinite(relu_dual(np.float64(1.0 + 1e-9)))
        assert np.isfinite(relu_dual(np.float64(-1.0 - 1e-9)))

    def test_gauss_dual(self):
        rho = np.linspace(-1, 1, 11)
        assert_allclose(gauss_dual(rho), np.exp(rho - 1.0), atol=1e-15)
        assert gauss_dual(np.float64(1.0)) == 1.0


def _embed_reference(values, norms_a, norms_b, dual):
    n_a, d1, d2, n_b, e1, e2 = values.shape
    out = np.zeros_like(values, dtype=np.float64)
    for i in range(n_a):
        for j in range(d1):
            for k in range(d2):
                for l in range(n_b):
                    for m in range(e1):
                        for n in range(e2):
                            denom = float(norms_a[i, j, k]) * float(norms_b[l, m, n])
                            if denom > 0:
                                rho = min(max(float(values[i, j, k, l, m, n]) / denom, -1.0), 1.0)
                                out[i, j, k, l, m, n] = denom * float(dual(np.float64(rho)))
    return out


class TestEmbeddings:
    @pytest.mark.parametrize("embed,dual", [(relu_embed, relu_dual),
                                            (gauss_embed, gauss_dual)])
    def test_matches_hand_loop(self, rng, embed, dual):
        a, b, block = make_block(rng, spatial=3)
        norms_a = update_diag(self_input_kernel(a))
        norms_b = update_diag(self_input_kernel(b))
        out = embed(block, norms_a, norms_b)
        expected = _embed_reference(block.values, norms_a.norms, norms_b.norms, dual)
        assert_allclose(out.values, expected, rtol=1e-5, atol=1e-7)

    def test_diagonal_is_fixed_point(self, rng):
        # K(x, x) entries have rho = 1, so both duals return A * A' exactly.
        a, _, _ = make_block(rng, n_a=3, n_b=3)
        block = input_kernel(a, a)
        norms = update_diag(block.values)
        for embed in (relu_embed, gauss_embed):
            out = embed(block, norms, norms).values
            diag_in = np.einsum("ijkijk->ijk", block.values)
            diag_out = np.einsum("ijkijk->ijk", out)
            assert_allclose(diag_out, diag_in, rtol=1e-6)

    def test_zero_norm_maps_to_zero(self):
        images = np.zeros((1, 2, 2, 3), dtype=np.float32)
        images[0, 0, 0, 0] = 1.0  # one nonzero pixel; the rest have A = 0
        block = input_kernel(images, images)
        norms = update_diag(block.values)
        out = relu_embed(block, norms, norms).values
        assert out[0, 1, 1, 0, 1, 1] == 0.0
        assert out[0, 0, 0, 0, 0, 0] > 0.0


class TestDiagMaintenance:
    def test_update_diag_matches_sqrt_of_diagonal(self, rng):
        a, _, _ = make_block(rng, n_a=3, n_b=3)
        block = input_kernel(a, a)
        cache = update_diag(block.values)
        expected = np.sqrt(np.einsum("ijkijk->ijk", block.values.astype(np.float64)))
        assert_allclose(cache.norms, expected, rtol=1e-6)

    def test_rank5_and_rank6_paths_agree(self, rng):
        a, _, _ = make_block(rng, n_a=3, n_b=3)
        rank6 = update_diag(input_kernel(a, a).values)
        rank5 = update_diag(self_input_kernel(a))
        assert_allclose(rank5.norms, rank6.norms, rtol=1e-6)

    def test_small_negative_diag_clamps_to_zero(self):
        # A tiny negative entry relative to the overall scale is rounding
        # noise and clamps; the threshold is proportional to the scale.
        values = np.zeros((1, 2, 2, 1, 2, 2), dtype=np.float64)
        values[0, 0, 0, 0, 0, 0] = 1.0
        values[0, 1, 1, 0, 1, 1] = -1e-9
        cache = update_diag(values)
        assert cache.norms[0, 1, 1] == 0.0
        assert cache.norms[0, 0, 0] == 1.0

    def test_large_negative_diag_raises(self):
        values = np.zeros((1, 2, 2, 1, 2, 2), dtype=np.float64)
        values[0, 0, 0, 0, 0, 0] = 1.0
        values[0, 1, 1, 0, 1, 1] = -1.0
        with pytest.raises(NegativeDiagonalError):
            update_diag(values)

    def test_stage_recorded(self, rng):
        a, _, _ = make_block(rng, n_a=2, n_b=2)
        cache = update_diag(input_kernel(a, a).values, stage=4)
        assert cache.stage == 4


class TestSelfPipeline:
    """The rank-5 self pipeline must track the rank-6 diagonal exactly."""

    @pytest.mark.parametrize("text", [
        "conv 3\n",
        "pool 2\n",
        "conv 3\nrelu\n",
        "conv 3\ngauss\npool 2\n",
        "conv 3\nrelu\nconv 3\nrelu\npool 2\ngpool\n",
    ])
    def test_self_diag_equals_full_diag(self, rng, text):
        a = rng.standard_normal((3, 4, 4, 2)).astype(np.float32)
        spec = parse_arch(text)

        full = input_kernel(a, a)
        self_values = self_input_kernel(a)
        norms = None
        for layer in spec.layers:
            if layer.kind in (LayerKind.RELU_EMBED, LayerKind.GAUSS_EMBED):
                norms = update_diag(self_values).norms
                cache = DiagCache(norms=norms)
                embed = relu_embed if layer.kind is LayerKind.RELU_EMBED else gauss_embed
                full = embed(full, cache, cache)
            elif layer.kind is LayerKind.CONV:
                full = conv(full, layer.half_width)
            elif layer.kind is LayerKind.POOL:
                full = pool(full, layer.size)
            else:
                full = global_pool(full)
            self_values = self_apply_layer(self_values, layer, norms)
            full_diag = np.einsum("ijkijk->ijk", full.values.astype(np.float64))
            self_diag = np.einsum("ijj->ij", self_values.reshape(
                self_values.shape[0],
                self_values.shape[1] * self_values.shape[2],
                self_values.shape[3] * self_values.shape[4],
            )).reshape(self_values.shape[0], self_values.shape[1],
                       self_values.shape[2])
            assert_allclose(self_diag, full_diag, rtol=1e-5, atol=1e-7)

    def test_stage_norms_matches_inline_pipeline(self, rng):
        a = rng.standard_normal((5, 4, 4, 3)).astype(np.float32)
        spec = parse_arch("conv 3\nrelu\nconv 3\ngauss\npool 2\ngpool\n")
        caches = stage_norms(a, spec.layers)
        assert len(caches) == 2  # one per embedding layer

        self_values = self_input_kernel(a)
        expected = []
        norms = None
        for layer in spec.layers:
            if layer.kind in (LayerKind.RELU_EMBED, LayerKind.GAUSS_EMBED):
                norms = update_diag(self_values).norms
                expected.append(norms)
            self_values = self_apply_layer(self_values, layer, norms)
        for cache, exp in zip(caches, expected):
            assert_allclose(cache.norms, exp, rtol=0, atol=0)

    def test_stage_norms_chunk_invariant(self, rng):
        a = rng.standard_normal((7, 4, 4, 3)).astype(np.float32)
        layers = parse_arch("conv 3\nrelu\ngpool\n").layers
        big = stage_norms(a, layers, chunk=16)
        small = stage_norms(a, layers, chunk=2)
        for x, y in zip(big, small):
            assert np.array_equal(x.norms, y.norms)


class TestDeterminism:
    def test_repeat_runs_are_bitwise_identical(self, rng):
        a, b, _ = make_block(rng, n_a=3, n_b=4, spatial=4)

        def pipeline():
            block = input_kernel(a, b)
            block = conv(block, 1)
            na = update_diag(self_apply_layer(self_input_kernel(a),
                                              LayerDesc(LayerKind.CONV, 3), None))
            nb = update_diag(self_apply_layer(self_input_kernel(b),
                                              LayerDesc(LayerKind.CONV, 3), None))
            block = relu_embed(block, na, nb)
            block = pool(block, 2)
            return global_pool(block).values

        assert np.array_equal(pipeline(), pipeline())
