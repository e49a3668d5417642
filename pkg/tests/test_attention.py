"""Attention kernels: forward/backward, the permuted route against the
mask route, rotary embeddings, and the gated dual path."""

import numpy as np
import pytest

from stochattn import (
    AttentionInputs,
    Convention,
    GateParams,
    LayerConfig,
    SeededRng,
    WindowSpec,
    attention_backward,
    attention_forward,
    build_stochastic_mask,
    build_window_mask,
    dual_path_layer,
    gated_fusion,
    identity_permutation,
    intersect_causal,
    invert,
    permute_rows,
    rope_apply,
    sa_forward,
    sample_permutation,
    swa_forward,
)


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _random_inputs(rng, n, d_h):
    q, k, v = (np.asarray(rng.normal(size=(n, d_h))) for _ in range(3))
    return AttentionInputs(q, k, v)


def _causal_full(n):
    return np.tril(np.ones((n, n), dtype=bool))


class TestForward:
    def test_single_token_returns_value(self):
        inp = AttentionInputs(np.array([[2.0]]), np.array([[3.0]]), np.array([[7.0]]))
        out = attention_forward(inp, np.ones((1, 1), dtype=bool))
        assert np.array_equal(out, np.array([[7.0]]))

    def test_equal_scores_causal_gives_prefix_means(self):
        n, d = 6, 3
        v = np.asarray(SeededRng(1).normal(size=(n, d)))
        inp = AttentionInputs(np.zeros((n, d)), np.zeros((n, d)), v)
        out = attention_forward(inp, _causal_full(n))
        for i in range(n):
            np.testing.assert_allclose(out[i], v[: i + 1].mean(axis=0), atol=1e-14)

    def test_two_token_scalar_oracle(self):
        # q = k = [1, 1], v = [0, 1]: row 0 sees only itself (0), row 1
        # splits evenly between the equal scores (0.5)
        inp = AttentionInputs(np.ones((2, 1)), np.ones((2, 1)), np.array([[0.0], [1.0]]))
        out = attention_forward(inp, _causal_full(2))
        np.testing.assert_allclose(out, [[0.0], [0.5]], atol=1e-15)

    def test_weights_masked_entries_zero(self):
        rng = SeededRng(2)
        inp = _random_inputs(rng, 9, 3)
        mask = intersect_causal(np.asarray(rng.random((9, 9)) < 0.4))
        _, weights = attention_forward(inp, mask, return_weights=True)
        assert np.all(weights[~mask] == 0.0)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-12)

    def test_outputs_in_value_hull(self):
        rng = SeededRng(3)
        for _ in range(10):
            inp = _random_inputs(rng, 12, 4)
            mask = intersect_causal(np.asarray(rng.random((12, 12)) < 0.5))
            out = attention_forward(inp, mask)
            max_norm = np.linalg.norm(inp.v, axis=1).max()
            assert np.all(np.linalg.norm(out, axis=1) <= max_norm + 1e-12)

    def test_high_temperature_approaches_uniform(self):
        rng = SeededRng(4)
        inp = _random_inputs(rng, 8, 2)
        out = attention_forward(inp, _causal_full(8), temperature=1e8)
        for i in range(8):
            np.testing.assert_allclose(out[i], inp.v[: i + 1].mean(axis=0), atol=1e-6)


class TestSwa:
    def test_window_covering_sequence_equals_full_causal(self):
        rng = SeededRng(5)
        inp = _random_inputs(rng, 10, 4)
        full = attention_forward(inp, _causal_full(10))
        np.testing.assert_allclose(swa_forward(inp, 10), full, atol=1e-15)
        np.testing.assert_allclose(swa_forward(inp, 10), swa_forward(inp, 10), atol=0)

    def test_w1_returns_values(self):
        rng = SeededRng(6)
        inp = _random_inputs(rng, 7, 3)
        np.testing.assert_allclose(swa_forward(inp, 1), inp.v, atol=1e-15)

    def test_matches_mask_route(self):
        rng = SeededRng(7)
        inp = _random_inputs(rng, 16, 4)
        mask = build_window_mask(16, WindowSpec(5, Convention.CAUSAL_ONE_SIDED))
        oracle = attention_forward(inp, mask)
        assert np.abs(swa_forward(inp, 5) - oracle).max() <= 1e-12


class TestSa:
    def test_identity_permutation_is_swa_bit_for_bit(self):
        rng = SeededRng(8)
        inp = _random_inputs(rng, 14, 4)
        out = sa_forward(inp, 4, identity_permutation(14), Convention.CAUSAL_ONE_SIDED)
        assert np.array_equal(out, swa_forward(inp, 4))

    def test_window_covering_sequence_is_full_causal(self):
        # circular windows cover every slot at w = n, so only the original
        # causality is left, whatever the permutation
        rng = SeededRng(9)
        inp = _random_inputs(rng, 9, 3)
        full = attention_forward(inp, _causal_full(9))
        for _ in range(4):
            perm = sample_permutation(9, rng)
            out = sa_forward(inp, 9, perm, Convention.SYMMETRIC_CIRCULAR)
            np.testing.assert_allclose(out, full, atol=1e-12)
        # one-sided windows keep the slot order, so this degeneracy needs
        # the identity permutation
        out = sa_forward(inp, 9, identity_permutation(9), Convention.CAUSAL_ONE_SIDED)
        np.testing.assert_allclose(out, full, atol=1e-12)

    def test_equivalent_to_masked_attention(self):
        # the keystone property, small edition; the acceptance suite runs
        # 100 configurations up to n=64
        rng = SeededRng(10)
        for case in range(25):
            n = int(rng.integers(3, 33))
            d_h = int(rng.integers(1, 7))
            w = int(rng.integers(2, n + 1))
            conv = Convention.SYMMETRIC_CIRCULAR if case % 2 else Convention.CAUSAL_ONE_SIDED
            inp = _random_inputs(rng, n, d_h)
            perm = sample_permutation(n, rng)
            direct = sa_forward(inp, w, perm, conv)
            mask = intersect_causal(build_stochastic_mask(n, WindowSpec(w, conv), perm))
            oracle = attention_forward(inp, mask)
            assert np.abs(direct - oracle).max() <= 1e-12

    def test_causality_under_value_perturbation(self):
        # changing token j's value may only move outputs at positions i >= j
        rng = SeededRng(11)
        n = 16
        inp = _random_inputs(rng, n, 3)
        perm = sample_permutation(n, rng)
        base = sa_forward(inp, 6, perm, Convention.SYMMETRIC_CIRCULAR)
        for j in [3, 9, 15]:
            v2 = inp.v.copy()
            v2[j] += 10.0
            bumped = sa_forward(AttentionInputs(inp.q, inp.k, v2), 6, perm,
                                Convention.SYMMETRIC_CIRCULAR)
            changed = np.nonzero(np.abs(bumped - base).max(axis=1) > 0)[0]
            assert np.all(changed >= j)

    def test_size_mismatch(self):
        rng = SeededRng(12)
        inp = _random_inputs(rng, 8, 2)
        with pytest.raises(ValueError):
            sa_forward(inp, 3, sample_permutation(9, rng))


class TestRope:
    def test_position_zero_unchanged(self):
        rng = SeededRng(13)
        x = np.asarray(rng.normal(size=(4, 8)))
        out = rope_apply(x, np.zeros(4))
        np.testing.assert_allclose(out, x, atol=1e-15)

    def test_pair_norms_preserved(self):
        rng = SeededRng(14)
        x = np.asarray(rng.normal(size=(6, 10)))
        out = rope_apply(x, np.arange(6) * 17)
        for k in range(5):
            before = np.hypot(x[:, 2 * k], x[:, 2 * k + 1])
            after = np.hypot(out[:, 2 * k], out[:, 2 * k + 1])
            np.testing.assert_allclose(before, after, atol=1e-12)

    def test_relative_offset_property(self):
        # the rotated inner product depends only on the position gap
        rng = SeededRng(15)
        q = np.asarray(rng.normal(size=(1, 8)))
        k = np.asarray(rng.normal(size=(1, 8)))
        for m, nn, s in [(3, 11, 5), (0, 7, 100), (20, 21, 13)]:
            a = rope_apply(q, [m]) @ rope_apply(k, [nn]).T
            b = rope_apply(q, [m + s]) @ rope_apply(k, [nn + s]).T
            assert abs(a[0, 0] - b[0, 0]) <= 1e-10

    def test_odd_dimension_rejected(self):
        with pytest.raises(ValueError):
            rope_apply(np.zeros((2, 3)), [0, 1])


class TestGatedFusion:
    def test_zero_gates_average_paths(self):
        rng = SeededRng(16)
        a = np.asarray(rng.normal(size=(5, 4)))
        b = np.asarray(rng.normal(size=(5, 4)))
        g = GateParams(np.zeros((4, 4)), np.zeros((4, 4)))
        np.testing.assert_allclose(gated_fusion(a, b, g), 0.5 * (a + b), atol=1e-15)

    def test_zero_stochastic_path(self):
        rng = SeededRng(17)
        a = np.asarray(rng.normal(size=(3, 2)))
        g = GateParams(np.zeros((2, 2)), np.zeros((2, 2)))
        np.testing.assert_allclose(gated_fusion(a, np.zeros((3, 2)), g), 0.5 * a, atol=1e-15)

    def test_scalar_oracle(self):
        g = GateParams(np.array([[1.0]]), np.array([[1.0]]))
        out = gated_fusion(np.array([[2.0]]), np.array([[-2.0]]), g)
        expected = _sigmoid(-2.0) * (-2.0) + _sigmoid(2.0) * 2.0
        assert abs(expected - 1.5232) < 5e-5
        np.testing.assert_allclose(out, [[expected]], atol=1e-12)

    def test_shape_mismatch(self):
        g = GateParams(np.zeros((2, 2)), np.zeros((2, 2)))
        with pytest.raises(ValueError):
            gated_fusion(np.zeros((3, 2)), np.zeros((4, 2)), g)


class TestBackward:
    def _finite_diff(self, inp, mask, upstream, h=1e-5):
        grads = []
        for name in ("q", "k", "v"):
            base = getattr(inp, name)
            g = np.zeros_like(base)
            for idx in np.ndindex(base.shape):
                fields = {f: getattr(inp, f).copy() for f in ("q", "k", "v")}
                fields[name][idx] += h
                up = attention_forward(AttentionInputs(**fields), mask)
                fields[name][idx] -= 2 * h
                down = attention_forward(AttentionInputs(**fields), mask)
                g[idx] = ((up - down) * upstream).sum() / (2 * h)
            grads.append(g)
        return grads

    def test_zero_upstream_gives_zero_grads(self):
        rng = SeededRng(18)
        inp = _random_inputs(rng, 6, 3)
        grads = attention_backward(inp, _causal_full(6), np.zeros((6, 3)))
        for g in grads:
            assert np.all(g == 0.0)

    def test_linearity_in_upstream(self):
        rng = SeededRng(19)
        inp = _random_inputs(rng, 6, 3)
        upstream = np.asarray(rng.normal(size=(6, 3)))
        mask = _causal_full(6)
        base = attention_backward(inp, mask, upstream)
        scaled = attention_backward(inp, mask, 3.0 * upstream)
        for g, gs in zip(base, scaled):
            np.testing.assert_allclose(gs, 3.0 * g, atol=1e-12)

    def test_matches_finite_differences(self):
        rng = SeededRng(20)
        for _ in range(5):
            inp = _random_inputs(rng, 8, 4)
            perm = sample_permutation(8, rng)
            mask = intersect_causal(
                build_stochastic_mask(8, WindowSpec(4, Convention.SYMMETRIC_CIRCULAR), perm))
            upstream = np.asarray(rng.normal(size=(8, 4)))
            analytic = attention_backward(inp, mask, upstream)
            numeric = self._finite_diff(inp, mask, upstream)
            for a, nmr in zip(analytic, numeric):
                rel = np.linalg.norm(a - nmr) / max(np.linalg.norm(nmr), 1e-12)
                assert rel <= 1e-6


class _IdentityPermRng(SeededRng):
    """Stream whose permutation draw is always the identity arrangement."""

    def permutation(self, n):
        return np.arange(n)


class TestDualPathLayer:
    def test_identity_permutation_collapses_to_swa(self):
        rng = SeededRng(21)
        x = np.asarray(rng.normal(size=(12, 4)))
        cfg = LayerConfig(d=4, h=1, w=3)
        gates = GateParams(np.zeros((4, 4)), np.zeros((4, 4)))
        out = dual_path_layer(x, cfg, gates, _IdentityPermRng(0))
        q = rope_apply(x, np.arange(12), cfg.rope_base)
        swa = attention_forward(
            AttentionInputs(q, q, x),
            build_window_mask(12, WindowSpec(3, Convention.CAUSAL_ONE_SIDED)))
        np.testing.assert_allclose(out, swa, atol=1e-12)

    def test_window_covering_sequence_degenerates(self):
        # with w = n and the identity permutation both paths are full causal
        # attention, so the fusion averages two identical tensors
        rng = SeededRng(22)
        x = np.asarray(rng.normal(size=(6, 4)))
        cfg = LayerConfig(d=4, h=2, w=6)
        gates = GateParams(np.zeros((4, 4)), np.zeros((4, 4)))
        out = dual_path_layer(x, cfg, gates, _IdentityPermRng(0))
        heads = []
        positions = np.arange(6)
        for hslice in (slice(0, 2), slice(2, 4)):
            q = rope_apply(x[:, hslice], positions, cfg.rope_base)
            heads.append(attention_forward(AttentionInputs(q, q, x[:, hslice]),
                                           np.tril(np.ones((6, 6), dtype=bool))))
        np.testing.assert_allclose(out, np.hstack(heads), atol=1e-12)

    def test_composition_oracle(self):
        seed = 77
        rng = SeededRng(23)
        n, d, h, w = 32, 8, 2, 5
        x = np.asarray(rng.normal(size=(n, d)))
        wg = (np.asarray(rng.normal(size=(d, d))), np.asarray(rng.normal(size=(d, d))))
        gates = GateParams(*wg)
        cfg = LayerConfig(d=d, h=h, w=w)
        out = dual_path_layer(x, cfg, gates, SeededRng(seed))

        # rebuild from the individual operations with the same stream
        perm = sample_permutation(n, SeededRng(seed))
        positions = np.arange(n)
        swa_heads, sa_heads = [], []
        for head in range(h):
            sl = slice(head * cfg.d_h, (head + 1) * cfg.d_h)
            q = rope_apply(x[:, sl], positions, cfg.rope_base)
            inp = AttentionInputs(q, q, x[:, sl], positions)
            swa_heads.append(swa_forward(inp, w))
            sa_heads.append(sa_forward(inp, w, perm, Convention.CAUSAL_ONE_SIDED))
        oracle = gated_fusion(np.hstack(swa_heads), np.hstack(sa_heads), gates)
        assert np.abs(out - oracle).max() <= 1e-12

    def test_config_mismatch_rejected(self):
        gates = GateParams(np.zeros((4, 4)), np.zeros((4, 4)))
        with pytest.raises(ValueError):
            dual_path_layer(np.zeros((8, 6)), LayerConfig(d=4, h=1, w=2), gates, SeededRng(0))
        with pytest.raises(ValueError):
            LayerConfig(d=6, h=4, w=2)
