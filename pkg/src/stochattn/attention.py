"""Attention kernels: masked full attention, sliding-window attention (SWA),
stochastic attention (SA = permute -> windowed attention -> un-permute),
rotary embeddings on original positions, gated SA+SWA fusion, and an
analytic backward pass for the masked core.

``sa_forward`` genuinely routes through permuted space (gather, windowed
attention, scatter back); the mask-route equivalent, full attention under
``intersect_causal(build_stochastic_mask(...))``, is kept as an independent
oracle in the test suite, and the two must agree to 1e-12.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import Convention, WindowSpec, build_window_mask
from .numerics import SeededRng, as_matrix, masked_row_softmax
from .permute import Permutation, invert, permute_rows, sample_permutation


@dataclass(frozen=True)
class AttentionInputs:
    """Per-head query/key/value matrices plus original token positions.

    ``positions`` defaults to 0..n-1; they are the pre-permutation sequence
    positions and are what rotary embeddings must be computed from.
    """

    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    positions: np.ndarray | None = None

    def __post_init__(self):
        q = as_matrix(self.q, "q")
        k = as_matrix(self.k, "k")
        v = as_matrix(self.v, "v")
        if not (q.shape == k.shape == v.shape):
            raise ValueError(f"q/k/v shapes disagree: {q.shape}, {k.shape}, {v.shape}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "k", k)
        object.__setattr__(self, "v", v)
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=np.int64)
            if pos.shape != (q.shape[0],):
                raise ValueError("positions must have one entry per row of q")
            object.__setattr__(self, "positions", pos)

    @property
    def n(self) -> int:
        return self.q.shape[0]

    @property
    def d_h(self) -> int:
        return self.q.shape[1]

    def resolved_positions(self) -> np.ndarray:
        if self.positions is None:
            return np.arange(self.n, dtype=np.int64)
        return self.positions


@dataclass(frozen=True)
class GateParams:
    """Weights of the two independent sigmoid gates of the dual-path layer."""

    w_gate_swa: np.ndarray
    w_gate_sa: np.ndarray

    def __post_init__(self):
        for name in ("w_gate_swa", "w_gate_sa"):
            w = as_matrix(getattr(self, name), name)
            if w.shape[0] != w.shape[1]:
                raise ValueError(f"{name} must be square, got {w.shape}")
            object.__setattr__(self, name, w)
        if self.w_gate_swa.shape != self.w_gate_sa.shape:
            raise ValueError("gate matrices must share a shape")

    @property
    def d(self) -> int:
        return self.w_gate_swa.shape[0]


@dataclass(frozen=True)
class LayerConfig:
    """Shape parameters of one dual-path attention sublayer."""

    d: int
    h: int
    w: int
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.d < 1 or self.h < 1 or self.d % self.h != 0:
            raise ValueError(f"model width d={self.d} must be a positive multiple of h={self.h}")
        if self.w < 1:
            raise ValueError(f"window size must be >= 1, got {self.w}")

    @property
    def d_h(self) -> int:
        return self.d // self.h

    @property
    def scale(self) -> float:
        return 1.0 / np.sqrt(self.d_h)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def attention_forward(
    inp: AttentionInputs,
    mask: np.ndarray,
    return_weights: bool = False,
    temperature: float = 1.0,
):
    """Masked scaled-dot-product attention.

    Scores are q_i . k_j / (sqrt(d_h) * temperature); rows are softmaxed over
    unmasked entries only, so masked weights are exactly zero and every
    output row is a convex combination of unmasked value rows.
    """
    scale = 1.0 / (np.sqrt(inp.d_h) * temperature)
    scores = (inp.q @ inp.k.T) * scale
    weights = masked_row_softmax(scores, mask)
    y = weights @ inp.v
    if return_weights:
        return y, weights
    return y


def attention_backward(
    inp: AttentionInputs,
    mask: np.ndarray,
    upstream: np.ndarray,
    temperature: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact gradients of ``attention_forward`` w.r.t. q, k, v.

    Uses the softmax Jacobian restricted to unmasked entries:
    dS = A * (dA - rowsum(dA * A)), which vanishes at masked positions
    because A does.
    """
    upstream = as_matrix(upstream, "upstream")
    if upstream.shape != inp.q.shape:
        raise ValueError("upstream gradient must match the output shape")
    scale = 1.0 / (np.sqrt(inp.d_h) * temperature)
    scores = (inp.q @ inp.k.T) * scale
    weights = masked_row_softmax(scores, mask)

    dv = weights.T @ upstream
    d_weights = upstream @ inp.v.T
    row_dot = (d_weights * weights).sum(axis=1, keepdims=True)
    d_scores = weights * (d_weights - row_dot)
    dq = (d_scores @ inp.k) * scale
    dk = (d_scores.T @ inp.q) * scale
    return dq, dk, dv


def swa_forward(inp: AttentionInputs, w: int, temperature: float = 1.0) -> np.ndarray:
    """Causal sliding-window attention: each token sees the previous w tokens
    (itself included)."""
    mask = build_window_mask(inp.n, WindowSpec(w, Convention.CAUSAL_ONE_SIDED))
    return attention_forward(inp, mask, temperature=temperature)


def _permuted_causal_mask(n: int, spec: WindowSpec, p: Permutation) -> np.ndarray:
    """Mask in permuted space: window on slots, causality on original tokens."""
    window = build_window_mask(n, spec)
    token_of_slot = p.inverse
    causal = token_of_slot[None, :] <= token_of_slot[:, None]
    out = window & causal
    np.fill_diagonal(out, True)
    return out


def sa_forward(
    inp: AttentionInputs,
    w: int,
    p: Permutation,
    convention: Convention = Convention.SYMMETRIC_CIRCULAR,
    temperature: float = 1.0,
) -> np.ndarray:
    """Stochastic attention: permute rows, run windowed attention in the
    permuted order, un-permute the result.

    The window is evaluated on permuted slots while the causal constraint is
    evaluated on original token positions, so autoregressive validity is
    preserved even though each token's neighborhood is a random subset of
    the sequence.

    Convention notes: the default circular window is the one the stochastic
    mask is defined with (causality comes only from original positions, and
    w >= n degenerates to full causal attention for any permutation). The
    one-sided convention additionally orders permuted slots; it collapses to
    ``swa_forward`` exactly at the identity permutation.
    """
    if p.n != inp.n:
        raise ValueError(f"permutation size {p.n} does not match sequence length {inp.n}")
    spec = WindowSpec(w, convention)
    qp = permute_rows(inp.q, p)
    kp = permute_rows(inp.k, p)
    vp = permute_rows(inp.v, p)
    mask_p = _permuted_causal_mask(inp.n, spec, p)
    yp = attention_forward(AttentionInputs(qp, kp, vp), mask_p, temperature=temperature)
    return permute_rows(yp, invert(p))


def rope_apply(x: np.ndarray, positions, base: float = 10000.0) -> np.ndarray:
    """Rotary position embedding on consecutive coordinate pairs.

    Pair k of a row at position p is rotated by angle p * base^(-2k/d_h).
    Must be applied before any permutation, with original positions, so that
    the relative-offset property q_m . k_n == q_{m+s} . k_{n+s} refers to
    true sequence distances.
    """
    x = as_matrix(x, "x")
    n, d_h = x.shape
    if d_h % 2 != 0:
        raise ValueError(f"rotary embedding needs an even head dimension, got {d_h}")
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (n,):
        raise ValueError("positions must have one entry per row")
    inv_freq = float(base) ** (-np.arange(0, d_h, 2, dtype=np.float64) / d_h)
    ang = pos[:, None] * inv_freq[None, :]
    cos, sin = np.cos(ang), np.sin(ang)
    even, odd = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos
    return out


def gated_fusion(y_swa: np.ndarray, y_sa: np.ndarray, g: GateParams) -> np.ndarray:
    """Combine the two attention paths with independent sigmoid gates.

    y = sigmoid(y_sa @ W_sa^T) * y_sa + sigmoid(y_swa @ W_swa^T) * y_swa,
    per token and per dimension. The gates are independent (not a softmax
    split), so both paths can be up- or down-weighted simultaneously; there
    is no bias term.
    """
    y_swa = as_matrix(y_swa, "y_swa")
    y_sa = as_matrix(y_sa, "y_sa")
    if y_swa.shape != y_sa.shape:
        raise ValueError(f"path outputs disagree: {y_swa.shape} vs {y_sa.shape}")
    if y_swa.shape[1] != g.d:
        raise ValueError(f"gate width {g.d} does not match output width {y_swa.shape[1]}")
    gate_sa = _sigmoid(y_sa @ g.w_gate_sa.T)
    gate_swa = _sigmoid(y_swa @ g.w_gate_swa.T)
    return gate_sa * y_sa + gate_swa * y_swa


def dual_path_layer(
    x: np.ndarray,
    cfg: LayerConfig,
    g: GateParams,
    rng: SeededRng,
    projections: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
    apply_rope: bool = True,
) -> np.ndarray:
    """One dual-path attention sublayer: SWA and SA side by side, fused.

    Per head: rotary embeddings on original positions, then both the causal
    sliding-window path and the stochastic path (one fresh permutation per
    call, shared across heads), head outputs concatenated per path and the
    two paths combined by ``gated_fusion``. Q/K/V projections default to the
    identity; there is no output projection, MLP or normalization here:
    this is an attention-sublayer reference, not a trainable block.
    """
    x = as_matrix(x, "x")
    n, d = x.shape
    if d != cfg.d:
        raise ValueError(f"input width {d} does not match config width {cfg.d}")
    if g.d != cfg.d:
        raise ValueError("gate width does not match config width")
    if not 1 <= cfg.w <= n:
        raise ValueError(f"window size {cfg.w} invalid for sequence length {n}")

    if projections is None:
        q_full, k_full, v_full = x, x, x
    else:
        wq, wk, wv = (as_matrix(m, "projection") for m in projections)
        q_full, k_full, v_full = x @ wq, x @ wk, x @ wv

    positions = np.arange(n, dtype=np.int64)
    perm = sample_permutation(n, rng)

    y_swa_heads, y_sa_heads = [], []
    for head in range(cfg.h):
        sl = slice(head * cfg.d_h, (head + 1) * cfg.d_h)
        q, k, v = q_full[:, sl], k_full[:, sl], v_full[:, sl]
        if apply_rope:
            q = rope_apply(q, positions, cfg.rope_base)
            k = rope_apply(k, positions, cfg.rope_base)
        inp = AttentionInputs(q, k, v, positions)
        y_swa_heads.append(swa_forward(inp, cfg.w))
        y_sa_heads.append(sa_forward(inp, cfg.w, perm, Convention.CAUSAL_ONE_SIDED))
    y_swa = np.hstack(y_swa_heads)
    y_sa = np.hstack(y_sa_heads)
    return gated_fusion(y_swa, y_sa, g)
