"""Binary attention masks: local windows, permuted (stochastic) windows,
and causal intersections.

Masks are dense boolean arrays of shape (n, n); True means "query row i may
attend to key column j".

Window conventions:

* ``CAUSAL_ONE_SIDED``: j in window of i iff 0 <= i - j <= w-1. Already
  causal; exactly w ones per row away from the start of the sequence.
* ``SYMMETRIC_CIRCULAR``: circular offsets (j - i) mod n in
  {-(ceil(w/2)-1), ..., floor(w/2)}. The asymmetric offset set has size
  exactly w, so every row and every column carries exactly w ones (for odd
  w it is the symmetric set {-(w-1)/2, ..., (w-1)/2} and the mask is
  symmetric; for even w the extra +w/2 offset makes the mask w-regular but
  not symmetric).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .permute import Permutation


class Convention(enum.Enum):
    CAUSAL_ONE_SIDED = "causal"
    SYMMETRIC_CIRCULAR = "circular"


@dataclass(frozen=True)
class WindowSpec:
    """Window size plus the neighborhood convention it is interpreted under."""

    w: int
    convention: Convention = Convention.SYMMETRIC_CIRCULAR

    def offsets(self) -> tuple[int, int]:
        """(back, fwd): circular window covers offsets -back..+fwd inclusive."""
        back = (self.w - 1) // 2
        fwd = self.w // 2
        return back, fwd


def _validate_window(n: int, spec: WindowSpec) -> None:
    if not 1 <= spec.w <= n:
        raise ValueError(f"window size must satisfy 1 <= w <= n, got w={spec.w}, n={n}")


def build_window_mask(n: int, spec: WindowSpec) -> np.ndarray:
    """Local window mask in sequence order (no permutation applied)."""
    _validate_window(n, spec)
    idx = np.arange(n)
    if spec.convention is Convention.CAUSAL_ONE_SIDED:
        diff = idx[:, None] - idx[None, :]
        return (diff >= 0) & (diff <= spec.w - 1)
    back, fwd = spec.offsets()
    off = (idx[None, :] - idx[:, None]) % n
    return (off <= fwd) | (off >= n - back) if back > 0 else (off <= fwd)


def build_stochastic_mask(n: int, spec: WindowSpec, p: Permutation) -> np.ndarray:
    """Window mask evaluated on permuted indices: bit(i,j) = window(p(i), p(j)).

    Turns the fixed local window into a random global neighborhood; under a
    uniform permutation each fixed off-diagonal pair is connected with
    probability (w-1)/(n-1). Causality is NOT applied here; compose with
    intersect_causal for autoregressive use.
    """
    if p.n != n:
        raise ValueError(f"permutation size {p.n} does not match n={n}")
    base = build_window_mask(n, spec)
    return base[np.ix_(p.forward, p.forward)]


def intersect_causal(m: np.ndarray) -> np.ndarray:
    """Keep only entries with key position <= query position; force diagonal.

    Positions are original sequence order regardless of how ``m`` was built,
    so applying this to a permuted-window mask yields the autoregressive
    stochastic mask. The forced diagonal guarantees no row is fully masked.
    """
    m = np.asarray(m, dtype=bool)
    n = m.shape[0]
    out = m & (np.arange(n)[None, :] <= np.arange(n)[:, None])
    np.fill_diagonal(out, True)
    return out


def mask_density(m: np.ndarray) -> float:
    """Fraction of unmasked entries over all n^2 cells."""
    m = np.asarray(m, dtype=bool)
    return float(m.sum()) / float(m.size)


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Undirected version of a mask: edge present if either direction is."""
    m = np.asarray(m, dtype=bool)
    return m | m.T


def mask_to_csv(m: np.ndarray, path, meta: str | None = None) -> None:
    """Dump a mask as rows of comma-separated 0/1, with an optional leading
    '#' metadata comment line."""
    m = np.asarray(m, dtype=np.uint8)
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        if meta:
            fh.write(f"# {meta}\n")
        for row in m:
            fh.write(",".join("1" if b else "0" for b in row))
            fh.write("\n")


def mask_to_pgm(m: np.ndarray, path, meta: str | None = None) -> None:
    """Dump a mask as a binary (P5) PGM image, one byte per cell.

    Unmasked cells are 255 (white), masked cells 0 (black), row-major in
    query order from the top.
    """
    m = np.asarray(m, dtype=bool)
    n_rows, n_cols = m.shape
    header = f"P5\n"
    if meta:
        header += f"# {meta}\n"
    header += f"{n_cols} {n_rows}\n255\n"
    body = np.where(m, np.uint8(255), np.uint8(0)).tobytes()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(body)
