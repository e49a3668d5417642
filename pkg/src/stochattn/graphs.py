"""Graph-level analysis of attention routing: receptive-field growth,
pairwise connection probability, small-world statistics, spectral mixing of
the induced random walks, and an analytic FLOP cost model.

Reachability is exact multi-source BFS over packed bitsets (one bit per
token, one row per source); the permuted-window structure lets each layer be
propagated with O(log w) shifted ORs instead of a dense mask product. The
dense-mask route is kept for the causal convention and as a test oracle.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .masks import Convention, WindowSpec, build_stochastic_mask, build_window_mask, intersect_causal
from .numerics import SeededRng
from .permute import Permutation, sample_permutation

_POPCOUNT = np.array([bin(i).count("1") for i in range(256)], dtype=np.uint16)


class RoutingMode(enum.Enum):
    SWA = "swa"
    SA = "sa"
    FUSED = "fused"


# ---------------------------------------------------------------------------
# Receptive-field simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoverageCurve:
    """Per-layer receptive-field coverage, aggregated over sources and seeds.

    ``mean[l]`` is the mean coverage fraction |R_l(i)|/n over all sources i
    and all seeds; ``lo/median/hi`` are pooled percentiles over the same;
    ``seed_mean[s, l]`` is the per-seed mean over sources, which is what
    per-seed depth statistics and standard errors are computed from.
    """

    n: int
    w: int
    mode: RoutingMode
    convention: Convention
    n_seeds: int
    layers: np.ndarray
    mean: np.ndarray
    lo: np.ndarray
    median: np.ndarray
    hi: np.ndarray
    seed_mean: np.ndarray

    def mean_stderr(self) -> np.ndarray:
        """Standard error of the per-layer mean across seeds (0 for 1 seed)."""
        if self.n_seeds < 2:
            return np.zeros_like(self.mean)
        return self.seed_mean.std(axis=0, ddof=1) / math.sqrt(self.n_seeds)


def _pack_identity(n: int) -> np.ndarray:
    nbytes = (n + 7) // 8
    r = np.zeros((n, nbytes), dtype=np.uint8)
    rows = np.arange(n)
    r[rows, rows >> 3] |= (np.uint8(1) << (rows & 7).astype(np.uint8))
    return r


def _popcount_rows(packed: np.ndarray) -> np.ndarray:
    return _POPCOUNT[packed].sum(axis=1, dtype=np.int64)


def _window_or_circular(s: np.ndarray, back: int, fwd: int) -> np.ndarray:
    """Row p of the result is the OR of rows (p-back .. p+fwd) mod n."""
    width = back + fwd + 1
    t = np.roll(s, back, axis=0) if back else s.copy()
    covered = 1
    while covered < width:
        step = min(covered, width - covered)
        t |= np.roll(t, -step, axis=0)
        covered += step
    return t


def _window_or_backward(s: np.ndarray, w: int) -> np.ndarray:
    """Row p of the result is the OR of rows max(0, p-w+1) .. p (no wrap)."""
    t = s.copy()
    covered = 1
    while covered < w:
        step = min(covered, w - covered)
        shifted = np.zeros_like(t)
        shifted[step:] = t[:-step]
        t |= shifted
        covered += step
    return t


def _propagate_circular(reached: np.ndarray, back: int, fwd: int,
                        perm: Permutation | None) -> np.ndarray:
    if perm is None:
        return _window_or_circular(reached, back, fwd)
    s = reached[perm.inverse]
    w_or = _window_or_circular(s, back, fwd)
    return w_or[perm.forward]


def _simulate_seed_circular(n: int, w: int, layers: int, mode: RoutingMode,
                            rng: SeededRng) -> np.ndarray:
    back, fwd = WindowSpec(w, Convention.SYMMETRIC_CIRCULAR).offsets()
    reached = _pack_identity(n)
    counts = np.empty((layers + 1, n), dtype=np.int64)
    counts[0] = 1
    for ell in range(1, layers + 1):
        perm = None
        if mode in (RoutingMode.SA, RoutingMode.FUSED):
            perm = sample_permutation(n, rng)
        if mode is RoutingMode.SWA:
            reached = _propagate_circular(reached, back, fwd, None)
        elif mode is RoutingMode.SA:
            reached = _propagate_circular(reached, back, fwd, perm)
        else:
            reached = (_propagate_circular(reached, back, fwd, None)
                       | _propagate_circular(reached, back, fwd, perm))
        counts[ell] = _popcount_rows(reached)
    return counts


def _layer_mask_dense(n: int, w: int, mode: RoutingMode, convention: Convention,
                      rng: SeededRng) -> np.ndarray:
    spec = WindowSpec(w, convention)
    window = build_window_mask(n, spec)
    if mode is RoutingMode.SWA:
        return window
    perm = sample_permutation(n, rng)
    stoch = build_stochastic_mask(n, spec, perm)
    if convention is Convention.CAUSAL_ONE_SIDED:
        stoch = intersect_causal(stoch)
    if mode is RoutingMode.SA:
        return stoch
    return window | stoch


def _simulate_seed_dense(n: int, w: int, layers: int, mode: RoutingMode,
                         convention: Convention, rng: SeededRng) -> np.ndarray:
    reached = np.eye(n, dtype=bool)
    counts = np.empty((layers + 1, n), dtype=np.int64)
    counts[0] = 1
    for ell in range(1, layers + 1):
        mask = _layer_mask_dense(n, w, mode, convention, rng)
        reached = (mask.astype(np.float64) @ reached.astype(np.float64)) > 0.0
        counts[ell] = reached.sum(axis=1)
    return counts


def simulate_reachability(
    n: int,
    w: int,
    layers: int,
    mode: RoutingMode,
    convention: Convention = Convention.SYMMETRIC_CIRCULAR,
    rng: SeededRng | None = None,
    n_seeds=1,
) -> CoverageCurve:
    """Propagate exact per-source reachability through ``layers`` attention
    layers and report coverage fractions.

    SA and FUSED draw a fresh permutation per layer; FUSED propagates over
    the union of the local window and the permuted window. ``n_seeds`` is
    either a count (seed indices 0..N-1) or an explicit sequence of seed
    indices; each index s runs on the independent stream child(s, 0) of
    ``rng``. SWA is deterministic, so a single simulation is shared across
    seeds.
    """
    if layers < 0:
        raise ValueError("layers must be >= 0")
    if not 1 <= w <= n:
        raise ValueError(f"window size must satisfy 1 <= w <= n, got w={w}, n={n}")
    if rng is None:
        rng = SeededRng(0)
    seed_indices = list(range(n_seeds)) if isinstance(n_seeds, int) else [int(s) for s in n_seeds]
    if not seed_indices:
        raise ValueError("need at least one seed")
    effective = seed_indices[:1] if mode is RoutingMode.SWA else seed_indices
    per_seed = []
    for s in effective:
        seed_rng = rng.child(s, 0)
        if convention is Convention.SYMMETRIC_CIRCULAR:
            counts = _simulate_seed_circular(n, w, layers, mode, seed_rng)
        else:
            counts = _simulate_seed_dense(n, w, layers, mode, convention, seed_rng)
        per_seed.append(counts)
    all_counts = np.stack(per_seed)                       # (seeds, L+1, n)
    if mode is RoutingMode.SWA and len(seed_indices) > 1:
        all_counts = np.repeat(all_counts, len(seed_indices), axis=0)
    frac = all_counts / float(n)
    pooled = frac.transpose(1, 0, 2).reshape(layers + 1, -1)
    return CoverageCurve(
        n=n, w=w, mode=mode, convention=convention, n_seeds=len(seed_indices),
        layers=np.arange(layers + 1),
        mean=pooled.mean(axis=1),
        lo=pooled.min(axis=1),
        median=np.median(pooled, axis=1),
        hi=pooled.max(axis=1),
        seed_mean=frac.mean(axis=2),
    )


def layers_to_coverage(curve: CoverageCurve, threshold: float) -> int | None:
    """First layer whose mean coverage reaches ``threshold``; None if never."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    hit = np.nonzero(curve.mean >= threshold)[0]
    return int(hit[0]) if hit.size else None


def per_seed_layers_to_coverage(curve: CoverageCurve, threshold: float) -> np.ndarray:
    """Per-seed first layer reaching ``threshold`` mean coverage (inf if never)."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    out = np.full(curve.n_seeds, np.inf)
    for s in range(curve.n_seeds):
        hit = np.nonzero(curve.seed_mean[s] >= threshold)[0]
        if hit.size:
            out[s] = hit[0]
    return out


def expansion_lower_bound(r: int, n: int, w: int) -> float:
    """Expected reachable-set size after one more stochastic layer, given the
    current set has size r: at least r + (n-r) * (1 - (1-(w-1)/(n-1))^r)."""
    if not 1 <= r <= n:
        raise ValueError(f"r must satisfy 1 <= r <= n, got r={r}, n={n}")
    p = (w - 1) / (n - 1)
    return r + (n - r) * (1.0 - (1.0 - p) ** r)


# ---------------------------------------------------------------------------
# Connection probability
# ---------------------------------------------------------------------------


def connection_probability_analytic(n: int, w: int, causal: bool = False) -> float:
    """(w-1)/(n-1) for a fixed token pair; halved when the mask is also
    filtered to causally accessible tokens."""
    p = (w - 1) / (n - 1)
    return p / 2.0 if causal else p


def _circular_hit(a: int, b: int, n: int, back: int, fwd: int) -> bool:
    off = (b - a) % n
    return off <= fwd or off >= n - back


def connection_probability_mc(
    n: int, w: int, trials: int, causal: bool = False, rng: SeededRng | None = None,
) -> tuple[float, float]:
    """Monte-Carlo estimate of the stochastic-window connection probability.

    Non-causal: the indicator that a fixed pair shares a window, averaged
    over fresh permutations. Causal: the mean off-diagonal density of the
    causally intersected stochastic mask. Returns (estimate, stderr).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if rng is None:
        rng = SeededRng(0)
    back, fwd = WindowSpec(w, Convention.SYMMETRIC_CIRCULAR).offsets()
    if not causal:
        hits = 0
        for _ in range(trials):
            p = rng.permutation(n)
            hits += _circular_hit(int(p[0]), int(p[1]), n, back, fwd)
        est = hits / trials
        stderr = math.sqrt(est * (1.0 - est) / trials)
        return est, stderr
    spec = WindowSpec(w, Convention.SYMMETRIC_CIRCULAR)
    densities = np.empty(trials)
    off_cells = n * (n - 1)
    for t in range(trials):
        perm = sample_permutation(n, rng)
        m = intersect_causal(build_stochastic_mask(n, spec, perm))
        densities[t] = (int(m.sum()) - n) / off_cells
    est = float(densities.mean())
    stderr = float(densities.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return est, stderr


def connection_probability_exhaustive(n: int, w: int) -> float:
    """Exact connection probability by enumerating the whole symmetric group
    (n <= 8)."""
    if n > 8:
        raise ValueError("exhaustive enumeration is capped at n <= 8")
    back, fwd = WindowSpec(w, Convention.SYMMETRIC_CIRCULAR).offsets()
    hits = 0
    total = 0
    for p in itertools.permutations(range(n)):
        hits += _circular_hit(p[0], p[1], n, back, fwd)
        total += 1
    return hits / total


# ---------------------------------------------------------------------------
# Small-world metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphMetrics:
    n: int
    mean_degree: float
    clustering: float
    path_length: float
    clustering_rand: float
    path_length_rand: float
    small_worldness: float


class DisconnectedGraphError(ValueError):
    def __init__(self, node: int):
        self.node = node
        super().__init__(f"graph is disconnected; node {node} is not reachable from node 0")


def _clean_adjacency(adjacency: np.ndarray) -> np.ndarray:
    adj = np.asarray(adjacency, dtype=bool).copy()
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValueError("adjacency must be square")
    if not np.array_equal(adj, adj.T):
        raise ValueError("adjacency must be symmetric; symmetrize directed masks first")
    np.fill_diagonal(adj, False)
    return adj


def _check_connected(adj: np.ndarray) -> None:
    n_comp, labels = connected_components(csr_matrix(adj), directed=False)
    if n_comp > 1:
        stranded = int(np.nonzero(labels != labels[0])[0][0])
        raise DisconnectedGraphError(stranded)


def graph_clustering(adjacency: np.ndarray) -> float:
    """Global clustering coefficient: closed wedges over all wedges,
    via trace(A^3) / sum_i deg_i (deg_i - 1)."""
    adj = _clean_adjacency(adjacency)
    a = adj.astype(np.float64)
    closed = float(((a @ a) * a).sum())          # = trace(A^3)
    deg = a.sum(axis=1)
    wedges2 = float((deg * (deg - 1.0)).sum())
    return closed / wedges2 if wedges2 > 0 else 0.0


def graph_path_length(adjacency: np.ndarray) -> float:
    """Average shortest-path length over all ordered pairs (BFS, unweighted)."""
    adj = _clean_adjacency(adjacency)
    _check_connected(adj)
    dist = shortest_path(csr_matrix(adj), method="D", unweighted=True, directed=False)
    n = adj.shape[0]
    return float(dist.sum()) / (n * (n - 1))


def _random_graph_same_edges(n: int, n_edges: int, rng: SeededRng) -> np.ndarray:
    iu, ju = np.triu_indices(n, 1)
    sel = rng.choice(iu.size, size=n_edges, replace=False)
    adj = np.zeros((n, n), dtype=bool)
    adj[iu[sel], ju[sel]] = True
    return adj | adj.T


def smallworld_metrics(adjacency: np.ndarray, rng: SeededRng | None = None,
                       baselines: int = 10) -> GraphMetrics:
    """Clustering, mean path length, and the small-worldness ratio
    (C/C_rand)/(L/L_rand) against edge-count-matched uniform random graphs.

    C_rand is the analytic density mean_degree/(n-1); L_rand is averaged
    over ``baselines`` sampled random graphs (disconnected samples are
    redrawn, up to a bounded number of retries).
    """
    if rng is None:
        rng = SeededRng(0)
    adj = _clean_adjacency(adjacency)
    _check_connected(adj)
    n = adj.shape[0]
    n_edges = int(adj.sum()) // 2
    mean_degree = 2.0 * n_edges / n

    clustering = graph_clustering(adj)
    path_length = graph_path_length(adj)

    lengths = []
    attempts = 0
    while len(lengths) < baselines:
        if attempts > 20 * baselines:
            raise RuntimeError("could not sample enough connected random baselines")
        attempts += 1
        cand = _random_graph_same_edges(n, n_edges, rng)
        try:
            lengths.append(graph_path_length(cand))
        except DisconnectedGraphError:
            continue
    path_length_rand = float(np.mean(lengths))
    clustering_rand = mean_degree / (n - 1)
    sigma = (clustering / clustering_rand) / (path_length / path_length_rand)
    return GraphMetrics(
        n=n, mean_degree=mean_degree, clustering=clustering, path_length=path_length,
        clustering_rand=clustering_rand, path_length_rand=path_length_rand,
        small_worldness=sigma,
    )


def ring_lattice_clustering(k: int) -> float:
    """Closed-form clustering of a ring lattice with k neighbors per side:
    3(k-1) / (2(2k-1))."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return 3.0 * (k - 1) / (2.0 * (2 * k - 1))


# ---------------------------------------------------------------------------
# Spectral mixing
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectrumReport:
    n: int
    w: int
    eigenvalues: np.ndarray
    lambda2: float


def _sorted_desc(eigs: np.ndarray) -> np.ndarray:
    order = np.lexsort((eigs.imag, eigs.real))[::-1]
    return eigs[order]


def eigenvalue_multiset_distance(a, b) -> float:
    """Largest matched distance between two eigenvalue multisets under the
    optimal pairing.

    Lexicographic sorting of complex spectra is unstable when conjugate
    pairs share real parts to rounding error, so multiset equality is
    checked through a minimum-cost assignment instead.
    """
    a = np.asarray(a, dtype=np.complex128).ravel()
    b = np.asarray(b, dtype=np.complex128).ravel()
    if a.shape != b.shape:
        raise ValueError(f"multisets differ in size: {a.shape} vs {b.shape}")
    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def _second_modulus(eigs: np.ndarray) -> float:
    mods = np.sort(np.abs(eigs))[::-1]
    return float(mods[1])


def circulant_spectrum(n: int, w: int) -> SpectrumReport:
    """Eigenvalues of the uniform-attention circular-window transition matrix
    via the circulant DFT formula: lambda_j = (1/w) sum_delta exp(-2*pi*i*j*delta/n)."""
    back, fwd = WindowSpec(w, Convention.SYMMETRIC_CIRCULAR).offsets()
    deltas = np.arange(-back, fwd + 1)
    j = np.arange(n)
    phases = np.exp(-2j * np.pi * np.outer(j, deltas) / n)
    eigs = phases.sum(axis=1) / w
    return SpectrumReport(n=n, w=w, eigenvalues=_sorted_desc(eigs),
                          lambda2=_second_modulus(eigs))


def transition_matrix(mask: np.ndarray) -> np.ndarray:
    """Uniform-attention random-walk matrix: each row of the mask normalized
    by its degree."""
    m = np.asarray(mask, dtype=np.float64)
    deg = m.sum(axis=1, keepdims=True)
    if (deg == 0).any():
        raise ValueError("mask has an empty row; transition matrix undefined")
    return m / deg


def permuted_transition_matrix(n: int, w: int, p: Permutation) -> np.ndarray:
    """Transition matrix of one stochastic layer: the circulant walk
    conjugated by the permutation."""
    spec = WindowSpec(w, Convention.SYMMETRIC_CIRCULAR)
    return transition_matrix(build_stochastic_mask(n, spec, p))


@dataclass(frozen=True)
class MixingReport:
    n: int
    w: int
    depth: int
    n_seeds: int
    product_lambda2: np.ndarray
    median_product_lambda2: float
    circulant_lambda2: float
    circulant_lambda2_pow_depth: float


def multilayer_mixing(n: int, w: int, depth: int, n_seeds: int,
                      rng: SeededRng | None = None) -> MixingReport:
    """Second-eigenvalue modulus of depth-layer products of independent
    stochastic-layer walks, against the depth-th power of the single-layer
    circulant value.

    A single layer is a similarity transform of the circulant walk and mixes
    no faster; products over independent permutations are not similar to the
    circulant power, and their |lambda_2| is what this measures.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if rng is None:
        rng = SeededRng(0)
    circ = circulant_spectrum(n, w)
    lam2 = np.empty(n_seeds)
    for s in range(n_seeds):
        seed_rng = rng.child(s, 0)
        prod = np.eye(n)
        for _ in range(depth):
            perm = sample_permutation(n, seed_rng)
            prod = permuted_transition_matrix(n, w, perm) @ prod
        lam2[s] = _second_modulus(np.linalg.eigvals(prod))
    return MixingReport(
        n=n, w=w, depth=depth, n_seeds=n_seeds,
        product_lambda2=lam2,
        median_product_lambda2=float(np.median(lam2)),
        circulant_lambda2=circ.lambda2,
        circulant_lambda2_pow_depth=circ.lambda2 ** depth,
    )


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

SOFTMAX_FLOPS_PER_CELL = 5  # shift, exp, sum-accumulate, divide, mask test


@dataclass(frozen=True)
class CostReport:
    """Analytic per-layer FLOP counts at one (n, w, d) point.

    Attention over C score cells costs 4*C*d + 5*C (2*C*d for scores,
    2*C*d for the value combination, 5 per cell for the masked softmax);
    full attention has C = n^2, windowed and stochastic attention C = n*w
    (index permutation is free), and the fused dual path pays both windowed
    paths plus 4*n*d^2 + 5*n*d for the two sigmoid gates and the combine.
    """

    n: int
    w: int
    d: int
    flops: dict = field(default_factory=dict)
    attention_flops: dict = field(default_factory=dict)
    gate_flops: float = 0.0


def cost_model(n: int, w: int, d: int) -> CostReport:
    if n < 1 or w < 1 or d < 1:
        raise ValueError("n, w, d must all be positive")
    def attn(cells: float) -> float:
        return 4.0 * cells * d + SOFTMAX_FLOPS_PER_CELL * cells
    full_att = attn(float(n) * n)
    win_att = attn(float(n) * w)
    gate = 4.0 * n * d * d + 5.0 * n * d
    return CostReport(
        n=n, w=w, d=d,
        flops={"full": full_att, "swa": win_att, "sa": win_att,
               "fused": 2.0 * win_att + gate},
        attention_flops={"full": full_att, "swa": win_att, "sa": win_att,
                         "fused": 2.0 * win_att},
        gate_flops=gate,
    )


def connectome_depth_prediction(n: int, k: int) -> int:
    """Smallest depth l with k^l >= n, i.e. ceil(log_k n), in exact integer
    arithmetic."""
    if k < 2:
        raise ValueError("mean degree k must be >= 2")
    if n < 1:
        raise ValueError("n must be >= 1")
    depth = 0
    reach = 1
    while reach < n:
        reach *= k
        depth += 1
    return depth
