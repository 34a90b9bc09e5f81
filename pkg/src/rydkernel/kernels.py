"""Quantum-feature graph kernels built from evolution records.

* QEK: ``exp(-mu0 * JS(P, P'))`` on excitation-number distributions.
* GDQC: normalised histogram over (graph distance, binned correlation
  ``C_ij``) of all unordered node pairs ``i <= j``; the kernel is a dot
  product of histograms.
* Pooling of per-time Gram matrices by convex sums or Hadamard products.
* Generalised-distance WL refinement seeded with correlation-row colours,
  used as an expressiveness oracle.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .graph_core import AttributedGraph, shortest_path_distances
from .propagator import EvolutionRecord

CORRELATION_SLACK = 1e-9
DEFAULT_RANK_TOL = 1e-8


# --------------------------------------------------------------------------
# QEK


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence in nats, after zero-padding to equal length."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("distributions must be non-negative")
    size = max(len(p), len(q))
    p = np.pad(p, (0, size - len(p))) / p.sum()
    q = np.pad(q, (0, size - len(q))) / q.sum()
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        return float(np.sum(a[nz] * np.log(a[nz] / m[nz])))

    js = 0.5 * kl(p) + 0.5 * kl(q)
    return min(max(js, 0.0), math.log(2))


def qek_kernel(p_a, p_b, mu0: float = 2.0) -> float:
    return math.exp(-mu0 * js_divergence(p_a, p_b))


# --------------------------------------------------------------------------
# GDQC


@dataclass(frozen=True)
class GdqcFeatureVector:
    """Sparse pair-count histogram.

    ``indices`` are flat bin ids ``n_bins_c * distance_bin + correlation_bin``
    (sorted, unique) with integer ``counts``.
    """

    indices: np.ndarray
    counts: np.ndarray
    n_bins_c: int
    n_bins_d: int

    @property
    def size(self) -> int:
        return self.n_bins_c * self.n_bins_d

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.sum(self.counts.astype(float) ** 2)))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def dense(self, normalized: bool = True) -> np.ndarray:
        out = np.zeros(self.size)
        out[self.indices] = self.counts
        return out / self.norm if normalized else out

    def same_counts(self, other: "GdqcFeatureVector") -> bool:
        return (
            self.binning == other.binning
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.counts, other.counts)
        )

    @property
    def binning(self) -> tuple:
        return (self.n_bins_c, self.n_bins_d)

    def to_dict(self) -> dict:
        return {
            "n_bins_c": self.n_bins_c,
            "n_bins_d": self.n_bins_d,
            "indices": self.indices.tolist(),
            "counts": self.counts.tolist(),
        }


def correlation_bins(c: np.ndarray, n_bins_c: int) -> np.ndarray:
    """Half-open bins ``[p/n, (p+1)/n)``; the value 1.0 joins the last bin."""
    c = np.asarray(c, dtype=float)
    if np.any(c < -CORRELATION_SLACK) or np.any(c > 1 + CORRELATION_SLACK):
        raise ValueError("correlations must lie in [0, 1]")
    c = np.clip(c, 0.0, 1.0)
    return np.minimum(np.floor(c * n_bins_c).astype(np.int64), n_bins_c - 1)


def gdqc_features(
    c: np.ndarray,
    d: np.ndarray,
    n_bins_c: int,
    d_max: int,
    n_bins_d: int | None = None,
) -> GdqcFeatureVector:
    """Histogram of unordered pairs (diagonal included) by distance and correlation.

    By default there is one distance bin per integer distance
    (``d_max + 1`` bins). An explicit ``n_bins_d`` switches to uniform bins of
    width ``d_max / n_bins_d``.
    """
    c = np.asarray(c, dtype=float)
    d = np.asarray(d)
    n = len(c)
    if c.shape != (n, n) or d.shape != (n, n):
        raise ValueError("correlation and distance matrices must be square and match")
    local_max = int(d.max())
    if d_max < local_max:
        raise ValueError(f"d_max={d_max} is below this graph's max distance {local_max}; bin on the whole dataset")
    iu = np.triu_indices(n)
    pbin = correlation_bins(c[iu], n_bins_c)
    if n_bins_d is None:
        n_bins_d = d_max + 1
        lbin = d[iu].astype(np.int64)
    else:
        width = d_max / n_bins_d if d_max > 0 else 1.0
        lbin = np.minimum(np.floor(d[iu] / width).astype(np.int64), n_bins_d - 1)
    flat = n_bins_c * lbin + pbin
    idx, counts = np.unique(flat, return_counts=True)
    return GdqcFeatureVector(idx, counts.astype(np.int64), int(n_bins_c), int(n_bins_d))


def gdqc_kernel(f_a: GdqcFeatureVector, f_b: GdqcFeatureVector) -> float:
    if f_a.binning != f_b.binning:
        raise ValueError(f"binning mismatch: {f_a.binning} vs {f_b.binning}")
    _, ia, ib = np.intersect1d(f_a.indices, f_b.indices, assume_unique=True, return_indices=True)
    dot = float(np.dot(f_a.counts[ia].astype(float), f_b.counts[ib].astype(float)))
    return dot / (f_a.norm * f_b.norm)


def resolving_bin_count(values, decimals: int = 9) -> int:
    """Smallest bin count whose bin width is below every gap between distinct values.

    Values are compared after rounding to ``decimals``; with this many bins no
    two distinct values share a correlation bin.
    """
    v = np.unique(np.round(np.asarray(values, dtype=float).ravel(), decimals))
    if len(v) < 2:
        return 1
    gap = float(np.diff(v).min())
    return int(math.floor(1.0 / gap)) + 1


# --------------------------------------------------------------------------
# Gram matrices


@dataclass(frozen=True)
class KernelSpec:
    kind: str  # "qek" | "gdqc"
    mu0: float = 2.0
    n_bins_c: int = 10
    n_bins_d: int | None = None
    d_max: int | None = None

    def __post_init__(self):
        if self.kind not in ("qek", "gdqc"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")

    def describe(self) -> dict:
        if self.kind == "qek":
            return {"kind": "qek", "mu0": self.mu0, "js_log_base": "e"}
        return {"kind": "gdqc", "n_bins_c": self.n_bins_c, "n_bins_d": self.n_bins_d, "d_max": self.d_max}

    @property
    def label(self) -> str:
        return "qek" if self.kind == "qek" else f"gdqc{self.n_bins_c}"


@dataclass
class GramMatrix:
    matrix: np.ndarray
    graph_ids: list
    descriptor: dict = field(default_factory=dict)
    rank_tol: float = DEFAULT_RANK_TOL
    min_eigenvalue: float = field(init=False)
    rank: int = field(init=False)

    def __post_init__(self):
        K = np.asarray(self.matrix, dtype=float)
        if K.shape != (len(self.graph_ids), len(self.graph_ids)):
            raise ValueError("Gram matrix shape does not match graph ids")
        # Exact symmetry; entries are computed once per unordered pair.
        K = 0.5 * (K + K.T)
        self.matrix = K
        eig = np.linalg.eigvalsh(K)
        self.min_eigenvalue = float(eig[0])
        self.rank = numerical_rank(eig, self.rank_tol)

    @property
    def relative_rank(self) -> float:
        return self.rank / len(self.graph_ids)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "kernel_descriptor": self.descriptor,
            "graph_ids": list(self.graph_ids),
            "matrix": self.matrix.ravel().tolist(),
            "min_eigenvalue": self.min_eigenvalue,
            "rank": self.rank,
            "rank_tol": self.rank_tol,
        }

    @classmethod
    def from_dict(cls, d) -> "GramMatrix":
        n = len(d["graph_ids"])
        return cls(np.array(d["matrix"], dtype=float).reshape(n, n), list(d["graph_ids"]), d["kernel_descriptor"], d["rank_tol"])

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "GramMatrix":
        return cls.from_dict(json.loads(Path(path).read_text()))


def numerical_rank(eigenvalues, rank_tol: float = DEFAULT_RANK_TOL) -> int:
    eig = np.asarray(eigenvalues)
    top = eig.max()
    if top <= 0:
        return 0
    return int(np.sum(eig > rank_tol * top))


def record_features(
    records: Sequence[EvolutionRecord],
    kernel: KernelSpec,
    t: float,
    distances: Mapping[str, np.ndarray] | None = None,
):
    """Per-record feature objects at time ``t`` (distributions or GDQC vectors)."""
    if kernel.kind == "qek":
        feats = []
        for r in records:
            try:
                feats.append(r.at(t).p_k)
            except KeyError as exc:
                raise KeyError(f"record {r.graph_id!r} lacks time {t}") from exc
        return feats
    if distances is None:
        raise ValueError("GDQC needs distance matrices for every graph")
    missing = [r.graph_id for r in records if r.graph_id not in distances]
    if missing:
        raise KeyError(f"no distance matrix for records {missing}")
    d_max = kernel.d_max
    if d_max is None:
        d_max = int(max(distances[r.graph_id].max() for r in records))
    return [gdqc_features(r.at(t).c_ij, distances[r.graph_id], kernel.n_bins_c, d_max, kernel.n_bins_d) for r in records]


def _gdqc_gram(feats: Sequence[GdqcFeatureVector]) -> np.ndarray:
    size = feats[0].size
    rows, cols, vals = [], [], []
    for k, f in enumerate(feats):
        if f.binning != feats[0].binning:
            raise ValueError("binning mismatch inside dataset")
        rows.append(np.full(len(f.indices), k))
        cols.append(f.indices)
        vals.append(f.counts / f.norm)
    X = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(feats), size))
    return (X @ X.T).toarray()


def assemble_gram(
    records: Sequence[EvolutionRecord],
    kernel: KernelSpec,
    t: float,
    distances: Mapping[str, np.ndarray] | None = None,
    rank_tol: float = DEFAULT_RANK_TOL,
) -> GramMatrix:
    feats = record_features(records, kernel, t, distances)
    n = len(records)
    if kernel.kind == "qek":
        K = np.eye(n)
        for a in range(n):
            for b in range(a + 1, n):
                K[a, b] = K[b, a] = qek_kernel(feats[a], feats[b], kernel.mu0)
    else:
        K = _gdqc_gram(feats)
    modes = sorted({r.mode for r in records})
    desc = dict(kernel.describe(), time_us=float(t), mode=modes[0] if len(modes) == 1 else modes)
    return GramMatrix(K, [r.graph_id for r in records], desc, rank_tol)


def graph_distances(graphs: Sequence[AttributedGraph]) -> dict[str, np.ndarray]:
    return {g.id: shortest_path_distances(g) for g in graphs}


# --------------------------------------------------------------------------
# Pooling


def _check_same_index(grams: Sequence[GramMatrix]):
    if not grams:
        raise ValueError("nothing to pool")
    ids = list(grams[0].graph_ids)
    for g in grams[1:]:
        if list(g.graph_ids) != ids:
            raise ValueError("Gram matrices index different graph sets")
    return ids


def pool_sum(grams: Sequence[GramMatrix], weights: Sequence[float] | None = None) -> GramMatrix:
    ids = _check_same_index(grams)
    if weights is None:
        weights = np.full(len(grams), 1.0 / len(grams))
    w = np.asarray(weights, dtype=float)
    if len(w) != len(grams):
        raise ValueError("one weight per Gram matrix")
    if np.any(w < 0):
        raise ValueError("pooling weights must be non-negative")
    if abs(w.sum() - 1.0) > 1e-12:
        raise ValueError(f"pooling weights sum to {w.sum()}, not 1")
    K = sum(wi * g.matrix for wi, g in zip(w, grams))
    desc = {"pooling": "sum", "weights": w.tolist(), "members": [g.descriptor for g in grams]}
    return GramMatrix(K, ids, desc, grams[0].rank_tol)


def pool_product(grams: Sequence[GramMatrix]) -> GramMatrix:
    ids = _check_same_index(grams)
    K = np.ones_like(grams[0].matrix)
    for g in grams:
        K = K * g.matrix
    desc = {"pooling": "product", "members": [g.descriptor for g in grams]}
    return GramMatrix(K, ids, desc, grams[0].rank_tol)


def extend_pool_weights(weights_a: Sequence[float], n_b: int, extra: Sequence[float] | None = None) -> np.ndarray:
    """Weights for a superset pool keeping the subset's share at ``n_A / n_B``.

    ``alpha'_i = alpha_i n_A / n_B`` for the original members; the remaining
    ``1 - n_A / n_B`` is spread over the new members (uniformly, or in
    proportion to ``extra``).
    """
    wa = np.asarray(weights_a, dtype=float)
    n_a = len(wa)
    if n_b < n_a:
        raise ValueError("superset must be at least as large as the subset")
    n_new = n_b - n_a
    head = wa * n_a / n_b
    if n_new == 0:
        return head
    share = np.full(n_new, 1.0) if extra is None else np.asarray(extra, dtype=float)
    tail = share / share.sum() * (1 - n_a / n_b)
    return np.concatenate([head, tail])


# --------------------------------------------------------------------------
# GD-WL colour refinement


@dataclass(frozen=True)
class ColorAssignment:
    colors: tuple
    rounds: int
    stable: bool

    def histogram(self) -> Counter:
        return Counter(self.colors)


class ColorPalette:
    """Injective signature -> id map, shared by every graph that uses it.

    Sharing one palette makes colour ids comparable across graphs.
    """

    def __init__(self):
        self._ids: dict = {}

    def __call__(self, signature) -> int:
        cid = self._ids.get(signature)
        if cid is None:
            cid = self._ids[signature] = len(self._ids)
        return cid


def _canonical_ids(signatures) -> tuple:
    """Dense ids ordered by sorted signature (independent of node order)."""
    lookup = {s: k for k, s in enumerate(sorted(set(signatures)))}
    return tuple(lookup[s] for s in signatures)


def correlation_seed_colors(c: np.ndarray, n_bins_c: int, palette: ColorPalette | None = None) -> tuple:
    """Colour each node by the multiset of its binned correlation row."""
    bins = correlation_bins(np.asarray(c), n_bins_c)
    sigs = [("seed",) + tuple(sorted(row.tolist())) for row in bins]
    if palette is None:
        return _canonical_ids(sigs)
    return tuple(palette(s) for s in sigs)


def _gdwl_round(d: np.ndarray, colors: Sequence[int]):
    n = len(colors)
    return [tuple(sorted((int(d[j, i]), colors[i]) for i in range(n))) for j in range(n)]


def gdwl_refine(d: np.ndarray, initial_colors: Sequence[int], max_rounds: int | None = None) -> ColorAssignment:
    """Refine until the colour partition stops splitting.

    Node ``j`` is recoloured by the multiset ``{(D[j, i], colour(i))}`` over
    all ``i`` (itself included at distance 0), so partitions only refine.
    """
    d = np.asarray(d)
    n = len(initial_colors)
    if d.shape != (n, n):
        raise ValueError("colours must match the distance matrix size")
    if max_rounds is None:
        max_rounds = n
    colors = tuple(int(c) for c in initial_colors)
    n_classes = len(set(colors))
    for r in range(max_rounds):
        new = _canonical_ids(_gdwl_round(d, colors))
        if len(set(new)) == n_classes:
            return ColorAssignment(colors, r, True)
        colors, n_classes = new, len(set(new))
    stable = len(set(_canonical_ids(_gdwl_round(d, colors)))) == n_classes
    return ColorAssignment(colors, max_rounds, stable)


def gdwl_color_histogram(d: np.ndarray, seed_colors: Sequence, rounds: int, palette: ColorPalette) -> Counter:
    """Colour histogram after a fixed number of rounds, ids from ``palette``.

    Histograms built with the same palette and round count are directly
    comparable; with ``rounds >= n1 + n2`` comparing two of them is
    equivalent to refining the disjoint union of the graphs to stability.
    """
    colors = tuple(seed_colors)
    for _ in range(rounds):
        colors = tuple(palette(s) for s in _gdwl_round(np.asarray(d), colors))
    return Counter(colors)


def gdwl_histogram(d: np.ndarray, c: np.ndarray, n_bins_c: int, rounds: int, palette: ColorPalette) -> Counter:
    """:func:`gdwl_color_histogram` seeded with correlation-row colours."""
    return gdwl_color_histogram(d, correlation_seed_colors(c, n_bins_c, palette), rounds, palette)


def gdwl_distinguishes(g1, c1, g2, c2, n_bins_c: int) -> bool:
    """GD-WL test with correlation-seeded colours.

    ``g1``/``g2`` are graphs or distance matrices.
    """
    d1 = shortest_path_distances(g1) if isinstance(g1, AttributedGraph) else np.asarray(g1)
    d2 = shortest_path_distances(g2) if isinstance(g2, AttributedGraph) else np.asarray(g2)
    if len(d1) != len(d2):
        return True
    palette = ColorPalette()
    rounds = len(d1) + len(d2)
    return gdwl_histogram(d1, c1, n_bins_c, rounds, palette) != gdwl_histogram(d2, c2, n_bins_c, rounds, palette)
