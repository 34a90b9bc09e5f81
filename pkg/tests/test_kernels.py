import itertools
import math
from collections import Counter

import networkx as nx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.distance import jensenshannon

from rydkernel.corpora import WORKED_EXAMPLE_CORRELATIONS, WORKED_EXAMPLE_COUNTS, connected_graphs, oxetanone
from rydkernel.graph_core import AttributedGraph, apply_permutation, shortest_path_distances
from rydkernel.kernels import (
    ColorPalette,
    GramMatrix,
    KernelSpec,
    assemble_gram,
    correlation_bins,
    correlation_seed_colors,
    extend_pool_weights,
    gdqc_features,
    gdqc_kernel,
    gdwl_color_histogram,
    gdwl_distinguishes,
    gdwl_refine,
    graph_distances,
    js_divergence,
    pool_product,
    pool_sum,
    qek_kernel,
    resolving_bin_count,
)
from rydkernel.propagator import EvolutionRecord

distributions = st.lists(st.floats(0, 1, allow_subnormal=False), min_size=1, max_size=8).filter(lambda v: sum(v) > 1e-3)


def record(gid, c, p_k=None, t=1.0):
    n = len(c)
    p_k = np.full(n + 1, 1 / (n + 1)) if p_k is None else np.asarray(p_k)
    return EvolutionRecord(gid, "global", np.array([t]), p_k[None], np.diag(c)[None], np.asarray(c)[None])


def random_correlations(n, rng):
    """Symmetric matrix with entries in [0, 1] and C_ij <= min(n_i, n_j)."""
    occ = rng.random(n)
    c = rng.random((n, n)) * np.minimum.outer(occ, occ)
    c = np.triu(c, 1) + np.triu(c, 1).T
    np.fill_diagonal(c, occ)
    return c


# --------------------------------------------------------------------------
# QEK


def test_js_reference_values():
    assert js_divergence([1, 0], [0, 1]) == pytest.approx(math.log(2))
    assert qek_kernel([1, 0], [0, 1]) == pytest.approx(0.25)
    # [DERIVED] scipy.spatial.distance.jensenshannon(...)**2 with natural log
    assert js_divergence([0.5, 0.5], [1, 0]) == pytest.approx(0.2157615543388357, abs=1e-12)
    assert qek_kernel([0.5, 0.5], [1, 0]) == pytest.approx(0.649519052838329, abs=1e-12)


def test_js_pads_to_common_length_and_rejects_negatives():
    assert js_divergence([0.2, 0.8], [0.2, 0.8, 0.0]) == 0.0
    with pytest.raises(ValueError):
        js_divergence([-0.1, 1.1], [0.5, 0.5])


@given(distributions, distributions)
def test_qek_properties(p, q):
    k = qek_kernel(p, q)
    assert k == pytest.approx(qek_kernel(q, p), abs=1e-15)
    assert math.exp(-2 * math.log(2)) - 1e-12 <= k <= 1.0
    assert qek_kernel(p, p) == pytest.approx(1.0, abs=1e-15)
    n = max(len(p), len(q))
    ref = jensenshannon(np.pad(p, (0, n - len(p))), np.pad(q, (0, n - len(q)))) ** 2
    assert js_divergence(p, q) == pytest.approx(ref, abs=1e-9)


# --------------------------------------------------------------------------
# GDQC


def brute_force_counts(c, d, n_bins_c, n_bins_d):
    """Straight transcription of the binning rule, pair by pair."""
    chi = [0] * (n_bins_c * n_bins_d)
    n = len(c)
    for i in range(n):
        for j in range(i, n):
            value = min(max(c[i][j], 0.0), 1.0)
            p = n_bins_c - 1 if value == 1.0 else int(value * n_bins_c)
            chi[n_bins_c * int(d[i][j]) + p] += 1
    return chi


def test_worked_example():
    g, _ = oxetanone()
    d = shortest_path_distances(g)
    f = gdqc_features(WORKED_EXAMPLE_CORRELATIONS, d, n_bins_c=5, d_max=3)
    assert tuple(f.dense(normalized=False).astype(int)) == WORKED_EXAMPLE_COUNTS
    assert f.norm**2 == 118
    assert np.allclose(f.dense(), np.array(WORKED_EXAMPLE_COUNTS) / math.sqrt(118), atol=1e-15)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1), st.integers(1, 20))
def test_gdqc_matches_brute_force(n, seed, n_bins):
    rng = np.random.default_rng(seed)
    h = nx.connected_watts_strogatz_graph(n, 2, 0.5, seed=seed % 1000) if n > 2 else nx.path_graph(n)
    g = AttributedGraph.from_edges(list(h.edges), ["C"] * n)
    d = shortest_path_distances(g)
    c = random_correlations(n, rng)
    c[0, 0] = 1.0  # the closed upper edge of the last bin
    f = gdqc_features(c, d, n_bins, int(d.max()) + 1)
    assert list(f.dense(False).astype(int)) == brute_force_counts(c, d, n_bins, int(d.max()) + 2)
    assert f.total == n * (n + 1) // 2


def test_single_node_and_bin_edges():
    f = gdqc_features(np.array([[0.3]]), np.zeros((1, 1), int), 4, 0)
    assert f.norm == 1 and list(f.indices) == [1]
    assert list(correlation_bins(np.array([0.0, 0.2, 0.999, 1.0, 1.0 + 5e-10]), 5)) == [0, 1, 4, 4, 4]
    with pytest.raises(ValueError):
        correlation_bins(np.array([1.1]), 5)


def test_gdqc_errors():
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    c = np.eye(3) * 0.5
    with pytest.raises(ValueError, match="d_max"):
        gdqc_features(c, d, 5, 1)
    a, b = gdqc_features(c, d, 5, 2), gdqc_features(c, d, 10, 2)
    with pytest.raises(ValueError, match="binning"):
        gdqc_kernel(a, b)
    assert gdqc_kernel(a, a) == pytest.approx(1.0)


def test_general_distance_binning():
    d = np.array([[0, 1, 2, 3], [1, 0, 1, 2], [2, 1, 0, 1], [3, 2, 1, 0]])
    f = gdqc_features(np.zeros((4, 4)), d, 1, 3, n_bins_d=2)
    # width 1.5: distances {0,1} -> bin 0, {2,3} -> bin 1
    assert list(f.dense(False)) == [7, 3]


def test_orthogonal_patterns():
    d = np.zeros((1, 1), int)
    a = gdqc_features(np.array([[0.05]]), d, 10, 0)
    b = gdqc_features(np.array([[0.95]]), d, 10, 0)
    assert gdqc_kernel(a, b) == 0


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_gdqc_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    h = nx.gnp_random_graph(n, 0.5, seed=int(rng.integers(1 << 30)))
    h.add_edges_from((i, i + 1) for i in range(n - 1))
    g = AttributedGraph.from_edges(list(h.edges), ["C"] * n)
    c = random_correlations(n, rng)
    p = rng.permutation(n)
    inv = np.argsort(p)
    cp = c[np.ix_(inv, inv)]
    f1 = gdqc_features(c, shortest_path_distances(g), 7, n)
    f2 = gdqc_features(cp, shortest_path_distances(apply_permutation(g, p)), 7, n)
    assert f1.same_counts(f2)


def test_resolving_bin_count_separates_values():
    values = np.array([0.1, 0.1004, 0.5, 0.73])
    nb = resolving_bin_count(values)
    assert len(set(correlation_bins(values, nb))) == 4
    assert resolving_bin_count([0.3, 0.3]) == 1


# --------------------------------------------------------------------------
# Gram matrices and pooling


def test_gram_of_identical_graphs():
    c = np.array([[0.4, 0.01], [0.01, 0.4]])
    recs = [record("a", c), record("b", c)]
    d = {"a": np.array([[0, 1], [1, 0]]), "b": np.array([[0, 1], [1, 0]])}
    for spec in (KernelSpec("qek"), KernelSpec("gdqc", n_bins_c=10)):
        gram = assemble_gram(recs, spec, 1.0, d)
        assert np.allclose(gram.matrix, 1.0) and gram.rank == 1


def test_gram_errors_name_the_record():
    recs = [record("a", np.eye(2) * 0.3), record("b", np.eye(2) * 0.3, t=0.5)]
    with pytest.raises(KeyError, match="'b'"):
        assemble_gram(recs, KernelSpec("qek"), 1.0)
    with pytest.raises(KeyError, match="distance"):
        assemble_gram(recs[:1], KernelSpec("gdqc"), 1.0, {})


@pytest.fixture(scope="module")
def random_grams():
    rng = np.random.default_rng(5)
    recs, dists = [], {}
    for k in range(20):
        n = int(rng.integers(2, 7))
        h = nx.random_labeled_tree(n, seed=int(rng.integers(1 << 30)))
        g = AttributedGraph.from_edges(list(h.edges), ["C"] * n, id=f"g{k}")
        p = rng.dirichlet(np.ones(n + 1))
        recs.append(record(g.id, random_correlations(n, rng), p))
        dists[g.id] = shortest_path_distances(g)
    return [assemble_gram(recs, KernelSpec("qek"), 1.0), assemble_gram(recs, KernelSpec("gdqc", n_bins_c=4), 1.0, dists)]


def test_grams_are_psd_with_unit_diagonal(random_grams):
    for g in random_grams:
        assert g.min_eigenvalue >= -1e-9
        assert np.allclose(np.diag(g.matrix), 1.0, atol=1e-9)
        assert np.array_equal(g.matrix, g.matrix.T)


def test_gram_file_roundtrip(tmp_path, random_grams):
    g = random_grams[1]
    g.write(tmp_path / "g.json")
    back = GramMatrix.read(tmp_path / "g.json")
    assert np.array_equal(back.matrix, g.matrix) and back.rank == g.rank and back.descriptor == g.descriptor


def test_pooling(random_grams):
    qek, gdqc = random_grams
    assert np.array_equal(pool_sum([qek], [1.0]).matrix, qek.matrix)
    assert np.allclose(pool_sum([qek, qek], [0.3, 0.7]).matrix, qek.matrix)
    pooled = pool_sum([qek, gdqc], [0.25, 0.75])
    assert pooled.min_eigenvalue >= min(qek.min_eigenvalue, gdqc.min_eigenvalue) - 1e-12
    ones = GramMatrix(np.ones_like(qek.matrix), qek.graph_ids)
    assert np.array_equal(pool_product([qek, ones]).matrix, qek.matrix)
    sq = pool_product([gdqc, gdqc])
    assert np.allclose(sq.matrix, gdqc.matrix**2) and sq.min_eigenvalue >= -1e-9
    assert np.allclose(np.diag(pool_product([qek, gdqc]).matrix), 1.0)


def test_pooling_errors(random_grams):
    qek, gdqc = random_grams
    with pytest.raises(ValueError, match="non-negative"):
        pool_sum([qek, gdqc], [1.5, -0.5])
    with pytest.raises(ValueError, match="sum"):
        pool_sum([qek, gdqc], [0.5, 0.6])
    other = GramMatrix(qek.matrix, list(reversed(qek.graph_ids)))
    with pytest.raises(ValueError, match="different graph"):
        pool_product([qek, other])


def test_proportional_weight_update():
    wa = np.array([0.2, 0.8])
    wb = extend_pool_weights(wa, 5)
    assert np.allclose(wb[:2], wa * 2 / 5) and wb.sum() == pytest.approx(1.0)
    assert np.allclose(wb[2:], 0.2)


def test_rank_grows_with_bins(random_grams):
    rng = np.random.default_rng(9)
    recs, dists = [], {}
    for k in range(15):
        n = int(rng.integers(3, 7))
        g = AttributedGraph.from_edges([(i, i + 1) for i in range(n - 1)], ["C"] * n, id=f"p{k}")
        recs.append(record(g.id, random_correlations(n, rng)))
        dists[g.id] = shortest_path_distances(g)
    ranks = [assemble_gram(recs, KernelSpec("gdqc", n_bins_c=nb, d_max=5), 1.0, dists).rank for nb in (1, 10, 100)]
    assert ranks[0] <= ranks[1] <= ranks[2]


# --------------------------------------------------------------------------
# GD-WL


def test_gdwl_path3():
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    res = gdwl_refine(d, [0, 0, 0])
    assert res.colors[0] == res.colors[2] != res.colors[1]
    assert res.rounds == 1 and res.stable


def test_gdwl_stable_input_returned_unchanged():
    d = np.array([[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    res = gdwl_refine(d, [5, 9, 5])
    assert res.colors == (5, 9, 5) and res.rounds == 0 and res.stable


def test_correlation_seed_colors():
    assert len(set(correlation_seed_colors(np.full((4, 4), 0.3), 10))) == 1
    assert len(set(correlation_seed_colors(np.zeros((3, 3)), 10))) == 1
    g, _ = oxetanone()
    colors = correlation_seed_colors(WORKED_EXAMPLE_CORRELATIONS, 5)
    rows = {tuple(sorted(r)) for r in correlation_bins(WORKED_EXAMPLE_CORRELATIONS, 5).tolist()}
    assert len(set(colors)) == len(rows)


@given(st.integers(2, 7), st.integers(0, 2**32 - 1))
def test_gdwl_isomorphic_pairs_not_distinguished(n, seed):
    rng = np.random.default_rng(seed)
    h = nx.random_labeled_tree(n, seed=int(rng.integers(1 << 30)))
    g = AttributedGraph.from_edges(list(h.edges), ["C"] * n)
    c = random_correlations(n, rng)
    p = rng.permutation(n)
    inv = np.argsort(p)
    assert not gdwl_distinguishes(g, c, apply_permutation(g, p), c[np.ix_(inv, inv)], 6)
    if n != 2:
        assert gdwl_distinguishes(g, c, AttributedGraph.from_edges([(0, 1)], ["C", "C"]), np.eye(2) * 0.1, 6)


def _color_isometry_exists(d1, c1, d2, c2):
    n = len(d1)
    for p in itertools.permutations(range(n)):
        if all(c1[j] == c2[p[j]] for j in range(n)) and all(
            d1[i, j] == d2[p[i], p[j]] for i in range(n) for j in range(n)
        ):
            return True
    return False


def test_lemma_small_instances():
    """Indistinguishable by GD-WL iff a colour-preserving distance isometry exists.

    Exhaustive over connected graphs with at most 5 nodes, each seeded with
    every 2-colouring up to swapping; the isometry is found by brute force.
    """
    cases = []
    for n, edges in connected_graphs(5):
        d = shortest_path_distances(AttributedGraph.from_edges(edges, ["C"] * n))
        for mask in range(2 ** (n - 1)):
            cases.append((n, d, tuple((mask >> i) & 1 for i in range(n))))
    palette = ColorPalette()
    hist = [frozenset(gdwl_color_histogram(d, col, 10, palette).items()) for _, d, col in cases]
    checked = 0
    for a, b in itertools.combinations(range(len(cases)), 2):
        (na, da, ca), (nb, db, cb) = cases[a], cases[b]
        if na != nb or Counter(ca) != Counter(cb):
            continue
        assert (hist[a] == hist[b]) == _color_isometry_exists(da, ca, db, cb)
        checked += 1
    assert checked > 2000
