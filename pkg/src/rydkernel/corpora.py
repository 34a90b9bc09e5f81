"""Reference molecules and synthetic desk-scale corpora.

Every corpus here comes with its registers, so nothing depends on the
layout heuristic or on downloaded datasets.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from pathlib import Path

import numpy as np

from .graph_core import AttributedGraph, MassEntry, apply_permutation, element_masses, write_tudataset
from .layout import DEFAULT_R_NN, Register, lattice_cluster, write_registers

# --------------------------------------------------------------------------
# 3,3-dimethyloxetan-2-one, SMILES "CC1(C)COC1=O"

OXETANONE_SMILES = "CC1(C)COC1=O"
# 0 ring O, 1 ring CH2, 2 quaternary C, 3/4 methyl C, 5 carbonyl C, 6 carbonyl O
OXETANONE_EDGES = ((0, 1), (1, 2), (2, 3), (2, 4), (2, 5), (0, 5), (5, 6))
OXETANONE_SPECIES = ("O", "C", "C", "C", "C", "C", "O")
# A 4-ring in the plane has its diagonal at sqrt(2) r_nn, so the coupling
# contrast of this molecule is capped at 2**3 = 8.
OXETANONE_CONTRAST = 8.0


def oxetanone(r_nn: float = DEFAULT_R_NN) -> tuple[AttributedGraph, Register]:
    """The 7-atom molecule and a square-ring register with every bond at ``r_nn``."""
    h = r_nn / math.sqrt(2)
    pos = np.array(
        [
            (1.0, 1.0),  # ring O
            (1.0, 0.0),
            (0.0, 0.0),
            (-1.0, 0.0),
            (0.0, -1.0),
            (0.0, 1.0),  # carbonyl C
            (0.0, 0.0),
        ]
    ) * r_nn
    pos[6] = pos[5] + (-h, h)
    g = AttributedGraph.from_edges(OXETANONE_EDGES, OXETANONE_SPECIES, id="oxetanone")
    return g, Register(pos, r_nn)


# Correlations C_ij at t = 1 µs laid out to follow the reference bin pattern
# for 5 correlation bins. Base values come from the exact global simulation
# of the register above; n_3, n_6, C_03 and C_36 are moved into the bins the
# reference pattern requires, keeping C_ij <= min(n_i, n_j).
WORKED_EXAMPLE_CORRELATIONS = np.array(
    [
        [0.356, 0.002, 0.203, 0.210, 0.054, 0.002, 0.064],
        [0.002, 0.407, 0.001, 0.239, 0.301, 0.059, 0.043],
        [0.203, 0.001, 0.239, 0.001, 0.001, 0.000, 0.024],
        [0.210, 0.239, 0.001, 0.620, 0.238, 0.066, 0.220],
        [0.054, 0.301, 0.001, 0.238, 0.401, 0.078, 0.042],
        [0.002, 0.059, 0.000, 0.066, 0.078, 0.172, 0.001],
        [0.064, 0.043, 0.024, 0.220, 0.042, 0.001, 0.260],
    ]
)
WORKED_EXAMPLE_COUNTS = (1, 3, 2, 1, 0, 7, 0, 0, 0, 0, 5, 4, 0, 0, 0, 3, 2, 0, 0, 0)


def diatomic(species: tuple[str, str], r_nn: float = DEFAULT_R_NN) -> tuple[AttributedGraph, Register]:
    """Two bonded atoms on a fixed register (e.g. CO vs NO)."""
    g = AttributedGraph.from_edges([(0, 1)], species, id="".join(species))
    return g, Register(np.array([[0.0, 0.0], [r_nn, 0.0]]), r_nn)


# --------------------------------------------------------------------------
# Random lattice corpora

HEAVY_SPECIES = ("C", "N", "O", "S", "Cl", "Br")


def decorate(n: int, rng: np.random.Generator, species=HEAVY_SPECIES, p_carbon: float = 0.6) -> tuple:
    """Random species list, carbon-rich like organic molecules."""
    others = [s for s in species if s != "C"]
    return tuple("C" if rng.random() < p_carbon else others[rng.integers(len(others))] for _ in range(n))


def random_lattice_graph(n: int, rng: np.random.Generator, gid: str, r_nn: float = DEFAULT_R_NN, compact: float = 0.5, label=None):
    edges, reg = lattice_cluster(n, rng, r_nn, compact)
    g = AttributedGraph.from_edges(edges, decorate(n, rng), graph_label=label, id=gid)
    return g, reg


def random_corpus(n_graphs: int, seed: int, n_min: int = 2, n_max: int = 8, r_nn: float = DEFAULT_R_NN):
    """Lattice-embedded molecules with random species; returns ``(graphs, registers)``."""
    rng = np.random.default_rng(seed)
    graphs, regs = [], {}
    for k in range(n_graphs):
        n = int(rng.integers(n_min, n_max + 1))
        g, reg = random_lattice_graph(n, rng, f"g{k:03d}", r_nn, compact=float(rng.random()))
        graphs.append(g)
        regs[g.id] = reg
    return graphs, regs


def permuted_copy(g: AttributedGraph, reg: Register | None, p, gid: str):
    """Relabelled copy of ``g`` (and its register) under permutation ``p``."""
    h = dataclasses.replace(apply_permutation(g, p), id=gid)
    return h, (reg.permuted(p) if reg is not None else None)


def with_species(g: AttributedGraph, species, gid: str) -> AttributedGraph:
    table = element_masses()
    return dataclasses.replace(g, node_labels=tuple(species), node_masses=tuple(table[s] for s in species), id=gid)


def rank_corpus(n_graphs: int = 40, n_pairs: int = 4, seed: int = 0, n_min: int = 4, n_max: int = 8, r_nn: float = DEFAULT_R_NN):
    """Random corpus with planted twins: same structure and register, different species.

    Returns ``(graphs, registers, twin_pairs)``.
    """
    if 2 * n_pairs > n_graphs:
        raise ValueError("too many planted pairs for the corpus size")
    rng = np.random.default_rng(seed)
    graphs, regs, pairs = [], {}, []
    for k in range(n_pairs):
        n = int(rng.integers(n_min, n_max + 1))
        g, reg = random_lattice_graph(n, rng, f"t{k:02d}a", r_nn, compact=float(rng.random()))
        species = list(g.node_labels)
        while tuple(species) == g.node_labels:
            species[rng.integers(n)] = HEAVY_SPECIES[rng.integers(1, len(HEAVY_SPECIES))]
        twin = with_species(g, species, f"t{k:02d}b")
        graphs += [g, twin]
        regs[g.id] = regs[twin.id] = reg
        pairs.append((g.id, twin.id))
    for k in range(n_graphs - 2 * n_pairs):
        n = int(rng.integers(n_min, n_max + 1))
        g, reg = random_lattice_graph(n, rng, f"r{k:02d}", r_nn, compact=float(rng.random()))
        graphs.append(g)
        regs[g.id] = reg
    return graphs, regs, pairs


def planted_class_corpus(n_graphs: int = 40, seed: int = 0, n_min: int = 5, n_max: int = 8, r_nn: float = DEFAULT_R_NN):
    """Two structural classes: chain-like clusters (label -1) vs. compact ones (+1).

    Chains are induced paths on the triangular lattice; compact clusters
    grow preferentially next to occupied sites, which yields triangles and
    high degrees.
    """
    rng = np.random.default_rng(seed)
    graphs, regs = [], {}
    for k in range(n_graphs):
        label = 1 if k % 2 else -1
        n = int(rng.integers(n_min, n_max + 1))
        if label < 0:
            edges, reg = _lattice_chain(n, rng, r_nn)
        else:
            edges, reg = lattice_cluster(n, rng, r_nn, compact=1.0)
        g = AttributedGraph.from_edges(edges, decorate(n, rng), graph_label=label, id=f"s{k:03d}")
        graphs.append(g)
        regs[g.id] = reg
    return graphs, regs


def _lattice_chain(n: int, rng: np.random.Generator, r_nn: float):
    """Self-avoiding walk on the triangular lattice without induced triangles."""
    dirs = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]
    while True:
        sites = [(0, 0)]
        ok = True
        for _ in range(n - 1):
            a, b = sites[-1]
            cands = []
            for da, db in dirs:
                s = (a + da, b + db)
                if s in sites:
                    continue
                # the new site may only touch its predecessor
                touching = sum((s[0] - x, s[1] - y) in dirs for x, y in sites)
                if touching == 1:
                    cands.append(s)
            if not cands:
                ok = False
                break
            sites.append(cands[rng.integers(len(cands))])
        if ok:
            break
    pos = np.array([(a + 0.5 * b, b * math.sqrt(3) / 2) for a, b in sites]) * r_nn
    edges = [(i, i + 1) for i in range(n - 1)]
    return edges, Register(pos, r_nn)


# --------------------------------------------------------------------------
# Exhaustive small graphs


def connected_graphs(max_nodes: int) -> list[tuple[int, list]]:
    """All connected graphs up to ``max_nodes`` nodes, one per isomorphism class."""
    import networkx as nx
    from networkx.generators.atlas import graph_atlas_g

    if max_nodes > 7:
        raise ValueError("the graph atlas covers at most 7 nodes")
    out = []
    for h in graph_atlas_g():
        n = h.number_of_nodes()
        if 1 <= n <= max_nodes and nx.is_connected(h):
            out.append((n, sorted(tuple(sorted(e)) for e in h.edges())))
    return out


def exhaustive_corpus(max_nodes: int = 6, seed: int = 0, n_decorations: int = 2, n_permuted: int = 1):
    """Every connected graph with random mass decorations plus permuted copies.

    Returns ``(graphs, origin)`` where ``origin[id]`` is
    ``(structure index, decoration index)``; copies sharing an origin are
    isomorphic as attributed graphs.
    """
    rng = np.random.default_rng(seed)
    graphs, origin = [], {}
    for s, (n, edges) in enumerate(connected_graphs(max_nodes)):
        for dec in range(n_decorations):
            g = AttributedGraph.from_edges(edges, decorate(n, rng), id=f"a{s:03d}d{dec}")
            graphs.append(g)
            origin[g.id] = (s, dec)
            for k in range(n_permuted):
                p = rng.permutation(n)
                h, _ = permuted_copy(g, None, p, f"{g.id}p{k}")
                graphs.append(h)
                origin[h.id] = (s, dec)
    return graphs, origin


def all_pairs(items):
    return itertools.combinations(range(len(items)), 2)


# --------------------------------------------------------------------------
# Export


def export_corpus(graphs, registers, directory, name: str) -> dict:
    """Write a corpus as a TUDataset directory with its mass table and registers.

    TUDataset graphs are identified by 1-based position, so registers are
    re-keyed accordingly. Returns the paths written.
    """
    directory = Path(directory)
    species = sorted({s for g in graphs for s in g.node_labels})
    table = element_masses()
    mass_table = {k: MassEntry(s, table[s]) for k, s in enumerate(species)}
    write_tudataset(graphs, directory, name, mass_table)
    masses = directory / f"{name}_masses.txt"
    masses.write_text("".join(f"{k} {e.species} {e.mass}\n" for k, e in mass_table.items()))
    regs = {str(k + 1): registers[g.id] for k, g in enumerate(graphs)}
    reg_path = directory / f"{name}_registers.json"
    write_registers(regs, reg_path)
    return {"dataset": str(directory), "mass_table": str(masses), "registers": str(reg_path)}
