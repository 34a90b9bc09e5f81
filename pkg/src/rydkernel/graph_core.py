"""Attributed molecular graphs: data model, TUDataset ingestion, distances.

Graphs are small (tens of nodes at most), so everything here is plain
Python / numpy. Nodes are indexed ``0..n-1``; edges are stored as sorted
``(i, j)`` tuples with ``i < j``.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

MIN_MASS_U = 12.0
ISOMORPHISM_NODE_CAP = 12


class IngestionError(Exception):
    """Fatal problem while reading a dataset directory."""


@dataclass(frozen=True)
class MassEntry:
    species: str
    mass: float


@dataclass(frozen=True)
class AttributedGraph:
    """Undirected, connected, node-labelled graph.

    ``node_labels`` holds species symbols (``"C"``, ``"O"``, ...) and
    ``node_masses`` the matching atomic masses in u.
    """

    node_count: int
    edges: frozenset
    node_labels: tuple
    node_masses: tuple
    graph_label: int | None = None
    id: str = ""

    def __post_init__(self):
        n = self.node_count
        if n < 1:
            raise ValueError("node_count must be positive")
        norm = set()
        for e in self.edges:
            i, j = e
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"edge {e} out of range for {n} nodes")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if len(self.node_labels) != n or len(self.node_masses) != n:
            raise ValueError("node_labels / node_masses must have node_count entries")
        object.__setattr__(self, "node_labels", tuple(self.node_labels))
        object.__setattr__(self, "node_masses", tuple(float(m) for m in self.node_masses))
        for i, m in enumerate(self.node_masses):
            if m < MIN_MASS_U:
                raise ValueError(f"node {i} mass {m} u is below {MIN_MASS_U} u")

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[int, int]],
        species: Sequence[str],
        masses: Sequence[float] | None = None,
        graph_label: int | None = None,
        id: str = "",
    ) -> "AttributedGraph":
        """Build a graph from an edge list; masses default to the element table."""
        if masses is None:
            table = element_masses()
            masses = [table[s] for s in species]
        return cls(len(species), frozenset(edges), tuple(species), tuple(masses), graph_label, id)

    def sorted_edges(self) -> list[tuple[int, int]]:
        return sorted(self.edges)

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for i, j in self.sorted_edges():
            adj[i].append(j)
            adj[j].append(i)
        return adj

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=int)
        for i, j in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def is_connected(self) -> bool:
        return bool(np.all(_bfs(self.neighbors(), 0) >= 0))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "node_count": self.node_count,
            "edges": [list(e) for e in self.sorted_edges()],
            "node_labels": list(self.node_labels),
            "node_masses": list(self.node_masses),
            "graph_label": self.graph_label,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttributedGraph":
        return cls(
            d["node_count"],
            frozenset(tuple(e) for e in d["edges"]),
            tuple(d["node_labels"]),
            tuple(d["node_masses"]),
            d.get("graph_label"),
            d.get("id", ""),
        )


# --------------------------------------------------------------------------
# Mass tables


def element_masses() -> dict[str, float]:
    """Species symbol -> standard atomic mass (u), from the bundled table."""
    text = resources.files("rydkernel.data").joinpath("element_masses.txt").read_text()
    out = {}
    for line in _content_lines(text):
        sym, mass = line.split()
        out[sym] = float(mass)
    return out


def read_mass_table(source: str | Path | None = None) -> dict[int, MassEntry]:
    """Parse a ``label_id species mass_u`` table.

    ``source=None`` loads the bundled MUTAG table.
    """
    if source is None:
        text = resources.files("rydkernel.data").joinpath("mutag_masses.txt").read_text()
    else:
        path = Path(source)
        if not path.exists():
            raise IngestionError(f"mass table not found: {path}")
        text = path.read_text()
    table = {}
    for line in _content_lines(text):
        parts = line.split()
        if len(parts) != 3:
            raise IngestionError(f"bad mass table line: {line!r}")
        table[int(parts[0])] = MassEntry(parts[1], float(parts[2]))
    return table


def _content_lines(text: str) -> list[str]:
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith("#")]


# --------------------------------------------------------------------------
# TUDataset ingestion


@dataclass
class IngestionReport:
    dataset: str
    loaded: int = 0
    rejected: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "dataset": self.dataset,
            "loaded": self.loaded,
            "rejected_count": len(self.rejected),
            "rejected": dict(sorted(self.rejected.items(), key=lambda kv: int(kv[0]) if kv[0].isdigit() else kv[0])),
        }

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")


def _tud_prefix(directory: Path) -> str:
    hits = sorted(directory.glob("*_A.txt"))
    if not hits:
        raise IngestionError(f"missing file: no <DS>_A.txt in {directory}")
    return hits[0].name[: -len("_A.txt")]


def _read_ints(path: Path) -> list[list[int]]:
    if not path.exists():
        raise IngestionError(f"missing file: {path.name}")
    rows = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            rows.append([int(tok) for tok in line.replace(",", " ").split()])
    return rows


def load_tudataset(
    directory_path: str | Path,
    mass_table: Mapping[int, MassEntry] | None = None,
    with_report: bool = False,
):
    """Read a dataset in the TUDataset plain-text layout.

    Disconnected graphs are dropped and recorded in the report; an unknown
    node label aborts the load. Returns the graph list, or
    ``(graphs, report)`` when ``with_report`` is set.
    """
    directory = Path(directory_path)
    if not directory.is_dir():
        raise IngestionError(f"dataset directory not found: {directory}")
    if mass_table is None:
        mass_table = read_mass_table()
    ds = _tud_prefix(directory)
    adjacency = _read_ints(directory / f"{ds}_A.txt")
    indicator = [r[0] for r in _read_ints(directory / f"{ds}_graph_indicator.txt")]
    glabels = [r[0] for r in _read_ints(directory / f"{ds}_graph_labels.txt")]
    nlabels = [r[0] for r in _read_ints(directory / f"{ds}_node_labels.txt")]
    if len(nlabels) != len(indicator):
        raise IngestionError("node_labels and graph_indicator have different lengths")

    unknown = sorted({lab for lab in nlabels if lab not in mass_table})
    if unknown:
        raise IngestionError(f"unknown node labels: {unknown}")

    n_graphs = max(indicator) if indicator else 0
    if len(glabels) != n_graphs:
        raise IngestionError("graph_labels length does not match number of graphs")
    members: list[list[int]] = [[] for _ in range(n_graphs)]
    for node, gid in enumerate(indicator):
        members[gid - 1].append(node)
    local = {}
    for nodes in members:
        for k, node in enumerate(nodes):
            local[node] = k
    edges: list[set] = [set() for _ in range(n_graphs)]
    for row in adjacency:
        a, b = row[0] - 1, row[1] - 1
        ga, gb = indicator[a], indicator[b]
        if ga != gb:
            raise IngestionError(f"edge ({a + 1}, {b + 1}) spans graphs {ga} and {gb}")
        if a == b:
            continue
        i, j = local[a], local[b]
        edges[ga - 1].add((min(i, j), max(i, j)))

    report = IngestionReport(dataset=ds)
    graphs = []
    for gidx, nodes in enumerate(members):
        gid = str(gidx + 1)
        if not nodes:
            report.rejected[gid] = "empty graph"
            continue
        species = tuple(mass_table[nlabels[v]].species for v in nodes)
        masses = tuple(mass_table[nlabels[v]].mass for v in nodes)
        g = AttributedGraph(len(nodes), frozenset(edges[gidx]), species, masses, glabels[gidx], gid)
        if not g.is_connected():
            report.rejected[gid] = "disconnected"
            continue
        graphs.append(g)
    report.loaded = len(graphs)
    return (graphs, report) if with_report else graphs


def write_tudataset(graphs: Sequence[AttributedGraph], directory: str | Path, name: str, mass_table: Mapping[int, MassEntry]) -> None:
    """Write graphs in the TUDataset layout (both edge directions, 1-based)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    by_species = {e.species: lab for lab, e in mass_table.items()}
    a_lines, ind_lines, nl_lines, gl_lines = [], [], [], []
    offset = 0
    for gi, g in enumerate(graphs):
        for s in g.node_labels:
            nl_lines.append(str(by_species[s]))
            ind_lines.append(str(gi + 1))
        for i, j in g.sorted_edges():
            a_lines.append(f"{i + offset + 1}, {j + offset + 1}")
            a_lines.append(f"{j + offset + 1}, {i + offset + 1}")
        gl_lines.append(str(g.graph_label if g.graph_label is not None else 0))
        offset += g.node_count
    for suffix, lines in (("A", a_lines), ("graph_indicator", ind_lines), ("node_labels", nl_lines), ("graph_labels", gl_lines)):
        (directory / f"{name}_{suffix}.txt").write_text("\n".join(lines) + "\n")


# --------------------------------------------------------------------------
# Distances


def _bfs(adj: list[list[int]], src: int) -> np.ndarray:
    dist = np.full(len(adj), -1, dtype=int)
    dist[src] = 0
    queue = deque([src])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def shortest_path_distances(g: AttributedGraph) -> np.ndarray:
    """All-pairs hop counts (integer matrix)."""
    adj = g.neighbors()
    d = np.vstack([_bfs(adj, s) for s in range(g.node_count)])
    if np.any(d < 0):
        raise ValueError(f"graph {g.id!r} is disconnected")
    return d


def dataset_max_distance(graphs: Sequence[AttributedGraph]) -> int:
    if not graphs:
        raise ValueError("dataset_max_distance needs at least one graph")
    return int(max(shortest_path_distances(g).max() for g in graphs))


# --------------------------------------------------------------------------
# Permutations and isomorphism


def inverse_permutation(p: Sequence[int]) -> np.ndarray:
    p = np.asarray(p)
    inv = np.empty_like(p)
    inv[p] = np.arange(len(p))
    return inv


def apply_permutation(g: AttributedGraph, p: Sequence[int]) -> AttributedGraph:
    """Relabel node ``i`` as ``p[i]``.

    Node data moves with the node, so the permuted graph's distance matrix
    satisfies ``D'[i, j] = D[p^-1(i), p^-1(j)]``.
    """
    p = np.asarray(p, dtype=int)
    n = g.node_count
    if p.shape != (n,) or sorted(p.tolist()) != list(range(n)):
        raise ValueError(f"permutation of size {len(p)} does not match graph of {n} nodes")
    inv = inverse_permutation(p)
    edges = frozenset((int(p[i]), int(p[j])) for i, j in g.edges)
    labels = tuple(g.node_labels[inv[k]] for k in range(n))
    masses = tuple(g.node_masses[inv[k]] for k in range(n))
    return AttributedGraph(n, edges, labels, masses, g.graph_label, g.id)


def are_isomorphic(g1: AttributedGraph, g2: AttributedGraph, respect_labels: bool = True):
    """Backtracking isomorphism test for small graphs.

    Returns ``(True, p)`` with ``p`` mapping nodes of ``g1`` to nodes of
    ``g2`` (so ``apply_permutation(g1, p)`` equals ``g2``), or
    ``(False, None)``.
    """
    n = g1.node_count
    if max(n, g2.node_count) > ISOMORPHISM_NODE_CAP:
        raise ValueError(
            f"are_isomorphic is limited to {ISOMORPHISM_NODE_CAP} nodes; "
            "screen larger graphs with a hash-based invariant instead"
        )
    if n != g2.node_count or len(g1.edges) != len(g2.edges):
        return False, None
    deg1, deg2 = g1.degrees(), g2.degrees()
    if sorted(deg1) != sorted(deg2):
        return False, None

    def tag(g, deg, v):
        return (deg[v], g.node_labels[v]) if respect_labels else (deg[v],)

    t1 = [tag(g1, deg1, v) for v in range(n)]
    t2 = [tag(g2, deg2, v) for v in range(n)]
    if sorted(t1) != sorted(t2):
        return False, None
    adj2 = [set(a) for a in g2.neighbors()]
    adj1 = g1.neighbors()
    # Most-constrained first: high degree nodes early.
    order = sorted(range(n), key=lambda v: (-deg1[v], v))
    mapping = [-1] * n
    used = [False] * n

    def extend(k):
        if k == n:
            return True
        v = order[k]
        for w in range(n):
            if used[w] or t1[v] != t2[w]:
                continue
            ok = True
            for u in adj1[v]:
                if mapping[u] >= 0 and mapping[u] not in adj2[w]:
                    ok = False
                    break
            if not ok:
                continue
            # Mapped non-neighbours must stay non-adjacent.
            n_mapped_nbrs = sum(1 for u in adj1[v] if mapping[u] >= 0)
            if sum(1 for x in adj2[w] if used[x]) != n_mapped_nbrs:
                continue
            mapping[v] = w
            used[w] = True
            if extend(k + 1):
                return True
            mapping[v] = -1
            used[w] = False
        return False

    if extend(0):
        return True, np.array(mapping)
    return False, None
