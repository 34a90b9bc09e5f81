"""2D atom registers that realise a graph as a unit-disk arrangement.

Edges should sit near ``r_nn`` and non-edges far enough away that their
van-der-Waals coupling is negligible. Quality is measured by the coupling
contrast: weakest edge coupling over strongest non-edge coupling, i.e.
``(min non-edge distance / max edge distance) ** 6``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy.optimize import minimize

from .graph_core import AttributedGraph

DEFAULT_R_NN = 5.0
DEFAULT_CONTRAST = 10.0
MIN_SEPARATION_FACTOR = 0.8
NONEDGE_TARGET_FACTOR = 1.5
SNAP_TOLERANCE = 0.05


class LayoutError(Exception):
    """No valid register found; ``report`` describes the best attempt."""

    def __init__(self, message, report=None, register=None):
        super().__init__(message)
        self.report = report
        self.register = register


@dataclass(frozen=True)
class Register:
    positions: np.ndarray  # (n, 2) in µm
    r_nn: float = DEFAULT_R_NN

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if len(pos) > 1:
            dmin = pairwise_distances(pos)[np.triu_indices(len(pos), 1)].min()
            if dmin < MIN_SEPARATION_FACTOR * self.r_nn - 1e-9:
                raise ValueError(
                    f"atoms closer than {MIN_SEPARATION_FACTOR}*r_nn "
                    f"({dmin:.3f} µm < {MIN_SEPARATION_FACTOR * self.r_nn:.3f} µm)"
                )

    def __len__(self):
        return len(self.positions)

    def permuted(self, p) -> "Register":
        """Atom ``i`` moves to slot ``p[i]`` (matches ``apply_permutation``)."""
        p = np.asarray(p)
        pos = np.empty_like(self.positions)
        pos[p] = self.positions
        return Register(pos, self.r_nn)

    def to_list(self) -> list:
        return [[float(x), float(y)] for x, y in self.positions]


@dataclass(frozen=True)
class LayoutReport:
    edge_distance_range: tuple  # (min, max) µm, (nan, nan) if no edges
    nonedge_min_distance: float  # inf if complete graph
    coupling_contrast: float
    valid: bool

    def to_dict(self) -> dict:
        def f(x):
            return None if not math.isfinite(x) else round(float(x), 12)

        return {
            "edge_distance_range": [f(x) for x in self.edge_distance_range],
            "nonedge_min_distance": f(self.nonedge_min_distance),
            "coupling_contrast": f(self.coupling_contrast),
            "valid": self.valid,
        }


def pairwise_distances(pos: np.ndarray) -> np.ndarray:
    diff = pos[:, None, :] - pos[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def _edge_mask(g: AttributedGraph) -> np.ndarray:
    n = g.node_count
    mask = np.zeros((n, n), dtype=bool)
    for i, j in g.edges:
        mask[i, j] = mask[j, i] = True
    return mask


def validate_register(g: AttributedGraph, reg: Register, contrast_threshold: float = DEFAULT_CONTRAST) -> LayoutReport:
    n = g.node_count
    if len(reg) != n:
        raise ValueError(f"register has {len(reg)} atoms, graph has {n} nodes")
    dist = pairwise_distances(reg.positions)
    emask = _edge_mask(g)
    iu = np.triu_indices(n, 1)
    d_pairs, e_pairs = dist[iu], emask[iu]
    if e_pairs.any():
        erange = (float(d_pairs[e_pairs].min()), float(d_pairs[e_pairs].max()))
    else:
        erange = (math.nan, math.nan)
    if (~e_pairs).any():
        ne_min = float(d_pairs[~e_pairs].min())
    else:
        ne_min = math.inf
    if not e_pairs.any() or math.isinf(ne_min):
        # No non-edges (or no edges): nothing can compete with an edge.
        contrast = math.inf
    else:
        contrast = (ne_min / erange[1]) ** 6
    return LayoutReport(erange, ne_min, contrast, bool(contrast >= contrast_threshold))


def _stress(flat, n, eu, ev, nu, nv, r_nn, edge_w, target_ne):
    pos = flat.reshape(n, 2)
    grad = np.zeros_like(pos)
    energy = 0.0
    if len(eu):
        d = pos[eu] - pos[ev]
        r = np.sqrt((d**2).sum(1)) + 1e-12
        res = r - r_nn
        energy += edge_w * (res**2).sum()
        g = (2 * edge_w * res / r)[:, None] * d
        np.add.at(grad, eu, g)
        np.add.at(grad, ev, -g)
    if len(nu):
        d = pos[nu] - pos[nv]
        r = np.sqrt((d**2).sum(1)) + 1e-12
        short = np.minimum(r - target_ne, 0.0)
        energy += (short**2).sum()
        g = (2 * short / r)[:, None] * d
        np.add.at(grad, nu, g)
        np.add.at(grad, nv, -g)
    return energy, grad.ravel()


def _spring_layout(g, r_nn, rng, edge_w=1.0, x0=None):
    n = g.node_count
    eu, ev = (np.array(a, dtype=int) for a in zip(*g.sorted_edges())) if g.edges else (np.array([], int), np.array([], int))
    emask = _edge_mask(g)
    iu = np.triu_indices(n, 1)
    ne = ~emask[iu]
    nu, nv = iu[0][ne], iu[1][ne]
    if x0 is None:
        x0 = rng.normal(scale=r_nn * math.sqrt(n) / 2, size=(n, 2))
    res = minimize(
        _stress,
        x0.ravel(),
        args=(n, eu, ev, nu, nv, r_nn, edge_w, NONEDGE_TARGET_FACTOR * r_nn),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15},
    )
    pos = res.x.reshape(n, 2)
    return pos - pos.mean(0)


def embed_unit_disk(
    g: AttributedGraph,
    r_nn: float = DEFAULT_R_NN,
    seed: int = 0,
    max_attempts: int = 20,
    contrast_threshold: float = DEFAULT_CONTRAST,
    qubit_cap: int = 20,
) -> Register:
    """Force-directed embedding with seeded random restarts.

    Each attempt relaxes a spring model (edges pulled to ``r_nn``,
    non-adjacent pairs pushed beyond ``1.5 r_nn``). When every edge ends
    within 5% of ``r_nn`` the layout is re-relaxed with stiff edge springs,
    which snaps the edges onto ``r_nn``. The first attempt passing
    :func:`validate_register` wins; otherwise :class:`LayoutError` carries
    the best report.
    """
    n = g.node_count
    if n > qubit_cap:
        raise LayoutError(f"graph {g.id!r} has {n} nodes, above the {qubit_cap}-qubit cap")
    if n == 1:
        return Register(np.zeros((1, 2)), r_nn)
    best = None
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        pos = _spring_layout(g, r_nn, rng)
        dist = pairwise_distances(pos)
        el = np.array([dist[i, j] for i, j in g.sorted_edges()])
        if len(el) and np.abs(el / r_nn - 1).max() < SNAP_TOLERANCE:
            pos = _spring_layout(g, r_nn, rng, edge_w=1e3, x0=pos)
        pos = np.round(pos, 9) + 0.0
        try:
            reg = Register(pos, r_nn)
        except ValueError:
            continue
        rep = validate_register(g, reg, contrast_threshold)
        if rep.valid:
            return reg
        if best is None or rep.coupling_contrast > best[0].coupling_contrast:
            best = (rep, reg)
    raise LayoutError(
        f"no valid layout for graph {g.id!r} after {max_attempts} attempts",
        report=best[0] if best else None,
        register=best[1] if best else None,
    )


# --------------------------------------------------------------------------
# Register files


def write_registers(registers: Mapping[str, Register], path: str | Path, extra: dict | None = None) -> None:
    payload = {"schema_version": 1, "registers": {k: registers[k].to_list() for k in registers}}
    if registers:
        payload["r_nn"] = next(iter(registers.values())).r_nn
    if extra:
        payload.update(extra)
    Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def read_registers(path: str | Path) -> dict[str, Register]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"register file not found: {path}")
    payload = json.loads(path.read_text())
    regs = payload.get("registers", payload)
    r_nn = payload.get("r_nn", DEFAULT_R_NN)
    return {str(k): Register(np.array(v, dtype=float), r_nn) for k, v in regs.items()}


# --------------------------------------------------------------------------
# Triangular-lattice clusters: graphs that come with a valid register.

_TRI_DIRS = [(1, 0), (0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1)]


def lattice_cluster(n: int, rng: np.random.Generator, r_nn: float = DEFAULT_R_NN, compact: float = 0.5):
    """Random connected cluster of ``n`` triangular-lattice sites.

    Edges join nearest neighbours (distance ``r_nn``); the closest non-edge
    sits at ``sqrt(3) r_nn`` giving contrast 27. ``compact`` biases growth
    towards sites with many occupied neighbours (0: chain-like growth).
    Returns ``(edges, Register)``.
    """
    sites = [(0, 0)]
    occupied = {(0, 0)}
    while len(sites) < n:
        frontier = {}
        for a, b in sites:
            for da, db in _TRI_DIRS:
                s = (a + da, b + db)
                if s not in occupied:
                    frontier[s] = frontier.get(s, 0) + 1
        cand = sorted(frontier)
        w = np.array([frontier[s] for s in cand], dtype=float) ** (4 * compact)
        pick = cand[rng.choice(len(cand), p=w / w.sum())]
        sites.append(pick)
        occupied.add(pick)
    pos = np.array([(a + 0.5 * b, b * math.sqrt(3) / 2) for a, b in sites]) * r_nn
    edges = set()
    for i in range(n):
        for j in range(i + 1, n):
            di = (sites[j][0] - sites[i][0], sites[j][1] - sites[i][1])
            if di in _TRI_DIRS:
                edges.add((i, j))
    return edges, Register(pos, r_nn)
