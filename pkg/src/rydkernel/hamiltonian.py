"""Rydberg Hamiltonian assembly for graph-embedded atom registers.

Units: hbar = 1, energies and frequencies in rad/µs, distances in µm,
times in µs. Basis index ``b = sum_i b_i 2**i`` (site 0 is the least
significant bit); ``n_i |b> = b_i |b>`` and ``sigma^x_i`` flips bit ``i``.

    H = sum_{i<j} J_ij n_i n_j + sum_i (Omega/2 sigma^x_i - delta_i n_i)
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph_core import AttributedGraph
from .layout import DEFAULT_R_NN, Register, pairwise_distances

DENSE_CAP = 12


@dataclass(frozen=True)
class PhysicalConstants:
    c6: float = 865723.0  # rad µs^-1 µm^6
    omega: float = 2 * math.pi  # rad/µs
    delta0: float = math.pi  # rad/µs
    # Reference mass for the local detuning. Equal to carbon's entry in the
    # bundled mass table so carbon sites get exactly delta0.
    m_carbon: float = 12.011

    def __post_init__(self):
        for name in ("c6", "omega", "delta0", "m_carbon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def j_nn(self, r_nn: float = DEFAULT_R_NN) -> float:
        return self.c6 / r_nn**6


@dataclass(frozen=True)
class HamiltonianSpec:
    coupling: np.ndarray
    omega: float
    detuning: np.ndarray
    mode: str = "global"

    def __post_init__(self):
        J = np.array(self.coupling, dtype=float)
        d = np.array(self.detuning, dtype=float).ravel()
        n = len(d)
        if J.shape != (n, n):
            raise ValueError(f"coupling shape {J.shape} does not match {n} sites")
        if not np.array_equal(J, J.T) or np.any(np.diag(J) != 0) or np.any(J < 0):
            raise ValueError("coupling must be symmetric, non-negative, zero on the diagonal")
        if self.mode not in ("global", "local"):
            raise ValueError(f"unknown mode {self.mode!r}")
        J.setflags(write=False)
        d.setflags(write=False)
        object.__setattr__(self, "coupling", J)
        object.__setattr__(self, "detuning", d)

    @property
    def n_qubits(self) -> int:
        return len(self.detuning)

    def permuted(self, p) -> "HamiltonianSpec":
        """Site ``i`` moves to ``p[i]``."""
        p = np.asarray(p)
        inv = np.empty_like(p)
        inv[p] = np.arange(len(p))
        return HamiltonianSpec(self.coupling[np.ix_(inv, inv)], self.omega, self.detuning[inv], self.mode)

    def to_dict(self) -> dict:
        return {
            "coupling": self.coupling.tolist(),
            "omega": self.omega,
            "detuning": self.detuning.tolist(),
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d) -> "HamiltonianSpec":
        return cls(np.array(d["coupling"]), d["omega"], np.array(d["detuning"]), d["mode"])

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class IsingDiagnostics:
    h_z: np.ndarray
    e_bar: float
    dimensionless_detuning: float
    h_z_degree_approx: np.ndarray | None = field(default=None)


def coupling_from_register(reg: Register, constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    """``J_ij = C6 / r_ij^6`` from actual atom distances."""
    dist = pairwise_distances(np.asarray(reg.positions))
    n = len(dist)
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] <= 0):
        raise ValueError("coincident atom positions")
    J = np.zeros((n, n))
    J[off] = constants.c6 / dist[off] ** 6
    return np.triu(J, 1) + np.triu(J, 1).T


def ideal_coupling(g: AttributedGraph, constants: PhysicalConstants = PhysicalConstants(), r_nn: float = DEFAULT_R_NN) -> np.ndarray:
    """Register-free coupling: ``J_NN`` on every edge, zero elsewhere.

    Used for graphs without a unit-disk register (e.g. exhaustive small
    corpora); it is exactly permutation covariant.
    """
    n = g.node_count
    J = np.zeros((n, n))
    for i, j in g.edges:
        J[i, j] = J[j, i] = constants.j_nn(r_nn)
    return J


def local_detuning(g: AttributedGraph, constants: PhysicalConstants = PhysicalConstants()) -> np.ndarray:
    masses = np.asarray(g.node_masses, dtype=float)
    if np.any(masses < constants.m_carbon):
        bad = int(np.argmin(masses))
        raise ValueError(f"node {bad} mass {masses[bad]} u is lighter than the reference {constants.m_carbon} u")
    return constants.delta0 * constants.m_carbon / masses


def build_hamiltonian(
    g: AttributedGraph,
    reg: Register | None,
    constants: PhysicalConstants = PhysicalConstants(),
    mode: str = "global",
) -> HamiltonianSpec:
    """Graph-embedded Hamiltonian; ``reg=None`` falls back to :func:`ideal_coupling`."""
    if reg is not None and len(reg) != g.node_count:
        raise ValueError(f"register has {len(reg)} atoms, graph {g.id!r} has {g.node_count} nodes")
    J = coupling_from_register(reg, constants) if reg is not None else ideal_coupling(g, constants)
    if mode == "global":
        delta = np.full(g.node_count, constants.delta0)
    elif mode == "local":
        delta = local_detuning(g, constants)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return HamiltonianSpec(J, constants.omega, delta, mode)


def ising_diagnostics(
    spec: HamiltonianSpec,
    constants: PhysicalConstants = PhysicalConstants(),
    r_nn: float = DEFAULT_R_NN,
    degrees=None,
) -> IsingDiagnostics:
    """Longitudinal fields, mean energy and the detuning/coupling ratio.

    With ``degrees`` given, also returns the degree-based estimate
    ``h_z ~ J_NN/4 (-deg + 2 delta_i / J_NN)``.
    """
    J = spec.coupling
    h_z = spec.detuning / 2 - J.sum(1) / 4
    e_bar = J.sum() / 8 - spec.detuning.sum() / 2
    j_nn = constants.j_nn(r_nn)
    approx = None
    if degrees is not None:
        approx = j_nn / 4 * (-np.asarray(degrees, dtype=float) + 2 * spec.detuning / j_nn)
    return IsingDiagnostics(h_z, float(e_bar), 2 * constants.delta0 / j_nn, approx)


def basis_bits(n: int) -> np.ndarray:
    """``(2**n, n)`` uint8 array of occupation numbers."""
    idx = np.arange(2**n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(np.uint8)


def diagonal_energies(spec: HamiltonianSpec) -> np.ndarray:
    """Diagonal of H in the occupation basis, built bit by bit."""
    n = spec.n_qubits
    idx = np.arange(2**n, dtype=np.int64)
    diag = np.zeros(2**n)
    bits = [((idx >> i) & 1).astype(bool) for i in range(n)]
    for i in range(n):
        diag[bits[i]] -= spec.detuning[i]
        for j in range(i + 1, n):
            if spec.coupling[i, j] != 0:
                diag[bits[i] & bits[j]] += spec.coupling[i, j]
    return diag


def apply_hamiltonian(spec: HamiltonianSpec, psi: np.ndarray, diag: np.ndarray | None = None) -> np.ndarray:
    """Matrix-free ``H @ psi``."""
    n = spec.n_qubits
    if diag is None:
        diag = diagonal_energies(spec)
    out = diag * psi
    half = spec.omega / 2
    for i in range(n):
        src = psi.reshape(2 ** (n - 1 - i), 2, 2**i)
        dst = out.reshape(2 ** (n - 1 - i), 2, 2**i)
        dst += half * src[:, ::-1, :]
    return out


def dense_matrix(spec: HamiltonianSpec, cap: int = DENSE_CAP) -> np.ndarray:
    n = spec.n_qubits
    if n > cap:
        raise ValueError(f"{n} qubits exceeds the dense cap of {cap}; use the matrix-free propagator")
    dim = 2**n
    H = np.diag(diagonal_energies(spec))
    idx = np.arange(dim)
    for i in range(n):
        H[idx, idx ^ (1 << i)] = spec.omega / 2
    return H


def qubit_permutation_operator(p) -> np.ndarray:
    """Unitary sending ``|b>`` to the state with bit ``b_i`` moved to site ``p[i]``."""
    p = np.asarray(p)
    n = len(p)
    dim = 2**n
    U = np.zeros((dim, dim))
    for b in range(dim):
        out = 0
        for i in range(n):
            if (b >> i) & 1:
                out |= 1 << int(p[i])
        U[out, b] = 1.0
    return U
