"""Quench dynamics from the all-zero state and measured observables.

The production path is a Lanczos propagator with matrix-free ``H @ psi``
and adaptive sub-steps: one Krylov basis is built per step and the step
length is shrunk (reusing the basis) until the a-posteriori error estimate
meets the tolerance. Small systems can also be propagated through a dense
eigendecomposition, which the tests use as the oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .graph_core import AttributedGraph
from .hamiltonian import (
    DENSE_CAP,
    HamiltonianSpec,
    PhysicalConstants,
    apply_hamiltonian,
    build_hamiltonian,
    dense_matrix,
    diagonal_energies,
)
from .layout import Register

STATE_CAP = 20
DEFAULT_TOL = 1e-9
KRYLOV_DIM = 30


class PropagationError(RuntimeError):
    """Numerical failure during time evolution."""


def zero_state(n: int) -> np.ndarray:
    psi = np.zeros(2**n, dtype=complex)
    psi[0] = 1.0
    return psi


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if np.any(t < 0) or np.any(np.diff(t) < 0):
        raise ValueError("times must be non-negative and ascending")
    return t


def _lanczos_basis(matvec, v, m):
    """Orthonormal Krylov basis with full reorthogonalisation."""
    dim = len(v)
    V = np.zeros((m + 1, dim), dtype=complex)
    alpha = np.zeros(m)
    beta = np.zeros(m)
    V[0] = v
    for k in range(m):
        w = matvec(V[k])
        alpha[k] = np.vdot(V[k], w).real
        w = w - alpha[k] * V[k] - (beta[k - 1] * V[k - 1] if k > 0 else 0)
        w -= V[: k + 1].T @ (V[: k + 1].conj() @ w)
        beta[k] = np.linalg.norm(w)
        if beta[k] < 1e-13:  # invariant subspace: the expansion is exact
            return V[: k + 1], alpha[: k + 1], beta[: k + 1], True
        V[k + 1] = w / beta[k]
    return V, alpha, beta, False


def _krylov_propagate(matvec, psi, t_total, tol, m):
    """Advance ``psi`` by ``t_total``; returns ``(psi, n_steps)``."""
    t_done = 0.0
    steps = 0
    tau_guess = t_total
    while t_total - t_done > 1e-15 * max(1.0, t_total):
        V, alpha, beta, exact = _lanczos_basis(matvec, psi, m)
        k = len(alpha)
        theta, S = eigh_tridiagonal(alpha, beta[: k - 1]) if k > 1 else (alpha, np.ones((1, 1)))
        remaining = t_total - t_done
        tau = min(remaining, tau_guess * 2)
        while True:
            y = S @ (np.exp(-1j * tau * theta) * S[0])
            err = 0.0 if exact else beta[k - 1] * abs(y[-1])
            if err <= tol:
                break
            tau *= 0.5
            if tau < 1e-14:
                raise PropagationError("Krylov step size underflow")
        psi = y @ V[:k]
        psi /= np.linalg.norm(psi)
        if not np.all(np.isfinite(psi)):
            raise PropagationError(f"non-finite amplitudes at t={t_done + tau}")
        t_done += tau
        tau_guess = tau
        steps += 1
    return psi, steps


def evolve(
    spec: HamiltonianSpec,
    times: Sequence[float],
    tolerance: float = DEFAULT_TOL,
    method: str = "krylov",
    krylov_dim: int = KRYLOV_DIM,
    state_cap: int = STATE_CAP,
) -> list[np.ndarray]:
    """States ``exp(-i H t)|0>`` at each requested time.

    ``method`` is ``"krylov"`` (matrix-free) or ``"dense"`` (eigendecomposition,
    up to the dense cap).
    """
    n = spec.n_qubits
    if n > state_cap:
        raise ValueError(f"{n} qubits exceeds the state-vector cap of {state_cap}")
    t = _check_times(times)
    psi0 = zero_state(n)
    if method == "dense":
        return evolve_dense(spec, t)
    if method != "krylov":
        raise ValueError(f"unknown method {method!r}")
    diag = diagonal_energies(spec)

    def matvec(v):
        return apply_hamiltonian(spec, v, diag)

    m = min(krylov_dim, 2**n)
    out = []
    psi, t_prev = psi0, 0.0
    for ti in t:
        if ti > t_prev:
            psi, _ = _krylov_propagate(matvec, psi, ti - t_prev, tolerance, m)
        out.append(psi.copy())
        t_prev = ti
    return out


def evolve_dense(spec: HamiltonianSpec, times: Sequence[float]) -> list[np.ndarray]:
    if spec.n_qubits > DENSE_CAP:
        raise ValueError(f"dense propagation is limited to {DENSE_CAP} qubits")
    t = _check_times(times)
    E, U = np.linalg.eigh(dense_matrix(spec))
    c0 = U[0].conj()  # U^dagger |0>
    return [U @ (np.exp(-1j * E * ti) * c0) for ti in t]


def energy(spec: HamiltonianSpec, psi: np.ndarray) -> float:
    return float(np.vdot(psi, apply_hamiltonian(spec, psi)).real)


# --------------------------------------------------------------------------
# Observables


@dataclass(frozen=True)
class Observables:
    p_k: np.ndarray  # (N+1,)
    n_i: np.ndarray  # (N,)
    c_ij: np.ndarray  # (N, N), diagonal = n_i


def _observables_from_probs(probs: np.ndarray, n: int) -> Observables:
    idx = np.arange(2**n, dtype=np.int64)
    popcount = np.zeros(2**n, dtype=np.int64)
    for i in range(n):
        popcount += (idx >> i) & 1
    p_k = np.bincount(popcount, weights=probs, minlength=n + 1)
    # Axis a of the reshaped tensor is site n-1-a.
    tensor = probs.reshape((2,) * n) if n else probs
    n_i = np.zeros(n)
    c = np.zeros((n, n))
    for i in range(n):
        ai = n - 1 - i
        n_i[i] = np.take(tensor, 1, axis=ai).sum()
        for j in range(i + 1, n):
            aj = n - 1 - j
            sub = np.take(np.take(tensor, 1, axis=ai), 1, axis=aj if aj < ai else aj - 1)
            c[i, j] = c[j, i] = sub.sum()
        c[i, i] = n_i[i]
    return Observables(p_k, n_i, c)


def observables(state: np.ndarray) -> Observables:
    n = int(round(math.log2(len(state))))
    probs = np.abs(state) ** 2
    return _observables_from_probs(probs, n)


def sample_shots(state: np.ndarray, n_shots: int, seed: int) -> Observables:
    """Empirical observables from ``n_shots`` bitstrings drawn with PCG64(seed)."""
    if n_shots < 1:
        raise ValueError("n_shots must be at least 1")
    n = int(round(math.log2(len(state))))
    probs = np.abs(state) ** 2
    probs = probs / probs.sum()
    rng = np.random.Generator(np.random.PCG64(seed))
    draws = rng.choice(len(probs), size=n_shots, p=probs)
    freqs = np.bincount(draws, minlength=len(probs)) / n_shots
    return _observables_from_probs(freqs, n)


# --------------------------------------------------------------------------
# Records


@dataclass
class EvolutionRecord:
    graph_id: str
    mode: str
    times: np.ndarray
    p_k: np.ndarray  # (T, N+1)
    n_i: np.ndarray  # (T, N)
    c_ij: np.ndarray  # (T, N, N)
    estimator: dict = field(default_factory=lambda: {"kind": "exact"})
    spec_digest: str = ""
    provenance: dict = field(default_factory=dict)

    @property
    def n_qubits(self) -> int:
        return self.n_i.shape[1]

    def time_index(self, t: float) -> int:
        hits = np.flatnonzero(np.isclose(self.times, t, rtol=0, atol=1e-9))
        if len(hits) == 0:
            raise KeyError(f"record {self.graph_id!r}/{self.mode} has no time {t}")
        return int(hits[0])

    def at(self, t: float) -> Observables:
        k = self.time_index(t)
        return Observables(self.p_k[k], self.n_i[k], self.c_ij[k])

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "graph_id": self.graph_id,
            "mode": self.mode,
            "times_us": self.times.tolist(),
            "p_k": self.p_k.tolist(),
            "n_i": self.n_i.tolist(),
            "c_ij": self.c_ij.tolist(),
            "estimator": self.estimator,
            "seed": self.estimator.get("seed"),
            "spec_digest": self.spec_digest,
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, d) -> "EvolutionRecord":
        return cls(
            d["graph_id"],
            d["mode"],
            np.array(d["times_us"], dtype=float),
            np.array(d["p_k"], dtype=float),
            np.array(d["n_i"], dtype=float),
            np.array(d["c_ij"], dtype=float),
            d["estimator"],
            d["spec_digest"],
            d.get("provenance", {}),
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "EvolutionRecord":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_pipeline(
    g: AttributedGraph,
    reg: Register | None,
    constants: PhysicalConstants = PhysicalConstants(),
    mode: str = "global",
    times: Sequence[float] = tuple(np.linspace(0.05, 1.0, 20)),
    estimator: dict | None = None,
    tolerance: float = DEFAULT_TOL,
    state_cap: int = STATE_CAP,
) -> EvolutionRecord:
    """Build the Hamiltonian, evolve, and measure at every time.

    ``estimator`` is ``{"kind": "exact"}`` (default) or
    ``{"kind": "shots", "n_shots": N, "seed": s}``; each time step draws
    with seed ``s + step index``.
    """
    estimator = dict(estimator or {"kind": "exact"})
    spec = build_hamiltonian(g, reg, constants, mode)
    t = _check_times(times)
    states = evolve(spec, t, tolerance=tolerance, state_cap=state_cap)
    obs = []
    for k, psi in enumerate(states):
        if estimator["kind"] == "exact":
            obs.append(observables(psi))
        elif estimator["kind"] == "shots":
            obs.append(sample_shots(psi, int(estimator["n_shots"]), int(estimator["seed"]) + k))
        else:
            raise ValueError(f"unknown estimator {estimator['kind']!r}")
    return EvolutionRecord(
        graph_id=g.id,
        mode=mode,
        times=t,
        p_k=np.array([o.p_k for o in obs]),
        n_i=np.array([o.n_i for o in obs]),
        c_ij=np.array([o.c_ij for o in obs]),
        estimator=estimator,
        spec_digest=spec.digest(),
        provenance={"tolerance": tolerance, "spec": spec.to_dict()},
    )
