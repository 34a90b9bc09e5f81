import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rydkernel.graph_core import AttributedGraph, apply_permutation
from rydkernel.hamiltonian import HamiltonianSpec, PhysicalConstants, build_hamiltonian, dense_matrix
from rydkernel.layout import Register, lattice_cluster
from rydkernel.propagator import (
    EvolutionRecord,
    energy,
    evolve,
    evolve_dense,
    observables,
    run_pipeline,
    sample_shots,
    zero_state,
)

C = PhysicalConstants()
GRID = np.linspace(0.05, 1.0, 20)


def lattice_case(n, seed, species=None):
    rng = np.random.default_rng(seed)
    edges, reg = lattice_cluster(n, rng, compact=float(rng.random()))
    species = species or [str(s) for s in rng.choice(["C", "N", "O", "Cl"], n)]
    return AttributedGraph.from_edges(edges, species, id=f"c{n}_{seed}"), reg


def test_single_atom_rabi():
    spec = HamiltonianSpec(np.zeros((1, 1)), 2 * math.pi, [0.0])
    for t, psi in zip(GRID, evolve(spec, GRID)):
        assert observables(psi).n_i[0] == pytest.approx(math.sin(math.pi * t) ** 2, abs=1e-10)


def test_detuned_rabi_matches_closed_form():
    # [DERIVED] two-level formula: P = (Omega/W)^2 sin^2(W t / 2), W = sqrt(Omega^2 + delta^2)
    om, de = 2 * math.pi, math.pi
    spec = HamiltonianSpec(np.zeros((1, 1)), om, [de])
    w = math.hypot(om, de)
    for t, psi in zip(GRID, evolve(spec, GRID)):
        assert observables(psi).n_i[0] == pytest.approx((om / w) ** 2 * math.sin(w * t / 2) ** 2, abs=1e-10)


def test_blockaded_pair_rarely_doubly_excited():
    g = AttributedGraph.from_edges([(0, 1)], ["C", "C"])
    reg = Register(np.array([[0.0, 0.0], [5.0, 0.0]]))
    rec = run_pipeline(g, reg, C, "global", GRID)
    assert rec.c_ij[:, 0, 1].max() < 0.02
    assert rec.n_i.max() > 0.3


@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.sampled_from(["global", "local"]))
def test_krylov_matches_dense(n, seed, mode):
    g, reg = lattice_case(n, seed)
    spec = build_hamiltonian(g, reg, C, mode)
    ts = [0.1, 0.5, 1.0]
    for a, b in zip(evolve(spec, ts), evolve_dense(spec, ts)):
        assert np.linalg.norm(a - b) < 1e-8
        assert abs(np.linalg.norm(a) - 1) < 1e-12
        assert abs(energy(spec, a)) < 1e-8  # <H> of |0> is 0 and is conserved


def test_state_cap_and_bad_times():
    spec = HamiltonianSpec(np.zeros((3, 3)), 1.0, np.zeros(3))
    with pytest.raises(ValueError, match="cap"):
        evolve(spec, [1.0], state_cap=2)
    with pytest.raises(ValueError):
        evolve(spec, [0.5, 0.1])


def test_zero_time_is_initial_state():
    g, reg = lattice_case(4, 3)
    psi = evolve(build_hamiltonian(g, reg, C), [0.0])[0]
    assert np.array_equal(psi, zero_state(4))


@given(st.integers(1, 7), st.integers(0, 2**32 - 1))
def test_observable_identities(n, seed):
    rng = np.random.default_rng(seed)
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    psi /= np.linalg.norm(psi)
    obs = observables(psi)
    probs = np.abs(psi) ** 2
    bits = (np.arange(2**n)[:, None] >> np.arange(n)) & 1
    assert obs.p_k.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.arange(n + 1) @ obs.p_k == pytest.approx(obs.n_i.sum(), abs=1e-12)
    assert np.allclose(obs.n_i, probs @ bits, atol=1e-12)
    assert np.allclose(obs.c_ij, bits.T @ (probs[:, None] * bits), atol=1e-12)
    assert np.all(obs.c_ij <= np.minimum.outer(obs.n_i, obs.n_i) + 1e-12)


def test_observables_follow_node_permutation():
    g, reg = lattice_case(6, 11)
    p = np.random.default_rng(2).permutation(6)
    a = run_pipeline(g, reg, C, "local", [1.0])
    b = run_pipeline(apply_permutation(g, p), reg.permuted(p), C, "local", [1.0])
    assert np.allclose(a.p_k, b.p_k, atol=1e-10)
    assert np.allclose(b.n_i[0][p], a.n_i[0], atol=1e-10)
    assert np.allclose(b.c_ij[0][np.ix_(p, p)], a.c_ij[0], atol=1e-10)


def test_shot_sampling_is_seeded_and_consistent():
    g, reg = lattice_case(5, 5)
    psi = evolve(build_hamiltonian(g, reg, C), [1.0])[0]
    a, b, c = sample_shots(psi, 1000, 7), sample_shots(psi, 1000, 7), sample_shots(psi, 1000, 8)
    assert np.array_equal(a.c_ij, b.c_ij) and not np.array_equal(a.c_ij, c.c_ij)
    assert a.p_k.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(a.c_ij * 1000, np.round(a.c_ij * 1000), atol=1e-9)  # integer counts
    exact = observables(psi)
    big = sample_shots(psi, 200_000, 0)
    assert np.abs(big.n_i - exact.n_i).max() < 0.01


def test_shot_records_use_one_seed_per_step():
    g, reg = lattice_case(4, 1)
    rec = run_pipeline(g, reg, C, "global", [0.5, 1.0], {"kind": "shots", "n_shots": 500, "seed": 3})
    psi = evolve(build_hamiltonian(g, reg, C), [0.5, 1.0])
    assert np.array_equal(rec.p_k[1], sample_shots(psi[1], 500, 4).p_k)


def test_record_roundtrip(tmp_path):
    g, reg = lattice_case(3, 0)
    rec = run_pipeline(g, reg, C, "local", GRID)
    rec.write(tmp_path / "r.json")
    back = EvolutionRecord.read(tmp_path / "r.json")
    assert np.array_equal(back.c_ij, rec.c_ij) and back.spec_digest == rec.spec_digest
    assert np.array_equal(back.at(0.35).n_i, rec.n_i[6])
    with pytest.raises(KeyError):
        rec.at(0.333)


def test_dense_cross_check_on_eleven_qubits():
    g, reg = lattice_case(11, 4)
    spec = build_hamiltonian(g, reg, C, "local")
    assert dense_matrix(spec).shape == (2048, 2048)
    a, b = evolve(spec, [1.0])[0], evolve_dense(spec, [1.0])[0]
    assert np.linalg.norm(a - b) < 1e-8
