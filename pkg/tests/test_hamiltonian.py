import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rydkernel.graph_core import AttributedGraph, apply_permutation
from rydkernel.hamiltonian import (
    HamiltonianSpec,
    PhysicalConstants,
    apply_hamiltonian,
    basis_bits,
    build_hamiltonian,
    dense_matrix,
    diagonal_energies,
    ising_diagnostics,
    local_detuning,
    qubit_permutation_operator,
)
from rydkernel.layout import lattice_cluster

C = PhysicalConstants()


@st.composite
def lattice_specs(draw, max_qubits=7):
    n = draw(st.integers(1, max_qubits))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    edges, reg = lattice_cluster(n, rng, compact=float(rng.random()))
    species = [str(s) for s in rng.choice(["C", "N", "O", "Cl", "Br"], n)]
    g = AttributedGraph.from_edges(edges, species)
    return g, reg, draw(st.sampled_from(["global", "local"]))


def test_reference_scales():
    # [DERIVED] 865723 / 5**6 and 2*pi / J_NN by hand
    assert C.j_nn() == pytest.approx(55.40627, abs=1e-5)
    diag = ising_diagnostics(HamiltonianSpec(np.zeros((1, 1)), C.omega, [C.delta0]), C)
    assert diag.dimensionless_detuning == pytest.approx(0.11340, abs=1e-5)


def test_local_detuning_values():
    g = AttributedGraph.from_edges([(0, 1), (1, 2)], ["C", "O", "Cl"])
    delta = local_detuning(g, C)
    assert delta[0] == math.pi
    assert delta[1] == pytest.approx(math.pi * 12.011 / 15.999, rel=1e-15)
    assert delta[1] / math.pi == pytest.approx(0.75073, abs=1e-5)
    assert np.all(np.diff(delta) < 0)  # heavier atoms get smaller detuning


def test_all_carbon_local_equals_global():
    edges, reg = lattice_cluster(5, np.random.default_rng(0))
    g = AttributedGraph.from_edges(edges, ["C"] * 5)
    a, b = build_hamiltonian(g, reg, C, "global"), build_hamiltonian(g, reg, C, "local")
    assert np.array_equal(a.detuning, b.detuning) and np.array_equal(a.coupling, b.coupling)


def test_rejects_light_atoms_and_bad_specs():
    g = AttributedGraph(1, frozenset(), ("B",), (12.0,))  # lighter than the 12.011 reference
    with pytest.raises(ValueError, match="lighter"):
        local_detuning(g, C)
    with pytest.raises(ValueError):
        HamiltonianSpec(np.array([[0, 1], [2, 0]]), 1.0, [0, 0])
    with pytest.raises(ValueError):
        PhysicalConstants(omega=0)


def test_spec_is_immutable_and_serialisable():
    edges, reg = lattice_cluster(3, np.random.default_rng(1))
    spec = build_hamiltonian(AttributedGraph.from_edges(edges, ["C", "O", "N"]), reg, C, "local")
    with pytest.raises(ValueError):
        spec.coupling[0, 1] = 1.0
    back = HamiltonianSpec.from_dict(spec.to_dict())
    assert back.digest() == spec.digest()


@given(lattice_specs())
def test_diagonal_matches_ising_form(case):
    g, reg, mode = case
    spec = build_hamiltonian(g, reg, C, mode)
    diag = ising_diagnostics(spec, C)
    sz = 1.0 - 2.0 * basis_bits(g.node_count)  # sigma^z = +1 on |0>
    iu = np.triu_indices(g.node_count, 1)
    ising = diag.e_bar + sz @ diag.h_z + ((sz[:, iu[0]] * sz[:, iu[1]]) * spec.coupling[iu] / 4).sum(1)
    assert np.allclose(diagonal_energies(spec), ising, atol=1e-9 * max(1.0, np.abs(ising).max()))


@given(lattice_specs())
def test_matrix_free_product_matches_dense(case):
    g, reg, mode = case
    spec = build_hamiltonian(g, reg, C, mode)
    H = dense_matrix(spec)
    assert np.array_equal(H, H.T)
    rng = np.random.default_rng(0)
    psi = rng.normal(size=2**g.node_count) + 1j * rng.normal(size=2**g.node_count)
    assert np.allclose(apply_hamiltonian(spec, psi), H @ psi, atol=1e-10)


@given(lattice_specs(max_qubits=6), st.randoms(use_true_random=False))
def test_permutation_covariance(case, rnd):
    g, reg, mode = case
    p = list(range(g.node_count))
    rnd.shuffle(p)
    spec = build_hamiltonian(g, reg, C, mode)
    spec_p = build_hamiltonian(apply_permutation(g, p), reg.permuted(p), C, mode)
    assert np.allclose(spec_p.coupling, spec.permuted(p).coupling, rtol=1e-12)
    U = qubit_permutation_operator(p)
    assert np.allclose(U @ dense_matrix(spec) @ U.T, dense_matrix(spec_p), atol=1e-9)


def test_degree_estimate_of_field_on_ideal_coupling():
    g = AttributedGraph.from_edges([(0, 1), (1, 2), (1, 3)], ["C", "C", "O", "C"])
    spec = build_hamiltonian(g, None, C, "local")
    diag = ising_diagnostics(spec, C, degrees=g.degrees())
    # with nearest-neighbour-only couplings the estimate is exact
    assert np.allclose(diag.h_z, diag.h_z_degree_approx, rtol=1e-12)


def test_dense_cap():
    spec = HamiltonianSpec(np.zeros((13, 13)), 1.0, np.zeros(13))
    with pytest.raises(ValueError, match="dense cap"):
        dense_matrix(spec)
