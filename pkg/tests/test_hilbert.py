import math

import numpy as np
import pytest

from wigtomo import (
    CapacityError,
    DensityMatrix,
    ElementOperator,
    FockBasis,
    OperatorKind,
    assemble_from_elements,
    element_operators,
    embed_state,
    enumerate_basis,
    ideal_w_state,
    perturbed_state,
    product_basis,
)
from wigtomo.hilbert import (
    ModePartition,
    project_and_trace,
    random_density_matrix,
    state_sort_key,
)


def test_single_excitation_order():
    b = enumerate_basis(3, 1)
    assert b.states == ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))
    assert b.dim == 4


def test_dim_is_binomial():
    for modes in (1, 2, 3, 4):
        for cutoff in (0, 1, 2, 3):
            b = enumerate_basis(modes, cutoff)
            assert b.dim == math.comb(modes + cutoff, cutoff)


def test_states_graded_and_sorted():
    b = enumerate_basis(3, 3)
    totals = [sum(s) for s in b.states]
    assert totals == sorted(totals)
    assert list(b.states) == sorted(b.states, key=state_sort_key)
    assert len(set(b.states)) == b.dim


def test_index_of_roundtrip():
    b = enumerate_basis(2, 3)
    for i, occ in enumerate(b.states):
        assert b.index_of(occ) == i
    occ = b.occupations
    assert occ.shape == (b.dim, 2)
    assert tuple(occ[3]) == b.states[3]


def test_capacity_guard():
    with pytest.raises(CapacityError):
        enumerate_basis(30, 10)
    with pytest.raises(CapacityError):
        product_basis(10, 9)


def test_product_basis_shape():
    b = product_basis(3, 2)
    assert b.dim == 27
    assert b.cutoff == 6
    assert (2, 2, 2) in b.states
    assert list(b.states) == sorted(b.states, key=state_sort_key)
    # Graded space of the same cutoff is a strict subset.
    graded = enumerate_basis(3, 2)
    assert set(graded.states) < set(b.states)


def test_embed_state_preserves_entries(rng):
    small = enumerate_basis(2, 2)
    big = product_basis(2, 2)
    state = random_density_matrix(small, rng)
    emb = embed_state(state, big)
    assert emb.basis is big
    assert abs(emb.trace() - 1.0) < 1e-12
    for i, bra in enumerate(small.states):
        for j, ket in enumerate(small.states):
            assert emb.entries[big.index_of(bra), big.index_of(ket)] == state.entries[i, j]
    # Rows outside the embedded support stay zero.
    k = big.index_of((2, 2))
    assert np.all(emb.entries[k] == 0)


def test_embed_state_errors(rng):
    state = random_density_matrix(enumerate_basis(2, 2), rng)
    with pytest.raises(ValueError):
        embed_state(state, product_basis(3, 2))
    with pytest.raises(ValueError):
        embed_state(state, product_basis(2, 1))  # (2, 0) has no slot


def test_density_matrix_json_roundtrip(rng):
    state = random_density_matrix(enumerate_basis(2, 2), rng)
    back = DensityMatrix.from_json(state.to_json())
    assert back.basis.states == state.basis.states
    assert back.physical == state.physical
    np.testing.assert_array_equal(back.entries, state.entries)


def test_json_roundtrip_keeps_product_states(rng):
    big = product_basis(2, 2)
    state = random_density_matrix(enumerate_basis(2, 2), rng)
    emb = embed_state(state, big)
    back = DensityMatrix.from_json(emb.to_json())
    assert back.basis.states == big.states
    np.testing.assert_array_equal(back.entries, emb.entries)


def test_element_operators_order(basis31):
    ops = element_operators(basis31)
    assert len(ops) == basis31.dim**2
    kinds = [op.kind for op in ops]
    assert kinds[: basis31.dim] == [OperatorKind.DIAGONAL] * basis31.dim
    # Off-diagonal pairs come real-part first, imaginary second.
    for k in range(basis31.dim, len(ops), 2):
        assert kinds[k] == OperatorKind.REAL_OFF_DIAG
        assert kinds[k + 1] == OperatorKind.IMAG_OFF_DIAG
        assert ops[k].bra == ops[k + 1].bra and ops[k].ket == ops[k + 1].ket


def test_element_operators_orthonormal(basis31):
    ops = element_operators(basis31)
    mats = [op.matrix(basis31) for op in ops]
    for m in mats:
        np.testing.assert_allclose(m, m.conj().T, atol=1e-15)
    gram = np.array([[np.trace(a @ b).real for b in mats] for a in mats])
    np.testing.assert_allclose(gram, np.eye(len(ops)), atol=1e-12)


def test_operator_label_roundtrip(basis31):
    for op in element_operators(basis31):
        assert ElementOperator.from_label(op.label) == op


def test_assemble_roundtrip(rng):
    basis = enumerate_basis(2, 2)
    rho = random_density_matrix(basis, rng)
    est = {
        op: float(np.trace(rho.entries @ op.matrix(basis)).real)
        for op in element_operators(basis)
    }
    back = assemble_from_elements(basis, est)
    np.testing.assert_allclose(back.entries, rho.entries, atol=1e-12)


def test_ideal_w_state_amplitudes():
    w = ideal_w_state(3, (-0.19, 1.57))
    vec = np.zeros(4, dtype=complex)
    vec[1] = 1.0
    vec[2] = np.exp(-0.19j)
    vec[3] = np.exp(1.57j)
    vec /= math.sqrt(3)
    np.testing.assert_allclose(w.entries, np.outer(vec, vec.conj()), atol=1e-15)
    assert abs(w.trace() - 1.0) < 1e-12
    assert w.physical


def test_perturbed_state_frozen_fidelity():
    w = ideal_w_state(3, (-0.19, 1.57), cutoff=2)
    p = perturbed_state(w, leak_weight=0.05, dephase_weight=0.05, seed=0)
    fid = float(np.trace(p.entries @ w.entries).real)
    assert fid == pytest.approx(0.9183333333333339, abs=1e-9)
    assert p.trace() == pytest.approx(1.0, abs=1e-9)
    assert p.physical


def test_perturbed_state_leak_needs_room():
    with pytest.raises(ValueError):
        perturbed_state(ideal_w_state(3), leak_weight=0.1, dephase_weight=0.0)


def test_project_and_trace_w_state(w3):
    part = ModePartition(vacuum_modes=(0,), active_modes=(1, 2))
    red = project_and_trace(w3, part)
    assert red.basis.modes == 2
    assert red.trace() == pytest.approx(2.0 / 3.0, abs=1e-12)
    # The surviving block is the two-mode single-excitation coherence.
    i, j = red.basis.index_of((1, 0)), red.basis.index_of((0, 1))
    assert red.entries[i, j] == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_random_density_matrix_physical(rng):
    basis = enumerate_basis(2, 2)
    for _ in range(20):
        rho = random_density_matrix(basis, rng)
        np.testing.assert_allclose(rho.entries, rho.entries.conj().T, atol=1e-12)
        assert rho.trace() == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.eigvalsh(rho.entries).min() > -1e-12
