import math

import numpy as np
import pytest

from wigtomo import (
    assemble_from_elements,
    element_operators,
    enumerate_basis,
    ideal_w_state,
    pi_angles,
)
from wigtomo.experiment import PAIRED, ProtocolConfig, run_batch
from wigtomo.hilbert import random_density_matrix, random_hermitian
from wigtomo.reconstruct import (
    demesst_element,
    demesst_reconstruct,
    fidelity,
    fit_phases,
    fit_power_law,
    frobenius,
    metrics,
    physical_projection,
    signals_to_estimate,
    simplex_project,
    spectrahedron_project,
    w2_fidelity,
)
from wigtomo.sampling import demesst_sample, estimation_weight, w2_sample
from wigtomo.seeding import substream
from wigtomo.wigner import wigner_state_batch


def test_signals_to_estimate_formulas():
    s = np.array([0.2, 0.4, 0.1, 0.5, 0.3, 0.6])
    est, se = signals_to_estimate(2.0, s)
    assert est == pytest.approx(2.0 * s.mean())
    assert se == pytest.approx(2.0 * s.std(ddof=1) / math.sqrt(6))
    est_g, se_g = signals_to_estimate(2.0, s, groups=3)
    gm = s.reshape(3, 2).mean(axis=1)
    assert est_g == pytest.approx(2.0 * s.mean())
    assert se_g == pytest.approx(2.0 * gm.std(ddof=1) / math.sqrt(3))


def test_demesst_element_unbiased(w3, angles3):
    # Estimate one coherence from simulated batches over several seeds; the
    # per-seed pulls stay inside 4 sigma and their average inside 2.
    basis = w3.basis
    op = [o for o in element_operators(basis) if o.label == "r:1,0,0|0,1,0"][0]
    truth = float(np.trace(w3.entries @ op.matrix(basis)).real)
    protocol = ProtocolConfig(readout_flip=0.0, repetitions=2, sign_mode=PAIRED)
    pulls = []
    for seed in range(6):
        rng = substream(seed, "elem")
        batches = [
            run_batch(w3, point, phi, angles3, protocol, rng, operator=op.label)
            for point, phi in demesst_sample(op, angles3, 3000, seed=seed + 100)
        ]
        est, se = demesst_element(op, angles3, batches)
        assert 0.0 < se < 0.12
        pulls.append((est - truth) / se)
    assert max(abs(p) for p in pulls) < 4.0
    assert abs(np.mean(pulls)) < 2.0 / math.sqrt(len(pulls))


def test_demesst_reconstruct_small_budget(w3, angles3):
    basis = w3.basis
    protocol = ProtocolConfig(readout_flip=0.0, repetitions=2, sign_mode=PAIRED)
    rng = substream(23, "rec")
    batches = []
    for op in element_operators(basis):
        for point, phi in demesst_sample(op, angles3, 400, seed=int(rng.integers(2**31))):
            batches.append(run_batch(w3, point, phi, angles3, protocol, rng, operator=op.label))
    report = demesst_reconstruct(basis, angles3, batches)
    assert report.strategy == "demesst"
    assert set(report.estimates) == {op.label for op in element_operators(basis)}
    assert report.trace_raw == pytest.approx(1.0, abs=0.1)
    assert fidelity(report.physical, w3) > 0.65
    assert report.physical.physical and not report.raw.physical


def test_physical_projection_properties(rng):
    basis = enumerate_basis(2, 1)
    raw = random_hermitian(basis.dim, rng)
    raw = raw / np.trace(raw).real
    state, clip = physical_projection(raw, basis)
    evals = np.linalg.eigvalsh(state.entries)
    assert evals.min() >= -1e-12
    assert state.trace() == pytest.approx(1.0, abs=1e-12)
    assert clip >= 0
    # Idempotent on an already-physical matrix, with no clipped mass.
    again, clip2 = physical_projection(np.asarray(state.entries), basis)
    np.testing.assert_allclose(np.asarray(again.entries), np.asarray(state.entries), atol=1e-10)
    assert clip2 == pytest.approx(0.0, abs=1e-10)


def test_simplex_project_known_values():
    np.testing.assert_allclose(simplex_project(np.array([0.6, 0.6, -0.2])), [0.5, 0.5, 0.0], atol=1e-12)
    np.testing.assert_allclose(simplex_project(np.array([2.0, 0.0, 0.0])), [1.0, 0.0, 0.0], atol=1e-12)
    v = simplex_project(np.array([0.3, 0.3, 0.3]))
    np.testing.assert_allclose(v, [1 / 3] * 3, atol=1e-12)


def test_simplex_project_properties(rng):
    for _ in range(50):
        y = rng.normal(size=6)
        x = simplex_project(y)
        assert x.min() >= -1e-12
        assert x.sum() == pytest.approx(1.0, abs=1e-12)
        # Projection preserves ordering.
        order = np.argsort(y)
        assert np.all(np.diff(x[order]) >= -1e-12)


def test_spectrahedron_project_is_closest(rng):
    dim = 4
    a = random_hermitian(dim, rng)
    p = spectrahedron_project(a)
    d_best = np.linalg.norm(a - p)
    basis = enumerate_basis(1, dim - 1)
    for _ in range(30):
        q = random_density_matrix(basis, rng).entries
        assert d_best <= np.linalg.norm(a - q) + 1e-10


def test_fit_power_law_exact():
    xs = np.array([10.0, 20.0, 40.0, 80.0])
    ys = 3.0 * xs**-0.5
    a, b = fit_power_law(xs, ys)
    assert b == pytest.approx(-0.5, abs=1e-12)
    assert a == pytest.approx(3.0, rel=1e-12)
    # Centered form: the coefficient becomes the value at x_ref.
    a40, b40 = fit_power_law(xs, ys, x_ref=40.0)
    assert b40 == pytest.approx(-0.5, abs=1e-12)
    assert a40 == pytest.approx(3.0 * 40**-0.5, rel=1e-12)
    with pytest.raises(ValueError):
        fit_power_law(xs, ys, x_ref=0.0)


def test_fit_phases_recovery():
    for phs in [(0.04,), (-0.19, 1.57), (-1.36, -2.90, 0.60)]:
        got = fit_phases(ideal_w_state(len(phs) + 1, phs))
        assert len(got) == len(phs)
        for g, p in zip(got, phs):
            assert g == pytest.approx(p, abs=0.02)


def test_fit_phases_block_input(rng):
    w = ideal_w_state(3, (-0.19, 1.57))
    block = w.entries[1:, 1:] + 0.005 * random_hermitian(3, rng)
    got = fit_phases(block, modes=3)
    assert got[0] == pytest.approx(-0.19, abs=0.05)
    assert got[1] == pytest.approx(1.57, abs=0.05)


def test_metrics_orthogonal_states():
    a = ideal_w_state(3)
    vec = np.zeros(4, dtype=complex)
    vec[0] = 1.0
    from wigtomo.hilbert import DensityMatrix

    vac = DensityMatrix(basis=a.basis, entries=np.outer(vec, vec.conj()), physical=True)
    assert fidelity(a, vac) == pytest.approx(0.0, abs=1e-12)
    assert frobenius(a, vac) == pytest.approx(math.sqrt(2.0), abs=1e-12)
    m = metrics(a, vac)
    assert m["fidelity"] == pytest.approx(0.0, abs=1e-12)
    assert m["trace_a"] == pytest.approx(1.0, abs=1e-12)
    assert m["reference_pure"]


def test_w2_selftest_is_exactly_normalized(w3, angles3):
    # Sampling and evaluating the same pure state gives ratio 1 pointwise,
    # before any measurement noise.
    samples = w2_sample(w3, angles3, 500, seed=2)
    w = wigner_state_batch(w3.entries, w3.basis, samples.alphas, np.array(angles3.thetas))
    signals = np.real(np.exp(1j * samples.phases) * w)
    f, se = w2_fidelity(samples, signals)
    assert f == pytest.approx(1.0, abs=1e-10)
    assert se == pytest.approx(0.0, abs=1e-10)


def test_w2_fidelity_error_paths(w3, angles3):
    samples = w2_sample(w3, angles3, 50, seed=2)
    with pytest.raises(ValueError):
        w2_fidelity(samples, np.ones(49))


def test_assemble_respects_sqrt2_convention(basis31):
    # Off-diagonal estimates are coefficients of the orthonormal Hermitian
    # pair; assembly divides the sqrt(2) back out.
    ops = element_operators(basis31)
    est = {op: 0.0 for op in ops}
    r_op = [o for o in ops if o.label == "r:0,0,0|1,0,0"][0]
    i_op = [o for o in ops if o.label == "i:0,0,0|1,0,0"][0]
    est[r_op] = 1.0
    est[i_op] = -0.5
    rho = assemble_from_elements(basis31, est)
    i, j = basis31.index_of((0, 0, 0)), basis31.index_of((1, 0, 0))
    assert rho.entries[i, j] == pytest.approx((1.0 - 0.5j) / math.sqrt(2))
    assert rho.entries[j, i] == pytest.approx((1.0 + 0.5j) / math.sqrt(2))
    # The coefficients round-trip through the trace inner product.
    assert np.trace(rho.entries @ r_op.matrix(basis31)).real == pytest.approx(1.0)
    assert np.trace(rho.entries @ i_op.matrix(basis31)).real == pytest.approx(-0.5)
