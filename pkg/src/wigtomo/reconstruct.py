"""Estimators, inversions, and analysis metrics.

Direct per-operator estimation turns batch signals into matrix elements by
multiplying with the operator's sampling scale C*Z; assembling all dim^2
estimates gives the raw (Hermitian, possibly unphysical) matrix, and an
eigenvalue-clipping projection gives the physical variant.  The raw matrix
is the bound-carrying object: its trace is an unbiased estimate of the state
trace over the measured (sub)space, which is the self-consistency diagnostic.

Linear inversion from a fixed displacement set solves min ||M c - x|| either
unconstrained (raw) or over the spectrahedron {rho PSD, Tr rho = 1} by
projected gradient descent with the exact Euclidean projection (eigenvalue
simplex projection), which makes the objective provably non-increasing at
step size 1/sigma_max(M)^2.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .experiment import ShotBatch, batch_signal
from .hilbert import (
    DensityMatrix,
    ElementOperator,
    FockBasis,
    OperatorKind,
    assemble_from_elements,
    element_operators,
)
from .sampling import OLISet, W2Samples, estimation_weight
from .wigner import ParityAngles


class CoverageError(ValueError):
    """Batches do not cover the full element-operator basis."""


class RankDeficiencyError(ValueError):
    """Measurement matrix cannot resolve all operator-basis coefficients."""


# ---------------------------------------------------------------------------
# direct (per-operator) estimation


def demesst_element(
    op: ElementOperator,
    angles: ParityAngles,
    batches: Sequence[ShotBatch],
) -> tuple[float, float]:
    """(estimate, stderr) of Tr[rho B_op] from that operator's batches.

    The estimate is C*Z times the mean signal (sqrt2 C*Z for off-diagonal
    kinds); the standard error comes from the between-batch spread, so
    batches should be independent groups.  A single batch yields stderr nan.
    """
    if not batches:
        raise ValueError("no batches")
    w = estimation_weight(op, angles)
    signals = np.array([batch_signal(b) for b in batches])
    est = w * float(signals.mean())
    if len(signals) < 2:
        return est, float("nan")
    se = w * float(signals.std(ddof=1)) / math.sqrt(len(signals))
    return est, se


def signals_to_estimate(weight: float, signals: np.ndarray, groups: int = 1) -> tuple[float, float]:
    """Pooled (estimate, stderr) from per-point signals split into groups."""
    signals = np.asarray(signals, dtype=float)
    est = weight * float(signals.mean())
    if groups >= 2 and signals.size >= groups:
        cut = (signals.size // groups) * groups
        gm = signals[:cut].reshape(groups, -1).mean(axis=1)
        se = weight * float(gm.std(ddof=1)) / math.sqrt(groups)
    elif signals.size >= 2:
        se = weight * float(signals.std(ddof=1)) / math.sqrt(signals.size)
    else:
        se = float("nan")
    return est, se


def physical_projection(matrix: np.ndarray, basis: FockBasis) -> tuple[DensityMatrix, float]:
    """Closest-physical variant: clip negative eigenvalues, renormalize trace.

    Returns the projected state and the clipped negative mass (an L1
    diagnostic of how unphysical the raw matrix was).
    """
    herm = (matrix + matrix.conj().T) / 2
    evals, evecs = np.linalg.eigh(herm)
    clip_mass = float(-evals[evals < 0].sum())
    clipped = np.clip(evals, 0.0, None)
    total = clipped.sum()
    if total <= 0:
        raise ValueError("raw matrix has no positive spectral weight to project")
    rho = (evecs * (clipped / total)) @ evecs.conj().T
    return DensityMatrix(basis=basis, entries=rho, physical=True), clip_mass


@dataclass(frozen=True)
class ReconstructionReport:
    """Raw and physical reconstructions with their run diagnostics."""

    strategy: str
    raw: DensityMatrix
    physical: DensityMatrix
    estimates: dict
    stderrs: dict
    trace_raw: float
    clip_mass: float
    shots: int
    diagnostics: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "strategy": self.strategy,
                "trace_raw": self.trace_raw,
                "clip_mass": self.clip_mass,
                "shots": self.shots,
                "diagnostics": self.diagnostics,
                "estimates": {k: v for k, v in self.estimates.items()},
                "stderrs": {k: v for k, v in self.stderrs.items()},
                "raw": json.loads(self.raw.to_json()),
                "physical": json.loads(self.physical.to_json()),
            }
        )


def demesst_reconstruct(
    basis: FockBasis,
    angles: ParityAngles,
    batches: Iterable[ShotBatch],
    shots: int | None = None,
) -> ReconstructionReport:
    """Group batches by operator, estimate every element, assemble both
    variants.  Raises CoverageError if any basis operator has no batches."""
    by_op: dict[str, list[ShotBatch]] = {}
    total_shots = 0
    for b in batches:
        if b.operator is None:
            raise ValueError("batch without operator id cannot be attributed")
        by_op.setdefault(b.operator, []).append(b)
        total_shots += b.shots
    ops = element_operators(basis)
    missing = [op.label for op in ops if op.label not in by_op]
    if missing:
        raise CoverageError(f"{len(missing)} operators without batches: {missing[:5]}...")
    estimates: dict[ElementOperator, float] = {}
    stderrs: dict[str, float] = {}
    for op in ops:
        est, se = demesst_element(op, angles, by_op[op.label])
        estimates[op] = est
        stderrs[op.label] = se
    raw = assemble_from_elements(basis, estimates)
    physical, clip = physical_projection(raw.entries, basis)
    return ReconstructionReport(
        strategy="demesst",
        raw=raw,
        physical=physical,
        estimates={op.label: v for op, v in estimates.items()},
        stderrs=stderrs,
        trace_raw=raw.trace(),
        clip_mass=clip,
        shots=shots if shots is not None else total_shots,
        diagnostics={"operators": len(ops)},
    )


def assemble_from_estimate_map(
    basis: FockBasis, estimates: Mapping[str, float], stderrs: Mapping[str, float], shots: int
) -> ReconstructionReport:
    """Report from already-pooled per-operator estimates (array fast path)."""
    by_op = {ElementOperator.from_label(k): v for k, v in estimates.items()}
    raw = assemble_from_elements(basis, by_op)
    physical, clip = physical_projection(raw.entries, basis)
    return ReconstructionReport(
        strategy="demesst",
        raw=raw,
        physical=physical,
        estimates=dict(estimates),
        stderrs=dict(stderrs),
        trace_raw=raw.trace(),
        clip_mass=clip,
        shots=shots,
        diagnostics={"operators": basis.dim**2},
    )


# ---------------------------------------------------------------------------
# optimized linear inversion


def _coeff_maps(basis: FockBasis):
    """Index arrays mapping coefficient vectors to matrices and back."""
    ops = element_operators(basis)
    diag_idx, pair_idx = [], []
    for a, op in enumerate(ops):
        i = basis.index_of(op.bra)
        j = basis.index_of(op.ket)
        if op.kind is OperatorKind.DIAGONAL:
            diag_idx.append((a, i))
        elif op.kind is OperatorKind.REAL_OFF_DIAG:
            pair_idx.append((a, i, j, False))
        else:
            pair_idx.append((a, i, j, True))
    return diag_idx, pair_idx


def _matrix_from_coeffs(c: np.ndarray, basis: FockBasis, maps) -> np.ndarray:
    diag_idx, pair_idx = maps
    rho = np.zeros((basis.dim, basis.dim), dtype=np.complex128)
    for a, i in diag_idx:
        rho[i, i] = c[a]
    s = 1.0 / math.sqrt(2)
    for a, i, j, imag in pair_idx:
        if imag:
            rho[i, j] += 1j * c[a] * s
            rho[j, i] += -1j * c[a] * s
        else:
            rho[i, j] += c[a] * s
            rho[j, i] += c[a] * s
    return rho


def _coeffs_from_matrix(rho: np.ndarray, basis: FockBasis, maps) -> np.ndarray:
    diag_idx, pair_idx = maps
    c = np.zeros(basis.dim**2)
    for a, i in diag_idx:
        c[a] = rho[i, i].real
    s = math.sqrt(2)
    for a, i, j, imag in pair_idx:
        c[a] = s * (rho[i, j].imag if imag else rho[i, j].real)
    return c


def simplex_project(evals: np.ndarray) -> np.ndarray:
    """Euclidean projection of a real vector onto the probability simplex."""
    u = np.sort(evals)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, len(u) + 1)
    cond = u - css / ks > 0
    k = ks[cond][-1]
    tau = css[k - 1] / k
    return np.clip(evals - tau, 0.0, None)


def spectrahedron_project(rho: np.ndarray) -> np.ndarray:
    """Exact projection onto {PSD, trace 1} in Frobenius norm."""
    herm = (rho + rho.conj().T) / 2
    evals, evecs = np.linalg.eigh(herm)
    lam = simplex_project(evals)
    return (evecs * lam) @ evecs.conj().T


def oli_reconstruct(
    oli: OLISet | np.ndarray,
    signals: np.ndarray,
    basis: FockBasis,
    max_iters: int = 10_000,
    tol: float = 1e-10,
    shots: int = 0,
) -> ReconstructionReport:
    """Invert measured signals against a fixed displacement set.

    Raw variant: unconstrained least squares over the operator-basis
    coefficients.  Physical variant: projected gradient descent on
    ||M c - x||^2 over the spectrahedron, exact projection each step, step
    size 1/sigma_max^2, stopping when the objective change drops below
    ``tol`` or after ``max_iters`` (non-convergence is reported in the
    diagnostics, not raised).
    """
    M = oli.matrix if isinstance(oli, OLISet) else np.asarray(oli)
    x = np.asarray(signals, dtype=float)
    if M.shape[0] != x.size:
        raise ValueError(f"{M.shape[0]} matrix rows vs {x.size} signals")
    svals = np.linalg.svd(M, compute_uv=False)
    if svals[-1] <= 1e-10 * svals[0]:
        raise RankDeficiencyError(
            f"measurement matrix is rank deficient (condition {svals[0] / max(svals[-1], 1e-300):.2e})"
        )
    maps = _coeff_maps(basis)
    c_raw, *_ = np.linalg.lstsq(M, x, rcond=None)
    raw = DensityMatrix(basis=basis, entries=_matrix_from_coeffs(c_raw, basis, maps))

    eta = 1.0 / svals[0] ** 2
    rho = spectrahedron_project(raw.entries)
    c = _coeffs_from_matrix(rho, basis, maps)
    obj = float(np.sum((M @ c - x) ** 2))
    converged = False
    iters = 0
    for iters in range(1, max_iters + 1):
        grad = M.T @ (M @ c - x)
        c_next = c - eta * grad
        rho = spectrahedron_project(_matrix_from_coeffs(c_next, basis, maps))
        c = _coeffs_from_matrix(rho, basis, maps)
        new_obj = float(np.sum((M @ c - x) ** 2))
        if abs(obj - new_obj) < tol:
            obj = new_obj
            converged = True
            break
        obj = new_obj
    physical = DensityMatrix(basis=basis, entries=rho, physical=True)
    _, clip = physical_projection(raw.entries, basis)
    return ReconstructionReport(
        strategy="oli",
        raw=raw,
        physical=physical,
        estimates={},
        stderrs={},
        trace_raw=raw.trace(),
        clip_mass=clip,
        shots=shots,
        diagnostics={
            "iterations": iters,
            "converged": converged,
            "objective": obj,
            "condition": float(svals[0] / svals[-1]),
        },
    )


# ---------------------------------------------------------------------------
# W^2 fidelity


def w2_fidelity(samples: W2Samples, signals: np.ndarray) -> tuple[float, float]:
    """(fidelity, stderr) of the mean ratio signal / |W_target|.

    For a pure target the importance weights normalize exactly, so the
    self-test expectation is 1 with no bias.  Denominators are guaranteed
    above the sampling cutoff; finding one below it indicates an internal
    inconsistency between sampler and estimator.
    """
    signals = np.asarray(signals, dtype=float)
    if signals.size != samples.count:
        raise ValueError("one signal per accepted sample required")
    if np.any(samples.weights < samples.cutoff):
        raise RuntimeError("accepted sample below the acceptance-weight cutoff")
    ratios = signals / samples.denominators
    f = float(ratios.mean())
    se = float(ratios.std(ddof=1)) / math.sqrt(ratios.size) if ratios.size > 1 else float("nan")
    return f, se


# ---------------------------------------------------------------------------
# metrics and fits


def fidelity(a: DensityMatrix | np.ndarray, b: DensityMatrix | np.ndarray) -> float:
    """Tr[a b], the state fidelity when b is pure; warns otherwise."""
    am = a.entries if isinstance(a, DensityMatrix) else np.asarray(a)
    bm = b.entries if isinstance(b, DensityMatrix) else np.asarray(b)
    purity = float(np.trace(bm @ bm).real)
    if abs(purity - 1.0) > 1e-6:
        warnings.warn(f"fidelity reference is not pure (purity {purity:.6f})", stacklevel=2)
    return float(np.trace(am @ bm).real)


def frobenius(a: DensityMatrix | np.ndarray, b: DensityMatrix | np.ndarray) -> float:
    am = a.entries if isinstance(a, DensityMatrix) else np.asarray(a)
    bm = b.entries if isinstance(b, DensityMatrix) else np.asarray(b)
    return float(np.linalg.norm(am - bm))


def metrics(a: DensityMatrix, b: DensityMatrix) -> dict:
    """Summary dict: overlap fidelity, Frobenius distance, trace of a."""
    bm = b.entries
    purity = float(np.trace(bm @ bm).real)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        f = float(np.trace(a.entries @ bm).real)
    return {
        "fidelity": f,
        "frobenius": frobenius(a, b),
        "trace_a": a.trace(),
        "reference_pure": abs(purity - 1.0) <= 1e-6,
    }


def fit_power_law(
    xs: Sequence[float], ys: Sequence[float], x_ref: float | None = None
) -> tuple[float, float]:
    """Fit y = a (x/x_ref)^b by least squares in log-log space; returns (a, b).

    With the default x_ref=1 the coefficient is the usual intercept, which
    for data far from x=1 is a long extrapolation whose error is dominated
    by the slope uncertainty.  Passing the geometric mean of xs decorrelates
    the two parameters, making a the fitted y at mid-range, which is the
    stable quantity to compare between curves.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("power-law fit needs positive data")
    if xs.size < 2:
        raise ValueError("need at least two points")
    if x_ref is None:
        x_ref = 1.0
    if x_ref <= 0:
        raise ValueError("x_ref must be positive")
    b, loga = np.polyfit(np.log(xs / x_ref), np.log(ys), 1)
    return float(np.exp(loga)), float(b)


def fit_phases(
    matrix: DensityMatrix | np.ndarray,
    modes: int | None = None,
    grid: int = 64,
    refine: int = 10,
) -> list[float]:
    """Relative phases of the single-excitation components maximizing the
    overlap with an equal-amplitude one-photon superposition.

    Coarse search on a ``grid``-per-axis lattice over the (modes-1)-torus,
    then one refinement pass at ``refine``-times finer resolution around the
    best cell.  Warns when the landscape is degenerate (flat).
    """
    if isinstance(matrix, DensityMatrix):
        m = matrix.basis.modes
        occ = matrix.basis.occupations
        one = [int(i) for i in np.where(occ.sum(axis=1) == 1)[0]]
        # occupations sorted photons-early-first puts e_j at ascending index j
        block = matrix.entries[np.ix_(one, one)]
    else:
        block = np.asarray(matrix)
        m = modes if modes is not None else block.shape[0]
    if block.shape != (m, m):
        raise ValueError("single-excitation block does not match mode count")
    if m < 2:
        raise ValueError("need at least two modes")

    def overlap(phis: np.ndarray) -> np.ndarray:
        # phis: (G, m-1); component vector (1, e^{i phi_1}, ...)/sqrt(m)
        G = phis.shape[0]
        comp = np.ones((G, m), dtype=np.complex128)
        comp[:, 1:] = np.exp(1j * phis)
        return np.real(np.einsum("gj,jk,gk->g", comp.conj(), block, comp)) / m

    axes = [np.linspace(-math.pi, math.pi, grid, endpoint=False) for _ in range(m - 1)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m - 1)
    vals = overlap(mesh)
    if vals.max() - vals.min() < 1e-12:
        warnings.warn("phase-fit objective is flat; phases are unconstrained", stacklevel=2)
    best = mesh[int(np.argmax(vals))]
    step = 2 * math.pi / grid
    fine_axes = [
        best[k] + np.linspace(-step, step, 2 * refine + 1) for k in range(m - 1)
    ]
    fine = np.stack(np.meshgrid(*fine_axes, indexing="ij"), axis=-1).reshape(-1, m - 1)
    fvals = overlap(fine)
    sol = fine[int(np.argmax(fvals))]
    return [float(math.remainder(p, 2 * math.pi)) for p in sol]
