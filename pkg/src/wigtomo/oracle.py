"""Reference evaluator built on truncated matrix exponentials.

Everything here recomputes what the closed-form Laguerre route in
:mod:`wigtomo.wigner` produces, but from first principles: the displacement
operator is exp(alpha a^dag - alpha^* a) of a finite ladder, exponentiated
numerically, and the displaced rotation is the literal operator product
D exp(i theta n) D^dag.  Truncation starts at 60 levels and is raised until
the population leaking past the kept block is below 1e-12.  Slow by design;
used to validate the fast path, never inside it.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import expm

from .hilbert import FockBasis, Occupation

DEFAULT_TRUNCATION = 60
_TAIL_TOL = 1e-12
_MAX_TRUNCATION = 400


def _ladder(truncation: int) -> np.ndarray:
    # creation operator: <n+1| a^dag |n> = sqrt(n+1)
    return np.diag(np.sqrt(np.arange(1.0, truncation)), -1)


def oracle_displacement_matrix(alpha: complex, truncation: int = DEFAULT_TRUNCATION) -> np.ndarray:
    ad = _ladder(truncation)
    return expm(alpha * ad - np.conj(alpha) * ad.T)


def _converged_displacement(alpha: complex, keep: int, truncation: int) -> np.ndarray:
    trunc = max(truncation, keep + 10)
    while True:
        D = oracle_displacement_matrix(alpha, trunc)
        # population of the kept columns that leaked into the top levels
        tail = float(np.sum(np.abs(D[trunc - 5 :, :keep]) ** 2))
        if tail < _TAIL_TOL:
            return D
        if trunc >= _MAX_TRUNCATION:
            raise RuntimeError(f"displacement truncation did not converge for alpha={alpha}")
        trunc += 40


def oracle_displacement_element(
    row: int, col: int, alpha: complex, truncation: int = DEFAULT_TRUNCATION
) -> complex:
    keep = max(row, col) + 1
    D = _converged_displacement(alpha, keep, truncation)
    return complex(D[row, col])


def oracle_rotated_matrix(
    keep: int, alpha: complex, theta: float, truncation: int = DEFAULT_TRUNCATION
) -> np.ndarray:
    """(keep, keep) block of D(alpha) exp(i theta n) D(alpha)^dag."""
    D = _converged_displacement(alpha, keep, truncation)
    trunc = D.shape[0]
    phases = np.exp(1j * theta * np.arange(trunc))
    U = (D * phases[None, :]) @ D.conj().T
    return U[:keep, :keep]


def oracle_wigner_state(
    matrix: np.ndarray,
    basis: FockBasis,
    alphas: np.ndarray,
    thetas: np.ndarray,
    truncation: int = DEFAULT_TRUNCATION,
) -> np.ndarray:
    """W values at P points, shape of alphas (P, modes), via expm per mode."""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=np.complex128))
    P = alphas.shape[0]
    if basis.modes == 0:
        return np.full(P, complex(matrix[0, 0]))
    nlev = basis.cutoff + 1
    occ = basis.occupations
    out = np.empty(P, dtype=np.complex128)
    for p in range(P):
        X = np.ones((basis.dim, basis.dim), dtype=np.complex128)
        for m in range(basis.modes):
            U = oracle_rotated_matrix(nlev, complex(alphas[p, m]), float(thetas[m]), truncation)
            X *= U[occ[:, m][:, None], occ[:, m][None, :]]
        out[p] = np.einsum("ab,ba->", matrix, X)
    return out


def oracle_wigner_ketbra(
    bra: Occupation,
    ket: Occupation,
    alphas: np.ndarray,
    thetas: np.ndarray,
    truncation: int = DEFAULT_TRUNCATION,
) -> np.ndarray:
    """W of |bra><ket| at P points via expm per mode."""
    alphas = np.atleast_2d(np.asarray(alphas, dtype=np.complex128))
    P = alphas.shape[0]
    out = np.ones(P, dtype=np.complex128)
    nlev = max(max(bra, default=0), max(ket, default=0)) + 1
    for p in range(P):
        val = 1.0 + 0.0j
        for m, (nb, nk) in enumerate(zip(bra, ket)):
            U = oracle_rotated_matrix(nlev, complex(alphas[p, m]), float(thetas[m]), truncation)
            val *= U[nk, nb]
        out[p] = val
    return out
