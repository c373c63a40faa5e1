"""Generalized Wigner functions of states and element operators.

The observable behind every evaluation is the displaced number rotation
U(alpha, theta) = D(alpha) exp(i theta n) D(alpha)^dag per mode; theta = pi
recovers the displaced parity and the ordinary Wigner function up to
normalization.  The commutation relation exp(i theta n) D(b) exp(-i theta n)
= D(e^{i theta} b) collapses U to

    U(alpha, theta) = e^{i |alpha|^2 sin theta} D((1 - e^{i theta}) alpha)
                      * exp(i theta n),

so matrix elements reduce to associated-Laguerre displacement elements and
no operator truncation enters the fast path.  Values of the resulting
generalized Wigner function W(alpha_vec, theta_vec) = Tr[rho (x) U_m] are
bounded by 1 in magnitude for physical states.

Radial L1 norms Z = integral |W_ketbra| d^2alpha (per active mode) and the
normalization constants C = prod 2(1 - cos theta)/pi make C*Z the natural
importance-sampling weight; a vacuum-pinned mode always contributes exactly
a factor 2 to C*Z, which is why projecting empty modes out pays.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.special import eval_genlaguerre, gammaln

from .hilbert import DensityMatrix, ElementOperator, FockBasis, ModePartition, Occupation

DEFAULT_RADIUS_BOUND = 6.0

_DEGENERATE_TOL = 1e-9


class IntegrationError(RuntimeError):
    """Radial norm quadrature failed to converge."""


def _wrap_angle(theta: float) -> float:
    return math.remainder(theta, 2 * math.pi)


def is_degenerate_angle(theta: float) -> bool:
    """True when theta is 0 mod 2pi, where the rotation is the identity."""
    return abs(_wrap_angle(theta)) < _DEGENERATE_TOL


@dataclass(frozen=True)
class ParityAngles:
    """Per-mode rotation angles theta_m of the measurement.

    Angles congruent to 0 are rejected: the rotation degenerates to the
    identity there and the sampling normalization 2(1 - cos theta)/pi
    vanishes.
    """

    thetas: tuple[float, ...]

    def __post_init__(self):
        for t in self.thetas:
            if is_degenerate_angle(t):
                raise ValueError(f"degenerate rotation angle {t} (0 mod 2pi)")

    @property
    def modes(self) -> int:
        return len(self.thetas)

    def subset(self, modes: tuple[int, ...]) -> "ParityAngles":
        return ParityAngles(tuple(self.thetas[m] for m in modes))

    def negated(self) -> "ParityAngles":
        return ParityAngles(tuple(-t for t in self.thetas))


def pi_angles(modes: int) -> ParityAngles:
    return ParityAngles((math.pi,) * modes)


@dataclass(frozen=True)
class DisplacementPoint:
    """Complex displacement per active mode, tagged with the mode partition."""

    alphas: tuple[complex, ...]
    partition: ModePartition
    radius_bound: float = DEFAULT_RADIUS_BOUND

    def __post_init__(self):
        if len(self.alphas) != len(self.partition.active_modes):
            raise ValueError("one displacement per active mode required")
        for a in self.alphas:
            if abs(a) > self.radius_bound + 1e-12:
                raise ValueError(f"displacement |{a}| exceeds radius bound {self.radius_bound}")


# ---------------------------------------------------------------------------
# displacement matrix elements


def displacement_element(row: int, col: int, alpha: complex) -> complex:
    """<row| D(alpha) |col> in the number basis, exact closed form."""
    if row < 0 or col < 0:
        raise ValueError("negative Fock index")
    x = abs(alpha) ** 2
    if row >= col:
        amp = alpha ** (row - col)
        n, k = col, row - col
    else:
        amp = (-np.conj(alpha)) ** (col - row)
        n, k = row, col - row
    logroot = 0.5 * (gammaln(n + 1) - gammaln(n + k + 1))
    return complex(amp * math.exp(logroot - x / 2) * eval_genlaguerre(n, k, x))


def displacement_matrix(dim: int, alpha: complex) -> np.ndarray:
    """Dense (dim, dim) displacement matrix from the closed form."""
    return _displacement_batch(dim, np.array([alpha]))[0]


def _displacement_batch(dim: int, alphas: np.ndarray) -> np.ndarray:
    """(P, dim, dim) displacement matrices for a vector of alphas."""
    alphas = np.asarray(alphas, dtype=np.complex128)
    x = np.abs(alphas) ** 2
    expf = np.exp(-x / 2)
    out = np.empty((alphas.size, dim, dim), dtype=np.complex128)
    for r in range(dim):
        for c in range(dim):
            if r >= c:
                amp = alphas ** (r - c)
                n, k = c, r - c
            else:
                amp = (-np.conj(alphas)) ** (c - r)
                n, k = r, c - r
            logroot = 0.5 * (gammaln(n + 1) - gammaln(n + k + 1))
            out[:, r, c] = amp * math.exp(logroot) * expf * eval_genlaguerre(n, k, x)
    return out


def rotated_displacement_batch(dim: int, alphas: np.ndarray, theta: float) -> np.ndarray:
    """(P, dim, dim) matrices of D(a) exp(i theta n) D(a)^dag via the closed form."""
    alphas = np.asarray(alphas, dtype=np.complex128)
    gamma = (1.0 - np.exp(1j * theta)) * alphas
    mats = _displacement_batch(dim, gamma)
    phase = np.exp(1j * np.abs(alphas) ** 2 * math.sin(theta))
    mats *= phase[:, None, None]
    mats *= np.exp(1j * theta * np.arange(dim))[None, None, :]
    return mats


# ---------------------------------------------------------------------------
# state evaluation


def wigner_state_batch(
    matrix: np.ndarray, basis: FockBasis, alphas: np.ndarray, thetas: np.ndarray
) -> np.ndarray:
    """W values Tr[rho (x)_m U(alpha_m, theta_m)] at P points.

    alphas has shape (P, modes); matrix is any (dim, dim) complex array on
    ``basis`` (Hermiticity is not assumed).  Returns a length-P complex
    vector.  modes=0 (scalar space) returns the constant matrix[0, 0].
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=np.complex128))
    P = alphas.shape[0]
    if basis.modes == 0:
        return np.full(P, complex(matrix[0, 0]))
    if alphas.shape[1] != basis.modes:
        raise ValueError(f"alphas per-point count {alphas.shape[1]} != modes {basis.modes}")
    occ = basis.occupations
    nlev = int(occ.max(initial=0)) + 1
    mats = [
        rotated_displacement_batch(nlev, alphas[:, m], float(thetas[m]))
        for m in range(basis.modes)
    ]
    # X[p, a, b] = prod_m <occ_a[m]| U_m |occ_b[m]>
    X = np.ones((P, basis.dim, basis.dim), dtype=np.complex128)
    for m in range(basis.modes):
        X *= mats[m][:, occ[:, m][:, None], occ[:, m][None, :]]
    return np.einsum("ab,pba->p", matrix, X)


def generalized_wigner_state(
    state: DensityMatrix, point: DisplacementPoint, angles: ParityAngles
) -> complex:
    """W of a state at one displacement point.

    The state must already live on the point's active modes (project and
    trace first if the operator support is a strict subset), and ``angles``
    runs over those same modes.
    """
    if angles.modes != state.basis.modes:
        raise ValueError("angles do not match the state's mode count")
    if len(point.alphas) != state.basis.modes:
        raise ValueError("point does not match the state's mode count")
    vals = wigner_state_batch(
        state.entries,
        state.basis,
        np.array([point.alphas], dtype=np.complex128),
        np.array(angles.thetas),
    )
    return complex(vals[0])


# ---------------------------------------------------------------------------
# ketbra / element-operator evaluation


def ketbra_wigner_batch(
    bra: Occupation, ket: Occupation, alphas: np.ndarray, thetas: np.ndarray
) -> np.ndarray:
    """W of |bra><ket| at P points; alphas shape (P, len(bra)).

    Single product of per-mode rotated displacement elements
    <ket_m| U_m |bra_m>; empty occupations give the constant 1.
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=np.complex128))
    P = alphas.shape[0]
    out = np.ones(P, dtype=np.complex128)
    for m, (nb, nk) in enumerate(zip(bra, ket)):
        theta = float(thetas[m])
        a = alphas[:, m]
        gamma = (1.0 - np.exp(1j * theta)) * a
        x = np.abs(gamma) ** 2
        r, c = nk, nb  # <ket| U |bra>
        if r >= c:
            amp = gamma ** (r - c)
            n, k = c, r - c
        else:
            amp = (-np.conj(gamma)) ** (c - r)
            n, k = r, c - r
        logroot = 0.5 * (gammaln(n + 1) - gammaln(n + k + 1))
        elem = amp * math.exp(logroot) * np.exp(-x / 2) * eval_genlaguerre(n, k, x)
        out *= elem * np.exp(1j * (math.sin(theta) * np.abs(a) ** 2 + theta * nb))
    return out


def _op_combination(op: ElementOperator, alphas: np.ndarray, thetas: np.ndarray) -> np.ndarray:
    from .hilbert import OperatorKind

    if op.is_diagonal:
        return ketbra_wigner_batch(op.bra, op.ket, alphas, thetas)
    w_bk = ketbra_wigner_batch(op.bra, op.ket, alphas, thetas)
    w_kb = ketbra_wigner_batch(op.ket, op.bra, alphas, thetas)
    if op.kind is OperatorKind.REAL_OFF_DIAG:
        return (w_bk + w_kb) / math.sqrt(2)
    return 1j * (w_bk - w_kb) / math.sqrt(2)


def generalized_wigner_element(
    op: ElementOperator | tuple[Occupation, Occupation],
    point: DisplacementPoint,
    angles: ParityAngles,
) -> complex:
    """W of an element operator (or a bare |bra><ket| pair) at one point.

    For an ElementOperator the evaluation runs on its active modes: the point
    must carry the operator's partition and ``angles`` must cover the full
    mode range (they are subset internally).  For a bare (bra, ket) tuple the
    occupations are taken as-is and angles must match their length.
    """
    alphas = np.array([point.alphas], dtype=np.complex128)
    if isinstance(op, ElementOperator):
        act = op.partition.active_modes
        if point.partition.active_modes != act:
            raise ValueError("point partition does not match operator support")
        thetas = (
            np.array(angles.subset(act).thetas)
            if angles.modes == op.modes
            else np.array(angles.thetas)
        )
        if len(thetas) != len(act):
            raise ValueError("angles match neither the full nor the active mode count")
        red = op.reduced()
        return complex(_op_combination(red, alphas, thetas)[0])
    bra, ket = op
    if angles.modes != len(bra):
        raise ValueError("angles do not match the ketbra mode count")
    return complex(ketbra_wigner_batch(bra, ket, alphas, np.array(angles.thetas))[0])


# ---------------------------------------------------------------------------
# normalization and radial L1 norms


def single_mode_c(theta: float) -> float:
    if is_degenerate_angle(theta):
        raise ValueError(f"degenerate angle {theta}: normalization vanishes")
    return 2.0 * (1.0 - math.cos(theta)) / math.pi


def normalization_c(angles: ParityAngles) -> float:
    """C = prod_m 2(1 - cos theta_m)/pi over the given angles."""
    out = 1.0
    for t in angles.thetas:
        out *= single_mode_c(t)
    return out


def radial_magnitude(n_bra: int, n_ket: int, theta: float, r: np.ndarray) -> np.ndarray:
    """|W_{|n_bra><n_ket|}| at radius r, a function of r and theta only.

    The phase factors drop out: the magnitude is |<n_ket| D(c r) |n_bra>|
    with c = 2 |sin(theta/2)| = |1 - e^{i theta}|.
    """
    r = np.asarray(r, dtype=float)
    c = abs(1.0 - np.exp(1j * theta))
    u = c * r
    x = u**2
    lo, hi = min(n_bra, n_ket), max(n_bra, n_ket)
    k = hi - lo
    logroot = 0.5 * (gammaln(lo + 1) - gammaln(hi + 1))
    return u**k * math.exp(logroot) * np.exp(-x / 2) * np.abs(eval_genlaguerre(lo, k, x))


@lru_cache(maxsize=4096)
def _radial_z(n_bra: int, n_ket: int, theta: float) -> float:
    """2 pi * integral_0^inf r |W_ketbra(r)| dr for one mode."""

    def f(r):
        return r * radial_magnitude(n_bra, n_ket, theta, np.array([r]))[0]

    c = abs(1.0 - np.exp(1j * theta))
    # Laguerre roots are kinks of |W|; pass them as quadrature breakpoints
    lo = min(n_bra, n_ket)
    k = abs(n_bra - n_ket)
    pts = []
    if lo > 0:
        from scipy.special import roots_genlaguerre

        xs, _ = roots_genlaguerre(lo, k)
        pts = [math.sqrt(x) / c for x in xs]
    cut = max(DEFAULT_RADIUS_BOUND, (pts[-1] + 1.0) if pts else 0.0)
    val1, err1 = quad(f, 0.0, cut, points=sorted(pts) or None, limit=200)
    val2, err2 = quad(f, cut, np.inf, limit=200)
    val = val1 + val2
    if err1 + err2 > 1e-8 * max(1.0, abs(val)):
        raise IntegrationError(
            f"radial norm quadrature error {err1 + err2:.2e} for ketbra "
            f"({n_bra},{n_ket}) at theta={theta}"
        )
    return 2.0 * math.pi * val


def _as_pair(op: ElementOperator | tuple[Occupation, Occupation]) -> tuple[Occupation, Occupation, tuple[int, ...]]:
    if isinstance(op, ElementOperator):
        red = op.reduced()
        return red.bra, red.ket, op.partition.active_modes
    bra, ket = op
    return tuple(bra), tuple(ket), tuple(range(len(bra)))


def z_norm(op: ElementOperator | tuple[Occupation, Occupation], angles: ParityAngles) -> float:
    """L1 norm integral |W| d^2alpha of the sampled ketbra component.

    For an element operator this is the Z of its |bra><ket| part over the
    active modes (the Hermitian combination shares the magnitude profile);
    it factorizes as a product of per-mode radial integrals.  ``angles`` may
    cover the full mode range or just the active modes.
    """
    bra, ket, act = _as_pair(op)
    if angles.modes == len(bra):
        thetas = angles.thetas
    else:
        thetas = tuple(angles.thetas[m] for m in act)
    out = 1.0
    for nb, nk, t in zip(bra, ket, thetas):
        out *= _radial_z(nb, nk, float(t))
    return out


def cz_weight(op: ElementOperator | tuple[Occupation, Occupation], angles: ParityAngles) -> float:
    """C_active * Z of the operator's ketbra component (the sampling weight).

    Product over active modes of [2(1-cos theta)/pi] * Z_mode; empty active
    set gives exactly 1.  A vacuum ketbra mode contributes exactly 2.
    """
    bra, ket, act = _as_pair(op)
    if angles.modes == len(bra):
        thetas = angles.thetas
    else:
        thetas = tuple(angles.thetas[m] for m in act)
    out = 1.0
    for nb, nk, t in zip(bra, ket, thetas):
        out *= single_mode_c(float(t)) * _radial_z(nb, nk, float(t))
    return out


# ---------------------------------------------------------------------------
# hardware dispersive-shift profile


@dataclass(frozen=True)
class HardwareProfile:
    """Per-mode dispersive shifts chi/2pi in MHz and an optional wait time."""

    chi_mhz: tuple[float, ...]
    wait_time_us: float | None = None

    def angles(self, wait_time_us: float | None = None) -> ParityAngles:
        t = self.wait_time_us if wait_time_us is None else wait_time_us
        if t is None:
            raise ValueError("no wait time configured")
        return ParityAngles(tuple(2.0 * math.pi * chi * t for chi in self.chi_mhz))


def load_hardware_profile(path: str) -> HardwareProfile:
    """Read chi values (MHz) and optional wait time (us) from an INI file.

    Expected section [hardware] with keys chi_mhz (comma-separated) and,
    optionally, wait_time_us.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read or "hardware" not in cp:
        raise ValueError(f"no [hardware] section found in {path!r}")
    sec = cp["hardware"]
    if "chi_mhz" not in sec:
        raise ValueError("missing chi_mhz key in [hardware]")
    chis = tuple(float(x) for x in sec["chi_mhz"].split(","))
    wait = sec.getfloat("wait_time_us") if "wait_time_us" in sec else None
    return HardwareProfile(chi_mhz=chis, wait_time_us=wait)


def choose_wait_time(
    chi_mhz: tuple[float, ...] | list[float],
    t_min_us: float,
    t_max_us: float,
    samples: int = 20001,
) -> float:
    """Wait time in [t_min, t_max] whose angles sit closest to pi mod 2pi.

    Minimizes the summed squared wrapped distance of theta_m = 2 pi chi_m t
    from pi.  The wait time is a free parameter of the protocol; with a
    single shared readout the per-mode angles cannot all be exactly pi.
    """
    ts = np.linspace(t_min_us, t_max_us, samples)
    cost = np.zeros_like(ts)
    for chi in chi_mhz:
        theta = 2.0 * math.pi * chi * ts
        # wrapped distance from pi
        d = np.angle(np.exp(1j * (theta - math.pi)))
        cost += d**2
    return float(ts[int(np.argmin(cost))])
