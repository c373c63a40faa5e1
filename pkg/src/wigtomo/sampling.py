"""Displacement-point sampling for the three tomography strategies.

DEMESST draws measurement points for one element operator at a time from the
operator's own Wigner magnitude |W_ketbra|, which factorizes over active
modes into radial densities r |<n'|D(2 sin(theta/2) r)|n>|; radii come from
tabulated inverse CDFs, angles are uniform.  The scale C*Z that turns sample
means into expectation values is also the Hoeffding range of the estimator,
so measurement budgets follow from it directly.

W^2 sampling targets the squared Wigner magnitude of a pure reference state
via rejection in per-mode polar coordinates (the prod |beta_i| acceptance
factor is the polar Jacobian), with a denominator cutoff guarding the ratio
estimator's variance.

OLI builds one fixed displacement set per basis: candidates on rings at the
radial extrema of the Fock-level profiles, grown greedily for conditioning
and polished by pairwise exchange.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .hilbert import (
    DensityMatrix,
    ElementOperator,
    FockBasis,
    ModePartition,
    OperatorKind,
    element_operators,
    full_partition,
)
from .seeding import substream
from .wigner import (
    DEFAULT_RADIUS_BOUND,
    DisplacementPoint,
    ParityAngles,
    cz_weight,
    ketbra_wigner_batch,
    radial_magnitude,
    rotated_displacement_batch,
    wigner_state_batch,
)

_TABLE_SIZE = 4096


class AcceptanceError(RuntimeError):
    """Rejection sampling acceptance rate collapsed."""


# ---------------------------------------------------------------------------
# radial inverse-CDF tables


@lru_cache(maxsize=1024)
def radial_table(
    n_bra: int, n_ket: int, theta: float, bound: float = DEFAULT_RADIUS_BOUND
) -> tuple[np.ndarray, np.ndarray]:
    """(radii, cdf) table of the normalized radial density r*|W_ketbra(r)|."""
    r = np.linspace(0.0, bound, _TABLE_SIZE)
    pdf = r * radial_magnitude(n_bra, n_ket, theta, r)
    cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(r))])
    total = cdf[-1]
    if total <= 0:
        raise ValueError(f"degenerate radial density for ketbra ({n_bra},{n_ket})")
    return r, cdf / total


def sample_radii(
    n_bra: int, n_ket: int, theta: float, count: int, rng: np.random.Generator
) -> np.ndarray:
    r, cdf = radial_table(n_bra, n_ket, float(theta))
    return np.interp(rng.random(count), cdf, r)


# ---------------------------------------------------------------------------
# estimation weights and budgets


def estimation_weight(op: ElementOperator, angles: ParityAngles) -> float:
    """Hoeffding range of the single-shot estimator for this operator.

    C*Z of the sampled ketbra, times sqrt2 for the off-diagonal Hermitian
    combinations (their matrix entry carries a sqrt2 relative to the ketbra).
    """
    w = cz_weight(op, angles)
    if not op.is_diagonal:
        w *= math.sqrt(2)
    return w


def hoeffding_budget(weight: float, epsilon: float, delta: float) -> int:
    """Samples needed so P(|error| > epsilon) <= delta for a mean of
    bounded terms with range ``weight``."""
    if epsilon <= 0 or not (0 < delta < 1):
        raise ValueError("need epsilon > 0 and delta in (0, 1)")
    return math.ceil(2.0 * weight**2 * math.log(2.0 / delta) / epsilon**2)


@dataclass(frozen=True)
class BudgetSpec:
    """Per-operator sample counts meeting a whole-matrix accuracy target."""

    epsilon: float
    delta: float
    epsilon_each: float
    delta_each: float
    counts: tuple[tuple[ElementOperator, int], ...]

    @property
    def total(self) -> int:
        return sum(n for _, n in self.counts)


def allocate_budget(
    basis: FockBasis, angles: ParityAngles, epsilon: float, delta: float
) -> BudgetSpec:
    """Split a matrix-level (epsilon, delta) guarantee across all operators.

    Each of the dim^2 element estimates gets epsilon_each = epsilon/dim and
    delta_each = delta/dim^2; a union bound then caps every matrix entry's
    error, hence e.g. the fidelity error, by epsilon with confidence delta.
    """
    d = basis.dim
    eps2 = epsilon / d
    delta2 = delta / d**2
    counts = tuple(
        (op, hoeffding_budget(estimation_weight(op, angles), eps2, delta2))
        for op in element_operators(basis)
    )
    return BudgetSpec(
        epsilon=epsilon, delta=delta, epsilon_each=eps2, delta_each=delta2, counts=counts
    )


# ---------------------------------------------------------------------------
# DEMESST point sampling


@dataclass(frozen=True)
class SampledPoints:
    """Array view of one operator's sampled measurement settings."""

    op: ElementOperator
    partition: ModePartition
    alphas: np.ndarray  # (count, n_active) complex
    phases: np.ndarray  # (count,)
    weight: float  # estimator scale C*Z (with sqrt2 for off-diagonals)

    @property
    def count(self) -> int:
        return self.alphas.shape[0]

    def points(self) -> list[tuple[DisplacementPoint, float]]:
        return [
            (DisplacementPoint(tuple(self.alphas[i]), self.partition), float(self.phases[i]))
            for i in range(self.count)
        ]


def demesst_sample_arrays(
    op: ElementOperator,
    angles: ParityAngles,
    count: int,
    rng: np.random.Generator,
) -> SampledPoints:
    """Draw ``count`` displacement settings for one element operator.

    Radii follow the per-mode ketbra densities, angles are uniform, and the
    measurement phase phi is arg W_ketbra(alpha, theta) (plus pi/2 for the
    imaginary combination), which aligns the signal with the estimated
    quantity and keeps the estimator unbiased at any theta.
    """
    red = op.reduced()
    act = op.partition.active_modes
    thetas = (
        np.array(angles.subset(act).thetas) if angles.modes == op.modes else np.array(angles.thetas)
    )
    if len(thetas) != len(act):
        raise ValueError("angles match neither the full nor the active mode count")
    n_act = len(act)
    alphas = np.empty((count, n_act), dtype=np.complex128)
    for k in range(n_act):
        radii = sample_radii(red.bra[k], red.ket[k], float(thetas[k]), count, rng)
        psi = rng.uniform(0.0, 2.0 * math.pi, count)
        alphas[:, k] = radii * np.exp(1j * psi)
    wk = ketbra_wigner_batch(red.bra, red.ket, alphas, thetas)
    phases = np.angle(wk)
    if op.kind is OperatorKind.IMAG_OFF_DIAG:
        phases = phases + math.pi / 2
    return SampledPoints(
        op=op,
        partition=op.partition,
        alphas=alphas,
        phases=phases,
        weight=estimation_weight(op, angles),
    )


def demesst_sample(
    op: ElementOperator,
    angles: ParityAngles,
    count: int,
    seed: int = 0,
) -> list[tuple[DisplacementPoint, float]]:
    """Seeded list-of-(point, phase) surface over demesst_sample_arrays."""
    rng = substream(seed, "demesst", op.label)
    return demesst_sample_arrays(op, angles, count, rng).points()


# ---------------------------------------------------------------------------
# W^2 rejection sampling


@dataclass(frozen=True)
class W2Samples:
    """Accepted displacement settings for direct fidelity estimation."""

    alphas: np.ndarray  # (count, modes) complex
    phases: np.ndarray  # (count,)
    denominators: np.ndarray  # (count,) |W_target| at the accepted points
    weights: np.ndarray  # (count,) acceptance weights |W|^2 prod|beta|
    cutoff: float  # absolute acceptance-weight cutoff used
    proposals: int  # proposals consumed to reach the count
    modes: int

    @property
    def count(self) -> int:
        return self.alphas.shape[0]

    def points(self) -> list[tuple[DisplacementPoint, float]]:
        part = full_partition(self.modes)
        return [
            (DisplacementPoint(tuple(self.alphas[i]), part), float(self.phases[i]))
            for i in range(self.count)
        ]


def w2_sample(
    target: DensityMatrix,
    angles: ParityAngles,
    count: int,
    seed: int = 0,
    cutoff_ratio: float = 1e-3,
    radius_bound: float = DEFAULT_RADIUS_BOUND,
    max_proposal_factor: int = 2000,
) -> W2Samples:
    """Rejection-sample points with density proportional to |W_target|^2.

    Proposals are uniform per mode in (radius, angle) on [0, bound] x [0,
    2pi); the acceptance weight |W_target(beta, theta)|^2 * prod_i |beta_i|
    includes the polar Jacobian so accepted points follow |W|^2 in the
    planar measure.  The rejection envelope starts at 1.5x the peak weight
    seen on a pilot batch; if a later proposal exceeds it, the envelope is
    raised and points accepted under the old envelope are thinned with
    probability old/new, which keeps the accepted set exactly distributed
    as if the larger envelope had been used throughout.  Points whose
    weight falls below cutoff_ratio times the pilot peak are rejected
    outright, bounding the ratio estimator's denominators away from zero.

    After the pilot the per-mode proposal radius shrinks to 1.25x the
    largest radius among pilot points above the cutoff.  Weights decay like
    exp(-4 r^2) outside the support of the truncated target, so everything
    beyond the shrunk box sits far below the cutoff and the restriction
    changes nothing but the acceptance rate.  A uniform constant in the
    proposal density cancels in rejection sampling, so pilot and follow-up
    acceptances follow the same law and can be pooled.
    """
    if not target.physical:
        raise ValueError("W^2 sampling requires a physical target state")
    purity = float(np.trace(target.entries @ target.entries).real)
    if abs(purity - 1.0) > 1e-6:
        raise ValueError(f"W^2 sampling requires a pure target, purity {purity:.6f}")
    if angles.modes != target.basis.modes:
        raise ValueError("angles do not match the target's mode count")
    rng = substream(seed, "w2")
    modes = target.basis.modes
    thetas = np.array(angles.thetas)

    box = np.full(modes, radius_bound)

    def propose(n):
        radii = rng.uniform(0.0, 1.0, size=(n, modes)) * box
        psi = rng.uniform(0.0, 2.0 * math.pi, size=(n, modes))
        betas = radii * np.exp(1j * psi)
        w_vals = wigner_state_batch(target.entries, target.basis, betas, thetas)
        weights = np.abs(w_vals) ** 2 * np.prod(radii, axis=1)
        return betas, w_vals, weights

    pilot = max(20_000, 4 * count)
    betas, w_vals, weights = propose(pilot)
    w_bound = 1.5 * float(weights.max())
    if w_bound <= 0:
        raise AcceptanceError("target Wigner weight vanished on the whole pilot batch")
    cutoff = cutoff_ratio * float(weights.max())
    live = np.abs(betas)[weights > cutoff]
    box = np.minimum(radius_bound, 1.25 * live.max(axis=0))

    acc_b, acc_w, acc_wt = [], [], []
    proposals = 0

    def accept_from(betas, w_vals, weights):
        nonlocal w_bound
        peak = float(weights.max())
        if peak > w_bound:
            # Envelope was too low: raise it and thin earlier acceptances so
            # every surviving point was effectively accepted under the new one.
            new_bound = 1.5 * peak
            for i in range(len(acc_b)):
                survive = rng.uniform(size=len(acc_b[i])) < w_bound / new_bound
                acc_b[i] = acc_b[i][survive]
                acc_w[i] = acc_w[i][survive]
                acc_wt[i] = acc_wt[i][survive]
            w_bound = new_bound
        u = rng.uniform(0.0, w_bound, size=weights.size)
        keep = (weights > u) & (weights > cutoff)
        acc_b.append(betas[keep])
        acc_w.append(w_vals[keep])
        acc_wt.append(weights[keep])

    accept_from(betas, w_vals, weights)
    proposals += pilot
    # The pilot ran on the full box, so its rate understates the post-shrink
    # rate by the volume ratio; later iterations measure the rate directly.
    shrink = float(np.prod(radius_bound / box))
    while (have := sum(len(b) for b in acc_b)) < count:
        if proposals > max_proposal_factor * count:
            rate = have / proposals
            raise AcceptanceError(
                f"acceptance rate {rate:.2e} too low; raise the cutoff ratio or shrink the bound"
            )
        rate = max(have * shrink, 1.0) / proposals
        chunk = int(min(100_000, max(20_000, 1.3 * (count - have) / rate)))
        betas, w_vals, weights = propose(chunk)
        accept_from(betas, w_vals, weights)
        proposals += chunk
        shrink = 1.0

    betas = np.concatenate(acc_b)[:count]
    w_acc = np.concatenate(acc_w)[:count]
    return W2Samples(
        alphas=betas,
        phases=np.angle(w_acc),
        denominators=np.abs(w_acc),
        weights=np.concatenate(acc_wt)[:count],
        cutoff=cutoff,
        proposals=proposals,
        modes=modes,
    )


# ---------------------------------------------------------------------------
# OLI displacement-set optimization


def ring_radii(level: int, theta: float, radius_bound: float = DEFAULT_RADIUS_BOUND) -> list[float]:
    """Critical radii (extrema including r=0) of the Fock-level-``level``
    radial Wigner profile at rotation angle theta."""
    r = np.linspace(0.0, radius_bound, 4000)
    prof = radial_magnitude(level, level, theta, r)
    d = np.diff(prof)
    crit = [0.0]
    for i in range(1, len(d)):
        if d[i - 1] > 0 >= d[i]:
            crit.append(float(r[i]))
    # drop near-duplicates
    out = []
    for c in crit:
        if not out or c - out[-1] > 1e-3:
            out.append(c)
    return out


def measurement_matrix(
    alphas: np.ndarray,
    phases: np.ndarray,
    basis: FockBasis,
    angles: ParityAngles,
) -> np.ndarray:
    """(P, dim^2) linear map from element-operator coefficients to signals.

    Row i, column a holds Re[e^{i phi_i} W_{B_a}(alpha_i, -theta)], the
    expected signal of operator basis element B_a at measurement setting i.
    Column order matches element_operators(basis).
    """
    alphas = np.atleast_2d(np.asarray(alphas, dtype=np.complex128))
    P = alphas.shape[0]
    occ = basis.occupations
    nlev = int(occ.max(initial=0)) + 1
    X = np.ones((P, basis.dim, basis.dim), dtype=np.complex128)
    for m in range(basis.modes):
        U = rotated_displacement_batch(nlev, alphas[:, m], -float(angles.thetas[m]))
        X *= U[:, occ[:, m][:, None], occ[:, m][None, :]]
    ph = np.exp(1j * np.asarray(phases))
    cols = []
    for op in element_operators(basis):
        i = basis.index_of(op.bra)
        j = basis.index_of(op.ket)
        if op.is_diagonal:
            w = X[:, i, i]
        elif op.kind is OperatorKind.REAL_OFF_DIAG:
            w = (X[:, j, i] + X[:, i, j]) / math.sqrt(2)
        else:
            w = 1j * (X[:, j, i] - X[:, i, j]) / math.sqrt(2)
        cols.append((ph * w).real)
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class OLISet:
    """Optimized displacement set with its measurement matrix."""

    basis: FockBasis
    angles: ParityAngles
    alphas: np.ndarray  # (P, modes)
    phases: np.ndarray  # (P,)
    matrix: np.ndarray  # (P, dim^2)
    condition: float

    @property
    def count(self) -> int:
        return self.alphas.shape[0]

    def points(self) -> list[tuple[DisplacementPoint, float]]:
        part = full_partition(self.basis.modes)
        return [
            (DisplacementPoint(tuple(self.alphas[i]), part), float(self.phases[i]))
            for i in range(self.count)
        ]


def _candidate_pool(
    basis: FockBasis,
    angles: ParityAngles,
    pool_size: int,
    rng: np.random.Generator,
    n_ring_angles: int = 24,
) -> tuple[np.ndarray, np.ndarray]:
    """Seeded pool of candidate settings on per-mode extremum rings."""
    modes = basis.modes
    mode_levels = basis.occupations.max(axis=0)
    per_mode_radii = [
        sorted({rr for lev in range(int(mode_levels[m]) + 1) for rr in ring_radii(lev, t)})
        for m, t in enumerate(angles.thetas)
    ]
    ring_angles = 2.0 * math.pi * np.arange(n_ring_angles) / n_ring_angles
    need_quadrature = any(abs(abs(t) - math.pi) > 1e-9 for t in angles.thetas)
    seen = set()
    alphas = []
    phases = []
    guard = 0
    while len(alphas) < pool_size and guard < 50 * pool_size:
        guard += 1
        key = []
        point = []
        for m in range(modes):
            radii = per_mode_radii[m]
            ri = rng.integers(0, len(radii))
            ai = rng.integers(0, n_ring_angles)
            key.append((ri, ai))
            point.append(radii[ri] * np.exp(1j * ring_angles[ai]))
        phi = 0.0
        if need_quadrature:
            phi = 0.0 if rng.integers(0, 2) == 0 else math.pi / 2
        key = (tuple(key), phi)
        if key in seen:
            continue
        seen.add(key)
        alphas.append(point)
        phases.append(phi)
    return np.array(alphas, dtype=np.complex128), np.array(phases)


def oli_displacement_set(
    basis: FockBasis,
    angles: ParityAngles,
    set_size: int,
    pool_size: int = 3000,
    seed: int = 0,
    exchange_rounds: int = 2,
    candidates_per_step: int = 64,
) -> OLISet:
    """Pick ``set_size`` measurement settings with a well-conditioned matrix.

    Greedy growth maximizes the orthogonal component of each new row until
    the matrix reaches full column rank, then minimizes the condition number
    over seeded candidate subsets; a capped pairwise-exchange pass polishes
    the result.  Fully deterministic for a given seed.
    """
    d2 = basis.dim**2
    if set_size < d2:
        raise ValueError(f"set_size {set_size} below parameter count {d2}")
    rng = substream(seed, "oli-set")
    pool_alphas, pool_phases = _candidate_pool(basis, angles, pool_size, rng)
    rows = measurement_matrix(pool_alphas, pool_phases, basis, angles)
    npool = rows.shape[0]
    if npool < set_size:
        raise ValueError(f"candidate pool {npool} smaller than set_size {set_size}")

    chosen: list[int] = []
    # phase 1: greedy orthogonal growth to full rank
    Q = np.zeros((0, d2))
    residual = rows.copy()
    for _ in range(min(d2, set_size)):
        scores = np.linalg.norm(residual, axis=1)
        scores[chosen] = -1.0
        best = int(np.argmax(scores))
        if scores[best] <= 1e-12:
            raise ValueError("candidate pool does not span the operator basis")
        chosen.append(best)
        q = residual[best] / scores[best]
        Q = np.vstack([Q, q])
        residual = residual - np.outer(residual @ q, q)

    # condition number via the Gram matrix: cond(A) = sqrt(lmax/lmin) of
    # A^T A, which supports cheap rank-one update/downdate during the search
    def gram_cond(G: np.ndarray) -> float:
        w = np.linalg.eigvalsh(G)
        if w[0] <= 0 or w[0] <= 1e-14 * w[-1]:
            return np.inf
        return float(math.sqrt(w[-1] / w[0]))

    G = rows[chosen].T @ rows[chosen]

    # phase 2: grow to set_size by greedy condition number over subsets
    while len(chosen) < set_size:
        cands = rng.choice(npool, size=min(candidates_per_step, npool), replace=False)
        best_c, best_i = np.inf, None
        for i in cands:
            if i in chosen:
                continue
            c = gram_cond(G + np.outer(rows[i], rows[i]))
            if c < best_c:
                best_c, best_i = c, int(i)
        if best_i is None:
            break
        chosen.append(best_i)
        G += np.outer(rows[best_i], rows[best_i])

    # phase 3: pairwise exchange polish
    current = gram_cond(G)
    for _ in range(exchange_rounds):
        improved = False
        for pos in range(len(chosen)):
            cands = rng.choice(npool, size=min(candidates_per_step, npool), replace=False)
            # Gram without the occupant of this position; unchanged while
            # scanning candidates for it
            base = G - np.outer(rows[chosen[pos]], rows[chosen[pos]])
            swapped = False
            for i in cands:
                i = int(i)
                if i in chosen:
                    continue
                c = gram_cond(base + np.outer(rows[i], rows[i]))
                if c < current - 1e-9:
                    chosen[pos] = i
                    current = c
                    improved = True
                    swapped = True
            if swapped:
                G = base + np.outer(rows[chosen[pos]], rows[chosen[pos]])
        # repeated up/downdates drift; rebuild before judging the next round
        G = rows[chosen].T @ rows[chosen]
        current = gram_cond(G)
        if not improved:
            break

    idx = list(chosen)
    return OLISet(
        basis=basis,
        angles=angles,
        alphas=pool_alphas[idx],
        phases=pool_phases[idx],
        matrix=rows[idx],
        condition=current,
    )


# ---------------------------------------------------------------------------
# sampling plans


@dataclass(frozen=True)
class PlanEntry:
    operator: str | None  # element-operator label, or None for state-targeted plans
    active_modes: tuple[int, ...]
    alphas: tuple[complex, ...]
    phase: float
    shots: int


@dataclass(frozen=True)
class SamplingPlan:
    """Serializable list of measurement settings for one strategy run."""

    strategy: str  # "demesst" | "oli" | "w2"
    modes: int
    cutoff: int
    thetas: tuple[float, ...]
    entries: tuple[PlanEntry, ...] = field(default_factory=tuple)

    def to_json(self) -> str:
        payload = {
            "strategy": self.strategy,
            "modes": self.modes,
            "cutoff": self.cutoff,
            "thetas": list(self.thetas),
            "entries": [
                {
                    "operator": e.operator,
                    "active_modes": list(e.active_modes),
                    "alphas": [[z.real, z.imag] for z in e.alphas],
                    "phase": e.phase,
                    "shots": e.shots,
                }
                for e in self.entries
            ],
        }
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SamplingPlan":
        p = json.loads(text)
        entries = tuple(
            PlanEntry(
                operator=e["operator"],
                active_modes=tuple(e["active_modes"]),
                alphas=tuple(complex(re, im) for re, im in e["alphas"]),
                phase=float(e["phase"]),
                shots=int(e["shots"]),
            )
            for e in p["entries"]
        )
        return cls(
            strategy=p["strategy"],
            modes=int(p["modes"]),
            cutoff=int(p["cutoff"]),
            thetas=tuple(float(t) for t in p["thetas"]),
            entries=entries,
        )


def plan_from_sampled(points: SampledPoints, shots_per_point: int, modes: int, cutoff: int, thetas) -> SamplingPlan:
    entries = tuple(
        PlanEntry(
            operator=points.op.label,
            active_modes=points.partition.active_modes,
            alphas=tuple(points.alphas[i]),
            phase=float(points.phases[i]),
            shots=shots_per_point,
        )
        for i in range(points.count)
    )
    return SamplingPlan(
        strategy="demesst", modes=modes, cutoff=cutoff, thetas=tuple(thetas), entries=entries
    )
