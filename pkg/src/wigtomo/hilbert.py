"""Truncated multimode Fock space: bases, states, and element operators.

States live in the Hilbert space of ``modes`` bosonic modes truncated to a
*total* photon number ``cutoff`` shared across modes, so the dimension is
binom(modes + cutoff, cutoff) and grows polynomially with the mode count.
Basis enumeration is graded lexicographic: states are ordered by total photon
number, then with photons in earlier modes first, e.g. for three modes at
cutoff 1 the order is |000>, |100>, |010>, |001>.

Density matrices here are plain complex arrays tagged with their basis.  A
matrix flagged ``physical`` is validated as a quantum state (Hermitian, PSD,
unit trace); unflagged matrices are merely Hermitian, which is what direct
linear-inversion reconstruction produces before any physicality projection.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

Occupation = tuple[int, ...]

MAX_BASIS_DIM = 1_000_000

ORDERING_TAG = "graded-lex"

_HERM_TOL = 1e-12
_PSD_TOL = 1e-10


class CapacityError(ValueError):
    """Requested basis would exceed the enumeration size limit."""


def state_sort_key(occ: Occupation) -> tuple:
    # graded order: total photons first, then earlier-mode photons first
    return (sum(occ), tuple(-n for n in occ))


def _compositions(total: int, parts: int) -> Iterable[Occupation]:
    if parts == 0:
        if total == 0:
            yield ()
        return
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class FockBasis:
    """Enumerated truncated Fock basis with graded-lexicographic order."""

    modes: int
    cutoff: int
    states: tuple[Occupation, ...]

    @property
    def dim(self) -> int:
        return len(self.states)

    @cached_property
    def index(self) -> dict[Occupation, int]:
        return {occ: i for i, occ in enumerate(self.states)}

    @cached_property
    def occupations(self) -> np.ndarray:
        """(dim, modes) integer array of the basis occupations."""
        return np.array(self.states, dtype=np.int64).reshape(self.dim, self.modes)

    def index_of(self, occ: Sequence[int]) -> int:
        return self.index[tuple(occ)]


def enumerate_basis(modes: int, cutoff: int, max_dim: int = MAX_BASIS_DIM) -> FockBasis:
    """Enumerate all occupation vectors with total photon number <= cutoff.

    modes=0 is permitted and yields the one-dimensional scalar space (the
    single empty occupation); it is what a fully vacuum-projected operator
    support reduces to.
    """
    if modes < 0 or cutoff < 0:
        raise ValueError(f"modes and cutoff must be non-negative, got {modes}, {cutoff}")
    dim = math.comb(modes + cutoff, cutoff)
    if dim > max_dim:
        raise CapacityError(
            f"basis dimension {dim} for modes={modes}, cutoff={cutoff} "
            f"exceeds limit {max_dim}"
        )
    states = []
    for total in range(cutoff + 1):
        states.extend(_compositions(total, modes))
    assert len(states) == dim
    return FockBasis(modes=modes, cutoff=cutoff, states=tuple(states))


def product_basis(modes: int, levels: int, max_dim: int = MAX_BASIS_DIM) -> FockBasis:
    """Enumerate the per-mode truncated tensor-product space 0..levels per mode.

    This is the space a generic inversion method parametrizes: it cannot
    assume a bound on the total photon number, so its dimension
    (levels+1)^modes grows exponentially with the mode count.  States are in
    graded-lex order; the stored cutoff is modes*levels, the largest total
    any product state can reach.
    """
    if modes < 1 or levels < 0:
        raise ValueError(f"need modes >= 1 and levels >= 0, got {modes}, {levels}")
    dim = (levels + 1) ** modes
    if dim > max_dim:
        raise CapacityError(
            f"basis dimension {dim} for modes={modes}, levels={levels} "
            f"exceeds limit {max_dim}"
        )
    states = sorted(itertools.product(range(levels + 1), repeat=modes), key=state_sort_key)
    return FockBasis(modes=modes, cutoff=modes * levels, states=tuple(states))


def embed_state(state: "DensityMatrix", basis: FockBasis) -> "DensityMatrix":
    """Re-express a density matrix on a larger basis containing its states.

    Entries land at the positions of the matching occupation vectors; all
    other entries are zero, so physicality is preserved.
    """
    if state.basis.modes != basis.modes:
        raise ValueError("mode counts differ")
    try:
        pos = np.array([basis.index_of(occ) for occ in state.basis.states])
    except KeyError as exc:
        raise ValueError(f"occupation {exc.args[0]} missing from target basis") from exc
    out = np.zeros((basis.dim, basis.dim), dtype=np.complex128)
    out[np.ix_(pos, pos)] = state.entries
    return DensityMatrix(basis=basis, entries=out, physical=state.physical)


@dataclass(frozen=True)
class DensityMatrix:
    """A Hermitian operator on a truncated Fock basis.

    ``physical=True`` asserts a valid state (PSD, trace one) and is validated
    at construction.  Entries are frozen read-only so instances can be shared
    across worker threads.
    """

    basis: FockBasis
    entries: np.ndarray
    physical: bool = False

    def __post_init__(self):
        arr = np.array(self.entries, dtype=np.complex128)
        d = self.basis.dim
        if arr.shape != (d, d):
            raise ValueError(f"entries shape {arr.shape} does not match basis dim {d}")
        scale = max(1.0, float(np.max(np.abs(arr))) if arr.size else 1.0)
        if np.max(np.abs(arr - arr.conj().T)) > _HERM_TOL * scale:
            raise ValueError("entries are not Hermitian")
        if self.physical:
            evals = np.linalg.eigvalsh(arr)
            if evals.min() < -_PSD_TOL:
                raise ValueError(f"physical state has negative eigenvalue {evals.min():.3e}")
            if abs(np.trace(arr).real - 1.0) > _PSD_TOL:
                raise ValueError(f"physical state trace {np.trace(arr).real!r} != 1")
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def dim(self) -> int:
        return self.basis.dim

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def to_json(self) -> str:
        flat = self.entries.reshape(-1)
        payload = {
            "modes": self.basis.modes,
            "cutoff": self.basis.cutoff,
            "ordering": ORDERING_TAG,
            "physical": self.physical,
            "entries": [[float(z.real), float(z.imag)] for z in flat],
        }
        graded = enumerate_basis(self.basis.modes, self.basis.cutoff)
        if self.basis.states != graded.states:
            # proper subset of the graded enumeration (e.g. a per-mode
            # truncated product space); record it explicitly
            payload["basis_states"] = [list(occ) for occ in self.basis.states]
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "DensityMatrix":
        payload = json.loads(text)
        if payload.get("ordering") != ORDERING_TAG:
            raise ValueError(f"unsupported basis ordering {payload.get('ordering')!r}")
        if "basis_states" in payload:
            states = tuple(tuple(int(n) for n in occ) for occ in payload["basis_states"])
            basis = FockBasis(payload["modes"], payload["cutoff"], states)
        else:
            basis = enumerate_basis(payload["modes"], payload["cutoff"])
        d = basis.dim
        flat = np.array([complex(re, im) for re, im in payload["entries"]])
        if flat.size != d * d:
            raise ValueError(f"entry count {flat.size} does not match dim {d}")
        return cls(basis=basis, entries=flat.reshape(d, d), physical=payload.get("physical", False))


class OperatorKind(Enum):
    DIAGONAL = "diagonal"
    REAL_OFF_DIAG = "real"
    IMAG_OFF_DIAG = "imag"


@dataclass(frozen=True)
class ModePartition:
    """Split of the mode indices into vacuum-pinned and active sets.

    A matrix element operator |n><n'| pins every mode where both occupations
    are zero to the vacuum; only the remaining active modes (at most 2*cutoff
    of them) need displaced measurement.
    """

    vacuum_modes: tuple[int, ...]
    active_modes: tuple[int, ...]

    def __post_init__(self):
        if set(self.vacuum_modes) & set(self.active_modes):
            raise ValueError("vacuum and active mode sets overlap")
        if tuple(sorted(self.vacuum_modes)) != self.vacuum_modes:
            raise ValueError("vacuum_modes must be sorted")
        if tuple(sorted(self.active_modes)) != self.active_modes:
            raise ValueError("active_modes must be sorted")

    @property
    def modes(self) -> int:
        return len(self.vacuum_modes) + len(self.active_modes)


def full_partition(modes: int) -> ModePartition:
    """Partition with every mode active (no vacuum projection)."""
    return ModePartition(vacuum_modes=(), active_modes=tuple(range(modes)))


@dataclass(frozen=True)
class ElementOperator:
    """Hermitian combination of the Fock matrix unit |bra><ket|.

    kind DIAGONAL requires bra == ket and is the projector |n><n|; the
    off-diagonal kinds are (|n><n'| + |n'><n|)/sqrt2 and
    i(|n><n'| - |n'><n|)/sqrt2 with bra strictly before ket in graded order.
    The set of all of them over a basis is an orthonormal Hermitian operator
    basis under the Hilbert-Schmidt inner product.
    """

    kind: OperatorKind
    bra: Occupation
    ket: Occupation

    def __post_init__(self):
        if len(self.bra) != len(self.ket):
            raise ValueError("bra and ket mode counts differ")
        if self.kind is OperatorKind.DIAGONAL:
            if self.bra != self.ket:
                raise ValueError("diagonal operator requires bra == ket")
        else:
            if not state_sort_key(self.bra) < state_sort_key(self.ket):
                raise ValueError("off-diagonal operator requires bra before ket in graded order")

    @property
    def modes(self) -> int:
        return len(self.bra)

    @property
    def is_diagonal(self) -> bool:
        return self.kind is OperatorKind.DIAGONAL

    @cached_property
    def partition(self) -> ModePartition:
        vac = tuple(m for m in range(self.modes) if self.bra[m] == 0 and self.ket[m] == 0)
        act = tuple(m for m in range(self.modes) if not (self.bra[m] == 0 and self.ket[m] == 0))
        return ModePartition(vacuum_modes=vac, active_modes=act)

    def reduced(self) -> "ElementOperator":
        """The same operator restricted to its active modes."""
        act = self.partition.active_modes
        return ElementOperator(
            kind=self.kind,
            bra=tuple(self.bra[m] for m in act),
            ket=tuple(self.ket[m] for m in act),
        )

    @property
    def label(self) -> str:
        b = ",".join(map(str, self.bra))
        k = ",".join(map(str, self.ket))
        if self.is_diagonal:
            return f"d:{b}"
        tag = "r" if self.kind is OperatorKind.REAL_OFF_DIAG else "i"
        return f"{tag}:{b}|{k}"

    @classmethod
    def from_label(cls, label: str) -> "ElementOperator":
        tag, _, rest = label.partition(":")
        if tag == "d":
            occ = tuple(int(x) for x in rest.split(","))
            return cls(OperatorKind.DIAGONAL, occ, occ)
        kind = {"r": OperatorKind.REAL_OFF_DIAG, "i": OperatorKind.IMAG_OFF_DIAG}[tag]
        b, _, k = rest.partition("|")
        return cls(
            kind,
            tuple(int(x) for x in b.split(",")),
            tuple(int(x) for x in k.split(",")),
        )

    def matrix(self, basis: FockBasis) -> np.ndarray:
        i = basis.index_of(self.bra)
        j = basis.index_of(self.ket)
        out = np.zeros((basis.dim, basis.dim), dtype=np.complex128)
        if self.is_diagonal:
            out[i, i] = 1.0
        elif self.kind is OperatorKind.REAL_OFF_DIAG:
            out[i, j] = 1.0 / math.sqrt(2)
            out[j, i] = 1.0 / math.sqrt(2)
        else:
            out[i, j] = 1j / math.sqrt(2)
            out[j, i] = -1j / math.sqrt(2)
        return out


def element_operators(basis: FockBasis) -> list[ElementOperator]:
    """The full orthonormal Hermitian element-operator basis, dim^2 of them.

    Order: all diagonal projectors in basis order, then for each basis pair
    (i, j) with i < j the real combination followed by the imaginary one.
    """
    ops = [ElementOperator(OperatorKind.DIAGONAL, occ, occ) for occ in basis.states]
    for i in range(basis.dim):
        for j in range(i + 1, basis.dim):
            bra, ket = basis.states[i], basis.states[j]
            ops.append(ElementOperator(OperatorKind.REAL_OFF_DIAG, bra, ket))
            ops.append(ElementOperator(OperatorKind.IMAG_OFF_DIAG, bra, ket))
    assert len(ops) == basis.dim**2
    return ops


def project_and_trace(state: DensityMatrix, partition: ModePartition) -> DensityMatrix:
    """Vacuum-project the partition's vacuum modes and trace them out.

    Returns rho_red on the active-mode basis with
    rho_red[a, b] = <a, vac_S| rho |b, vac_S>; its trace is the probability of
    finding all projected modes empty, not 1.  Tr[rho O] = Tr[rho_red O_red]
    for any operator supported on the active modes with vacuum elsewhere.
    """
    if partition.modes != state.basis.modes:
        raise ValueError(
            f"partition covers {partition.modes} modes, state has {state.basis.modes}"
        )
    act = partition.active_modes
    red_basis = enumerate_basis(len(act), state.basis.cutoff)
    rows = []
    for occ in red_basis.states:
        full = [0] * state.basis.modes
        for k, m in enumerate(act):
            full[m] = occ[k]
        rows.append(state.basis.index_of(full))
    idx = np.array(rows, dtype=np.intp)
    sub = state.entries[np.ix_(idx, idx)]
    return DensityMatrix(basis=red_basis, entries=sub, physical=False)


def ideal_w_state(modes: int, phases: Sequence[float] = (), cutoff: int = 1) -> DensityMatrix:
    """Pure W state (|10..0> + e^{i phi_1}|01..0> + ...)/sqrt(modes).

    ``phases`` gives the relative phases of components 1..modes-1 (component 0
    is the reference); an empty sequence means all zero.
    """
    if modes < 2:
        raise ValueError("a W state needs at least two modes")
    if cutoff < 1:
        raise ValueError("cutoff must be at least 1 to hold one photon")
    phases = tuple(phases)
    if phases and len(phases) != modes - 1:
        raise ValueError(f"need {modes - 1} phases, got {len(phases)}")
    if not phases:
        phases = (0.0,) * (modes - 1)
    basis = enumerate_basis(modes, cutoff)
    vec = np.zeros(basis.dim, dtype=np.complex128)
    for j in range(modes):
        occ = tuple(1 if m == j else 0 for m in range(modes))
        amp = 1.0 if j == 0 else np.exp(1j * phases[j - 1])
        vec[basis.index_of(occ)] = amp / math.sqrt(modes)
    return DensityMatrix(basis=basis, entries=np.outer(vec, vec.conj()), physical=True)


def perturbed_state(
    state: DensityMatrix,
    leak_weight: float,
    dephase_weight: float,
    seed: int = 0,
) -> DensityMatrix:
    """Mix in dephasing toward the diagonal and a two-photon leak population.

    rho' = (1 - l) * [(1 - d) rho + d diag(rho)] + l * rho_leak where rho_leak
    is a seeded pseudo-random diagonal mixture over total-photon-number-2
    basis states.  Requires cutoff >= 2 when leak_weight > 0.
    """
    if not (0 <= leak_weight < 1 and 0 <= dephase_weight <= 1):
        raise ValueError("weights must lie in [0, 1)")
    basis = state.basis
    rho = np.array(state.entries)
    dephased = (1 - dephase_weight) * rho + dephase_weight * np.diag(np.diag(rho))
    if leak_weight == 0:
        return DensityMatrix(basis=basis, entries=dephased, physical=state.physical)
    two_photon = [i for i, occ in enumerate(basis.states) if sum(occ) == 2]
    if not two_photon:
        raise ValueError("leak requires basis cutoff >= 2 (no two-photon states)")
    rng = np.random.default_rng(seed)
    count = min(len(two_photon), max(1, basis.modes))
    chosen = rng.choice(len(two_photon), size=count, replace=False)
    weights = rng.random(count)
    weights /= weights.sum()
    leak = np.zeros_like(rho)
    for w, pos in zip(weights, chosen):
        leak[two_photon[pos], two_photon[pos]] = w
    out = (1 - leak_weight) * dephased + leak_weight * leak
    return DensityMatrix(basis=basis, entries=out, physical=state.physical)


def assemble_from_elements(
    basis: FockBasis, estimates: Mapping[ElementOperator, float]
) -> DensityMatrix:
    """Rebuild the matrix from per-element-operator expectation values.

    Inverts the orthonormal expansion rho = sum_a Tr[rho B_a] B_a: diagonal
    entries come straight from the projector estimates, the upper-triangle
    entry at (bra, ket) is (est_real + i est_imag)/sqrt2.  Every operator of
    the basis must be present.
    """
    ops = element_operators(basis)
    missing = [op.label for op in ops if op not in estimates]
    if missing:
        raise ValueError(f"missing estimates for {len(missing)} operators: {missing[:5]}...")
    out = np.zeros((basis.dim, basis.dim), dtype=np.complex128)
    for op in ops:
        val = float(estimates[op])
        i = basis.index_of(op.bra)
        j = basis.index_of(op.ket)
        if op.kind is OperatorKind.DIAGONAL:
            out[i, i] += val
        elif op.kind is OperatorKind.REAL_OFF_DIAG:
            out[i, j] += val / math.sqrt(2)
            out[j, i] += val / math.sqrt(2)
        else:
            out[i, j] += 1j * val / math.sqrt(2)
            out[j, i] += -1j * val / math.sqrt(2)
    return DensityMatrix(basis=basis, entries=out, physical=False)


def random_density_matrix(basis: FockBasis, rng: np.random.Generator, rank: int | None = None) -> DensityMatrix:
    """Haar-ish random full-rank (or fixed-rank) state, for tests and fuzzing."""
    d = basis.dim
    r = d if rank is None else rank
    g = rng.normal(size=(d, r)) + 1j * rng.normal(size=(d, r))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    return DensityMatrix(basis=basis, entries=rho, physical=True)


def random_hermitian(dim: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return (g + g.conj().T) / 2
