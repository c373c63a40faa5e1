"""Simulated dispersive-readout measurement of displaced number rotations.

One measurement setting is (displacement point, readout phase phi) plus the
fixed per-mode rotation angles.  The qubit ground-state probability at a
setting is

    P_g = (Tr[rho_red] + Re[e^{i phi} W_rho_red(alpha, -theta)]) / 2,

where rho_red is the state with the setting's vacuum modes projected out and
traced over; on the full space the trace term is 1.  Two acquisition styles
share this backend: paired phases (equal repetition blocks at phi and
phi + pi, signal = difference of ground rates) and random sign (each shot
flips a fair coin between the two branches, signal = mean of sign times
outcome).  Both erase the state-trace offset and leave the signal with
expectation Re[e^{i phi} W_rho_red].  Readout bit flips with probability p
attenuate every signal by exactly (1 - 2p).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .hilbert import DensityMatrix, project_and_trace
from .wigner import DisplacementPoint, ParityAngles, wigner_state_batch

PAIRED = "paired"
RANDOM_SIGN = "random_sign"


@dataclass(frozen=True)
class ProtocolConfig:
    """Acquisition parameters shared by every setting of a run."""

    readout_flip: float = 0.02
    repetitions: int = 10  # per branch for paired; total shots for random sign
    sign_mode: str = PAIRED

    def __post_init__(self):
        if not 0.0 <= self.readout_flip < 0.5:
            raise ValueError(f"readout_flip must be in [0, 0.5), got {self.readout_flip}")
        if self.repetitions < 1:
            raise ValueError("repetitions must be positive")
        if self.sign_mode not in (PAIRED, RANDOM_SIGN):
            raise ValueError(f"unknown sign_mode {self.sign_mode!r}")

    @property
    def shots_per_point(self) -> int:
        return 2 * self.repetitions if self.sign_mode == PAIRED else self.repetitions


IDEAL_PROTOCOL = ProtocolConfig(readout_flip=0.0, repetitions=10, sign_mode=PAIRED)


@dataclass(frozen=True)
class ShotBatch:
    """Aggregated outcomes of one measurement setting.

    Counts are kept per branch (phi vs phi + pi; for random sign the branch
    records the drawn sign) and per outcome (ground g / excited e).
    """

    operator: str | None
    active_modes: tuple[int, ...]
    alphas: tuple[complex, ...]
    phase: float
    sign_mode: str
    g_plus: int
    e_plus: int
    g_minus: int
    e_minus: int

    @property
    def shots(self) -> int:
        return self.g_plus + self.e_plus + self.g_minus + self.e_minus


def batch_signal(batch: ShotBatch) -> float:
    """Unbiased estimate of Re[e^{i phi} W_rho_red] from one batch."""
    if batch.sign_mode == PAIRED:
        r_plus = batch.g_plus + batch.e_plus
        r_minus = batch.g_minus + batch.e_minus
        if r_plus == 0 or r_minus == 0:
            raise ValueError("paired batch missing one branch")
        return batch.g_plus / r_plus - batch.g_minus / r_minus
    total = batch.shots
    if total == 0:
        raise ValueError("empty batch")
    return ((batch.g_plus - batch.e_plus) - (batch.g_minus - batch.e_minus)) / total


# ---------------------------------------------------------------------------
# probabilities


def _signal_values(
    reduced: DensityMatrix, alphas: np.ndarray, thetas: Sequence[float], phases: np.ndarray
) -> tuple[np.ndarray, float]:
    """(Re[e^{i phi} W_red(alpha, -theta)], Tr[rho_red]) for P settings."""
    neg = -np.asarray(thetas, dtype=float)
    w = wigner_state_batch(reduced.entries, reduced.basis, alphas, neg)
    x = np.real(np.exp(1j * np.asarray(phases)) * w)
    return x, reduced.trace()


def ground_probabilities(
    reduced: DensityMatrix, alphas: np.ndarray, thetas: Sequence[float], phases: np.ndarray
) -> np.ndarray:
    """P_g at each setting; the phi + pi branch is the same with phase shifted."""
    x, tr = _signal_values(reduced, alphas, thetas, phases)
    p = 0.5 * (tr + x)
    # physical values already lie in [0, tr]; clamp floating dust only
    return np.clip(p, 0.0, 1.0)


def parity_probability(
    state: DensityMatrix,
    point: DisplacementPoint,
    angles: ParityAngles,
    phi: float,
) -> float:
    """Ground probability for one setting, projecting vacuum modes as needed."""
    part = point.partition
    if part.modes != state.basis.modes:
        raise ValueError("point partition does not cover the state's modes")
    reduced = project_and_trace(state, part) if part.vacuum_modes else state
    thetas = [angles.thetas[m] for m in part.active_modes]
    alphas = np.array([point.alphas], dtype=np.complex128)
    return float(ground_probabilities(reduced, alphas, thetas, np.array([phi]))[0])


def _flip(p: np.ndarray, flip: float) -> np.ndarray:
    return p * (1.0 - 2.0 * flip) + flip


# ---------------------------------------------------------------------------
# vectorized acquisition


def simulate_counts(
    reduced: DensityMatrix,
    alphas: np.ndarray,
    thetas: Sequence[float],
    phases: np.ndarray,
    protocol: ProtocolConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Branch/outcome counts (g+, e+, g-, e-) for P settings at once."""
    x, tr = _signal_values(reduced, alphas, thetas, phases)
    p_plus = _flip(np.clip(0.5 * (tr + x), 0.0, 1.0), protocol.readout_flip)
    p_minus = _flip(np.clip(0.5 * (tr - x), 0.0, 1.0), protocol.readout_flip)
    R = protocol.repetitions
    if protocol.sign_mode == PAIRED:
        g_plus = rng.binomial(R, p_plus)
        g_minus = rng.binomial(R, p_minus)
        return g_plus, R - g_plus, g_minus, R - g_minus
    n_plus = rng.binomial(R, 0.5, size=p_plus.shape)
    g_plus = rng.binomial(n_plus, p_plus)
    g_minus = rng.binomial(R - n_plus, p_minus)
    return g_plus, n_plus - g_plus, g_minus, (R - n_plus) - g_minus


def simulate_signals(
    reduced: DensityMatrix,
    alphas: np.ndarray,
    thetas: Sequence[float],
    phases: np.ndarray,
    protocol: ProtocolConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Per-setting signals; the fast path used by the strategy runners."""
    gp, ep, gm, em = simulate_counts(reduced, alphas, thetas, phases, protocol, rng)
    if protocol.sign_mode == PAIRED:
        R = protocol.repetitions
        return (gp - gm) / R
    return ((gp - ep) - (gm - em)) / protocol.repetitions


def run_batch(
    state: DensityMatrix,
    point: DisplacementPoint,
    phi: float,
    angles: ParityAngles,
    protocol: ProtocolConfig,
    rng: np.random.Generator,
    operator: str | None = None,
) -> ShotBatch:
    """Acquire one setting against a full-space state, returning its batch."""
    part = point.partition
    reduced = project_and_trace(state, part) if part.vacuum_modes else state
    thetas = [angles.thetas[m] for m in part.active_modes]
    alphas = np.array([point.alphas], dtype=np.complex128)
    gp, ep, gm, em = simulate_counts(
        reduced, alphas, thetas, np.array([phi]), protocol, rng
    )
    return ShotBatch(
        operator=operator,
        active_modes=part.active_modes,
        alphas=tuple(point.alphas),
        phase=float(phi),
        sign_mode=protocol.sign_mode,
        g_plus=int(gp[0]),
        e_plus=int(ep[0]),
        g_minus=int(gm[0]),
        e_minus=int(em[0]),
    )


def batches_from_counts(
    operator: str | None,
    active_modes: tuple[int, ...],
    alphas: np.ndarray,
    phases: np.ndarray,
    sign_mode: str,
    counts: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray],
) -> list[ShotBatch]:
    gp, ep, gm, em = counts
    return [
        ShotBatch(
            operator=operator,
            active_modes=active_modes,
            alphas=tuple(alphas[i]),
            phase=float(phases[i]),
            sign_mode=sign_mode,
            g_plus=int(gp[i]),
            e_plus=int(ep[i]),
            g_minus=int(gm[i]),
            e_minus=int(em[i]),
        )
        for i in range(len(phases))
    ]


# ---------------------------------------------------------------------------
# shot logs


def write_shot_log(path: str, batches: Iterable[ShotBatch], meta: dict | None = None) -> None:
    """NDJSON log, one record per shot plus a leading meta record.

    Within a batch, shots are serialized in canonical order (branch +
    ground, branch + excited, branch - ground, branch - excited); the
    per-batch statistics are order invariant.
    """
    with open(path, "w") as fh:
        fh.write(json.dumps({"meta": meta or {}}) + "\n")
        for b_idx, b in enumerate(batches):
            head = {
                "batch": b_idx,
                "operator": b.operator,
                "active_modes": list(b.active_modes),
                "alphas": [[z.real, z.imag] for z in b.alphas],
                "phase": b.phase,
                "sign_mode": b.sign_mode,
            }
            shot = 0
            for branch, outcome, n in (
                ("+", "g", b.g_plus),
                ("+", "e", b.e_plus),
                ("-", "g", b.g_minus),
                ("-", "e", b.e_minus),
            ):
                for _ in range(n):
                    rec = dict(head)
                    rec["branch"] = branch
                    rec["outcome"] = outcome
                    rec["shot"] = shot
                    fh.write(json.dumps(rec) + "\n")
                    shot += 1


def read_shot_log(path: str) -> tuple[dict, list[ShotBatch]]:
    """Rebuild the exact ShotBatch stream from an NDJSON log."""
    meta: dict = {}
    acc: dict[int, dict] = {}
    with open(path) as fh:
        first = fh.readline()
        if first:
            meta = json.loads(first).get("meta", {})
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            b = acc.setdefault(
                rec["batch"],
                {
                    "operator": rec["operator"],
                    "active_modes": tuple(rec["active_modes"]),
                    "alphas": tuple(complex(re, im) for re, im in rec["alphas"]),
                    "phase": float(rec["phase"]),
                    "sign_mode": rec["sign_mode"],
                    "g_plus": 0,
                    "e_plus": 0,
                    "g_minus": 0,
                    "e_minus": 0,
                },
            )
            key = ("g_" if rec["outcome"] == "g" else "e_") + ("plus" if rec["branch"] == "+" else "minus")
            b[key] += 1
    batches = [ShotBatch(**acc[i]) for i in sorted(acc)]
    return meta, batches
