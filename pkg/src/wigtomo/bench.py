"""Benchmark orchestration: configured runs behind the CLI commands.

Each command reads an INI config, derives every random stream from the root
seed plus structured keys, and writes CSV/JSON artifacts with repr-formatted
floats, so identical config and seed reproduce outputs byte for byte at any
thread count.
"""

from __future__ import annotations

import configparser
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .experiment import (
    PAIRED,
    RANDOM_SIGN,
    ProtocolConfig,
    batches_from_counts,
    simulate_counts,
    simulate_signals,
    write_shot_log,
)
from .hilbert import (
    DensityMatrix,
    FockBasis,
    ModePartition,
    element_operators,
    embed_state,
    enumerate_basis,
    ideal_w_state,
    perturbed_state,
    product_basis,
    project_and_trace,
)
from .reconstruct import (
    ReconstructionReport,
    assemble_from_estimate_map,
    fidelity,
    oli_reconstruct,
    w2_fidelity,
)
from .sampling import (
    BudgetSpec,
    OLISet,
    PlanEntry,
    SamplingPlan,
    allocate_budget,
    demesst_sample_arrays,
    oli_displacement_set,
    w2_sample,
)
from .seeding import substream
from .wigner import ParityAngles, choose_wait_time, load_hardware_profile, pi_angles


class ConfigError(ValueError):
    """Malformed or unknown configuration input."""


# ---------------------------------------------------------------------------
# configuration


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip()) if s.strip() else ()


def _parse_float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip()) if s.strip() else ()


def _parse_str_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip()) if s.strip() else ()


@dataclass(frozen=True)
class RunConfig:
    # [target]
    modes: int = 3
    target_cutoff: int = 1
    phases: tuple[float, ...] = ()
    dephase: float = 0.0
    leak: float = 0.0
    perturb_seed: int = 1
    # [measurement]
    meas_cutoff: int = 1
    theta: str = "pi"
    hardware_file: str = ""
    wait_time_us: float = 0.0
    wait_min_us: float = 0.05
    wait_max_us: float = 0.8
    # [protocol]
    readout_flip: float = 0.0
    repetitions: int = 1
    sign_mode: str = RANDOM_SIGN
    # [sampling]
    radius_bound: float = 6.0
    w2_cutoff_ratio: float = 1e-3
    oli_set_size: int = 0
    oli_pool_size: int = 3000
    # [run]
    strategies: tuple[str, ...] = ("demesst", "oli")
    modes_list: tuple[int, ...] = (2, 3, 4)
    checkpoints: tuple[int, ...] = (5_000, 10_000, 20_000, 40_000, 80_000, 160_000, 320_000)
    final_multiplier: int = 10
    groups: int = 10
    target_fidelity: float = 0.9
    max_shots: int = 3_000_000
    n_seeds: int = 5
    epsilon: float = 0.3
    delta: float = 0.1
    total_shots: int = 0
    subspace_modes: tuple[int, ...] = ()
    w2_counts: tuple[int, ...] = (500, 1000, 2000, 4000, 8000)
    w2_reps: int = 25
    bisect_rel_tol: float = 0.06
    start_shots: int = 0
    shot_log: bool = False

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(
            readout_flip=self.readout_flip,
            repetitions=self.repetitions,
            sign_mode=self.sign_mode,
        )


_SCHEMA = {
    "target": {
        "modes": ("modes", int),
        "cutoff": ("target_cutoff", int),
        "phases": ("phases", _parse_float_list),
        "dephase": ("dephase", float),
        "leak": ("leak", float),
        "perturb_seed": ("perturb_seed", int),
    },
    "measurement": {
        "cutoff": ("meas_cutoff", int),
        "theta": ("theta", str),
        "hardware_file": ("hardware_file", str),
        "wait_time_us": ("wait_time_us", float),
        "wait_min_us": ("wait_min_us", float),
        "wait_max_us": ("wait_max_us", float),
    },
    "protocol": {
        "readout_flip": ("readout_flip", float),
        "repetitions": ("repetitions", int),
        "sign_mode": ("sign_mode", str),
    },
    "sampling": {
        "radius_bound": ("radius_bound", float),
        "w2_cutoff_ratio": ("w2_cutoff_ratio", float),
        "oli_set_size": ("oli_set_size", int),
        "oli_pool_size": ("oli_pool_size", int),
    },
    "run": {
        "strategies": ("strategies", _parse_str_list),
        "modes_list": ("modes_list", _parse_int_list),
        "checkpoints": ("checkpoints", _parse_int_list),
        "final_multiplier": ("final_multiplier", int),
        "groups": ("groups", int),
        "target_fidelity": ("target_fidelity", float),
        "max_shots": ("max_shots", int),
        "n_seeds": ("n_seeds", int),
        "epsilon": ("epsilon", float),
        "delta": ("delta", float),
        "total_shots": ("total_shots", int),
        "subspace_modes": ("subspace_modes", _parse_int_list),
        "w2_counts": ("w2_counts", _parse_int_list),
        "w2_reps": ("w2_reps", int),
        "bisect_rel_tol": ("bisect_rel_tol", float),
        "start_shots": ("start_shots", int),
        "shot_log": ("shot_log", lambda s: s.strip().lower() in ("1", "true", "yes")),
    },
}


def parse_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    values = {}
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in cp[section].items():
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            attr, conv = _SCHEMA[section][key]
            try:
                values[attr] = conv(raw)
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
    cfg = RunConfig(**values)
    for strat in cfg.strategies:
        if strat not in ("demesst", "oli"):
            raise ConfigError(f"unknown strategy {strat!r}")
    if cfg.sign_mode not in (PAIRED, RANDOM_SIGN):
        raise ConfigError(f"unknown sign_mode {cfg.sign_mode!r}")
    return cfg


# ---------------------------------------------------------------------------
# target construction


def resolve_angles(cfg: RunConfig, modes: int) -> ParityAngles:
    if cfg.theta == "pi":
        return pi_angles(modes)
    if cfg.theta == "hardware":
        if not cfg.hardware_file:
            raise ConfigError("theta=hardware requires hardware_file")
        prof = load_hardware_profile(cfg.hardware_file)
        if len(prof.chi_mhz) < modes:
            raise ConfigError(
                f"hardware profile has {len(prof.chi_mhz)} modes, need {modes}"
            )
        chis = prof.chi_mhz[:modes]
        t = cfg.wait_time_us or prof.wait_time_us
        if not t:
            t = choose_wait_time(chis, cfg.wait_min_us, cfg.wait_max_us)
        return ParityAngles(tuple(2.0 * math.pi * chi * t for chi in chis))
    try:
        theta = float(cfg.theta)
    except ValueError as exc:
        raise ConfigError(f"theta must be 'pi', 'hardware', or a number: {cfg.theta!r}") from exc
    return ParityAngles((theta,) * modes)


def build_target(cfg: RunConfig, modes: int | None = None) -> tuple[DensityMatrix, DensityMatrix]:
    """(prepared state, ideal reference on the measurement basis)."""
    m = cfg.modes if modes is None else modes
    cutoff = max(cfg.target_cutoff, 2 if cfg.leak > 0 else cfg.target_cutoff)
    phases = cfg.phases if cfg.phases and m == cfg.modes else ()
    ideal_full = ideal_w_state(m, phases, cutoff=cutoff)
    state = (
        perturbed_state(ideal_full, cfg.leak, cfg.dephase, cfg.perturb_seed)
        if (cfg.leak > 0 or cfg.dephase > 0)
        else ideal_full
    )
    ideal_meas = ideal_w_state(m, phases, cutoff=cfg.meas_cutoff)
    return state, ideal_meas


# ---------------------------------------------------------------------------
# strategy runners


@dataclass
class StrategyRun:
    report: ReconstructionReport
    group_raws: list[np.ndarray] = field(default_factory=list)
    group_physicals: list[np.ndarray] = field(default_factory=list)
    actual_shots: int = 0


def _global_partition(op, sub_modes: tuple[int, ...], total_modes: int) -> ModePartition:
    act = tuple(sorted(sub_modes[i] for i in op.partition.active_modes))
    vac = tuple(m for m in range(total_modes) if m not in act)
    return ModePartition(vacuum_modes=vac, active_modes=act)


def run_demesst_once(
    state: DensityMatrix,
    meas_basis: FockBasis,
    angles: ParityAngles,
    protocol: ProtocolConfig,
    seed: int,
    total_shots: int | None = None,
    budget: BudgetSpec | None = None,
    groups: int = 10,
    sub_modes: tuple[int, ...] | None = None,
    collect_batches: bool = False,
) -> StrategyRun | tuple[StrategyRun, list]:
    """One complete direct-sampling run over every element operator.

    Either ``total_shots`` (equal split across operators) or an explicit
    per-operator ``budget`` must be given.  ``sub_modes`` restricts the
    measured space to a subset of the state's modes (all others projected to
    vacuum), which is how subspace traces are probed.
    """
    total_modes = state.basis.modes
    sub = tuple(sub_modes) if sub_modes is not None else tuple(range(total_modes))
    angles_sub = angles.subset(sub) if len(sub) != angles.modes else angles
    ops = element_operators(meas_basis)
    spp = protocol.shots_per_point
    per_op_counts: dict[str, int] = {}
    if budget is not None:
        for op, n in budget.counts:
            per_op_counts[op.label] = max(1, math.ceil(n / spp))
    else:
        if not total_shots:
            raise ValueError("need total_shots or budget")
        pts = max(1, round(total_shots / (len(ops) * spp * groups))) * groups
        for op in ops:
            per_op_counts[op.label] = pts

    red_cache: dict[tuple[int, ...], DensityMatrix] = {}
    estimates: dict[str, float] = {}
    stderrs: dict[str, float] = {}
    group_signals: dict[str, np.ndarray] = {}
    batches = []
    actual = 0
    for o_idx, op in enumerate(ops):
        rng = substream(seed, "dem", o_idx)
        count = per_op_counts[op.label]
        sp = demesst_sample_arrays(op, angles_sub, count, rng)
        gpart = _global_partition(op, sub, total_modes)
        act = gpart.active_modes
        if act not in red_cache:
            red_cache[act] = (
                project_and_trace(state, gpart) if gpart.vacuum_modes else state
            )
        reduced = red_cache[act]
        thetas = [angles.thetas[m] for m in act]
        if collect_batches:
            counts = simulate_counts(reduced, sp.alphas, thetas, sp.phases, protocol, rng)
            gp, ep, gm, em = counts
            if protocol.sign_mode == PAIRED:
                signals = (gp - gm) / protocol.repetitions
            else:
                signals = ((gp - ep) - (gm - em)) / protocol.repetitions
            batches.extend(
                batches_from_counts(op.label, act, sp.alphas, sp.phases, protocol.sign_mode, counts)
            )
        else:
            signals = simulate_signals(reduced, sp.alphas, thetas, sp.phases, protocol, rng)
        actual += count * spp
        estimates[op.label] = sp.weight * float(signals.mean())
        if count >= groups and groups >= 2:
            cut = (count // groups) * groups
            gm_means = signals[:cut].reshape(groups, -1).mean(axis=1)
            group_signals[op.label] = sp.weight * gm_means
            stderrs[op.label] = float(gm_means.std(ddof=1) * sp.weight / math.sqrt(groups))
        else:
            group_signals[op.label] = np.full(groups, estimates[op.label])
            stderrs[op.label] = float("nan")

    report = assemble_from_estimate_map(meas_basis, estimates, stderrs, shots=actual)
    group_raws = []
    for g in range(groups):
        g_est = {label: float(group_signals[label][g]) for label in estimates}
        g_rep = assemble_from_estimate_map(
            meas_basis, g_est, {k: float("nan") for k in g_est}, shots=actual // groups
        )
        group_raws.append(np.asarray(g_rep.raw.entries))
    run = StrategyRun(report=report, group_raws=group_raws, actual_shots=actual)
    if collect_batches:
        return run, batches
    return run


def run_oli_once(
    state: DensityMatrix,
    oli_set: OLISet,
    angles: ParityAngles,
    protocol: ProtocolConfig,
    seed: int,
    total_shots: int,
    groups: int = 10,
) -> StrategyRun:
    """One linear-inversion run: repeated acquisition of the fixed set."""
    P = oli_set.count
    spp = protocol.shots_per_point
    reps_scale = max(1, round(total_shots / (groups * P * spp)))
    proto_g = ProtocolConfig(
        readout_flip=protocol.readout_flip,
        repetitions=protocol.repetitions * reps_scale,
        sign_mode=protocol.sign_mode,
    )
    rng = substream(seed, "oli-run")
    sig_groups = np.stack(
        [
            simulate_signals(
                state, oli_set.alphas, angles.thetas, oli_set.phases, proto_g, rng
            )
            for _ in range(groups)
        ]
    )
    pooled = sig_groups.mean(axis=0)
    actual = groups * P * proto_g.shots_per_point
    report = oli_reconstruct(oli_set, pooled, oli_set.basis, shots=actual)
    group_phys = []
    group_raws = []
    for g in range(groups):
        rep_g = oli_reconstruct(oli_set, sig_groups[g], oli_set.basis, shots=actual // groups)
        group_phys.append(np.asarray(rep_g.physical.entries))
        group_raws.append(np.asarray(rep_g.raw.entries))
    return StrategyRun(
        report=report, group_raws=group_raws, group_physicals=group_phys, actual_shots=actual
    )


def _oli_basis(cfg: RunConfig, modes: int) -> FockBasis:
    """Reconstruction space for linear inversion: per-mode truncation.

    Inversion parametrizes every product state up to the per-mode level
    cutoff, so its dimension is (cutoff+1)^modes; the subspace-sampling
    strategy instead works on the polynomially sized total-photon basis.
    """
    return product_basis(modes, cfg.meas_cutoff)


def _oli_set_for(cfg: RunConfig, basis: FockBasis, angles: ParityAngles, seed: int) -> OLISet:
    size = cfg.oli_set_size or 2 * basis.dim**2
    d2 = basis.dim**2
    # keep the set search tractable when the parameter count is large
    cands = 64 if d2 <= 100 else 8
    rounds = 2 if d2 <= 100 else 1
    return oli_displacement_set(
        basis, angles, size, pool_size=cfg.oli_pool_size, seed=seed,
        exchange_rounds=rounds, candidates_per_step=cands,
    )


# ---------------------------------------------------------------------------
# thread fan-out


def run_cells(cells: list, fn, threads: int) -> list:
    """Evaluate fn(cell) for each cell, in order, optionally threaded.

    Results are returned in the input order regardless of completion order,
    and every cell derives its own RNG streams, so the thread count never
    changes the output.
    """
    if threads <= 1 or len(cells) <= 1:
        return [fn(c) for c in cells]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, cells))


# ---------------------------------------------------------------------------
# CSV helpers


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: str, header: list[str], rows: list[tuple]) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# commands


def convergence_series(
    cfg: RunConfig,
    strategy: str,
    modes: int,
    seed: int,
) -> list[tuple]:
    """Rows (strategy, M, x, fidelity, distance, stderr) for one series.

    Distances are measured between raw (unconstrained) reconstructions and
    a final reference run at final_multiplier times the largest checkpoint.
    Raw estimators are linear in the shot noise, so their error follows the
    ideal power law; the physical projection only enters the fidelity
    column.  The distance at x is the RMS over the repetition groups of
    their distance to the reference, divided by sqrt(groups) to scale it to
    the full checkpoint budget; for unbiased estimates this has the same
    expectation as the pooled-estimate distance but with the group-averaged
    noise.  The reference run itself is appended with nan distance.
    """
    state, ideal_meas = build_target(cfg, modes)
    meas_basis = enumerate_basis(modes, cfg.meas_cutoff)
    angles = resolve_angles(cfg, modes)
    protocol = cfg.protocol()
    final_budget = cfg.final_multiplier * max(cfg.checkpoints)
    oli_set = None
    ideal_cmp = ideal_meas
    if strategy == "oli":
        oli_basis = _oli_basis(cfg, modes)
        oli_set = _oli_set_for(cfg, oli_basis, angles, seed)
        ideal_cmp = embed_state(ideal_meas, oli_basis)

    def run_at(budget: int, key: tuple) -> StrategyRun:
        run_seed_parts = ("conv", strategy, modes) + key
        rs = substream(seed, *run_seed_parts).integers(0, 2**31)
        if strategy == "demesst":
            return run_demesst_once(
                state, meas_basis, angles, protocol, int(rs),
                total_shots=budget, groups=cfg.groups,
            )
        return run_oli_once(
            state, oli_set, angles, protocol, int(rs), budget, groups=cfg.groups
        )

    final = run_at(final_budget, ("final",))
    ref = np.asarray(final.report.raw.entries)
    rows = []
    for c_idx, x in enumerate(cfg.checkpoints):
        run = run_at(x, ("ckpt", c_idx))
        fid = fidelity(run.report.physical, ideal_cmp)
        g2 = np.array([float(np.linalg.norm(g - ref)) ** 2 for g in run.group_raws])
        G = len(g2)
        dist = float(math.sqrt(g2.mean() / G))
        if G > 1 and dist > 0:
            se = float(g2.std(ddof=1) / math.sqrt(G) / (2.0 * dist * G))
        else:
            se = float("nan")
        rows.append((strategy, modes, run.actual_shots, fid, dist, se))
    fid_final = fidelity(final.report.physical, ideal_cmp)
    rows.append((strategy, modes, final.actual_shots, fid_final, float("nan"), float("nan")))
    return rows


def cmd_convergence(cfg: RunConfig, seed: int, out_dir: str, threads: int = 1) -> dict:
    cells = [(s, m) for s in cfg.strategies for m in cfg.modes_list]
    results = run_cells(cells, lambda c: convergence_series(cfg, c[0], c[1], seed), threads)
    rows = [r for rs in results for r in rs]
    path = os.path.join(out_dir, "convergence.csv")
    write_csv(path, ["strategy", "modes", "shots", "fidelity", "distance", "stderr"], rows)
    return {"csv": path, "rows": len(rows)}


def _median_fidelity_at(
    cfg: RunConfig,
    strategy: str,
    modes: int,
    budget: int,
    seed: int,
    state: DensityMatrix,
    ideal_meas: DensityMatrix,
    meas_basis: FockBasis,
    angles: ParityAngles,
    oli_set: OLISet | None,
    threads: int = 1,
) -> float:
    protocol = cfg.protocol()

    def one(i: int) -> float:
        rs = int(substream(seed, "scal", strategy, modes, i).integers(0, 2**31))
        if strategy == "demesst":
            run = run_demesst_once(
                state, meas_basis, angles, protocol, rs, total_shots=budget, groups=1
            )
        else:
            run = run_oli_once(state, oli_set, angles, protocol, rs, budget, groups=1)
        return fidelity(run.report.physical, ideal_meas)
    fids = run_cells(list(range(cfg.n_seeds)), one, threads)
    return float(np.median(fids))


def shots_to_target(
    cfg: RunConfig, strategy: str, modes: int, seed: int, threads: int = 1
) -> tuple[int, bool]:
    """Smallest budget (up to rel tolerance) whose median fidelity reaches
    the target, by doubling then log-space bisection; (cap, True) if the cap
    is hit first."""
    state, ideal_meas = build_target(cfg, modes)
    meas_basis = enumerate_basis(modes, cfg.meas_cutoff)
    angles = resolve_angles(cfg, modes)
    oli_set = None
    n_ops = meas_basis.dim**2
    if strategy == "oli":
        oli_basis = _oli_basis(cfg, modes)
        oli_set = _oli_set_for(cfg, oli_basis, angles, seed)
        ideal_meas = embed_state(ideal_meas, oli_basis)
        n_ops = oli_basis.dim**2

    def ok(budget: int) -> bool:
        f = _median_fidelity_at(
            cfg, strategy, modes, budget, seed, state, ideal_meas, meas_basis,
            angles, oli_set, threads,
        )
        return f >= cfg.target_fidelity

    lo = None
    x = cfg.start_shots or max(200, 20 * n_ops)
    while True:
        if x >= cfg.max_shots:
            if ok(cfg.max_shots):
                hi = cfg.max_shots
                lo = lo or cfg.max_shots // 2
                break
            return cfg.max_shots, True
        if ok(x):
            hi = x
            lo = lo or max(1, x // 2)
            break
        lo = x
        x *= 2
    while hi / lo > 1.0 + cfg.bisect_rel_tol:
        mid = int(round(math.sqrt(float(lo) * float(hi))))
        if mid in (lo, hi):
            break
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi, False


def cmd_scaling(cfg: RunConfig, seed: int, out_dir: str, threads: int = 1) -> dict:
    cells = [(s, m) for s in cfg.strategies for m in cfg.modes_list]
    results = run_cells(
        cells, lambda c: shots_to_target(cfg, c[0], c[1], seed, threads=1), threads
    )
    rows = []
    capped_any = False
    for (s, m), (shots, capped) in zip(cells, results):
        rows.append((s, m, shots, capped))
        capped_any = capped_any or capped
    path = os.path.join(out_dir, "scaling.csv")
    write_csv(path, ["strategy", "modes", "shots_to_target", "capped"], rows)
    return {"csv": path, "capped": capped_any, "rows": len(rows)}


def cmd_trace_check(cfg: RunConfig, seed: int, out_dir: str, threads: int = 1) -> dict:
    """Raw-trace convergence for the full space and an optional subspace."""
    state, _ = build_target(cfg)
    angles = resolve_angles(cfg, cfg.modes)
    protocol = cfg.protocol()
    scopes: list[tuple[str, tuple[int, ...] | None]] = [("full", None)]
    if cfg.subspace_modes:
        bad = [m for m in cfg.subspace_modes if not 0 <= m < cfg.modes]
        if bad:
            raise ConfigError(f"subspace modes {bad} out of range")
        scopes.append(("subspace", tuple(sorted(cfg.subspace_modes))))

    def series(scope_cell) -> list[tuple]:
        scope, sub = scope_cell
        n_sub = cfg.modes if sub is None else len(sub)
        basis = enumerate_basis(n_sub, cfg.meas_cutoff)
        rows = []
        for c_idx, x in enumerate(cfg.checkpoints):
            rs = int(substream(seed, "trace", scope, c_idx).integers(0, 2**31))
            run = run_demesst_once(
                state, basis, angles, protocol, rs,
                total_shots=x, groups=cfg.groups, sub_modes=sub,
            )
            gtr = np.array([float(np.trace(g).real) for g in run.group_raws])
            se = float(gtr.std(ddof=1) / math.sqrt(len(gtr))) if len(gtr) > 1 else float("nan")
            rows.append((scope, n_sub, run.actual_shots, run.report.trace_raw, se))
        return rows

    results = run_cells(scopes, series, threads)
    rows = [r for rs in results for r in rs]
    path = os.path.join(out_dir, "trace.csv")
    write_csv(path, ["scope", "modes", "shots", "trace_raw", "stderr"], rows)
    return {"csv": path, "rows": len(rows)}


def cmd_w2(cfg: RunConfig, seed: int, out_dir: str, threads: int = 1) -> dict:
    """Direct fidelity estimates at growing accepted-sample counts."""
    state, _ = build_target(cfg)
    angles = resolve_angles(cfg, cfg.modes)
    ideal_target = ideal_w_state(cfg.modes, cfg.phases, cutoff=cfg.meas_cutoff)
    protocol = ProtocolConfig(
        readout_flip=cfg.readout_flip, repetitions=cfg.w2_reps, sign_mode=PAIRED
    )

    def one(cell) -> tuple:
        c_idx, count = cell
        samples = w2_sample(
            ideal_target,
            angles,
            count,
            seed=int(substream(seed, "w2s", c_idx).integers(0, 2**31)),
            cutoff_ratio=cfg.w2_cutoff_ratio,
            radius_bound=cfg.radius_bound,
        )
        rng = substream(seed, "w2m", c_idx)
        signals = simulate_signals(
            state, samples.alphas, angles.thetas, samples.phases, protocol, rng
        )
        f, se = w2_fidelity(samples, signals)
        rate = samples.count / samples.proposals
        return (count, count * protocol.shots_per_point, f, se, rate)

    rows = run_cells(list(enumerate(cfg.w2_counts)), one, threads)
    path = os.path.join(out_dir, "w2.csv")
    write_csv(path, ["accepted", "shots", "fidelity", "stderr", "accept_rate"], rows)
    return {"csv": path, "rows": len(rows)}


def cmd_reconstruct(cfg: RunConfig, seed: int, out_dir: str, threads: int = 1) -> dict:
    """One full tomography run of the configured target; writes the report."""
    state, ideal_meas = build_target(cfg)
    meas_basis = enumerate_basis(cfg.modes, cfg.meas_cutoff)
    angles = resolve_angles(cfg, cfg.modes)
    protocol = cfg.protocol()
    strategy = cfg.strategies[0]
    batches = None
    if strategy == "demesst":
        if cfg.total_shots:
            result = run_demesst_once(
                state, meas_basis, angles, protocol, seed,
                total_shots=cfg.total_shots, groups=cfg.groups,
                collect_batches=cfg.shot_log,
            )
        else:
            budget = allocate_budget(meas_basis, angles, cfg.epsilon, cfg.delta)
            result = run_demesst_once(
                state, meas_basis, angles, protocol, seed,
                budget=budget, groups=cfg.groups, collect_batches=cfg.shot_log,
            )
        if cfg.shot_log:
            run, batches = result
        else:
            run = result
    else:
        oli_basis = _oli_basis(cfg, cfg.modes)
        oli_set = _oli_set_for(cfg, oli_basis, angles, seed)
        ideal_meas = embed_state(ideal_meas, oli_basis)
        total = cfg.total_shots or 100 * oli_set.count
        run = run_oli_once(state, oli_set, angles, protocol, seed, total, groups=cfg.groups)
    report = run.report
    fid = fidelity(report.physical, ideal_meas)
    fid_raw = fidelity(report.raw, ideal_meas)
    payload = json.loads(report.to_json())
    payload["fidelity_vs_ideal"] = {"raw": fid_raw, "physical": fid}
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w") as fh:
        fh.write(json.dumps(payload))
    outputs = {"report": report_path, "fidelity_physical": fid, "shots": run.actual_shots}
    if batches is not None:
        log_path = os.path.join(out_dir, "shots.ndjson")
        write_shot_log(
            log_path,
            batches,
            meta={
                "modes": cfg.modes,
                "cutoff": cfg.meas_cutoff,
                "thetas": list(angles.thetas),
                "sign_mode": protocol.sign_mode,
                "repetitions": protocol.repetitions,
                "readout_flip": protocol.readout_flip,
                "seed": seed,
            },
        )
        outputs["shot_log"] = log_path
    return outputs


def cmd_optimize_set(cfg: RunConfig, seed: int, out_dir: str, threads: int = 1) -> dict:
    """Build and serialize the linear-inversion displacement set."""
    oli_basis = _oli_basis(cfg, cfg.modes)
    angles = resolve_angles(cfg, cfg.modes)
    oli_set = _oli_set_for(cfg, oli_basis, angles, seed)
    entries = tuple(
        PlanEntry(
            operator=None,
            active_modes=tuple(range(cfg.modes)),
            alphas=tuple(complex(z) for z in oli_set.alphas[i]),
            phase=float(oli_set.phases[i]),
            shots=0,
        )
        for i in range(oli_set.count)
    )
    plan = SamplingPlan(
        strategy="oli",
        modes=cfg.modes,
        cutoff=cfg.meas_cutoff,
        thetas=angles.thetas,
        entries=entries,
    )
    path = os.path.join(out_dir, "plan.json")
    with open(path, "w") as fh:
        payload = json.loads(plan.to_json())
        payload["condition"] = oli_set.condition
        fh.write(json.dumps(payload))
    return {"plan": path, "condition": oli_set.condition, "size": oli_set.count}
