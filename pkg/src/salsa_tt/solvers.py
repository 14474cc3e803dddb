"""Completion drivers: stabilized rank-adaptive sweeps, plain ALS, the
greedy rank-adaption baseline and the d = 2 stable matrix completion.

One outer iteration is one sweep.  In the default bidirectional order a
sweep runs the modes 1..h and then d..h, h = floor(d/2), so every core is
touched and the two halves stay symmetric.  Each micro-step refreshes the
bond SVD, solves the slice systems, clamps the adjacent bond spectra at
the current singular value floor and moves the gauge to the next mode.
"""

import time
from dataclasses import asdict, dataclass

import numpy as np

from . import rank_control as rc
from .microstep import (
    LocalSystem,
    matrix_zeta,
    solve_slice,
    weights_all_modes,
    zeta_constants,
)
from .sampling import split_control
from .tt import (
    GaugeState,
    TTTensor,
    _fix_svd_signs,
    constant_tensor,
    refold_left,
    refold_right,
    truncate,
    unfold_left,
    unfold_right,
)

__all__ = [
    "SolverConfig",
    "SolveResult",
    "GreedyProbe",
    "salsa_sweep",
    "salsa_solve",
    "als_solve",
    "greedy_als_solve",
    "matrix_salsa",
    "greedy_rank_estimate",
    "stable_matrix_update",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = (
    "iter",
    "omega_tilde",
    "omega",
    "res_P_rel",
    "res_P2_rel",
    "ranks",
    "stabilized_ranks",
    "sigma_min",
)

# Relative residual below which the sampled data is interpolated to machine
# precision and further omega decline cannot change anything measurable.
MACHINE_FLOOR_REL = 1e-13


@dataclass
class SolverConfig:
    """Tuning parameters; the defaults are the recommended benchmark set."""

    algorithm: str = "salsa"
    r_lim: int = 8
    theta_virt: float = 0.33
    theta_stab: float = 0.99
    theta_stab_strict: float = 0.999
    beta_min: float = 0.02
    f_p2: float = 2.5
    gamma_star: float = 1e-3
    f_omega: float = 1.1
    control_fraction: float = 1.0 / 20.0
    omega_tilde_init: float = 0.5
    warmup_als_sweeps: int = 1
    virtual_rank_intro_iter: int = 3
    sweep_order: str = "bidirectional"
    max_iters: int = 500
    seed: int = 0
    # "formula" regularizes the boundary modes with the plain mode-size
    # sums; "remark" leaves modes 1 and d unregularized
    boundary_regularization: str = "formula"
    final_cut: bool = True
    greedy_selection: str = "max"
    spectrum_change_tol: float = 0.01
    als_rank: int = 1
    # double omega decline while deeply virtual directions exist; off by
    # default: it starves the window in which virtual directions can escape
    # the singular value floor
    accelerated_omega_decline: bool = False

    def __post_init__(self):
        if not 0 < self.theta_virt < self.theta_stab < self.theta_stab_strict < 1:
            raise ValueError("need 0 < theta_virt < theta_stab < theta_stab_strict < 1")
        if self.f_omega <= 1 or self.f_p2 <= 1:
            raise ValueError("f_omega and f_p2 must exceed 1")
        if self.sweep_order not in ("forward", "bidirectional"):
            raise ValueError("sweep_order must be 'forward' or 'bidirectional'")
        if self.greedy_selection not in ("max", "min"):
            raise ValueError("greedy_selection must be 'max' or 'min'")
        if self.boundary_regularization not in ("remark", "formula"):
            raise ValueError("boundary_regularization must be 'remark' or 'formula'")


@dataclass
class SolveResult:
    """Outcome of one solve: the chosen snapshot plus run diagnostics."""

    tensor: TTTensor
    ranks: tuple
    stabilized_ranks: tuple
    res_p_abs: float
    res_p_rel: float
    res_p2_abs: float
    res_p2_rel: float
    verdict: str
    iterations: int
    best_iter: int
    trace: list
    algorithm: str
    seed: int
    wall_time_s: float
    rank_deficient_slices: int = 0
    verification_rel: float = None

    def summary(self, config=None):
        out = {
            "algorithm": self.algorithm,
            "seed": self.seed,
            "verdict": self.verdict,
            "iterations": self.iterations,
            "best_iter": self.best_iter,
            "final_ranks": list(self.ranks),
            "stabilized_ranks": list(self.stabilized_ranks),
            "res_P_rel": self.res_p_rel,
            "res_P2_rel": self.res_p2_rel,
            "rank_deficient_slices": self.rank_deficient_slices,
            "wall_time_s": self.wall_time_s,
        }
        if self.verification_rel is not None:
            out["verification_rel"] = self.verification_rel
        if config is not None:
            out["config"] = asdict(config)
        return out

    def trace_csv(self):
        lines = [",".join(TRACE_COLUMNS)]
        for row in self.trace:
            lines.append(",".join(str(row[c]) for c in TRACE_COLUMNS))
        return "\n".join(lines) + "\n"


class _Pack:
    """Per-solve sampling data in solver-friendly layout."""

    def __init__(self, samples):
        self.points = samples.points
        self.values = samples.values
        self.norm = 0.0 if self.values is None else float(np.linalg.norm(self.values))
        self.slices = [samples.slice_positions(mu) for mu in range(1, samples.d + 1)]
        self.count = len(samples)


class _State:
    """Mutable working copy of the iterate: cores, bond spectra, gauge center."""

    def __init__(self, t):
        self.cores = [np.array(c) for c in t.cores]
        self.d = len(self.cores)
        self.sigma = [None] * (self.d - 1)
        self.center = self.d - 1
        if self.d > 1:
            self.transport(0)
            self.transport(self.d - 1)
            self.transport(0)
        else:
            self.center = 0

    def transport(self, to):
        """Move the gauge center with SVD pushes, refreshing crossed spectra."""
        while self.center < to:
            m = self.center
            n = self.cores[m].shape[1]
            u, s, vt = np.linalg.svd(unfold_left(self.cores[m]), full_matrices=False)
            u, vt = _fix_svd_signs(u, vt)
            self.sigma[m] = s
            self.cores[m] = refold_left(u, n)
            self.cores[m + 1] = np.tensordot(s[:, None] * vt, self.cores[m + 1], axes=(1, 0))
            self.center += 1
        while self.center > to:
            m = self.center
            n = self.cores[m].shape[1]
            u, s, vt = np.linalg.svd(unfold_right(self.cores[m]), full_matrices=False)
            u, vt = _fix_svd_signs(u, vt)
            self.sigma[m - 1] = s
            self.cores[m] = refold_right(vt, n)
            self.cores[m - 1] = np.tensordot(self.cores[m - 1], u * s[None, :], axes=(2, 0))
            self.center -= 1

    def norm(self):
        """Frobenius norm of the iterate (norm of the center core)."""
        return float(np.linalg.norm(self.cores[self.center]))

    def ranks(self):
        return tuple(c.shape[2] for c in self.cores[:-1])

    def mode_sizes(self):
        return tuple(c.shape[1] for c in self.cores)

    def tensor(self):
        return TTTensor(self.cores)

    def gauge(self):
        return GaugeState(self.center + 1, [np.array(s) for s in self.sigma])

    def evaluate(self, points):
        v = np.ones((points.shape[0], 1))
        for mu, core in enumerate(self.cores):
            v = np.einsum("pl,lpr->pr", v, core[:, points[:, mu] - 1, :])
        return v[:, 0]


class _SweepStats:
    def __init__(self):
        self.rank_deficient = 0


def _slice_weights(n, mu, omega, config):
    if len(n) == 2:
        return matrix_zeta(n, mu, omega)
    return zeta_constants(n, mu, omega, config.boundary_regularization)


def _mode_weights(n, omega, config):
    return weights_all_modes(n, omega, config.boundary_regularization)


def _mode_plan(d, order):
    """0-based modes of one sweep: the forward and backward legs."""
    if order == "forward" or d == 1:
        return list(range(d)), []
    h = d // 2
    return list(range(h)), list(range(d - 1, h - 2, -1))


def _solve_mode(state, pack, m, l_rows_all, r_cols_all, omega, config, stats):
    """Slice solves of mode m given per-sample interfaces; returns the new core."""
    n = state.mode_sizes()
    d = state.d
    w = _slice_weights(n, m + 1, omega, config)
    ones = np.ones(1)
    sig_l = state.sigma[m - 1] if m > 0 else ones
    sig_r = state.sigma[m] if m < d - 1 else ones
    n_left = float(np.prod([float(x) for x in n[:m]])) if m > 0 else 1.0
    n_right = float(np.prod([float(x) for x in n[m + 1 :]])) if m < d - 1 else 1.0
    new_core = np.zeros((len(sig_l), n[m], len(sig_r)))
    for j in range(n[m]):
        pos = pack.slices[m][j]
        sys = LocalSystem(
            m + 1,
            j + 1,
            l_rows_all[pos],
            r_cols_all[pos].T,
            pack.values[pos],
            sig_l,
            sig_r,
            w,
            n_left,
            n_right,
        )
        sol = solve_slice(sys)
        if sol.rank_deficient:
            stats.rank_deficient += 1
        new_core[:, j, :] = sol.matrix
    return new_core


def _forward_micro(state, pack, m, omega, sigma_min, l_cache, r_bond, config, stats):
    """One micro-step moving left to right; returns the next left cache."""
    d = state.d
    n_m = state.cores[m].shape[1]
    if m < d - 1:
        u, s, vt = np.linalg.svd(unfold_left(state.cores[m]), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        state.sigma[m] = s
        state.cores[m] = refold_left(u * s[None, :], n_m)
        state.cores[m + 1] = np.tensordot(vt, state.cores[m + 1], axes=(1, 0))
        r_bond[m] = r_bond[m] @ vt.T
    new_core = _solve_mode(state, pack, m, l_cache, r_bond[m], omega, config, stats)
    if m > 0:
        u, s, vt = np.linalg.svd(unfold_right(new_core), full_matrices=False)
        s = np.maximum(s, sigma_min[m - 1])
        new_core = refold_right((u * s[None, :]) @ vt, n_m)
        state.sigma[m - 1] = s
    if m < d - 1:
        u, s, vt = np.linalg.svd(unfold_left(new_core), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        s = np.maximum(s, sigma_min[m])
        state.sigma[m] = s
        new_core = refold_left(u, n_m)
        state.cores[m + 1] = np.tensordot(s[:, None] * vt, state.cores[m + 1], axes=(1, 0))
        state.center = m + 1
    state.cores[m] = new_core
    idx = pack.points[:, m] - 1
    return np.einsum("pl,lpr->pr", l_cache, new_core[:, idx, :])


def _backward_micro(state, pack, m, omega, sigma_min, l_bond, r_cache, config, stats):
    """One micro-step moving right to left; returns the next right cache."""
    n_m = state.cores[m].shape[1]
    if m > 0:
        u, s, vt = np.linalg.svd(unfold_right(state.cores[m]), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        state.sigma[m - 1] = s
        state.cores[m] = refold_right(s[:, None] * vt, n_m)
        state.cores[m - 1] = np.tensordot(state.cores[m - 1], u, axes=(2, 0))
        l_bond[m] = l_bond[m] @ u
    new_core = _solve_mode(state, pack, m, l_bond[m], r_cache, omega, config, stats)
    if m < state.d - 1:
        u, s, vt = np.linalg.svd(unfold_left(new_core), full_matrices=False)
        s = np.maximum(s, sigma_min[m])
        new_core = refold_left((u * s[None, :]) @ vt, n_m)
        state.sigma[m] = s
    if m > 0:
        u, s, vt = np.linalg.svd(unfold_right(new_core), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        s = np.maximum(s, sigma_min[m - 1])
        state.sigma[m - 1] = s
        new_core = refold_right(vt, n_m)
        state.cores[m - 1] = np.tensordot(state.cores[m - 1], u * s[None, :], axes=(2, 0))
        state.center = m - 1
    state.cores[m] = new_core
    idx = pack.points[:, m] - 1
    return np.einsum("lpr,pr->pl", new_core[:, idx, :], r_cache)


def _right_caches(state, pack):
    """Per-sample right interface products, caches[m] for bond/mode m."""
    d = state.d
    caches = [None] * d
    r = np.ones((pack.count, 1))
    caches[d - 1] = r
    for m in range(d - 1, 0, -1):
        idx = pack.points[:, m] - 1
        r = np.einsum("lpr,pr->pl", state.cores[m][:, idx, :], r)
        caches[m - 1] = r
    return caches


def _left_caches(state, pack):
    """Per-sample left interface products, caches[m] = product over cores < m."""
    d = state.d
    caches = [None] * d
    l = np.ones((pack.count, 1))
    caches[0] = l
    for m in range(d - 1):
        idx = pack.points[:, m] - 1
        l = np.einsum("pl,lpr->pr", l, state.cores[m][:, idx, :])
        caches[m + 1] = l
    return caches


def _run_sweep(state, pack, omega, sigma_min, config):
    """One full sweep (forward leg, then backward leg when bidirectional)."""
    d = state.d
    if sigma_min is None:
        sigma_min = np.zeros(max(d - 1, 1))
    stats = _SweepStats()
    fwd, bwd = _mode_plan(d, config.sweep_order)
    state.transport(0)
    r_bond = _right_caches(state, pack)
    l_cache = np.ones((pack.count, 1))
    for m in fwd:
        l_cache = _forward_micro(
            state, pack, m, omega, sigma_min, l_cache, r_bond, config, stats
        )
    if bwd:
        state.transport(d - 1)
        l_bond = _left_caches(state, pack)
        r_cache = np.ones((pack.count, 1))
        for m in bwd:
            r_cache = _backward_micro(
                state, pack, m, omega, sigma_min, l_bond, r_cache, config, stats
            )
    return stats


def salsa_sweep(t, gauge, samples, schedule, config):
    """One stabilized sweep over a sample set.

    Returns (tensor, gauge, FilterState); ``gauge`` on entry is advisory,
    the sweep re-canonicalizes as needed.
    """
    state = _State(t)
    pack = _Pack(samples)
    _run_sweep(state, pack, schedule.omega, schedule.sigma_min, config)
    weights = _mode_weights(state.mode_sizes(), schedule.omega, config)
    fs = rc.minimal_filter_values(state.sigma, weights)
    return state.tensor(), state.gauge(), fs


def _trace_row(it, schedule, res_p_rel, res_p2_rel, ranks, stab):
    return {
        "iter": it,
        "omega_tilde": schedule.omega_tilde,
        "omega": schedule.omega,
        "res_P_rel": res_p_rel,
        "res_P2_rel": res_p2_rel,
        "ranks": "x".join(str(r) for r in ranks),
        "stabilized_ranks": "x".join(str(r) for r in stab),
        "sigma_min": ";".join("%.6e" % s for s in np.atleast_1d(schedule.sigma_min)),
    }


def _residuals(state, pack):
    pred = state.evaluate(pack.points)
    absres = float(np.linalg.norm(pred - pack.values))
    rel = absres / pack.norm if pack.norm > 0 else absres
    return absres, rel


def _snapshot(state, stab, it):
    return {
        "cores": [np.array(c) for c in state.cores],
        "stabilized_ranks": tuple(stab),
        "iteration": it,
    }


def _prepare(samples, config, control):
    if samples.values is None:
        raise ValueError("sample set has no values")
    if samples.d < 2:
        raise ValueError("completion needs at least two modes")
    if control is None:
        train, ctrl = split_control(samples, config.control_fraction, seed=config.seed)
    else:
        train, ctrl = samples, control
    return _Pack(train), _Pack(ctrl)


def _finalize(state, pack_p, pack_p2, tracker, verdict, config, trace, t0, stats):
    snap = tracker.best_payload
    if snap is None:
        tensor = state.tensor()
        stab = state.ranks()
        best_iter = tracker.iteration
    else:
        tensor = TTTensor(snap["cores"])
        stab = snap["stabilized_ranks"]
        best_iter = snap["iteration"]
    if config.final_cut and tensor.d >= 2:
        target = [max(1, min(s, r)) for s, r in zip(stab, tensor.bond_ranks)]
        if tuple(target) != tensor.bond_ranks:
            tensor = truncate(tensor, ranks=target)
    final = _State(tensor)
    abs_p = float(np.linalg.norm(final.evaluate(pack_p.points) - pack_p.values))
    abs_p2 = float(np.linalg.norm(final.evaluate(pack_p2.points) - pack_p2.values))
    return SolveResult(
        tensor=tensor,
        ranks=tensor.bond_ranks,
        stabilized_ranks=tuple(stab),
        res_p_abs=abs_p,
        res_p_rel=abs_p / pack_p.norm if pack_p.norm > 0 else abs_p,
        res_p2_abs=abs_p2,
        res_p2_rel=abs_p2 / pack_p2.norm if pack_p2.norm > 0 else abs_p2,
        verdict=verdict,
        iterations=tracker.iteration,
        best_iter=best_iter if best_iter is not None else 0,
        trace=trace,
        algorithm=config.algorithm,
        seed=config.seed,
        wall_time_s=time.perf_counter() - t0,
        rank_deficient_slices=stats.rank_deficient,
    )


def _introduce_virtual_ranks(state, schedule, rng, tracker):
    """One-time uniform rank overestimation (r -> r+1 at every bond)."""
    d = state.d
    t = state.tensor()
    norm = state.norm()
    for k in range(d - 1):
        sig = max(schedule.sigma_min[k], rc.SIGMA_MIN_FLOOR_REL * max(norm, 1.0))
        try:
            t = rc.increase_rank(t, k + 1, sig, rng)
        except ValueError:
            continue
        tracker.record_milestone(sum(t.bond_ranks), d)
    return _State(t)


def _apply_rank_changes(state, fs, unblocked, decreased, schedule, config, rng, tracker):
    """Remark-style rank changes after one iteration; returns the new state."""
    d = state.d
    t = None
    ranks = list(state.ranks())
    for k in range(d - 1):
        th = fs.theta[k]
        r = ranks[k]
        if r >= 2 and len(th) >= r and th[r - 2] < config.theta_virt:
            t = state.tensor() if t is None else t
            t = rc.decrease_rank(t, k + 1)
            ranks[k] -= 1
        elif (
            decreased
            and (k + 1) in unblocked
            and len(th) >= r
            and th[r - 1] > config.theta_stab
        ):
            t = state.tensor() if t is None else t
            try:
                t = rc.increase_rank(t, k + 1, float(schedule.sigma_min[k]), rng)
            except ValueError:
                continue
            ranks[k] += 1
            tracker.record_milestone(sum(ranks), d)
    return state if t is None else _State(t)


def salsa_solve(samples, config=None, control=None):
    """Stabilized rank-adaptive completion of a sampled tensor.

    Starts from the constant tensor matching the sample RMS, runs warm-up
    ALS sweeps, introduces virtual ranks once, then alternates stabilized
    sweeps with the omega schedule, the singular value floor and the rank
    changes until omega is minimal or the control residual diverges.  The
    returned tensor is the control-best snapshot, cut to its stabilized
    ranks when final_cut is set.
    """
    config = config or SolverConfig()
    t0 = time.perf_counter()
    pack_p, pack_p2 = _prepare(samples, config, control)
    n = samples.n
    d = samples.d
    rng = np.random.default_rng(config.seed)
    rms = pack_p.norm / np.sqrt(pack_p.count)
    state = _State(constant_tensor(n, rms))
    stats = _SweepStats()
    for _ in range(config.warmup_als_sweeps):
        st = _run_sweep(state, pack_p, 0.0, None, config)
        stats.rank_deficient += st.rank_deficient
    tracker = rc.ProgressTracker(control_norm=pack_p2.norm)
    abs_p, _ = _residuals(state, pack_p)
    abs_p2, _ = _residuals(state, pack_p2)
    norm = state.norm()
    schedule = rc.OmegaSchedule(
        omega_tilde=config.omega_tilde_init,
        omega=config.omega_tilde_init * norm,
        f_omega=config.f_omega,
        sigma_min=np.full(max(d - 1, 1), rc.SIGMA_MIN_FLOOR_REL * max(norm, 1.0)),
    )
    schedule.sigma_min = rc.sigma_min_fixpoint(
        schedule, state.sigma, _mode_weights(n, schedule.omega, config), n,
        res_p=abs_p, res_p2=abs_p2, p_count=pack_p.count, p2_count=pack_p2.count,
        norm=norm,
    )
    trace = []
    prev_sigma = [np.array(s) for s in state.sigma]
    intro_done = False
    verdict = "max_iters"
    for it in range(1, config.max_iters + 1):
        if not intro_done and it == config.virtual_rank_intro_iter:
            state = _introduce_virtual_ranks(state, schedule, rng, tracker)
            intro_done = True
        st = _run_sweep(state, pack_p, schedule.omega, schedule.sigma_min, config)
        stats.rank_deficient += st.rank_deficient
        abs_p, rel_p = _residuals(state, pack_p)
        abs_p2, rel_p2 = _residuals(state, pack_p2)
        norm = state.norm()
        weights = _mode_weights(n, schedule.omega, config)
        fs = rc.minimal_filter_values(state.sigma, weights)
        stab = rc.stabilized_ranks(fs, config.theta_stab)
        tracker.record(abs_p, abs_p2, payload=_snapshot(state, stab, it))
        unblocked = rc.unblocked_ranks(tracker, state.ranks(), n, pack_p.count, config)
        growable = rc.unblocked_ranks(
            tracker, state.ranks(), n, pack_p.count, config, beta_clauses=False
        )
        sigma_change = rc.spectrum_change(prev_sigma, state.sigma)
        prev_sigma = [np.array(s) for s in state.sigma]
        schedule, decreased = rc.update_omega(
            schedule, tracker, fs, config,
            norm=norm, sigma_change=sigma_change,
            stab_ranks=stab, unblocked_empty=(len(growable) == 0),
        )
        schedule.sigma_min = rc.sigma_min_fixpoint(
            schedule, state.sigma, _mode_weights(n, schedule.omega, config), n,
            res_p=abs_p, res_p2=abs_p2, p_count=pack_p.count, p2_count=pack_p2.count,
            norm=norm,
        )
        if intro_done:
            state = _apply_rank_changes(
                state, fs, unblocked, decreased, schedule, config, rng, tracker
            )
        verdict_now = rc.check_termination(tracker, schedule, config)
        if rel_p < MACHINE_FLOOR_REL and rel_p2 < MACHINE_FLOOR_REL:
            verdict_now = "converged"
        trace.append(_trace_row(it, schedule, rel_p, rel_p2, state.ranks(), stab))
        if verdict_now != "continue":
            verdict = verdict_now
            break
    return _finalize(state, pack_p, pack_p2, tracker, verdict, config, trace, t0, stats)


def als_solve(samples, config=None, control=None, initial=None):
    """Fixed-rank alternating least squares (omega = 0)."""
    config = config or SolverConfig(algorithm="als", final_cut=False)
    t0 = time.perf_counter()
    pack_p, pack_p2 = _prepare(samples, config, control)
    rms = pack_p.norm / np.sqrt(pack_p.count)
    start = initial if initial is not None else constant_tensor(samples.n, rms)
    state = _State(start)
    tracker = rc.ProgressTracker(control_norm=pack_p2.norm)
    trace = []
    stats = _SweepStats()
    schedule = rc.OmegaSchedule(0.0, 0.0, config.f_omega, np.zeros(max(samples.d - 1, 1)))
    verdict = "max_iters"
    for it in range(1, config.max_iters + 1):
        st = _run_sweep(state, pack_p, 0.0, None, config)
        stats.rank_deficient += st.rank_deficient
        abs_p, rel_p = _residuals(state, pack_p)
        abs_p2, rel_p2 = _residuals(state, pack_p2)
        tracker.record(abs_p, abs_p2, payload=_snapshot(state, state.ranks(), it))
        trace.append(_trace_row(it, schedule, rel_p, rel_p2, state.ranks(), state.ranks()))
        if rel_p < MACHINE_FLOOR_REL and rel_p2 < MACHINE_FLOOR_REL:
            verdict = "converged"
            break
        g = tracker.gamma_mean("P")
        if g is not None and abs(1.0 - g) < config.gamma_star:
            verdict = "converged"
            break
        if rc.check_termination(tracker, schedule, config) == "diverged":
            verdict = "diverged"
            break
    return _finalize(state, pack_p, pack_p2, tracker, verdict, config, trace, t0, stats)


@dataclass
class GreedyProbe:
    """Projected-residual probe of one bond for the greedy baseline."""

    bond: int
    t_core: np.ndarray  # (n_mu, n_mu+1, r_left, r_right) projected residual
    alpha: np.ndarray  # (n_mu, n_mu+1) per-pair step lengths
    h_stack: np.ndarray  # stacked matrix of alpha * T
    sigma_plus: float


def _probe_bond(state, points, resid, k):
    """Probe 0-based bond k from the sampled residual ``resid``."""
    d = state.d
    state.transport(k)
    l = np.ones((points.shape[0], 1))
    for m in range(k):
        l = np.einsum("pl,lpr->pr", l, state.cores[m][:, points[:, m] - 1, :])
    r = np.ones((points.shape[0], 1))
    for m in range(d - 1, k + 1, -1):
        r = np.einsum("lpr,pr->pl", state.cores[m][:, points[:, m] - 1, :], r)
    n1 = state.cores[k].shape[1]
    n2 = state.cores[k + 1].shape[1]
    rl = state.cores[k].shape[0]
    rr = state.cores[k + 1].shape[2]
    pair = (points[:, k] - 1) * n2 + (points[:, k + 1] - 1)
    t_core = np.zeros((n1 * n2, rl, rr))
    contrib = resid[:, None, None] * l[:, :, None] * r[:, None, :]
    np.add.at(t_core, pair, contrib)
    v = np.einsum("pl,plr,pr->p", l, t_core[pair], r)
    num = np.bincount(pair, weights=v * resid, minlength=n1 * n2)
    den = np.bincount(pair, weights=v * v, minlength=n1 * n2)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(den > 0, num / den, 0.0)
    h = alpha[:, None, None] * t_core
    h4 = h.reshape(n1, n2, rl, rr)
    h_stack = h4.transpose(2, 0, 1, 3).reshape(rl * n1, n2 * rr)
    sigma_plus = float(np.linalg.norm(h_stack, 2)) if h_stack.size else 0.0
    return GreedyProbe(
        k + 1, t_core.reshape(n1, n2, rl, rr), alpha.reshape(n1, n2), h_stack, sigma_plus
    )


def greedy_rank_estimate(t, gauge, samples, residual_values, bond):
    """Estimate the new singular value a rank increase at ``bond`` could add.

    The sampled residual is projected onto the orthonormal interfaces next
    to the bond's two cores, scaled by per-pair least-squares step lengths
    and stacked; sigma_plus is the spectral norm of the stack.  ``gauge``
    is advisory, the probe re-canonicalizes internally.
    """
    state = _State(t)
    resid = np.asarray(residual_values, dtype=float)
    if resid.shape[0] != len(samples):
        raise ValueError("residual values not aligned with the sample set")
    return _probe_bond(state, samples.points, resid, bond - 1)


def _greedy_increase(state, probe, k):
    """Append the rank-1 approximation of the probe stack at bond k."""
    u, s, vt = np.linalg.svd(probe.h_stack, full_matrices=False)
    scale = np.sqrt(max(s[0], 0.0))
    rl, n1 = state.cores[k].shape[0], state.cores[k].shape[1]
    n2, rr = state.cores[k + 1].shape[1], state.cores[k + 1].shape[2]
    col = (scale * u[:, 0]).reshape(rl, n1, 1)
    row = (scale * vt[0, :]).reshape(1, n2, rr)
    cores = [np.array(c) for c in state.cores]
    cores[k] = np.concatenate([cores[k], col], axis=2)
    cores[k + 1] = np.concatenate([cores[k + 1], row], axis=0)
    return _State(TTTensor(cores))


def _greedy_stagnating(tracker, config):
    """Low per-sweep progress; a rank-1 increment's transient jump is not
    stagnation (the following sweeps first pull the residual back down)."""
    if len(tracker.res_p) < 2:
        return False
    prev, cur = tracker.res_p[-2], tracker.res_p[-1]
    if cur > prev:
        return False
    rel_change = abs(1.0 - cur / prev) if prev > 0 else 0.0
    if rel_change < config.beta_min:
        return True
    g = tracker.gamma_mean("P")
    return g is not None and abs(1.0 - g) < config.gamma_star


def greedy_als_solve(samples, config=None, control=None):
    """Plain ALS with greedy single-bond rank increases on stagnation.

    On stagnation every unblocked bond is probed with the projected sampled
    residual and the bond with the largest estimated new singular value is
    raised by one, seeded with the rank-1 approximation of the projection.
    No rank decreases are performed.
    """
    config = config or SolverConfig(algorithm="greedy_als", final_cut=False)
    t0 = time.perf_counter()
    pack_p, pack_p2 = _prepare(samples, config, control)
    d = samples.d
    n = samples.n
    rms = pack_p.norm / np.sqrt(pack_p.count)
    state = _State(constant_tensor(n, rms))
    tracker = rc.ProgressTracker(control_norm=pack_p2.norm)
    trace = []
    stats = _SweepStats()
    schedule = rc.OmegaSchedule(0.0, 0.0, config.f_omega, np.zeros(max(d - 1, 1)))
    verdict = "max_iters"
    for it in range(1, config.max_iters + 1):
        st = _run_sweep(state, pack_p, 0.0, None, config)
        stats.rank_deficient += st.rank_deficient
        abs_p, rel_p = _residuals(state, pack_p)
        abs_p2, rel_p2 = _residuals(state, pack_p2)
        tracker.record(abs_p, abs_p2, payload=_snapshot(state, state.ranks(), it))
        trace.append(_trace_row(it, schedule, rel_p, rel_p2, state.ranks(), state.ranks()))
        if rel_p < MACHINE_FLOOR_REL and rel_p2 < MACHINE_FLOOR_REL:
            verdict = "converged"
            break
        if _greedy_stagnating(tracker, config):
            # divergence is judged at stagnation points only: right after a
            # rank-1 increment the control residual spikes transiently
            if rc.check_termination(tracker, schedule, config) == "diverged":
                verdict = "diverged"
                break
            unblocked = rc.unblocked_ranks(tracker, state.ranks(), n, pack_p.count, config)
            if not unblocked:
                # blocked increases only pause rank growth; terminate once
                # the sweeps themselves are flat
                g = tracker.gamma_mean("P")
                if g is not None and abs(1.0 - g) < config.gamma_star:
                    verdict = "converged"
                    break
                continue
            resid = pack_p.values - state.evaluate(pack_p.points)
            probes = {
                bond: _probe_bond(state, pack_p.points, resid, bond - 1)
                for bond in sorted(unblocked)
            }
            chooser = max if config.greedy_selection == "max" else min
            pick = chooser(probes, key=lambda b: probes[b].sigma_plus)
            if probes[pick].sigma_plus <= 0.0:
                verdict = "converged"
                break
            tracker.record_milestone(sum(state.ranks()) + 1, d)
            state = _greedy_increase(state, probes[pick], pick - 1)
    return _finalize(state, pack_p, pack_p2, tracker, verdict, config, trace, t0, stats)


def matrix_salsa(samples, config=None, control=None):
    """d = 2 specialization: stable matrix completion with rank adaption."""
    if samples.d != 2:
        raise ValueError("matrix_salsa needs a two-dimensional sample set")
    return salsa_solve(samples, config or SolverConfig(), control)


def als_matrix_update(factor, values, mask):
    """Plain ALS half-step from a given left factor: X @ argmin_Y ||X Y^T - M||_P.

    Representation independent in exact arithmetic; passing the factor
    avoids re-deriving a near-degenerate basis from the dense iterate.
    Minimum-norm ties.
    """
    factor = np.asarray(factor, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    n1, n2 = values.shape
    out = np.empty((n1, n2))
    for j in range(n2):
        obs = mask[:, j]
        coef, _, _, _ = np.linalg.lstsq(factor[obs, :], values[obs, j], rcond=None)
        out[:, j] = factor @ coef
    return out


def stable_matrix_update(a, values, mask, omega, rank_tol=1e-14):
    """One stabilized column update of a dense matrix iterate.

    ``a`` is factored at its numerical rank, the column factor is refit
    column by column against the observed entries (mask True = observed)
    with the damping weight (|P_col|/n_1) * omega^2 n_2/(n_1+n_2) on the
    inverse singular values, and the updated dense matrix is returned.
    With omega = 0 this is the plain ALS half-step with minimum-norm ties.
    """
    a = np.asarray(a, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    n1, n2 = a.shape
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("cannot update a zero iterate")
    rank = int(np.sum(s > rank_tol * s[0]))
    u = u[:, :rank]
    s = s[:rank]
    zeta = omega**2 * n2 / (n1 + n2)
    out = np.empty((n1, n2))
    for j in range(n2):
        obs = mask[:, j]
        design = u[obs, :]
        rhs = values[obs, j]
        if zeta > 0.0:
            w = np.sqrt(zeta * np.count_nonzero(obs) / n1)
            design = np.vstack([design, w * np.diag(1.0 / s)])
            rhs = np.concatenate([rhs, np.zeros(rank)])
        coef, _, _, _ = np.linalg.lstsq(design, rhs, rcond=None)
        out[:, j] = u @ coef
    return out
