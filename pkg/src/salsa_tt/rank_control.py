"""Semi-implicit rank adaption: filter diagnostics, omega schedule,
singular value floor, rank changes, blocking and termination.

The driver never decides ranks from singular values directly.  Each bond
direction gets a minimal filter value theta in (0, 1); directions with
theta below theta_virt are "virtual" (carry negligible optimization
weight), directions above theta_stab are "stabilized".  Ranks are raised
by appending a virtual direction at the current singular value floor and
cut when the second-to-last direction turns virtual, so only virtual
directions are ever introduced or removed.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .microstep import filter_matrix
from .tt import (
    TTTensor,
    refold_left,
    refold_right,
    standard_representation,
    truncate,
    unfold_left,
    unfold_right,
)

SIGMA_MIN_FLOOR_REL = 1e-14

__all__ = [
    "FilterState",
    "OmegaSchedule",
    "ProgressTracker",
    "minimal_filter_values",
    "classify_spectrum",
    "stabilized_ranks",
    "update_omega",
    "sigma_min_map",
    "sigma_min_fixpoint",
    "tt_dof",
    "unblocked_ranks",
    "increase_rank",
    "decrease_rank",
    "check_termination",
    "filter_fixpoints",
    "spectrum_change",
]


@dataclass
class FilterState:
    """Per-mode filter matrices and per-bond minimal filter values."""

    filters: tuple  # length d, F^(mu) of shape (r_{mu-1}, r_mu)
    theta: tuple  # length d-1, theta^(mu) of length r_mu


@dataclass
class OmegaSchedule:
    """The evolving regularization magnitude and singular value floor."""

    omega_tilde: float
    omega: float
    f_omega: float
    sigma_min: np.ndarray  # one floor per bond
    minimal: bool = False


def minimal_filter_values(sigmas, weights):
    """FilterState from the current bond spectra and per-mode weights.

    theta^(mu)_i = max(F^(mu)[0, i], F^(mu+1)[i, 0]) with the boundary-mode
    filters F^(1), F^(d) zeroed for d >= 3 (they would be identically one
    under the boundary convention and carry no stabilization information);
    for d = 2 both one-sided filters are kept.
    """
    d = len(weights)
    if len(sigmas) != d - 1:
        raise ValueError("need one sigma vector per bond")
    ones = np.ones(1)
    filters = []
    for m in range(d):
        sl = sigmas[m - 1] if m > 0 else ones
        sr = sigmas[m] if m < d - 1 else ones
        f = filter_matrix(sl, sr, weights[m])
        if d >= 3 and (m == 0 or m == d - 1):
            f = np.zeros_like(f)
        filters.append(f)
    theta = []
    for k in range(d - 1):
        theta.append(np.maximum(filters[k][0, :], filters[k + 1][:, 0]))
    return FilterState(tuple(filters), tuple(theta))


def classify_spectrum(state, theta_virt, theta_stab):
    """Per-bond labels 'virtual' / 'intermediate' / 'stabilized'."""
    if not 0 < theta_virt < theta_stab < 1:
        raise ValueError("need 0 < theta_virt < theta_stab < 1")
    labels = []
    for th in state.theta:
        lab = np.where(th < theta_virt, "virtual",
                       np.where(th > theta_stab, "stabilized", "intermediate"))
        labels.append(lab)
    return labels


def stabilized_ranks(state, theta_stab):
    """Number of stabilized directions per bond."""
    return [int(np.sum(th > theta_stab)) for th in state.theta]


def spectrum_change(prev_sigmas, cur_sigmas):
    """Relative Euclidean change of the concatenated bond spectra.

    Bonds are matched by index; entries beyond the common length (newly
    added directions) are ignored.
    """
    num = 0.0
    den = 0.0
    for p, c in zip(prev_sigmas, cur_sigmas):
        k = min(len(p), len(c))
        num += float(np.sum((np.asarray(c[:k]) - np.asarray(p[:k])) ** 2))
        den += float(np.sum(np.asarray(p) ** 2))
    if den == 0.0:
        return np.inf
    return np.sqrt(num / den)


class ProgressTracker:
    """Residual history, rank-increase milestones, and the best snapshot."""

    def __init__(self, control_norm=0.0):
        self.res_p = []
        self.res_p2 = []
        self.milestones = {"P": {}, "P2": {}}
        self.iteration = 0
        self.best_iter = None
        self.best_res_p2 = np.inf
        self.best_payload = None
        self.control_norm = float(control_norm)

    def record(self, res_p, res_p2, payload=None):
        """Append one iteration's residuals; keep the payload when P2 improves."""
        self.iteration += 1
        self.res_p.append(float(res_p))
        self.res_p2.append(float(res_p2))
        if res_p2 < self.best_res_p2:
            self.best_res_p2 = float(res_p2)
            self.best_iter = self.iteration
            self.best_payload = payload

    def gamma_mean(self, which, window=5):
        """Arithmetic mean of the last residual reduction factors, or None."""
        hist = self.res_p if which == "P" else self.res_p2
        if len(hist) < 2:
            return None
        ratios = []
        for i in range(max(1, len(hist) - window), len(hist)):
            prev = hist[i - 1]
            ratios.append(hist[i] / prev if prev > 0 else 1.0)
        return float(np.mean(ratios))

    def record_milestone(self, rank_sum_after, d):
        """Store the pre-increase residuals under the key sum(r) - (d-1) + 1.

        The beta lookup after the increase uses sum(r) - (d-1), so it finds
        the milestone of the previous increase: each new rank level gets a
        full level of runway before the blocking tests can bite.
        """
        key = int(rank_sum_after) - (d - 1) + 1
        if self.res_p:
            self.milestones["P"][key] = self.res_p[-1]
            self.milestones["P2"][key] = self.res_p2[-1]

    def beta(self, which, rank_sum, d):
        """|1 - Res_X / R_X(sum(r) - (d-1))|, or None when unavailable."""
        key = int(rank_sum) - (d - 1)
        hist = self.res_p if which == "P" else self.res_p2
        ref = self.milestones["P" if which == "P" else "P2"].get(key)
        if ref is None or not hist or ref <= 0:
            return None
        return abs(1.0 - hist[-1] / ref)


def _is_minimal(state, config, stab_ranks, unblocked_empty):
    if any(sr == config.r_lim for sr in stab_ranks):
        return True
    if unblocked_empty:
        return all(
            np.all(th > config.theta_stab_strict) for th in state.theta
        )
    return False


def update_omega(schedule, tracker, state, config, *, norm, sigma_change,
                 stab_ranks, unblocked_empty):
    """One step of the omega schedule.

    omega_tilde is divided by f_omega when progress has stalled (spectrum
    nearly frozen and the mean residual reduction factor within gamma_star
    of 1 on P or P2) or the sampled residual increased; the decrease is
    applied twice when some virtual direction sits far below theta_virt.
    Returns (new schedule, decreased flag).
    """
    minimal = _is_minimal(state, config, stab_ranks, unblocked_empty)
    omega_tilde = schedule.omega_tilde
    decreased = False
    if not minimal:
        stagn = False
        for which in ("P", "P2"):
            g = tracker.gamma_mean(which)
            if g is not None and abs(1.0 - g) < config.gamma_star:
                stagn = True
        increased = len(tracker.res_p) >= 2 and tracker.res_p[-1] > tracker.res_p[-2]
        if (sigma_change < config.spectrum_change_tol and stagn) or increased:
            accel = False
            if getattr(config, "accelerated_omega_decline", False):
                virt = np.concatenate(
                    [th[th < config.theta_virt] for th in state.theta]
                ) if state.theta else np.array([])
                accel = virt.size > 0 and float(np.min(virt)) < config.theta_virt / 2.0
            omega_tilde /= schedule.f_omega ** (2 if accel else 1)
            decreased = True
    new = replace(
        schedule,
        omega_tilde=omega_tilde,
        omega=omega_tilde * norm,
        minimal=minimal,
    )
    return new, decreased


def sigma_min_map(sigma, bond, sigmas, weights, res_est, total_n, d):
    """The scalar fixpoint map sigma -> (1 - theta_min(sigma)) * Res_est / sum(n).

    theta_min is the minimal filter value a direction with singular value
    ``sigma`` would receive at the given bond, its neighbors fixed at their
    largest singular values.
    """
    ones = np.ones(1)
    left_top = np.array([sigmas[bond - 1][0]]) if bond > 0 else ones
    right_top = np.array([sigmas[bond + 1][0]]) if bond + 1 < d - 1 else ones
    s = np.array([float(sigma)])
    cands = []
    if not (d >= 3 and bond == 0):
        cands.append(filter_matrix(left_top, s, weights[bond])[0, 0])
    if not (d >= 3 and bond + 1 == d - 1):
        cands.append(filter_matrix(s, right_top, weights[bond + 1])[0, 0])
    theta_min = max(cands) if cands else 0.0
    return (1.0 - theta_min) * res_est / total_n


def sigma_min_fixpoint(schedule, sigmas, weights, n, *, res_p, res_p2,
                       p_count, p2_count, norm, steps=3):
    """Damped fixpoint iteration for the per-bond singular value floor.

    Res_est = (sqrt(|I|/|P2|) Res_P2)^(3/2) * (sqrt(|I|/|P|) Res_P)^(-1/2)
    is a pessimistic full-residual estimate; each bond's floor is driven to
    the fixpoint of sigma -> (1 - theta_min(sigma)) Res_est / sum(n), with
    an absolute floor of 1e-14 times the iterate norm.
    """
    d = len(n)
    floor = SIGMA_MIN_FLOOR_REL * norm
    cur = np.array(schedule.sigma_min, dtype=float)
    if cur.shape != (d - 1,):
        cur = np.full(d - 1, floor)
    if res_p <= 0.0 or res_p2 <= 0.0:
        return np.full(d - 1, floor)
    total_entries = float(np.prod([float(m) for m in n]))
    res_est = (np.sqrt(total_entries / p2_count) * res_p2) ** 1.5 * (
        np.sqrt(total_entries / p_count) * res_p
    ) ** (-0.5)
    total_n = float(sum(n))
    out = np.empty(d - 1)
    for k in range(d - 1):
        s = max(cur[k], floor)
        for _ in range(steps):
            s = 0.5 * s + 0.5 * sigma_min_map(s, k, sigmas, weights, res_est, total_n, d)
        out[k] = max(s, floor)
    return out


def tt_dof(ranks, n):
    """Degrees of freedom of the TT manifold at the given bond ranks."""
    r = [1] + [int(x) for x in ranks] + [1]
    dof = sum(r[m] * n[m] * r[m + 1] for m in range(len(n)))
    dof -= sum(int(x) ** 2 for x in ranks)
    return dof


def unblocked_ranks(tracker, ranks, n, p_count, config, beta_clauses=True):
    """Bonds whose rank may be raised; empty when increases are blocked.

    Blocking applies while sum(r) >= 2(d-1) and progress since the last
    rank increase is below beta_min on P or P2, or the TT degrees of
    freedom exceed |P|/1.2.  With beta_clauses=False only the structural
    clauses (degrees of freedom, rank caps) are applied; the beta tests
    are a transient pause, not a structural end state.
    """
    d = len(n)
    ranks = [int(x) for x in ranks]
    rank_sum = sum(ranks)
    if rank_sum >= 2 * (d - 1):
        if beta_clauses:
            for which in ("P", "P2"):
                b = tracker.beta(which, rank_sum, d)
                if b is not None and b < config.beta_min:
                    return set()
        if tt_dof(ranks, n) > p_count / 1.2:
            return set()
    full = [1] + ranks + [1]
    out = set()
    for k in range(d - 1):
        cap = min(full[k] * n[k], n[k + 1] * full[k + 2], config.r_lim)
        if ranks[k] + 1 <= cap:
            out.add(k + 1)
    return out


def _orthogonal_complement_vector(basis_cols, rng):
    """Unit vector orthogonal to the given orthonormal columns."""
    m, k = basis_cols.shape
    if k >= m:
        raise ValueError("no orthogonal complement left")
    for _ in range(20):
        v = rng.standard_normal(m)
        v -= basis_cols @ (basis_cols.T @ v)
        nrm = np.linalg.norm(v)
        if nrm > 1e-10:
            return v / nrm
    raise RuntimeError("failed to draw a complement direction")


def increase_rank(t, mu, sigma_min_value, seed):
    """Raise bond mu by one, appending a random direction at sigma_min.

    The new direction is orthogonal to the existing left and right singular
    subspaces of the bond, so the bond spectrum gains exactly the value
    sigma_min and all other bond-mu singular values are unchanged; the
    tensor moves by sigma_min in Frobenius norm.
    """
    d = t.d
    if not 1 <= mu <= d - 1:
        raise ValueError("bond index out of range")
    if sigma_min_value <= 0:
        raise ValueError("the appended singular value must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    tc, _ = standard_representation(t, center=mu)
    cores = [np.array(c) for c in tc.cores]
    left = cores[mu - 1]
    right = cores[mu]
    r1, nl, r = left.shape
    r_, nr, r2 = right.shape
    if r + 1 > min(r1 * nl, nr * r2):
        raise ValueError("bond rank cannot exceed the adjacent unfolding sizes")
    lm = unfold_left(left)
    q, _ = np.linalg.qr(lm)
    u_new = _orthogonal_complement_vector(q, rng)
    cores[mu - 1] = refold_left(np.hstack([lm, sigma_min_value * u_new[:, None]]), nl)
    rm = unfold_right(right)
    z_new = _orthogonal_complement_vector(rm.T, rng)
    cores[mu] = refold_right(np.vstack([rm, z_new[None, :]]), nr)
    return TTTensor(cores)


def decrease_rank(t, mu):
    """Drop the last singular direction of bond mu (SVD truncation)."""
    ranks = list(t.bond_ranks)
    if ranks[mu - 1] <= 1:
        warnings.warn("bond %d already has rank 1; not decreased" % mu)
        return t
    ranks[mu - 1] -= 1
    return truncate(t, ranks=ranks)


def check_termination(tracker, schedule, config):
    """'converged' when omega is minimal, 'diverged' when the control
    residual left the f_P2 band after 10 iterations, else 'continue'.

    Divergence is not declared while the control residual sits at the
    machine floor, where f_P2-sized fluctuations are round-off noise.
    """
    if schedule.minimal:
        return "converged"
    noise_floor = 100 * np.finfo(float).eps * tracker.control_norm
    if (
        tracker.iteration > 10
        and tracker.res_p2
        and np.isfinite(tracker.best_res_p2)
        and tracker.res_p2[-1] > config.f_p2 * tracker.best_res_p2
        and tracker.res_p2[-1] > noise_floor
    ):
        return "diverged"
    return "continue"


def filter_fixpoints(sigma_z, c):
    """Fixpoints of sigma -> (1 + c/sigma^2)^(-1) sigma_z.

    Returns (attractive, repelling) roots, or (None, None) when the
    discriminant sigma_z^2 - 4c is negative; at equality both coincide at
    sigma_z / 2, where the filter value is exactly 1/2.
    """
    if sigma_z <= 0 or c <= 0:
        raise ValueError("sigma_z and c must be positive")
    disc = sigma_z**2 - 4.0 * c
    if disc < 0:
        return None, None
    root = np.sqrt(disc)
    return 0.5 * sigma_z + 0.5 * root, 0.5 * sigma_z - 0.5 * root