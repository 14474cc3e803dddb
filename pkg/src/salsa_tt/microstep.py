"""Per-slice least-squares updates: plain ALS and the stabilized minimizer.

Each micro-step at mode mu updates one core slice N(j) from the sampled
rows of the left interface L, columns of the right interface R and the
observed values b.  The stabilized update augments the sampled design with
regularization rows built from the inverse bond singular values; with full
sampling it reduces to an elementwise filter on the plain update.

Vectorization convention: vec(N) is column-major, so a design row for a
sample with interface row l and interface column r is kron(r, l).
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .tt import interface_cols, interface_rows

RATIO_CAP = 1e30

__all__ = [
    "RegularizationWeights",
    "LocalSystem",
    "zeta_constants",
    "matrix_zeta",
    "weights_all_modes",
    "filter_matrix",
    "build_local_system",
    "solve_slice",
    "SliceSolution",
    "itrip_check",
]


@dataclass(frozen=True)
class RegularizationWeights:
    """Mode-mu regularization constants (zeta_1, zeta_2, zeta_12) at level omega."""

    zeta1: float
    zeta2: float
    zeta12: float
    omega: float
    mu: int

    def is_zero(self):
        return self.zeta1 == 0.0 and self.zeta2 == 0.0 and self.zeta12 == 0.0

    @staticmethod
    def rho12(a_j, n_left, n_right):
        """Per-slice constant |P(j)| / (n_L * n_R)."""
        return float(a_j) / (float(n_left) * float(n_right))


def zeta_constants(n, mu, omega, boundary="remark"):
    """Regularization constants of the d-dimensional micro-step at mode mu.

    zeta_1 = omega^2 * (sum of mode sizes left of mu) / (sum of all mode
    sizes), zeta_2 analogously with the right modes, zeta_12 = zeta_1 *
    zeta_2.  With boundary="remark" the boundary modes are fully
    unregularized (zeta_2 and zeta_12 forced to 0 at mu=1, zeta_1 and
    zeta_12 at mu=d); "formula" keeps the plain sums.
    """
    n = [int(m) for m in n]
    d = len(n)
    if not 1 <= mu <= d:
        raise ValueError("mode index out of range")
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    if boundary not in ("remark", "formula"):
        raise ValueError("boundary must be 'remark' or 'formula'")
    total = float(sum(n))
    z1 = omega**2 * sum(n[: mu - 1]) / total
    z2 = omega**2 * sum(n[mu:]) / total
    z12 = z1 * z2
    if boundary == "remark":
        if mu == 1:
            z2 = 0.0
            z12 = 0.0
        if mu == d:
            z1 = 0.0
            z12 = 0.0
    return RegularizationWeights(z1, z2, z12, float(omega), int(mu))


def matrix_zeta(n, mu, omega):
    """d = 2 coefficients of the stable matrix completion half-steps.

    The row update (mu = 1) is damped with omega^2 * n_1 / (n_1 + n_2), the
    column update (mu = 2) with omega^2 * n_2 / (n_1 + n_2); there is no
    mixed term.
    """
    if len(n) != 2:
        raise ValueError("matrix_zeta needs exactly two mode sizes")
    n1, n2 = float(n[0]), float(n[1])
    if mu == 1:
        return RegularizationWeights(0.0, omega**2 * n1 / (n1 + n2), 0.0, float(omega), 1)
    if mu == 2:
        return RegularizationWeights(omega**2 * n2 / (n1 + n2), 0.0, 0.0, float(omega), 2)
    raise ValueError("mode index out of range")


def weights_all_modes(n, omega, boundary="remark"):
    """Weights for every mode; d = 2 uses the matrix completion coefficients."""
    d = len(n)
    if d == 2:
        return [matrix_zeta(n, mu, omega) for mu in (1, 2)]
    return [zeta_constants(n, mu, omega, boundary) for mu in range(1, d + 1)]


def _capped_ratio(zeta, sigma):
    """zeta / sigma^2 elementwise, capped to avoid overflow."""
    sigma = np.asarray(sigma, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        r = zeta / np.square(sigma)
    return np.minimum(r, RATIO_CAP)


def filter_matrix(sigma_left, sigma_right, weights):
    """Elementwise damping matrix F of the full-data update, entries in (0, 1].

    F[i, k] = 1 / (1 + zeta1/sL_i^2 + zeta2/sR_k^2 + zeta12/(sL_i^2 sR_k^2)).
    """
    r1 = _capped_ratio(weights.zeta1, sigma_left)
    r2 = _capped_ratio(weights.zeta2, sigma_right)
    sl = np.asarray(sigma_left, dtype=float)
    sr = np.asarray(sigma_right, dtype=float)
    with np.errstate(divide="ignore", over="ignore"):
        r12 = weights.zeta12 * np.outer(1.0 / np.square(sl), 1.0 / np.square(sr))
    r12 = np.minimum(r12, RATIO_CAP)
    return 1.0 / (1.0 + r1[:, None] + r2[None, :] + r12)


@dataclass
class LocalSystem:
    """All data of one slice problem at mode mu, slice j."""

    mu: int
    j: int
    l_rows: np.ndarray  # (a_j, r_L) sampled left interface rows
    r_cols: np.ndarray  # (r_R, a_j) sampled right interface columns
    b: np.ndarray  # (a_j,) observed values
    sigma_left: np.ndarray
    sigma_right: np.ndarray
    weights: RegularizationWeights
    n_left: float  # product of mode sizes left of mu
    n_right: float  # product of mode sizes right of mu

    @property
    def a_j(self):
        return self.b.shape[0]

    def design(self):
        """Sampled design matrix, one row kron(r_col, l_row) per sample."""
        rl = self.l_rows.shape[1]
        rr = self.r_cols.shape[0]
        d = self.r_cols.T[:, :, None] * self.l_rows[:, None, :]
        return d.reshape(self.a_j, rr * rl)


@dataclass
class SliceSolution:
    matrix: np.ndarray
    rank_deficient: bool


def build_local_system(t, gauge, mu, j, samples, weights):
    """Assemble the slice-j system at mode mu from a gauged tensor.

    The tensor must be in standard form at mode mu (gauge.center == mu with
    populated sigma); interface rows/columns are evaluated at the partial
    indices of the slice's sampling points.
    """
    if gauge.center != mu:
        raise ValueError("gauge center must sit at the updated mode")
    pos = samples.slice_positions(mu)[j - 1]
    pts = samples.points[pos]
    l_rows = interface_rows(t, mu, pts[:, : mu - 1])
    r_cols = interface_cols(t, mu, pts[:, mu:])
    if samples.values is None:
        raise ValueError("sample set has no values")
    b = samples.values[pos]
    d = t.d
    ones = np.ones(1)
    sigma_left = gauge.sigma[mu - 2] if mu > 1 else ones
    sigma_right = gauge.sigma[mu - 1] if mu < d else ones
    n = t.n
    n_left = float(np.prod([float(x) for x in n[: mu - 1]])) if mu > 1 else 1.0
    n_right = float(np.prod([float(x) for x in n[mu:]])) if mu < d else 1.0
    return LocalSystem(
        mu, j, l_rows, r_cols, b, np.asarray(sigma_left), np.asarray(sigma_right),
        weights, n_left, n_right,
    )


def _gram_regularizer(sys):
    """Gram matrix of the regularization rows, or None when they vanish."""
    w = sys.weights
    if w.is_zero():
        return None
    rl = sys.l_rows.shape[1]
    rr = sys.r_cols.shape[0]
    rho = RegularizationWeights.rho12(sys.a_j, sys.n_left, sys.n_right)
    gram = np.zeros((rl * rr, rl * rr))
    nonzero = False
    if w.zeta1 > 0.0:
        rrg = sys.r_cols @ sys.r_cols.T / sys.n_left
        gram += np.kron(rrg, np.diag(_capped_ratio(w.zeta1, sys.sigma_left)))
        nonzero = True
    if w.zeta2 > 0.0:
        llg = sys.l_rows.T @ sys.l_rows / sys.n_right
        gram += np.kron(np.diag(_capped_ratio(w.zeta2, sys.sigma_right)), llg)
        nonzero = True
    if w.zeta12 > 0.0 and rho > 0.0:
        sl = _capped_ratio(1.0, sys.sigma_left)
        sr = _capped_ratio(1.0, sys.sigma_right)
        d12 = np.minimum(w.zeta12 * np.kron(sr, sl), RATIO_CAP) * rho
        gram[np.diag_indices_from(gram)] += d12
        nonzero = True
    return gram if nonzero else None


def solve_slice(sys):
    """Minimizer of the sampled residual plus the regularization rows.

    Without regularization the minimum-norm least-squares solution is
    returned and a full-column-rank failure is flagged; with regularization
    the normal equations are solved by a symmetric positive-definite solve.
    """
    rl = sys.l_rows.shape[1]
    rr = sys.r_cols.shape[0]
    m = rl * rr
    design = sys.design()
    gram_reg = _gram_regularizer(sys)
    if gram_reg is None:
        if sys.a_j == 0:
            return SliceSolution(np.zeros((rl, rr)), True)
        sol, _, rank, _ = np.linalg.lstsq(design, sys.b, rcond=None)
        return SliceSolution(sol.reshape(rr, rl).T, rank < m)
    a = design.T @ design + gram_reg
    rhs = design.T @ sys.b
    try:
        c, low = scipy.linalg.cho_factor(a, check_finite=False)
        sol = scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
        deficient = False
    except scipy.linalg.LinAlgError:
        sol, _, rank, _ = np.linalg.lstsq(a, rhs, rcond=None)
        deficient = rank < m
    return SliceSolution(sol.reshape(rr, rl).T, deficient)


def itrip_check(l_rows_per_slice, r_cols_per_slice, ranks=None):
    """Injectivity of the sampled local design, slice by slice.

    Returns (ok, margins): ok is True iff every slice design matrix has
    full column rank r_L * r_R; margins holds the smallest singular value
    of each slice design (0 for slices that cannot have full rank).
    """
    margins = []
    ok = True
    for l_rows, r_cols in zip(l_rows_per_slice, r_cols_per_slice):
        l_rows = np.asarray(l_rows, dtype=float)
        r_cols = np.asarray(r_cols, dtype=float)
        a_j = l_rows.shape[0]
        m = l_rows.shape[1] * r_cols.shape[0]
        if ranks is not None and m != int(ranks[0]) * int(ranks[1]):
            raise ValueError("interface shapes do not match the stated ranks")
        if a_j < m:
            margins.append(0.0)
            ok = False
            continue
        design = (r_cols.T[:, :, None] * l_rows[:, None, :]).reshape(a_j, m)
        sv = np.linalg.svd(design, compute_uv=False)
        margin = float(sv[-1]) if len(sv) == m else 0.0
        tol = max(design.shape) * np.finfo(float).eps * (float(sv[0]) if len(sv) else 0.0)
        if margin <= tol:
            ok = False
        margins.append(margin)
    return ok, np.asarray(margins)
