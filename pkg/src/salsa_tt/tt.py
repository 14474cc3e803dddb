"""Tensor-train (TT) representation algebra.

A TT tensor of order d is a chain of order-3 cores G_mu with shapes
(r_{mu-1}, n_mu, r_mu), r_0 = r_d = 1; the entry at a (1-based) multi-index
i is the chained matrix product G_1(i_1) @ ... @ G_d(i_d).

Conventions used throughout the package:

* multi-indices in the public API are 1-based,
* the left unfolding of a core (r1, n, r2) is the (r1*n, r2) matrix with
  row index fused as (l, j), l major; the right unfolding is the
  (r1, n*r2) matrix with column index fused as (j, q), j major,
* matricizations A^(1..mu) fuse multi-indices in C order, which makes them
  compatible with the unfoldings above,
* SVD signs are fixed by forcing the largest-magnitude entry of each left
  singular vector to be nonnegative, which makes every canonical form
  deterministic.
"""

import numpy as np

DENSE_CAP = 10_000_000

__all__ = [
    "TTTensor",
    "GaugeState",
    "evaluate",
    "evaluate_at",
    "unfold_left",
    "unfold_right",
    "refold_left",
    "refold_right",
    "full_contract",
    "interface_rows",
    "interface_cols",
    "orthogonalize",
    "standard_representation",
    "truncate",
    "frobenius_norm",
    "constant_tensor",
    "random_tt",
    "save_tt",
    "load_tt",
]


class TTTensor:
    """Immutable TT representation: a tuple of order-3 cores.

    Parameters
    ----------
    cores : sequence of arrays
        Core mu has shape (r_{mu-1}, n_mu, r_mu). Adjacent bond dimensions
        must match and the outer bonds must be 1.
    """

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = [np.array(c, dtype=float) for c in cores]
        if not cores:
            raise ValueError("a TT tensor needs at least one core")
        for c in cores:
            if c.ndim != 3:
                raise ValueError("cores must be order-3 arrays")
            if not np.all(np.isfinite(c)):
                raise ValueError("core entries must be finite")
        if cores[0].shape[0] != 1 or cores[-1].shape[2] != 1:
            raise ValueError("outer bond dimensions must be 1")
        for a, b in zip(cores[:-1], cores[1:]):
            if a.shape[2] != b.shape[0]:
                raise ValueError("adjacent cores have mismatched bond dimensions")
        for c in cores:
            c.setflags(write=False)
        self.cores = tuple(cores)

    @property
    def d(self):
        return len(self.cores)

    @property
    def n(self):
        return tuple(c.shape[1] for c in self.cores)

    @property
    def r(self):
        return (1,) + tuple(c.shape[2] for c in self.cores)

    @property
    def bond_ranks(self):
        """Interior bond ranks r_1 .. r_{d-1}."""
        return tuple(c.shape[2] for c in self.cores[:-1])

    def evaluate(self, idx):
        return evaluate(self, idx)

    def __repr__(self):
        return "TTTensor(n=%s, r=%s)" % (self.n, self.r)


class GaugeState:
    """Orthogonality bookkeeping for a TT tensor.

    center is the (1-based) mode holding the non-orthogonal core; sigma
    holds one descending vector per bond, equal to the singular values of
    the corresponding matricization when the tensor is in standard form.
    """

    __slots__ = ("center", "sigma", "left_ortho_through", "right_ortho_through")

    def __init__(self, center, sigma, left_ortho_through=None, right_ortho_through=None):
        self.center = int(center)
        self.sigma = tuple(np.asarray(s, dtype=float) for s in sigma)
        self.left_ortho_through = (
            self.center - 1 if left_ortho_through is None else int(left_ortho_through)
        )
        self.right_ortho_through = (
            self.center + 1 if right_ortho_through is None else int(right_ortho_through)
        )

    def __repr__(self):
        return "GaugeState(center=%d, ranks=%s)" % (
            self.center,
            tuple(len(s) for s in self.sigma),
        )


def unfold_left(core):
    """Left unfolding (r1*n, r2) of a core, row index (l, j) with l major."""
    r1, n, r2 = core.shape
    return core.reshape(r1 * n, r2)


def unfold_right(core):
    """Right unfolding (r1, n*r2) of a core, column index (j, q) with j major."""
    r1, n, r2 = core.shape
    return core.reshape(r1, n * r2)


def refold_left(mat, n):
    rn, r2 = mat.shape
    if rn % n:
        raise ValueError("matrix rows are not a multiple of the mode size")
    return mat.reshape(rn // n, n, r2)


def refold_right(mat, n):
    r1, nr = mat.shape
    if nr % n:
        raise ValueError("matrix columns are not a multiple of the mode size")
    return mat.reshape(r1, n, nr // n)


def _check_index(t, idx):
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape[-1] != t.d:
        raise ValueError("multi-index length %d does not match order %d" % (idx.shape[-1], t.d))
    n = np.asarray(t.n)
    if np.any(idx < 1) or np.any(idx > n):
        raise ValueError("multi-index out of range")
    return idx


def evaluate(t, idx):
    """Entry of the tensor at a 1-based multi-index."""
    idx = _check_index(t, np.atleast_1d(idx))
    v = np.ones(1)
    for mu, core in enumerate(t.cores):
        v = v @ core[:, idx[mu] - 1, :]
    return float(v[0])


def evaluate_at(t, points):
    """Vectorized evaluation at an (m, d) array of 1-based multi-indices."""
    cores = t.cores if isinstance(t, TTTensor) else t
    points = np.asarray(points, dtype=np.int64)
    v = np.ones((points.shape[0], 1))
    for mu, core in enumerate(cores):
        slices = core[:, points[:, mu] - 1, :]
        v = np.einsum("pl,lpr->pr", v, slices)
    return v[:, 0]


def full_contract(t, cap=DENSE_CAP):
    """Dense array with all entries of the tensor.

    Refuses tensors with more than ``cap`` entries.
    """
    size = np.prod([float(m) for m in t.n])
    if size > cap:
        raise ValueError("dense tensor would have %g > %g entries" % (size, float(cap)))
    res = t.cores[0]
    for core in t.cores[1:]:
        res = np.tensordot(res, core, axes=(res.ndim - 1, 0))
    return res.reshape(t.n)


def interface_rows(t, mu, prefixes):
    """Rows G_1(p_1) ... G_{mu-1}(p_{mu-1}) for a list of left partial indices.

    For mu = 1 returns a column of ones (the formal empty product).
    """
    if mu == 1:
        return np.ones((len(prefixes), 1))
    prefixes = np.asarray(prefixes, dtype=np.int64)
    if prefixes.ndim == 1:
        prefixes = prefixes.reshape(-1, 1)
    if prefixes.shape[1] != mu - 1:
        raise ValueError("prefixes must have mu-1 columns")
    v = np.ones((prefixes.shape[0], 1))
    for k in range(mu - 1):
        slices = t.cores[k][:, prefixes[:, k] - 1, :]
        v = np.einsum("pl,lpr->pr", v, slices)
    return v


def interface_cols(t, mu, suffixes):
    """Columns G_{mu+1}(p_{mu+1}) ... G_d(p_d), one per suffix, shape (r_mu, m).

    For mu = d returns a row of ones.
    """
    d = t.d
    if mu == d:
        return np.ones((1, len(suffixes)))
    suffixes = np.asarray(suffixes, dtype=np.int64)
    if suffixes.ndim == 1:
        suffixes = suffixes.reshape(-1, 1)
    if suffixes.shape[1] != d - mu:
        raise ValueError("suffixes must have d-mu columns")
    w = np.ones((suffixes.shape[0], 1))
    for k in range(d - 1, mu - 1, -1):
        slices = t.cores[k][:, suffixes[:, k - mu] - 1, :]
        w = np.einsum("lpr,pr->pl", slices, w)
    return w.T


def _fix_svd_signs(u, vt):
    """Force the largest-magnitude entry of each left singular vector >= 0."""
    if u.shape[1] == 0:
        return u, vt
    lead = u[np.argmax(np.abs(u), axis=0), np.arange(u.shape[1])]
    flip = lead < 0
    if np.any(flip):
        u = u.copy()
        vt = vt.copy()
        u[:, flip] *= -1.0
        vt[flip, :] *= -1.0
    return u, vt


def _canonicalize(cores, center0):
    """Right-orthogonalize, then SVD sweeps to the requested 0-based center.

    Returns mutable core copies and the per-bond singular values.  After the
    call, cores left of the center have column-orthonormal left unfoldings
    equal to left singular interfaces, cores right of it row-orthonormal
    right unfoldings equal to right singular interfaces.
    """
    cores = [np.array(c, dtype=float) for c in cores]
    d = len(cores)
    sigma = [None] * (d - 1)
    for m in range(d - 1, 0, -1):
        n = cores[m].shape[1]
        q, rt = np.linalg.qr(unfold_right(cores[m]).T)
        cores[m] = refold_right(q.T, n)
        cores[m - 1] = np.tensordot(cores[m - 1], rt.T, axes=(2, 0))
    for m in range(d - 1):
        n = cores[m].shape[1]
        u, s, vt = np.linalg.svd(unfold_left(cores[m]), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        sigma[m] = s
        cores[m] = refold_left(u, n)
        cores[m + 1] = np.tensordot(s[:, None] * vt, cores[m + 1], axes=(1, 0))
    for m in range(d - 1, center0, -1):
        n = cores[m].shape[1]
        u, s, vt = np.linalg.svd(unfold_right(cores[m]), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        sigma[m - 1] = s
        cores[m] = refold_right(vt, n)
        cores[m - 1] = np.tensordot(cores[m - 1], u * s[None, :], axes=(2, 0))
    return cores, sigma


def standard_representation(t, center=1):
    """Deterministic canonical form with all bond singular values.

    Returns (tensor in gauge, GaugeState).  Cores 1..center-1 carry left
    singular interfaces, cores center+1..d right singular interfaces, and
    sigma holds the singular values of every matricization A^(1..mu).
    """
    if not 1 <= center <= t.d:
        raise ValueError("center out of range")
    cores, sigma = _canonicalize(t.cores, center - 1)
    return TTTensor(cores), GaugeState(center, sigma)


def orthogonalize(t, center=1):
    """Move the gauge so the non-orthogonal core sits at ``center``.

    The tensor is unchanged up to round-off; bond singular values are
    reported in the returned GaugeState.
    """
    return standard_representation(t, center)


def truncate(t, ranks=None, threshold=None):
    """SVD truncation to per-bond target ranks or to a singular value threshold.

    ``ranks`` may be an int (uniform) or a sequence of d-1 bond ranks;
    targets above the current rank are kept as-is.  ``threshold`` is an
    absolute cutoff on bond singular values (at least one value per bond is
    always kept).
    """
    d = t.d
    if ranks is None and threshold is None:
        raise ValueError("specify target ranks or a threshold")
    if ranks is not None:
        if np.isscalar(ranks):
            ranks = [int(ranks)] * (d - 1)
        ranks = [int(r) for r in ranks]
        if len(ranks) != d - 1:
            raise ValueError("need one target rank per bond")
        if any(r < 1 for r in ranks):
            raise ValueError("target ranks must be positive")
    cores = [np.array(c, dtype=float) for c in t.cores]
    for m in range(d - 1, 0, -1):
        n = cores[m].shape[1]
        q, rt = np.linalg.qr(unfold_right(cores[m]).T)
        cores[m] = refold_right(q.T, n)
        cores[m - 1] = np.tensordot(cores[m - 1], rt.T, axes=(2, 0))
    for m in range(d - 1):
        n = cores[m].shape[1]
        u, s, vt = np.linalg.svd(unfold_left(cores[m]), full_matrices=False)
        u, vt = _fix_svd_signs(u, vt)
        if ranks is not None:
            keep = min(ranks[m], len(s))
        else:
            keep = max(1, int(np.sum(s > threshold)))
        u, s, vt = u[:, :keep], s[:keep], vt[:keep]
        cores[m] = refold_left(u, n)
        cores[m + 1] = np.tensordot(s[:, None] * vt, cores[m + 1], axes=(1, 0))
    return TTTensor(cores)


def frobenius_norm(t):
    """Frobenius norm of the represented tensor, no dense contraction."""
    g = np.ones((1, 1))
    for core in t.cores:
        tmp = np.tensordot(g, core, axes=(1, 0))
        g = np.tensordot(core, tmp, axes=((0, 1), (0, 1)))
    return float(np.sqrt(max(g[0, 0], 0.0)))


def constant_tensor(n, value):
    """Rank-one TT tensor with every entry equal to ``value``."""
    cores = [np.ones((1, m, 1)) for m in n]
    cores[0] = cores[0] * value
    return TTTensor(cores)


def random_tt(n, ranks, rng, scale=1.0):
    """TT tensor with iid uniform [-scale/2, scale/2] core entries."""
    d = len(n)
    if np.isscalar(ranks):
        ranks = [int(ranks)] * (d - 1)
    r = [1] + [int(x) for x in ranks] + [1]
    cores = [scale * (rng.random((r[m], n[m], r[m + 1])) - 0.5) for m in range(d)]
    return TTTensor(cores)


def save_tt(t, path):
    """Write the text format: header ``tt d n_1..n_d r_0..r_d``, then cores.

    Core entries are written row-major per slice with 17 significant digits,
    one slice per line.
    """
    with open(path, "w") as fh:
        fh.write(
            "tt %d %s %s\n"
            % (t.d, " ".join(str(m) for m in t.n), " ".join(str(x) for x in t.r))
        )
        for core in t.cores:
            for j in range(core.shape[1]):
                fh.write(" ".join("%.17g" % x for x in core[:, j, :].ravel()) + "\n")


def load_tt(path):
    with open(path) as fh:
        tokens = fh.read().split()
    if not tokens or tokens[0] != "tt":
        raise ValueError("not a TT tensor file")
    d = int(tokens[1])
    n = [int(x) for x in tokens[2 : 2 + d]]
    r = [int(x) for x in tokens[2 + d : 3 + 2 * d]]
    if r[0] != 1 or r[-1] != 1:
        raise ValueError("outer bond dimensions must be 1")
    data = np.array(tokens[3 + 2 * d :], dtype=float)
    cores = []
    pos = 0
    for m in range(d):
        cnt = r[m] * n[m] * r[m + 1]
        block = data[pos : pos + cnt].reshape(n[m], r[m], r[m + 1])
        cores.append(np.ascontiguousarray(block.transpose(1, 0, 2)))
        pos += cnt
    if pos != len(data):
        raise ValueError("trailing data in TT tensor file")
    return TTTensor(cores)
