"""Sampling-set generation, control split, slice restriction, residuals.

The sampling index set P is stored as an (m, d) array of 1-based
multi-indices with an aligned value vector.  For each mode mu and each
slice j, slice_positions gives the rows of P whose mu-th component is j.
"""

import warnings

import numpy as np

from .tt import evaluate_at

__all__ = [
    "SampleSet",
    "generate_quasi_random",
    "split_control",
    "attach_values",
    "residual_on_set",
    "save_samples",
    "load_samples",
]


class SampleSet:
    """A list of sampling multi-indices with optional target values."""

    def __init__(self, n, points, values=None, check_unique=True):
        self.n = tuple(int(m) for m in n)
        self.d = len(self.n)
        points = np.array(points, dtype=np.int64).reshape(-1, self.d)
        if points.size and (np.any(points < 1) or np.any(points > np.asarray(self.n))):
            raise ValueError("sample indices out of range")
        if check_unique and points.shape[0]:
            uniq = np.unique(points, axis=0)
            if uniq.shape[0] != points.shape[0]:
                raise ValueError("duplicate sampling indices")
        self.points = points
        self.points.setflags(write=False)
        if values is None:
            self.values = None
        else:
            self.values = np.array(values, dtype=float).reshape(-1)
            if self.values.shape[0] != points.shape[0]:
                raise ValueError("values not aligned with points")
            self.values.setflags(write=False)
        self._slices = {}

    def __len__(self):
        return self.points.shape[0]

    @property
    def grid_size(self):
        return float(np.prod([float(m) for m in self.n]))

    def slice_positions(self, mu):
        """Positions of points with p_mu = j, for every j = 1..n_mu."""
        if mu not in self._slices:
            col = self.points[:, mu - 1]
            order = np.argsort(col, kind="stable")
            bounds = np.searchsorted(col[order], np.arange(1, self.n[mu - 1] + 2))
            self._slices[mu] = [
                order[bounds[j] : bounds[j + 1]] for j in range(self.n[mu - 1])
            ]
        return self._slices[mu]

    def values_norm(self):
        if self.values is None:
            raise ValueError("sample set has no values")
        return float(np.linalg.norm(self.values))


def generate_quasi_random(n, c_sf, r_p, seed):
    """Slice-covering quasi-random index set, |P| <= C_sf * r_P^2 * sum(n_mu).

    For each mode mu and each index j, C_sf * r_P**2 completions of the
    remaining coordinates are drawn uniformly; duplicates are removed by a
    sorted scan.  Falls back to the full grid with a warning when the
    request exceeds the complement grid of some mode.
    """
    if c_sf < 1 or r_p < 1:
        raise ValueError("c_sf and r_p must be at least 1")
    n = tuple(int(m) for m in n)
    d = len(n)
    per_slice = int(c_sf) * int(r_p) ** 2
    total = float(np.prod([float(m) for m in n]))
    for mu in range(d):
        if per_slice > total / n[mu]:
            warnings.warn(
                "requested %d samples per slice exceeds the complement grid; "
                "falling back to the full grid" % per_slice
            )
            grid = np.stack(
                np.meshgrid(*[np.arange(1, m + 1) for m in n], indexing="ij"), axis=-1
            ).reshape(-1, d)
            return SampleSet(n, grid, check_unique=False)
    rng = np.random.default_rng(seed)
    blocks = []
    for mu in range(d):
        cnt = n[mu] * per_slice
        block = np.empty((cnt, d), dtype=np.int64)
        for s in range(d):
            if s == mu:
                block[:, s] = np.repeat(np.arange(1, n[mu] + 1), per_slice)
            else:
                block[:, s] = rng.integers(1, n[s] + 1, size=cnt)
        blocks.append(block)
    points = np.unique(np.concatenate(blocks, axis=0), axis=0)
    return SampleSet(n, points, check_unique=False)


def split_control(sample_set, fraction=0.05, seed=0):
    """Disjoint (train, control) partition with |control| = round(fraction*|P|).

    The control set always receives at least one point.
    """
    if not 0 < fraction < 0.5:
        raise ValueError("control fraction must lie in (0, 1/2)")
    m = len(sample_set)
    if m < 2:
        raise ValueError("cannot split fewer than 2 samples")
    n_ctrl = max(1, int(round(fraction * m)))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(m)
    ctrl_rows = np.sort(perm[:n_ctrl])
    train_rows = np.sort(perm[n_ctrl:])
    vals = sample_set.values
    train = SampleSet(
        sample_set.n,
        sample_set.points[train_rows],
        None if vals is None else vals[train_rows],
        check_unique=False,
    )
    ctrl = SampleSet(
        sample_set.n,
        sample_set.points[ctrl_rows],
        None if vals is None else vals[ctrl_rows],
        check_unique=False,
    )
    return train, ctrl


def attach_values(sample_set, target):
    """Fill values by querying ``target`` (vectorized on (m, d) index arrays)."""
    vals = np.asarray(target(sample_set.points), dtype=float).reshape(-1)
    return SampleSet(sample_set.n, sample_set.points, vals, check_unique=False)


def residual_on_set(t, sample_set):
    """(absolute, relative) Euclidean residual of a TT tensor on a sample set."""
    if len(sample_set) == 0:
        raise ValueError("empty sample set")
    if sample_set.values is None:
        raise ValueError("sample set has no values")
    pred = evaluate_at(t, sample_set.points)
    absres = float(np.linalg.norm(pred - sample_set.values))
    norm = sample_set.values_norm()
    rel = absres / norm if norm > 0 else absres
    return absres, rel


def save_samples(sample_set, path):
    """Bit-exact text format: header, then one ``i_1 .. i_d value`` line per point."""
    vals = sample_set.values
    with open(path, "w") as fh:
        fh.write(
            "samples %d %s %d\n"
            % (sample_set.d, " ".join(str(m) for m in sample_set.n), len(sample_set))
        )
        for row in range(len(sample_set)):
            idx = " ".join(str(i) for i in sample_set.points[row])
            v = 0.0 if vals is None else vals[row]
            fh.write("%s %.17g\n" % (idx, v))


def load_samples(path):
    with open(path) as fh:
        header = fh.readline().split()
        if not header or header[0] != "samples":
            raise ValueError("not a sample file")
        d = int(header[1])
        n = [int(x) for x in header[2 : 2 + d]]
        count = int(header[2 + d])
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (count, d + 1):
        raise ValueError("sample file body does not match its header")
    return SampleSet(n, data[:, :d].astype(np.int64), data[:, d], check_unique=False)
