import numpy as np
import pytest

from salsa_tt.tt import TTTensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_tt(n, ranks, rng, scale=1.0):
    d = len(n)
    full = [1] + list(ranks) + [1]
    cores = [scale * rng.standard_normal((full[m], n[m], full[m + 1])) for m in range(d)]
    return TTTensor(cores)


def dense_oracle(t):
    """Independent full contraction via einsum over all cores at once."""
    d = t.d
    letters = "abcdefghijklm"
    bonds = "nopqrstuvwxyz"
    subs = []
    for m in range(d):
        subs.append(bonds[m] + letters[m] + bonds[m + 1])
    spec = ",".join(subs) + "->" + bonds[0] + letters[:d] + bonds[d]
    res = np.einsum(spec, *t.cores)
    return res.reshape(t.n)


def matricization(a, mu):
    """Dense A^(1..mu): rows fuse the first mu indices in C order."""
    left = int(np.prod(a.shape[:mu]))
    return a.reshape(left, -1)


def full_grid(n):
    """All 1-based multi-indices of the grid, lexicographic."""
    grids = np.meshgrid(*[np.arange(1, m + 1) for m in n], indexing="ij")
    return np.stack(grids, axis=-1).reshape(-1, len(n))
