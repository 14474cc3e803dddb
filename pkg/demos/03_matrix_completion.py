"""Stable matrix completion (d = 2) with automatic rank detection.

Completes a random low-rank matrix from 35% of its entries.  The rank is
never told to the solver: virtual directions are introduced, stabilized
directions survive, and the final cut returns the detected rank.
"""

import numpy as np

from salsa_tt import SampleSet, SolverConfig, matrix_salsa
from salsa_tt.tt import evaluate_at

rng = np.random.default_rng(42)
n1, n2, true_rank = 50, 40, 4
a = rng.standard_normal((n1, true_rank)) @ rng.standard_normal((true_rank, n2))

mask = rng.random((n1, n2)) < 0.35
pts = np.argwhere(mask) + 1
samples = SampleSet((n1, n2), pts, a[mask], check_unique=False)
print("observed %d of %d entries (%.0f%%), true rank %d"
      % (mask.sum(), a.size, 100.0 * mask.mean(), true_rank))

res = matrix_salsa(samples, SolverConfig(r_lim=10, seed=0, max_iters=400))
print("verdict: %s after %d iterations" % (res.verdict, res.iterations))
print("detected rank: %s (stabilized %s)" % (res.ranks, res.stabilized_ranks))

grid = np.stack(np.meshgrid(np.arange(1, n1 + 1), np.arange(1, n2 + 1),
                            indexing="ij"), -1).reshape(-1, 2)
pred = evaluate_at(res.tensor, grid).reshape(n1, n2)
print("relative error on the held-out entries: %.2e"
      % (np.linalg.norm((pred - a)[~mask]) / np.linalg.norm(a[~mask])))
