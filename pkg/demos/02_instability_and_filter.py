"""Why plain alternating updates are unstable, and what the filter does.

Reproduces the 3x3 completion example where an arbitrarily small rank-2
perturbation of a rank-1 iterate jumps the update by a fixed amount, then
shows how the damped update restores continuity, and plots (as text) the
fixpoint structure of the filter map that drives rank adaption.
"""

import numpy as np

from salsa_tt import filter_fixpoints, stable_matrix_update
from salsa_tt.solvers import als_matrix_update

a_par = 0.1
m = np.array([[np.nan, 1.1, 1.0], [1, 1, 1], [1.1, 1, 1]])
mask = ~np.isnan(m)
mv = np.where(mask, m, 0.0)
w = np.array([[a_par, 0, -a_par], [1 + a_par, 0, -1 - a_par],
              [1 - a_par, 0, -1 + a_par]])

print("plain half-step (omega = 0), first column of the update:")
x_eps = np.array([[1.0, a_par], [1.0, 1 + a_par], [1.0, 1 - a_par]])
print("  from the rank-2 iterate (any eps > 0):",
      np.round(als_matrix_update(x_eps, mv, mask)[:, 0], 6))
print("  from the rank-1 limit  (eps = 0):    ",
      np.round(als_matrix_update(np.ones((3, 1)), mv, mask)[:, 0], 6))
print("  -> the update jumps although the iterates converge\n")

print("damped half-step (omega = 0.1): ||update(A(eps)) - update(A(0))||_F")
b0 = stable_matrix_update(np.ones((3, 3)), mv, mask, omega=0.1)
for eps in 10.0 ** -np.arange(2.0, 9.0):
    diff = np.linalg.norm(
        stable_matrix_update(np.ones((3, 3)) + eps * w, mv, mask, 0.1) - b0
    )
    print("  eps = %.0e   diff = %.3e" % (eps, diff))

print("\nfixpoints of the filter map sigma -> sigma_Z / (1 + c/sigma^2), c = 1:")
for sigma_z in (1.5, 2.0, 2.5, 3.0):
    stab, rep = filter_fixpoints(sigma_z, 1.0)
    if stab is None:
        print("  sigma_Z = %.1f: no fixpoint (every value decays)" % sigma_z)
    else:
        print("  sigma_Z = %.1f: attractive %.4f, repelling %.4f" % (sigma_z, stab, rep))
print("at the turning point the filter value is exactly 1/2, the floor the"
      "\nrank adaption uses to separate virtual from stabilized directions")
