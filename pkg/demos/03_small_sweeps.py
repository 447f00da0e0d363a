"""A coarse stability sweep and contraction sweep over the group box.

Every nonphysical root should repel the quasi-Newton map (rho > 1) and the
physical root should attract it (rho < 1). The contraction sweep reports the
largest observed error-reduction factor per case.
"""

import numpy as np

from aperture_qn.analysis import PI1_RANGE, PI2_RANGE, contraction_sweep, log_grid, stability_sweep

g1, g2 = log_grid(*PI1_RANGE, 4), log_grid(*PI2_RANGE, 3)

st = stability_sweep(g1, g2, n_c=4, seed=0)
print("stability sweep")
for r in st.records:
    print(
        f"  pi1={r.pi1:8.2e} pi2={r.pi2:8.2e} rho_QN phys={r.rho_qn_physical:6.3f} "
        f"nonphys={r.rho_qn_nonphysical:8.3g} restart={r.restart_iters:3d} {r.status}"
    )

ct = contraction_sweep(g1, g2, n_c=15)
print("\ncontraction sweep")
for r in ct.records:
    print(f"  pi1={r.pi1:8.2e} pi2={r.pi2:8.2e} max c={r.max_c:.3f} iters={r.iters:3d} min w={r.min_w_dimless:.2e}")
print(f"\nlargest c over the grid: {np.nanmax(ct.column('max_c')):.3f}")
