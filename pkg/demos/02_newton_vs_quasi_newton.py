"""Newton can settle on a root with negative aperture; the quasi-Newton
iteration from the same dry start does not.

Small four-cell case with a tiny flow group. Both solvers are run and the
spectral radius of each fixed-point map is evaluated at every root found.
"""

import numpy as np

from aperture_qn import SolverConfig, build_operators, case_from_groups, newton_solve, quasi_newton_solve
from aperture_qn.analysis import classify_root, find_roots
from aperture_qn.core import dimensionless_aperture

prm = case_from_groups(1e-17, 1e-5, 4)
ops = build_operators(prm)
w_old = np.zeros(ops.n_c)


def show(label, sol):
    wd = dimensionless_aperture(sol.state.w, prm.injection_rate, prm.dt)
    print(f"{label:12s} {sol.status:10s} iters={len(sol.trace.records) - 1:3d} physical={sol.is_physical}")
    print("             w/sqrt(Qt) =", np.array2string(wd, precision=4))


show("quasi-Newton", quasi_newton_solve(ops, w_old))
show("Newton", newton_solve(ops, w_old, SolverConfig(variant="newton"), np.zeros(ops.n_c)))

print("\nroots and local spectral radii")
for r in find_roots(ops, w_old):
    qn = classify_root(ops, w_old, r.state, "qn")
    nt = classify_root(ops, w_old, r.state, "newton")
    print(f"  {r.origin:7s} physical={str(r.is_physical):5s} rho_QN={qn.spectral_radius:9.3g} rho_Newton={nt.spectral_radius:9.3g}")
