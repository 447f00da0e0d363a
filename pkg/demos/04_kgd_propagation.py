"""Plane-strain fracture driven by constant injection.

The half-length history is compared with the viscosity-dominated similarity
solution a(t) = gamma (E' q^3 / (12 mu))^(1/6) t^(2/3).
"""

import numpy as np

from aperture_qn.cli import kgd_inputs, load_config
from aperture_qn.propagation import kgd_viscosity_length, regime_number, run_kgd

params, prop = kgd_inputs(load_config("[kgd]\nadvancement_length = 4.0\n"))
km = regime_number(params, prop.critical_sif, 2.0 * params.injection_rate)
print(f"K_m = {km.K_m:.3f} ({km.regime})")

hist = run_kgd(params, prop)
print(f"completed={hist.completed} steps={len(hist.times)} final a={hist.lengths[-1]:.1f} m")

t = np.array(hist.times)
a = np.array(hist.lengths)
Ep = params.youngs_modulus / (1.0 - params.poisson_ratio**2)
ref = kgd_viscosity_length(t, 2.0 * Ep, params.viscosity, 2.0 * params.injection_rate)
for tk in (30.0, 60.0, 90.0):
    k = int(np.argmin(np.abs(t - tk)))
    print(f"  t={t[k]:6.1f} s  a={a[k]:5.1f} m  similarity {ref[k]:5.1f} m")
