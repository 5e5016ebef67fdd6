"""
Hover with a moment shortfall and a trim offset
===============================================
The plant delivers only 80 % of the commanded moment and its swashplate
carries a small trim offset. NDI inverts the nominal model and settles with
a tilt bias; INDI+IGM measures the angular acceleration and removes it.

Run:  python demos/model_error_hover.py
"""

import numpy as np

from coaxindi import simkit as sk
from coaxindi.dynamics import VehicleParams

mission = sk.Mission.hover(altitude=2.0, duration=30.0)
params = VehicleParams(swashplate_offset=(5e-4, 5e-4))

for variant in ("ndi", "indi_igm"):
    log = sk.RunSettings(variant=variant, params=params, zeta_dev=0.8).run(mission, 0)
    tail = log.t > log.t[-1] - 10.0
    bias = np.degrees(np.hypot(log.col("phi")[tail], log.col("theta")[tail]).mean())
    print(f"{variant:9s} A_ave {sk.a_ave(log):7.4f} deg   final-10s tilt {bias:7.4f} deg")

# =============================================================================
# MOMENT DEVIATION x INCREMENTAL GAIN
# =============================================================================

spec = sk.SweepSpec("zeta_kdelta", [0.8, 1.0, 1.2, 1.4], [0.02, 0.05, 0.09, 0.6],
                    sk.Mission.hover(duration=15.0), sk.RunSettings(params=params))
res = sk.run_sweep(spec)
print("\nA_ave (deg), inf = unstable")
print("zeta_dev " + " ".join(f"{kd:>9}" for kd in res.k_delta3))
for z, row in zip(res.axis1, res.metric):
    print(f"{z:8.2f} " + " ".join(f"{v:9.4f}" for v in row))
