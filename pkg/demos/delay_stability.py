"""
Delayed-derivative loop stability in the z domain
=================================================
A first-order plant under an incremental law whose derivative feedback
arrives m samples late. The incremental gain k_delta is scanned and each
stability verdict is checked three ways: closed-loop poles, margin signs
and Nyquist winding.

Run:  python demos/delay_stability.py
"""

import numpy as np

from coaxindi import zdomain as zd

# =============================================================================
# LOOP PARAMETERS
# =============================================================================

M, T = 5, 0.02          # 5 samples of derivative delay at 50 Hz
F, G, K = 0.5, 1.0, 11.0

base = zd.SisoLoopParams(f=F, g=G, k=K, k_delta=0.1, m=M, T=T)

# =============================================================================
# MARGINS AND POLES FOR A FEW GAINS
# =============================================================================

print(f"loop m={M} T={T} f={F} k={K}")
print(f"{'k_delta':>8} {'GM dB':>8} {'wpc':>7} {'PM deg':>8} {'wgc':>7}  poles  margins  nyquist")
for kd in (0.05, 0.10, 0.15, 0.20, 0.40, 1.00):
    p = base.with_k_delta(kd)
    ol = zd.open_loop_H_star(p)
    rep = zd.margins(ol)
    nyq = zd.nyquist_curve(ol)
    by_poles = zd.is_stable(zd.poles(zd.closed_loop_H(p)))
    print(f"{kd:8.2f} {rep.gain_margin_db:8.3f} {rep.phase_crossover:7.3f} "
          f"{rep.phase_margin_deg:8.3f} {rep.gain_crossover:7.3f}  "
          f"{'ok' if by_poles else '--':>5}  {'ok' if rep.margins_say_stable else '--':>7}  "
          f"{'ok' if nyq.stable else '--':>7}")

# =============================================================================
# LARGEST STABLE GAIN VERSUS DELAY SPLIT
# =============================================================================
# Same total delay (~0.1 s) split into more, shorter samples.

print("\nlargest stable k_delta on a 0.001 grid, total delay ~0.1 s, k = 5")
grid = np.round(np.arange(0.001, 1.0005, 0.001), 3).tolist()
for m in (3, 4, 5, 10):
    pts = zd.root_locus(zd.SisoLoopParams(f=0.5, g=1.0, k=5.0, k_delta=0.1, m=m, T=0.1 / m), grid)
    stable = [pt.k_delta for pt in pts if pt.stable]
    print(f"  m={m:2d} T={0.1 / m:.4f}s  max stable k_delta = {max(stable) if stable else None}")
