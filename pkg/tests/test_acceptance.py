"""Acceptance gate: one recorded pass/fail line per criterion.

Reference values for criterion 1 are the margins, crossovers and open-loop
poles of the delayed-derivative loop at m = 5, T = 0.02, f = 0.5, k = 11.
"""

import json
import math
import time
from importlib import resources

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from coaxindi import cli, config as cfgmod, control as c, dynamics as dyn, simkit as sk, zdomain as zd
from coaxindi.control import ControllerGains, ControllerMemory
from coaxindi.dynamics import ActuatorCommand, Environment, VehicleParams, VehicleState
from coaxindi.estimation import SampleBuffer, differentiate, make_central_diff

# reference stability values: k_delta -> (GM dB, phase crossover, PM deg, gain crossover, open-loop poles)
TABLE = {
    0.10: (8.28, 14.7, 24.6, 9.37, [0.848 + 0.120j, 0.062 + 0.556j, -0.406 + 0.233j, 1.0]),
    0.15: (2.79, 15.0, 11.6, 13.3, [0.883 + 0.198j, 0.059 + 0.603j, -0.437 + 0.246j, 1.0]),
    0.20: (-2.76, 15.2, -10.9, 16.5, [0.909 + 0.242j, 0.056 + 0.638j, -0.460 + 0.255j, 1.0]),
}
TABLE_LOOP = dict(m=5, T=0.02, f=0.5, g=1.0, k=11.0)
# root-locus configurations: similar total delay mT ~ 0.1 s with f = 0.5, k = 5
LOCUS_LOOPS = {m: dict(m=m, T=0.1 / m, f=0.5, g=1.0, k=5.0) for m in (3, 4, 5, 10)}
RED_DOTS = (0.05, 0.10, 0.15, 0.20)


def bundled(name):
    return cfgmod.load(resources.files("coaxindi").joinpath("configs", name))


def with_conjugates(ps):
    out = []
    for z in ps:
        out.append(complex(z))
        if abs(complex(z).imag) > 0:
            out.append(complex(z).conjugate())
    return np.array(out)


def max_matched_gap(a, b):
    a, b = np.asarray(a), np.asarray(b)
    cost = np.abs(a[:, None] - b[None, :])
    r, col = linear_sum_assignment(cost)
    return float(np.max(np.maximum(np.abs(a[r].real - b[col].real), np.abs(a[r].imag - b[col].imag))))


# ---------------------------------------------------------------------- 1

def test_c01_stability_table(tmp_path, criterion):
    t0 = time.perf_counter()
    codes, reports = {}, {}
    for kd in TABLE:
        codes[kd] = cli.main(["analyze", "--kdelta", str(kd), "--out", str(tmp_path / str(kd))])
        vals = {row.split(",")[0]: row.split(",")[1]
                for row in (tmp_path / str(kd) / "analyze.csv").read_text().splitlines()[1:]}
        reports[kd] = {k: float(v) for k, v in vals.items()}
    elapsed = time.perf_counter() - t0
    problems = []
    for kd, (gm, pc, pm, gc, ref_poles) in TABLE.items():
        r = reports[kd]
        if abs(r["gain_margin_db"] - gm) > 0.05:
            problems.append(f"GM {kd}: {r['gain_margin_db']:.3f}")
        if abs(r["phase_margin_deg"] - pm) > 0.3:
            problems.append(f"PM {kd}: {r['phase_margin_deg']:.3f}")
        if abs(r["phase_crossover"] - pc) > 0.2 or abs(r["gain_crossover"] - gc) > 0.2:
            problems.append(f"crossovers {kd}")
        ol = zd.poles(zd.open_loop_H_star(zd.SisoLoopParams(k_delta=kd, **TABLE_LOOP)))
        gap = max_matched_gap(ol, with_conjugates(ref_poles))
        if len(ol) != 7 or gap > 0.002:
            problems.append(f"poles {kd}: gap {gap:.4f}")
    if codes != {0.10: 0, 0.15: 0, 0.20: 2}:
        problems.append(f"exit codes {codes}")
    if elapsed >= 1.0:
        problems.append(f"runtime {elapsed:.2f}s")
    ok = not problems
    criterion(1, ok, f"GM/PM/crossovers/7 poles vs reference values, {elapsed:.2f}s" + ("" if ok else f" {problems}"))
    assert ok, problems


# ---------------------------------------------------------------------- 2

def test_c02_structural_forms(criterion):
    rng = np.random.default_rng(2024)
    worst, root_one, g_gap = 0.0, 0.0, 0.0
    for _ in range(1000):
        p = zd.SisoLoopParams(f=float(rng.uniform(-3, 3)), g=float(10 ** rng.uniform(-2, 2)),
                              k=float(rng.uniform(0.5, 30)), k_delta=float(rng.uniform(0.001, 1.0)),
                              m=int(rng.integers(1, 16)), T=float(rng.uniform(0.002, 0.05)))
        worst = max(worst, zd.equivalent(zd.expanded_closed_loop(p), zd.assembled_closed_loop(p)),
                    zd.equivalent(zd.expanded_open_loop(p), zd.assembled_open_loop(p)))
        den = zd.open_loop_H_star(p).den
        root_one = max(root_one, abs(den(1.0)) / np.max(np.abs(den.coeffs)))
    for m in (1, 5, 12):
        base = zd.SisoLoopParams(f=0.5, g=1.0, k=11.0, k_delta=0.1, m=m, T=0.02)
        ref = zd.closed_loop_H(base)
        for g in (1e-2, 1e2):
            h = zd.closed_loop_H(zd.SisoLoopParams(f=0.5, g=g, k=11.0, k_delta=0.1, m=m, T=0.02))
            g_gap = max(g_gap, max_matched_gap(zd.poles(h), zd.poles(ref)),
                        max_matched_gap(zd.zeros(h), zd.zeros(ref)) if len(zd.zeros(ref)) else 0.0)
    ok = worst <= 1e-10 and root_one <= 1e-12 and g_gap <= 1e-9
    criterion(2, ok, f"assembled vs expanded worst rel {worst:.2e} over 1000 draws; "
                     f"|den(1)| {root_one:.1e}; g-invariance gap {g_gap:.1e}")
    assert ok


# ---------------------------------------------------------------------- 3

def test_c03_root_locus_classification(criterion):
    verdict = {}
    for m, loop in LOCUS_LOOPS.items():
        pts = zd.root_locus(zd.SisoLoopParams(k_delta=1.0, **loop), list(RED_DOTS) + [1.0])
        verdict[m] = {pt.k_delta: pt.stable for pt in pts}
    ok = (all(verdict[3][kd] for kd in RED_DOTS)
          and not verdict[10][0.15] and not verdict[10][0.20]
          and not any(verdict[m][1.0] for m in verdict))
    detail = "; ".join(f"m={m}: unstable at {[kd for kd, s in v.items() if not s]}" for m, v in verdict.items())
    criterion(3, ok, detail)
    assert ok


# ---------------------------------------------------------------------- 4

def test_c04_triple_agreement(criterion):
    disagreements = []
    for kd in TABLE:
        p = zd.SisoLoopParams(k_delta=kd, **TABLE_LOOP)
        by_poles = zd.is_stable(zd.poles(zd.closed_loop_H(p)))
        ol = zd.open_loop_H_star(p)
        by_margins = zd.margins(ol).margins_say_stable
        nyq = zd.nyquist_curve(ol)
        by_nyquist = nyq.stable
        if not by_poles == by_margins == by_nyquist:
            disagreements.append((kd, by_poles, by_margins, by_nyquist))
    ok = not disagreements
    criterion(4, ok, f"{len(disagreements)} disagreements between pole test, margin signs and Nyquist winding")
    assert ok


# ---------------------------------------------------------------------- 5

def test_c05_dynamics_suite(criterion):
    rng = np.random.default_rng(5)
    P = VehicleParams()
    ortho = max(float(np.max(np.abs(L.T @ L - np.eye(3))))
                for L in (dyn.rotation_gb(a) for a in rng.uniform([-1.4, -1.4, -np.pi], [1.4, 1.4, np.pi], (500, 3))))
    hover = ActuatorCommand(P.hover_omega, P.hover_omega, 0.0, 0.0)
    x = VehicleState(position=[0, 0, -2])
    drift = 0.0
    for _ in range(200):
        nxt = dyn.step_rk4(x, hover, Environment(), P, 0.0025)
        drift = max(drift, float(np.max(np.abs(nxt.as_vector() - x.as_vector()))))
        x = nxt

    def manoeuvre(dt):
        cmd = ActuatorCommand(P.hover_omega * 1.02, P.hover_omega * 0.99, 0.01, -0.008)
        s = VehicleState(position=[0, 0, -2], velocity=[1, 0.5, 0], attitude=[0.1, -0.05, 0.3], rates=[0.4, -0.3, 0.5])
        for _ in range(int(round(1.0 / dt))):
            s = dyn.step_rk4(s, cmd, Environment(wind=[2.0, -1.0, 0.0]), P, dt)
        return s.as_vector()

    ref = manoeuvre(0.02 / 64)
    errs = [np.max(np.abs(manoeuvre(dt) - ref)) for dt in (0.02, 0.01, 0.005)]
    order = float(np.mean(np.log2(np.array(errs[:-1]) / np.array(errs[1:]))))
    s = VehicleState(position=[0, 0, -10.0])
    for _ in range(400):
        s = dyn.step_rk4(s, ActuatorCommand(), Environment(drag_coeff=0.0), P, 0.0025)
    fall = abs(s.position[2] - (-10.0 + 0.5 * P.g))
    ok = ortho <= 1e-10 and drift <= 1e-10 and order >= 3.8 and fall <= 1e-6
    criterion(5, ok, f"orthonormality {ortho:.1e}, hover drift {drift:.1e}/step, RK4 order {order:.2f}, "
                     f"free-fall error {fall:.1e} m")
    assert ok


# ---------------------------------------------------------------------- 6

def _stream(signal, spec):
    buf = SampleBuffer(spec.n, spec.sample_period)
    out = []
    for k, v in enumerate(signal):
        buf.push(k * spec.sample_period, v)
        r = differentiate(buf, spec)
        out.append(np.zeros(3) if r is None else r[0])
    return np.array(out)


def test_c06_differentiator_suite(criterion):
    rng = np.random.default_rng(6)
    T = 0.005
    ramp_err = 0.0
    for n in (3, 5, 7, 9, 11):
        spec = make_central_diff(n, T)
        t = np.arange(40) * T
        est = _stream(np.stack([1.5 + 7.0 * t, -3.0 * t, 0.2 * t], axis=1), spec)[n - 1:]
        ramp_err = max(ramp_err, float(np.max(np.abs(est - [7.0, -3.0, 0.2]) / [7.0, 3.0, 0.2])))
    lags_ok = {}
    for n in (3, 7, 11):
        spec = make_central_diff(n, T)
        d = rng.standard_normal(4000)
        sig = np.concatenate([[0.0], np.cumsum(0.5 * (d[1:] + d[:-1])) * T])
        est = _stream(np.stack([sig] * 3, axis=1), spec)[:, 0][50:]
        xc = [np.dot(est, d[50 - lag:len(d) - lag]) for lag in range(15)]
        lags_ok[n] = int(np.argmax(xc)) == spec.half_width
    noise = rng.standard_normal((20000, 3)) * 0.01
    var = {n: _stream(noise, make_central_diff(n, T))[n:].var(axis=0).mean() for n in (3, 11)}
    ok = ramp_err <= 1e-9 and all(lags_ok.values()) and var[11] < var[3]
    criterion(6, ok, f"ramp rel error {ramp_err:.1e}; delay = half-width for n in {sorted(lags_ok)}: "
                     f"{all(lags_ok.values())}; noise var n=11/n=3 {var[11] / var[3]:.3f}")
    assert ok


# ---------------------------------------------------------------------- 7

def test_c07_unit_gain_identity(criterion):
    rng = np.random.default_rng(7)
    P = VehicleParams()
    g = ControllerGains(k_delta3=1.0)
    mem_a = mem_b = ControllerMemory.hover_trim(P)
    mismatches = 0
    for _ in range(10_000):
        st = VehicleState(attitude=rng.uniform(-1, 1, 3), rates=rng.uniform(-3, 3, 3))
        rate_des, rate_dot = rng.uniform(-3, 3, 3), rng.uniform(-20, 20, 3)
        a, mem_a = c.indi_rotational_igm(rate_des, st, rate_dot, mem_a, g, P)
        b, mem_b = c.indi_rotational(rate_des, st, rate_dot, mem_b, g, P)
        if not (np.array_equal(a, b) and np.array_equal(mem_a.m_t, mem_b.m_t)):
            mismatches += 1
    ok = mismatches == 0
    criterion(7, ok, f"{mismatches} bitwise mismatches over 10^4 chained random steps")
    assert ok


# ---------------------------------------------------------------------- 8

def test_c08_ndi_vs_indi_in_wind(criterion):
    cfg = bundled("compare_wind.toml")
    mission, wind = cfg.mission, cfg.settings.wind
    times = []

    def run(settings):
        t0 = time.perf_counter()
        log = settings.run(mission, cfg.seed)
        times.append(time.perf_counter() - t0)
        return log

    from dataclasses import replace
    base = replace(cfg.settings, wind=wind)
    ndi = run(replace(base, variant="ndi"))
    d_ndi = sk.d_ave(ndi, mission)
    d = {}
    logs = {}
    for kd in (0.02, 0.08, 0.6):
        logs[kd] = run(replace(base, variant="indi_igm", gains=base.gains.with_(k_delta3=kd)))
        d[kd] = math.inf if logs[kd].unstable else sk.d_ave(logs[kd], mission)
    ratio = d[0.08] / d_ndi
    # a 60 s mission run to its full duration, for the wall-clock bound
    t0 = time.perf_counter()
    sk.RunSettings(wind=wind).run(sk.Mission.hover(duration=60.0), 0)
    times.append(time.perf_counter() - t0)
    ok = (ratio < 0.85 and d[0.02] > d[0.08] and (logs[0.6].unstable or d[0.6] >= 2.0)
          and max(times) < 30.0)
    criterion(8, ok, f"d_ave NDI {d_ndi:.3f} m, INDI {d[0.08]:.3f} m, ratio {ratio:.3f}; "
                     f"k_delta3 0.02 -> {d[0.02]:.3f} m; 0.6 unstable={logs[0.6].unstable}; "
                     f"slowest run {max(times):.1f}s")
    assert ok


# ---------------------------------------------------------------------- 9

@pytest.mark.slow
def test_c09_sweep_properties(criterion):
    # delay boundary over the bundled delay x k_delta3 grid (k_delta3 0.02 ... 0.09)
    delay = sk.run_sweep(bundled("delay_kdelta_sweep.toml").sweep)
    good = ~delay.failed()
    boundary = None
    for i, tau in enumerate(delay.axis1):
        if good[: i + 1].all():
            boundary = float(tau)
    boundary_ok = boundary is not None and 0.03 <= boundary <= 0.09

    # 20 x 20 moment-deviation x k_delta3 hover grid, timed
    zetas = [round(0.8 + 0.04 * k, 2) for k in range(20)]
    kds = np.geomspace(0.01, 0.6, 20).tolist()
    base = bundled("zeta_kdelta_sweep.toml").sweep
    spec = sk.SweepSpec("zeta_kdelta", zetas, kds, base.mission, base.settings, base.seed)
    t0 = time.perf_counter()
    grid = sk.run_sweep(spec)
    grid_time = time.perf_counter() - t0
    order_1e2 = [j for j, kd in enumerate(kds) if 0.01 <= kd < 0.1]
    best = {z: float(np.min(grid.metric[zetas.index(z), order_1e2])) for z in (0.8, 1.0, 1.2, 1.4)}
    zeta_ok = all(v < 1.0 for v in best.values())

    k3_spec = sk.SweepSpec("k3_kdelta", [4.0, 6.0, 8.0], [0.05], base.mission, base.settings, base.seed)
    k3 = sk.run_sweep(k3_spec).metric[:, 0]
    k3_ok = bool(np.all(k3 < 1.0))

    ok = boundary_ok and zeta_ok and k3_ok and grid_time < 600
    criterion(9, ok, f"delay boundary {boundary} s; best A_ave per zeta_dev "
                     f"{ {z: round(v, 4) for z, v in best.items()} } deg; k3 4/6/8 A_ave "
                     f"{np.round(k3, 4).tolist()} deg; 20x20 grid {grid_time:.0f}s")
    assert ok


# --------------------------------------------------------------------- 10

def test_c10_model_error_rejection(criterion):
    cfg = bundled("hover_model_error.toml")
    from dataclasses import replace
    ndi = replace(cfg.settings, variant="ndi").run(cfg.mission, cfg.seed)
    indi = replace(cfg.settings, variant="indi_igm").run(cfg.mission, cfg.seed)
    # steady-state bias over the final 10 s
    n = int(10.0 * cfg.settings.options.control_rate)
    bias = float(np.degrees(np.mean(np.hypot(ndi.col("phi")[-n:], ndi.col("theta")[-n:]))))
    a_indi = sk.a_ave(indi)
    ok = not ndi.diverged and not indi.unstable and bias > 0.5 and a_indi < 1.0
    criterion(10, ok, f"zeta_dev {cfg.settings.zeta_dev}: NDI steady bias {bias:.3f} deg, "
                      f"INDI+IGM A_ave {a_indi:.4f} deg")
    assert ok


# --------------------------------------------------------------------- 11

def test_c11_determinism(tmp_path, criterion):
    sweep_cfg = {"seed": 9, "vehicle": {"swashplate_offset": [5e-4, 5e-4]},
                 "mission": {"kind": "hover", "duration": 3.0},
                 "sweep": {"kind": "zeta_kdelta", "axis1": [0.8, 1.2], "k_delta3": [0.05, 0.6]}}
    wind_cfg = {"seed": 4, "mission": {"kind": "square", "side": 3.0, "duration": 10.0},
                "wind": {"speed_range": [3.0, 8.0], "seed": 2}, "simulation": {"accel_noise": 0.1}}
    cases = [("sweep", sweep_cfg, ["sweep.csv"]), ("simulate", wind_cfg, ["run.csv", "summary.json"]),
             ("compare", wind_cfg, ["ndi_run.csv", "indi_run.csv", "compare.json"])]
    diffs = []
    for cmd, raw, files in cases:
        src = tmp_path / f"{cmd}.json"
        src.write_text(json.dumps({"config": raw}))
        outs = [tmp_path / f"{cmd}_{k}" for k in range(2)]
        for o in outs:
            assert cli.main([cmd, str(src), "--out", str(o)]) == 0
        diffs += [f"{cmd}/{f}" for f in files if (outs[0] / f).read_bytes() != (outs[1] / f).read_bytes()]
    ok = not diffs
    criterion(11, ok, f"reruns byte-identical for {len(cases)} configs" + ("" if ok else f"; differ: {diffs}"))
    assert ok
