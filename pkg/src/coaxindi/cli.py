"""``coaxindi`` command line: z-domain analysis and simulation experiments.

Exit codes: 0 success / stable, 1 invalid input or config, 2 the analysis
says the loop is unstable (``analyze`` only).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, simkit, svg, zdomain as zd

OUTPUT_ENV = "COAXINDI_OUTPUT_DIR"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


# ------------------------------------------------------------------- helpers

def _output_dir(args, cfg_dir: str | None, command: str) -> Path:
    d = getattr(args, "out", None) or os.environ.get(OUTPUT_ENV) or cfg_dir or os.path.join("out", command)
    path = Path(d)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def versions() -> dict:
    import scipy
    return {"coaxindi": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def write_manifest(out: Path, command: str, cfg: cfgmod.Config, outputs: list[str]) -> Path:
    manifest = {
        "command": command,
        "config_sha256": cfg.digest,
        "seed": cfg.seed,
        "versions": versions(),
        "config": cfg.raw,
        "outputs": {name: _sha256(out / name) for name in outputs},
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _loop_params(args) -> zd.SisoLoopParams:
    try:
        return zd.SisoLoopParams(f=args.f, g=args.g, k=args.k, k_delta=getattr(args, "kdelta", 1.0), m=args.m, T=args.T)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _add_loop_flags(p, kdelta=True):
    p.add_argument("--m", type=int, default=5, help="derivative delay in samples (tau = m*T)")
    p.add_argument("--T", type=float, default=0.02, help="sampling period, s")
    p.add_argument("--f", type=float, default=0.5, help="plant pole, 1/s")
    p.add_argument("--g", type=float, default=1.0, help="plant gain")
    p.add_argument("--k", type=float, default=11.0, help="control gain, 1/s")
    if kdelta:
        p.add_argument("--kdelta", type=float, default=0.10, help="incremental gain in (0, 1]")
    p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV})")
    p.add_argument("--svg", action="store_true", help="also write a minimal SVG rendering")


def _fmt_complex(z: complex) -> str:
    return f"{z.real:+.4f}{z.imag:+.4f}j"


# ------------------------------------------------------------------ commands

def cmd_analyze(args) -> int:
    p = _loop_params(args)
    h_star = zd.open_loop_H_star(p)
    h = zd.closed_loop_H(p)
    rep = zd.margins(h_star)
    ol = zd.poles(h_star)
    cl = zd.poles(h)
    print(f"loop: m={p.m} T={p.T} f={p.f} g={p.g} k={p.k} k_delta={p.k_delta}")
    print(f"  gain margin   {rep.gain_margin_db:9.3f} dB   at {rep.phase_crossover:8.3f} rad/s")
    print(f"  phase margin  {rep.phase_margin_deg:9.3f} deg  at {rep.gain_crossover:8.3f} rad/s")
    print("  open-loop poles:   " + ", ".join(_fmt_complex(z) for z in ol))
    print("  closed-loop poles: " + ", ".join(_fmt_complex(z) for z in cl))
    print(f"  stable: {'yes' if rep.stable else 'no'}")
    out = _output_dir(args, None, "analyze")
    with open(out / "analyze.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quantity", "value"])
        for key, val in (("gain_margin_db", rep.gain_margin_db), ("phase_crossover", rep.phase_crossover),
                         ("phase_margin_deg", rep.phase_margin_deg), ("gain_crossover", rep.gain_crossover)):
            w.writerow([key, repr(float(val))])
        w.writerow(["stable", int(rep.stable)])
    with open(out / "poles.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["loop", "re", "im", "abs"])
        for name, ps in (("open", ol), ("closed", cl)):
            for z in ps:
                w.writerow([name, repr(float(z.real)), repr(float(z.imag)), repr(float(abs(z)))])
    return 0 if rep.stable else 2


def cmd_rootlocus(args) -> int:
    p = _loop_params(args)
    if args.kdelta_list:
        grid = [float(x) for x in args.kdelta_list.split(",")]
    else:
        grid = np.linspace(args.kdelta_min, args.kdelta_max, args.num).tolist()
    try:
        pts = zd.root_locus(p, grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _output_dir(args, None, "rootlocus")
    zd.write_locus_csv(pts, out / "rootlocus.csv")
    if args.svg:
        series = {}
        for pt in pts:
            for b, z in enumerate(pt.poles):
                xs, ys = series.setdefault(b, ([], []))
                xs.append(z.real)
                ys.append(z.imag)
        svg.line_plot(out / "rootlocus.svg", [(x, y, f"branch {b}") for b, (x, y) in sorted(series.items())],
                      "root locus over k_delta", "Re z", "Im z", markers=True)
    for pt in pts:
        print(f"k_delta={pt.k_delta:.6g} {'stable' if pt.stable else 'unstable'}")
    return 0


def cmd_bode(args) -> int:
    p = _loop_params(args)
    ol = zd.open_loop_H_star(p)
    w = zd.frequency_grid(p.T, args.points)
    w, mag_db, phase_deg = zd.bode_data(ol, w)
    out = _output_dir(args, None, "bode")
    zd.write_bode_csv(w, mag_db, phase_deg, out / "bode.csv")
    rep = zd.margins(ol)
    print(f"gain crossover {rep.gain_crossover:.4f} rad/s, PM {rep.phase_margin_deg:.3f} deg; "
          f"phase crossover {rep.phase_crossover:.4f} rad/s, GM {rep.gain_margin_db:.3f} dB")
    if args.svg:
        svg.line_plot(out / "bode_mag.svg", [(w, mag_db, "|H*| dB")], "Bode magnitude", "omega rad/s", "dB", logx=True)
        svg.line_plot(out / "bode_phase.svg", [(w, phase_deg, "phase")], "Bode phase", "omega rad/s", "deg", logx=True)
    return 0


def cmd_nyquist(args) -> int:
    p = _loop_params(args)
    res = zd.nyquist_curve(zd.open_loop_H_star(p))
    out = _output_dir(args, None, "nyquist")
    zd.write_nyquist_csv(res, out / "nyquist.csv")
    print(f"clockwise encirclements of -1: {res.clockwise_encirclements}, "
          f"open-loop poles outside: {res.open_loop_unstable_poles}, stable: {'yes' if res.stable else 'no'}")
    if args.svg:
        pts = res.points
        keep = np.abs(pts) < 1e3
        svg.line_plot(out / "nyquist.svg", [(pts.real[keep], pts.imag[keep], "H*(e^jwT)")],
                      "Nyquist", "Re", "Im")
    return 0


def _load_config(args) -> cfgmod.Config:
    return cfgmod.load(args.config)


def _need_mission(cfg):
    if cfg.mission is None:
        raise cfgmod.ConfigError("config needs a [mission] table")
    return cfg.mission


def _summary_line(log: simkit.RunLog) -> str:
    s = log.summary
    parts = [f"variant={s['variant']}", f"duration={s['duration']:.3f}s",
             f"completed={s['completed']}", f"diverged={s['diverged']}", f"oscillating={s['oscillating']}"]
    if "d_ave_m" in s:
        parts.append(f"d_ave={s['d_ave_m']:.4f}m")
    if "a_ave_deg" in s:
        parts.append(f"A_ave={s['a_ave_deg']:.4f}deg")
    return " ".join(parts)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    mission = _need_mission(cfg)
    log = cfg.settings.run(mission, cfg.seed)
    out = _output_dir(args, cfg.output_dir, "simulate")
    log.write_csv(out / "run.csv")
    log.write_summary(out / "summary.json")
    outputs = ["run.csv", "summary.json"]
    if args.svg:
        _run_svgs(out, "run", log)
    write_manifest(out, "simulate", cfg, outputs)
    print(_summary_line(log))
    if log.summary["reason"]:
        print(f"  {log.summary['reason']}")
    return 0


def _run_svgs(out: Path, stem: str, log: simkit.RunLog) -> None:
    svg.line_plot(out / f"{stem}_track.svg", [(log.col("pos_x"), log.col("pos_y"), "track"),
                                              (log.col("ref_x"), log.col("ref_y"), "target")],
                  "ground track", "x m", "y m")
    t = log.t
    svg.line_plot(out / f"{stem}_attitude.svg", [(t, np.degrees(log.col("phi")), "phi"),
                                                 (t, np.degrees(log.col("theta")), "theta")],
                  "attitude", "t s", "deg")


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    if cfg.sweep is None:
        raise cfgmod.ConfigError("config needs a [sweep] table")
    workers = args.workers or cfg.workers
    res = simkit.run_sweep(cfg.sweep, workers=workers)
    out = _output_dir(args, cfg.output_dir, "sweep")
    res.write_csv(out / "sweep.csv")
    if args.svg:
        svg.heatmap(out / "sweep.svg", res.k_delta3, res.axis1, res.metric, f"{res.metric_name}",
                    "k_delta3", res.axis1_name)
    write_manifest(out, "sweep", cfg, ["sweep.csv"])
    n_bad = int(np.sum(res.failed()))
    print(f"{res.kind}: {res.metric.size} cells, {int(res.diverged.sum())} unstable, "
          f"{n_bad} failing the {res.metric_name} threshold")
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args)
    mission = _need_mission(cfg)
    if mission.kind != "waypoint":
        raise cfgmod.ConfigError("compare needs a tracking mission")
    cmp_ = simkit.compare_ndi_indi(mission, cfg.settings.wind, cfg.settings, cfg.seed)
    out = _output_dir(args, cfg.output_dir, "compare")
    cmp_.ndi.write_csv(out / "ndi_run.csv")
    cmp_.indi.write_csv(out / "indi_run.csv")
    result = {"d_ave_ndi": cmp_.d_ave_ndi, "d_ave_indi": cmp_.d_ave_indi, "ratio": cmp_.ratio,
              "ndi": cmp_.ndi.summary, "indi": cmp_.indi.summary}
    (out / "compare.json").write_text(json.dumps(simkit._jsonable(result), indent=2, sort_keys=True) + "\n")
    if args.svg:
        _run_svgs(out, "ndi", cmp_.ndi)
        _run_svgs(out, "indi", cmp_.indi)
    write_manifest(out, "compare", cfg, ["ndi_run.csv", "indi_run.csv", "compare.json"])
    print(f"d_ave NDI {cmp_.d_ave_ndi:.4f} m, INDI {cmp_.d_ave_indi:.4f} m, ratio {cmp_.ratio:.4f}")
    return 0


# ---------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="coaxindi", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"coaxindi {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("analyze", help="margins and poles of the delayed-derivative loop")
    _add_loop_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("rootlocus", help="closed-loop poles over a k_delta grid")
    _add_loop_flags(p, kdelta=False)
    p.add_argument("--kdelta-min", type=float, default=0.01)
    p.add_argument("--kdelta-max", type=float, default=1.0)
    p.add_argument("--num", type=int, default=100)
    p.add_argument("--kdelta-list", help="comma-separated k_delta values (overrides min/max/num)")
    p.set_defaults(func=cmd_rootlocus)

    p = sub.add_parser("bode", help="open-loop frequency response")
    _add_loop_flags(p)
    p.add_argument("--points", type=int, default=2000)
    p.set_defaults(func=cmd_bode)

    p = sub.add_parser("nyquist", help="Nyquist curve and winding verdict")
    _add_loop_flags(p)
    p.set_defaults(func=cmd_nyquist)

    for name, func, helptext in (("simulate", cmd_simulate, "single closed-loop run"),
                                 ("sweep", cmd_sweep, "two-parameter grid sweep"),
                                 ("compare", cmd_compare, "NDI vs INDI+IGM under the same wind")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="TOML config, or a manifest.json to rerun")
        p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and output_dir)")
        p.add_argument("--svg", action="store_true", help="also write minimal SVG renderings")
        if name == "sweep":
            p.add_argument("--workers", type=int, default=None, help="parallel processes")
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, cfgmod.ConfigError, zd.AssemblyMismatchError) as exc:
        print(f"coaxindi {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"coaxindi {args.command}: I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
