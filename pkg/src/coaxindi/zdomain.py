"""z-domain stability analysis of a delayed-derivative INDI loop.

The loop under study is the scalar plant ``xdot = f x + g u`` sampled with a
zero-order hold, closed by an incremental controller whose derivative
feedback passes through a three-point central difference delayed to a total
of ``m`` samples, with the increment scaled by ``k_delta``.

Polynomials are stored with ascending powers of z throughout.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import linear_sum_assignment

STABILITY_TOL = 1e-9
ASSEMBLY_RTOL = 1e-10
INDENT_RADIUS = 1e-6


class AssemblyMismatchError(RuntimeError):
    pass


class RootConvergenceError(RuntimeError):
    def __init__(self, msg, roots):
        super().__init__(msg)
        self.roots = roots


class ContourIndentationError(RuntimeError):
    """An open-loop pole sits on the unit circle too close to the contour."""


# ---------------------------------------------------------------- polynomials

@dataclass(frozen=True, eq=False)
class Polynomial:
    coeffs: np.ndarray  # ascending powers

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if not np.all(np.isfinite(c)):
            raise ValueError("polynomial coefficients must be finite")
        nz = np.flatnonzero(c)
        c = c[: nz[-1] + 1] if len(nz) else np.zeros(1)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def monomial(cls, power: int, scale: float = 1.0) -> Polynomial:
        c = np.zeros(power + 1)
        c[power] = scale
        return cls(c)

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @property
    def is_zero(self) -> bool:
        return self.degree == 0 and self.coeffs[0] == 0

    def __call__(self, z):
        return P.polyval(z, self.coeffs)

    def __add__(self, other: Polynomial) -> Polynomial:
        return Polynomial(P.polyadd(self.coeffs, other.coeffs))

    def __sub__(self, other: Polynomial) -> Polynomial:
        return Polynomial(P.polysub(self.coeffs, other.coeffs))

    def __mul__(self, other) -> Polynomial:
        if isinstance(other, Polynomial):
            return Polynomial(P.polymul(self.coeffs, other.coeffs))
        return Polynomial(self.coeffs * float(other))

    __rmul__ = __mul__

    def derivative(self) -> Polynomial:
        return Polynomial(P.polyder(self.coeffs)) if self.degree else Polynomial([0.0])

    def roots(self) -> np.ndarray:
        return polynomial_roots(self.coeffs)


def _companion_eigroots(c: np.ndarray) -> np.ndarray:
    n = len(c) - 1
    comp = np.zeros((n, n))
    comp[1:, :-1] = np.eye(n - 1)
    comp[:, -1] = -c[:-1] / c[-1]
    return np.linalg.eigvals(comp).astype(complex)


def _newton_polish(c: np.ndarray, roots: np.ndarray) -> np.ndarray:
    dc = P.polyder(c)
    out = roots.copy()
    # subnormal coefficients can overflow a step; such candidates are dropped
    with np.errstate(all="ignore"):
        for i, r in enumerate(roots):
            pr = P.polyval(r, c)
            dpr = P.polyval(r, dc)
            if dpr == 0:
                continue
            cand = r - pr / dpr
            if np.isfinite(cand) and abs(P.polyval(cand, c)) < abs(pr):
                out[i] = cand
    return out


def root_residual(c: np.ndarray, r: complex) -> float:
    """|p(r)| scaled by the coefficient norm and the root magnitude."""
    scale = np.max(np.abs(c)) * max(1.0, abs(r)) ** (len(c) - 1)
    return abs(P.polyval(r, c)) / scale


def polynomial_roots(coeffs, tol: float = 1e-8) -> np.ndarray:
    """Roots by companion-matrix eigenvalues plus one Newton polish each."""
    c = Polynomial(coeffs).coeffs
    if len(c) < 2:
        raise ValueError("polynomial must have degree >= 1")
    # exact zero roots are split off so the companion matrix stays well scaled
    nz = np.flatnonzero(c)[0]
    zero_roots = np.zeros(nz, dtype=complex)
    c = c[nz:]
    roots = _companion_eigroots(c) if len(c) > 1 else np.zeros(0, dtype=complex)
    roots = _newton_polish(c, roots)
    roots = np.concatenate([zero_roots, roots])
    bad = [r for r in roots if root_residual(c, r) > tol and r != 0]
    if bad:
        raise RootConvergenceError(f"{len(bad)} roots failed the residual check", roots)
    return _sorted(roots)


def aberth_roots(coeffs, max_iter: int = 500, tol: float = 1e-15) -> np.ndarray:
    """Independent root finder (Aberth-Ehrlich simultaneous iteration)."""
    c = Polynomial(coeffs).coeffs
    n = len(c) - 1
    if n < 1:
        raise ValueError("polynomial must have degree >= 1")
    dc = P.polyder(c)
    # Cauchy-style bound for the initial circle; offsets break symmetry
    radius = 1 + np.max(np.abs(c[:-1] / c[-1]))
    radius = min(radius, 2.0 * max(np.abs(c[:-1] / c[-1])) ** (1.0 / n) + 1e-3) if n else radius
    z = radius * np.exp(1j * (2 * np.pi * np.arange(n) / n + 0.4))
    for _ in range(max_iter):
        pz = P.polyval(z, c)
        dpz = P.polyval(z, dc)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = pz / dpz
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, np.inf)
            s = np.sum(1.0 / diff, axis=1)
            w = ratio / (1 - ratio * s)
        w = np.where(np.isfinite(w), w, 0.0)
        z = z - w
        if np.max(np.abs(w)) <= tol * max(1.0, np.max(np.abs(z))):
            break
    return _sorted(z)


def _sorted(roots: np.ndarray) -> np.ndarray:
    roots = np.asarray(roots, dtype=complex)
    return roots[np.lexsort((np.round(roots.imag, 12), -np.round(roots.real, 12)))]


# ---------------------------------------------------------- transfer functions

@dataclass(frozen=True, eq=False)
class DiscreteTransferFn:
    num: Polynomial
    den: Polynomial
    dt: float

    def __post_init__(self):
        if not isinstance(self.num, Polynomial):
            object.__setattr__(self, "num", Polynomial(self.num))
        if not isinstance(self.den, Polynomial):
            object.__setattr__(self, "den", Polynomial(self.den))
        if self.den.is_zero:
            raise ValueError("denominator must be nonzero")
        if not self.dt > 0:
            raise ValueError("sampling period must be positive")

    def __call__(self, z):
        return self.num(z) / self.den(z)

    def freqresp(self, omega) -> np.ndarray:
        return self(np.exp(1j * np.asarray(omega, dtype=float) * self.dt))

    def poles(self) -> np.ndarray:
        return polynomial_roots(self.den.coeffs)

    def zeros(self) -> np.ndarray:
        return polynomial_roots(self.num.coeffs)

    def __mul__(self, other):
        if isinstance(other, DiscreteTransferFn):
            return DiscreteTransferFn(self.num * other.num, self.den * other.den, self.dt)
        return DiscreteTransferFn(self.num * float(other), self.den, self.dt)

    __rmul__ = __mul__

    def __add__(self, other):
        if not isinstance(other, DiscreteTransferFn):
            other = constant_tf(float(other), self.dt)
        return DiscreteTransferFn(self.num * other.den + other.num * self.den,
                                  self.den * other.den, self.dt)

    __radd__ = __add__

    def __neg__(self):
        return DiscreteTransferFn(self.num * -1.0, self.den, self.dt)

    def __sub__(self, other):
        return self + (-other if isinstance(other, DiscreteTransferFn) else -float(other))

    def __truediv__(self, other: DiscreteTransferFn):
        return DiscreteTransferFn(self.num * other.den, self.den * other.num, self.dt)

    def feedback_poles(self) -> np.ndarray:
        """Poles of ``self / (1 + self)`` under unity negative feedback."""
        return polynomial_roots((self.den + self.num).coeffs)


def constant_tf(value: float, dt: float) -> DiscreteTransferFn:
    return DiscreteTransferFn(Polynomial([value]), Polynomial([1.0]), dt)


def equivalent(a: DiscreteTransferFn, b: DiscreteTransferFn, rtol: float = ASSEMBLY_RTOL) -> float:
    """Relative size of ``a.num*b.den - b.num*a.den``; zero iff a == b."""
    lhs = a.num * b.den
    rhs = b.num * a.den
    diff = (lhs - rhs).coeffs
    scale = max(np.max(np.abs(lhs.coeffs)), np.max(np.abs(rhs.coeffs)))
    return float(np.max(np.abs(diff)) / scale)


# ------------------------------------------------------------ loop components

@dataclass(frozen=True)
class SisoLoopParams:
    f: float
    g: float
    k: float
    k_delta: float
    m: int
    T: float

    def __post_init__(self):
        if not (isinstance(self.m, (int, np.integer)) and self.m >= 1):
            raise ValueError("delay steps m must be an integer >= 1")
        if not self.T > 0:
            raise ValueError("sampling period T must be positive")
        if not self.k > 0:
            raise ValueError("control gain k must be positive")
        if not 0 < self.k_delta <= 1:
            raise ValueError("incremental gain k_delta must lie in (0, 1]")
        if self.g == 0 or not math.isfinite(self.g) or not math.isfinite(self.f):
            raise ValueError("plant gain g must be nonzero and f finite")

    def with_k_delta(self, k_delta: float) -> SisoLoopParams:
        return SisoLoopParams(self.f, self.g, self.k, k_delta, self.m, self.T)


def _zoh_is_integrator(f: float, T: float) -> bool:
    return abs(f) * T < 1e-10


def zoh_plant(f: float, g: float, T: float) -> DiscreteTransferFn:
    """Zero-order-hold discretisation of g / (s - f)."""
    if not T > 0:
        raise ValueError("sampling period must be positive")
    if _zoh_is_integrator(f, T):
        return DiscreteTransferFn(Polynomial([g * T]), Polynomial([-1.0, 1.0]), T)
    e = math.exp(f * T)
    return DiscreteTransferFn(Polynomial([-g * (1 - e)]), Polynomial([-f * e, f]), T)


def delay_tf(T: float) -> DiscreteTransferFn:
    """One-sample delay 1/z."""
    return DiscreteTransferFn(Polynomial([1.0]), Polynomial.monomial(1), T)


def diff_tf(m: int, T: float) -> DiscreteTransferFn:
    """Three-point central difference delayed to m samples: (z^2 - 1) / (2T z^(m+1))."""
    if m < 1:
        raise ValueError("m must be >= 1")
    return DiscreteTransferFn(Polynomial([-1.0, 0.0, 1.0]), Polynomial.monomial(m + 1, 2 * T), T)


def _components(p: SisoLoopParams):
    return zoh_plant(p.f, p.g, p.T), delay_tf(p.T), diff_tf(p.m, p.T)


def _expanded(p: SisoLoopParams, closed: bool) -> DiscreteTransferFn:
    """Closed/open-loop forms with coefficients written out term by term."""
    m, T, f, k, kd = p.m, p.T, p.f, p.k, p.k_delta
    if _zoh_is_integrator(f, T):
        # divide the f != 0 forms through by f and take the limit
        e, q, lead = 1.0, -T, 2 * T
    else:
        e = math.exp(f * T)
        q = 1 - e
        lead = 2 * T * f
    num = np.zeros(m + 3)
    den = np.zeros(m + 3)
    num[m + 1] = -2 * T * kd * k * q
    den[m + 2] += lead
    if closed:
        den[m + 1] += -2 * T * kd * k * q - lead * (1 + e)
    else:
        den[m + 1] += -lead * (1 + e)
    den[m] += lead * e
    den[2] += -kd * q
    den[0] += kd * q
    return DiscreteTransferFn(Polynomial(num), Polynomial(den), T)


def expanded_closed_loop(p: SisoLoopParams) -> DiscreteTransferFn:
    return _expanded(p, closed=True)


def expanded_open_loop(p: SisoLoopParams) -> DiscreteTransferFn:
    return _expanded(p, closed=False)


def assembled_closed_loop(p: SisoLoopParams) -> DiscreteTransferFn:
    """k_d k G / (k_d k G + k_d G D - g A + g) by rational arithmetic, unreduced."""
    G, A, D = _components(p)
    fwd = G * (p.k_delta * p.k)
    return fwd / (fwd + G * D * p.k_delta - A * p.g + p.g)


def assembled_open_loop(p: SisoLoopParams) -> DiscreteTransferFn:
    """k_d k G / (k_d G D - g A + g) by rational arithmetic, unreduced."""
    G, A, D = _components(p)
    fwd = G * (p.k_delta * p.k)
    return fwd / (G * D * p.k_delta - A * p.g + p.g)


def _checked(expanded, assembled) -> DiscreteTransferFn:
    err = equivalent(expanded, assembled)
    if not err <= ASSEMBLY_RTOL:
        raise AssemblyMismatchError(f"assembled and expanded forms differ by {err:.3g}")
    return expanded


def closed_loop_H(p: SisoLoopParams) -> DiscreteTransferFn:
    return _checked(expanded_closed_loop(p), assembled_closed_loop(p))


def open_loop_H_star(p: SisoLoopParams) -> DiscreteTransferFn:
    tf = _checked(expanded_open_loop(p), assembled_open_loop(p))
    den = tf.den.coeffs
    if abs(np.sum(den)) > 1e-12 * np.max(np.abs(den)):
        raise AssemblyMismatchError("z = 1 is not a root of the open-loop denominator")
    return tf


def poles(tf: DiscreteTransferFn) -> np.ndarray:
    return tf.poles()


def zeros(tf: DiscreteTransferFn) -> np.ndarray:
    return tf.zeros()


def is_stable(pole_set: Iterable[complex], tol: float = STABILITY_TOL) -> bool:
    return bool(all(abs(z) < 1 - tol for z in pole_set))


# ------------------------------------------------------------------ root locus

@dataclass(frozen=True, eq=False)
class LocusPoint:
    k_delta: float
    poles: np.ndarray  # ordered by branch id
    stable: bool


def root_locus(base: SisoLoopParams, k_delta_grid: Sequence[float]) -> list[LocusPoint]:
    """Closed-loop poles over a k_delta grid with branches tracked by distance."""
    grid = [float(x) for x in k_delta_grid]
    if not grid or any(not 0 < x <= 1 for x in grid):
        raise ValueError("k_delta grid values must lie in (0, 1]")
    out: list[LocusPoint] = []
    prev = None
    for kd in grid:
        pl = closed_loop_H(base.with_k_delta(kd)).poles()
        if prev is not None and len(prev) == len(pl):
            cost = np.abs(prev[:, None] - pl[None, :])
            _, col = linear_sum_assignment(cost)
            pl = pl[col]
        out.append(LocusPoint(kd, pl, is_stable(pl)))
        prev = pl
    return out


def write_locus_csv(points: Sequence[LocusPoint], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k_delta", "re", "im", "branch_id", "stable"])
        for pt in points:
            for b, z in enumerate(pt.poles):
                w.writerow([_fmt(pt.k_delta), _fmt(z.real), _fmt(z.imag), b, int(pt.stable)])


# --------------------------------------------------------------------- margins

@dataclass(frozen=True)
class MarginReport:
    gain_margin_db: float
    phase_crossover: float  # rad/s
    phase_margin_deg: float
    gain_crossover: float  # rad/s
    stable: bool
    closed_loop_poles: tuple = field(default=(), repr=False)

    @property
    def margins_say_stable(self) -> bool:
        return self.gain_margin_db > 0 and self.phase_margin_deg > 0


def _bisect(fun, a, b, rtol=1e-8):
    fa = fun(a)
    for _ in range(200):
        if b - a <= rtol * b:
            break
        mid = 0.5 * (a + b)
        fm = fun(mid)
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return 0.5 * (a + b)


def frequency_grid(dt: float, n: int = 100_000, w_min: float = 1e-3) -> np.ndarray:
    return np.geomspace(w_min, math.pi / dt, n)


def margins(open_loop: DiscreteTransferFn, n_grid: int = 100_000) -> MarginReport:
    """Gain and phase margins of a discrete open loop.

    Crossovers are bracketed on a log grid up to the Nyquist frequency and
    refined by bisection. With several crossovers the smallest margin wins.
    Phase crossovers that fall exactly on the Nyquist frequency (where the
    response is real) are counted like any other.
    """
    w = frequency_grid(open_loop.dt, n_grid)
    h = open_loop.freqresp(w)
    mag = np.abs(h)
    phase = np.unwrap(np.angle(h))

    logmag = np.log(mag)
    pm_best, wc_best = math.inf, math.nan
    for i in np.flatnonzero(np.sign(logmag[:-1]) != np.sign(logmag[1:])):
        wc = _bisect(lambda x: math.log(abs(open_loop.freqresp(x))), w[i], w[i + 1])
        ph = phase[i] + _wrap(np.angle(open_loop.freqresp(wc)) - np.angle(h[i]))
        pm = 180.0 + math.degrees(ph)
        pm = (pm + 180.0) % 360.0 - 180.0
        if pm < pm_best:
            pm_best, wc_best = pm, wc

    gm_best, wp_best = math.inf, math.nan
    # distance to the nearest -180 + 360n line; crossings are sign changes of it
    shifted = (phase + math.pi) / (2 * math.pi)
    cell = np.floor(shifted)
    for i in np.flatnonzero(cell[:-1] != cell[1:]):
        target = (max(cell[i], cell[i + 1])) * 2 * math.pi - math.pi
        base_i = i

        def fun(x, base_i=base_i, target=target):
            ph = phase[base_i] + _wrap(np.angle(open_loop.freqresp(x)) - np.angle(h[base_i]))
            return ph - target

        wp = _bisect(fun, w[i], w[i + 1])
        gm = -20 * math.log10(abs(open_loop.freqresp(wp)))
        if gm < gm_best:
            gm_best, wp_best = gm, wp
    # the Nyquist point itself: z = -1 gives a real response
    h_end = h[-1]
    if h_end.real < 0 and abs(h_end.imag) <= 1e-9 * abs(h_end):
        gm = -20 * math.log10(abs(h_end))
        if gm < gm_best:
            gm_best, wp_best = gm, w[-1]

    cl = open_loop.feedback_poles()
    return MarginReport(gm_best, wp_best, pm_best, wc_best, is_stable(cl), tuple(cl))


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def bode_data(open_loop: DiscreteTransferFn, omega=None):
    w = frequency_grid(open_loop.dt, 2000) if omega is None else np.asarray(omega, dtype=float)
    h = open_loop.freqresp(w)
    return w, 20 * np.log10(np.abs(h)), np.degrees(np.unwrap(np.angle(h)))


def write_bode_csv(omega, mag_db, phase_deg, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["omega", "mag_db", "phase_deg"])
        for row in zip(omega, mag_db, phase_deg):
            wr.writerow([_fmt(x) for x in row])


# --------------------------------------------------------------------- Nyquist

@dataclass(frozen=True, eq=False)
class NyquistResult:
    omega: np.ndarray
    points: np.ndarray
    winding_ccw: int  # counterclockwise turns of H* around -1 on the closed contour
    open_loop_unstable_poles: int
    stable: bool

    @property
    def clockwise_encirclements(self) -> int:
        return -self.winding_ccw


def _contour_pieces(radius: float):
    """Closed contour as parametric pieces: the unit circle from angle
    ``radius`` to ``2pi - radius``, then an arc around z = 1 passing to its
    right (outside the disc)."""
    rho = abs(np.exp(1j * radius) - 1.0)
    a0 = float(np.angle(np.exp(-1j * radius) - 1.0))  # just below z = 1
    a1 = float(np.angle(np.exp(1j * radius) - 1.0))  # just above z = 1

    def circle(s):
        return np.exp(1j * s)

    def arc(s):
        return 1.0 + rho * np.exp(1j * (a0 + s * (a1 - a0)))

    return [(circle, radius, 2 * math.pi - radius), (arc, 0.0, 1.0)]


def _piece_params(lo: float, hi: float, n: int, log_ends: bool) -> np.ndarray:
    if not log_ends:
        return np.linspace(lo, hi, n)
    # dense near both ends, where the contour passes close to z = 1
    half = np.geomspace(lo, math.pi, n // 2)
    return np.concatenate([half, 2 * math.pi - half[-2::-1]])


def _arg_change(fun, curve, s0, s1, v0, v1, depth):
    d = float(np.angle(v1 / v0))
    if abs(d) < 0.5 or depth == 0:
        return d
    sm = 0.5 * (s0 + s1)
    vm = fun(curve(sm))
    return (_arg_change(fun, curve, s0, sm, v0, vm, depth - 1)
            + _arg_change(fun, curve, sm, s1, vm, v1, depth - 1))


def _winding(fun, radius: float, n: int, max_refine: int = 40) -> float:
    """Turns of ``fun`` around the origin along the closed contour."""
    total = 0.0
    for i, (curve, lo, hi) in enumerate(_contour_pieces(radius)):
        s = _piece_params(lo, hi, n if i == 0 else 2001, log_ends=(i == 0))
        v = fun(curve(s))
        for k in range(len(s) - 1):
            total += _arg_change(fun, curve, s[k], s[k + 1], v[k], v[k + 1], max_refine)
    return total / (2 * math.pi)


def nyquist_curve(open_loop: DiscreteTransferFn, omega=None,
                  radius: float = INDENT_RADIUS, n_contour: int = 20_000) -> NyquistResult:
    """Nyquist samples of H* and the discrete Nyquist stability verdict.

    The closed contour is the unit circle indented around z = 1 on the
    outside, so the integrator pole counts as an inside pole. Stability
    holds iff the counterclockwise winding of 1 + H* around the origin
    equals the number of open-loop poles strictly outside the circle.
    """
    dt = open_loop.dt
    if omega is None:
        omega = np.concatenate([np.geomspace(radius / dt, math.pi / dt, 1000),
                                2 * math.pi / dt - np.geomspace(radius / dt, math.pi / dt, 1000)[-2::-1]])
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0) or np.any(omega >= 2 * math.pi / dt):
        raise ValueError("omega grid must lie in (0, 2pi/T)")
    ol_poles = open_loop.poles()
    for p_ in ol_poles:
        if abs(abs(p_) - 1) < radius and abs(p_ - 1) > radius:
            raise ContourIndentationError(f"open-loop pole {p_} lies on the unit circle away from z = 1")
    n_out = int(sum(abs(p_) > 1 + STABILITY_TOL for p_ in ol_poles))

    def one_plus(z):
        return 1.0 + open_loop(z)

    winding = _winding(one_plus, radius, n_contour)
    w_int = int(round(winding))
    if abs(winding - w_int) > 1e-3:
        raise RuntimeError(f"winding number {winding} did not resolve to an integer")
    points = open_loop.freqresp(omega)
    return NyquistResult(omega, points, w_int, n_out, w_int == n_out)


def write_nyquist_csv(res: NyquistResult, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["omega", "re", "im"])
        for w, z in zip(res.omega, res.points):
            wr.writerow([_fmt(w), _fmt(z.real), _fmt(z.imag)])
        fh.write(f"# winding_ccw={res.winding_ccw} clockwise_encirclements={res.clockwise_encirclements} "
                 f"open_loop_unstable_poles={res.open_loop_unstable_poles} stable={int(res.stable)}\n")


def _fmt(x: float) -> str:
    return repr(float(x))
