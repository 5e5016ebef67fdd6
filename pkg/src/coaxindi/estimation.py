"""Delayed numerical differentiation of sampled angular velocity.

The default differentiator is Holoborodko's smooth noise-robust central
difference. For ``n = 2M + 1`` points and ``N = (n - 3) / 2``::

    f'(t - M*T) ~ (1/T) * sum_{k=1..M} c_k * (f[k] - f[-k])
    c_k = (C(2N, N - k + 1) - C(2N, N - k - 1)) / 2**(2N + 1)

with ``f[k]`` the sample k steps ahead of the window centre and ``C`` the
binomial coefficient (zero outside its range). Applied causally to the
latest ``n`` samples the estimate refers to the window centre, so it lags
by ``M * T``.

``kind="central"`` gives the plain three-point central difference taken at
the same centre, i.e. ``(1 - z^-2) z^-(M-1) / (2T)``; this is the simplified
model the z-domain analysis uses.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from math import comb

import numpy as np


@dataclass(frozen=True, eq=False)
class DifferentiatorSpec:
    """Antisymmetric FIR differentiator.

    ``coeffs[j]`` multiplies the sample at offset ``j - half`` from the
    window centre and already includes the ``1/T`` factor.
    """

    n: int
    sample_period: float
    coeffs: np.ndarray
    kind: str = "holoborodko"

    @property
    def half_width(self) -> int:
        return (self.n - 1) // 2

    @property
    def delay(self) -> float:
        return self.half_width * self.sample_period


def holoborodko_weights(n: int) -> np.ndarray:
    """Dimensionless weights c_1..c_M (multiply by 1/T for a derivative)."""
    big_m = (n - 1) // 2
    big_n = (n - 3) // 2

    def c(a, b):
        return comb(a, b) if 0 <= b <= a else 0

    num = [c(2 * big_n, big_n - k + 1) - c(2 * big_n, big_n - k - 1) for k in range(1, big_m + 1)]
    return np.array(num, dtype=float) / 2.0 ** (2 * big_n + 1)


def make_central_diff(n: int, sample_period: float, kind: str = "holoborodko") -> DifferentiatorSpec:
    if not isinstance(n, (int, np.integer)) or n < 3 or n % 2 == 0:
        raise ValueError(f"point count must be an odd integer >= 3, got {n!r}")
    if not sample_period > 0:
        raise ValueError("sample period must be positive")
    half = (n - 1) // 2
    coeffs = np.zeros(n)
    if kind == "holoborodko":
        w = holoborodko_weights(n)
        for k in range(1, half + 1):
            coeffs[half + k] = w[k - 1]
            coeffs[half - k] = -w[k - 1]
    elif kind == "central":
        coeffs[half + 1] = 0.5
        coeffs[half - 1] = -0.5
    else:
        raise ValueError(f"unknown differentiator kind {kind!r}")
    return DifferentiatorSpec(int(n), float(sample_period), coeffs / sample_period, kind)


class SampleBuffer:
    """Fixed-capacity window of (timestamp, 3-vector) samples, oldest first."""

    def __init__(self, capacity: int, sample_period: float, rtol: float = 1e-6):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.sample_period = sample_period
        self._rtol = rtol
        self._times: deque[float] = deque(maxlen=capacity)
        self._values: deque[tuple[float, float, float]] = deque(maxlen=capacity)

    def push(self, t: float, value) -> None:
        if self._times:
            step = t - self._times[-1]
            if abs(step - self.sample_period) > self._rtol * self.sample_period:
                raise ValueError(f"non-uniform sample spacing {step!r}, expected {self.sample_period!r}")
        self._times.append(float(t))
        self._values.append(tuple(float(x) for x in value))

    @property
    def filled(self) -> bool:
        return len(self._times) == self.capacity

    def __len__(self) -> int:
        return len(self._times)

    @property
    def newest_time(self) -> float:
        return self._times[-1]

    def window(self, n: int) -> np.ndarray:
        """Last ``n`` samples as an (n, 3) array, oldest first."""
        return np.array(list(self._values)[-n:])

    def window_tuples(self, n: int):
        if n == self.capacity:
            return self._values
        return list(self._values)[-n:]


def differentiate(buffer: SampleBuffer, spec: DifferentiatorSpec):
    """Derivative at the window centre and the time it refers to.

    Returns ``None`` while fewer than ``spec.n`` samples are buffered.
    """
    if len(buffer) < spec.n:
        return None
    acc = [0.0, 0.0, 0.0]
    for c, v in zip(spec.coeffs, buffer.window_tuples(spec.n)):
        if c:
            acc[0] += c * v[0]
            acc[1] += c * v[1]
            acc[2] += c * v[2]
    return np.array(acc), buffer.newest_time - spec.delay


def delay_steps(tau: float, sample_period: float, tol: float = 1e-9) -> int:
    """Integer number of samples in ``tau``; raises if it is not a multiple."""
    if tau < 0:
        raise ValueError("delay must be non-negative")
    steps = round(tau / sample_period)
    if abs(steps * sample_period - tau) > tol * max(1.0, abs(tau)) + 1e-12:
        raise ValueError(f"delay {tau!r} is not an integer multiple of {sample_period!r}")
    return int(steps)


class DelayLine:
    """Streaming pure delay of ``steps`` samples, pre-filled with the first input."""

    def __init__(self, steps: int):
        self.steps = steps
        self._buf: deque | None = None

    def __call__(self, value):
        if self.steps == 0:
            return value
        if self._buf is None:
            self._buf = deque([value] * self.steps, maxlen=self.steps + 1)
        self._buf.append(value)
        return self._buf[0]


def pure_delay(signal, tau: float, sample_period: float) -> np.ndarray:
    """Shift a sampled signal (first axis = time) right by ``tau``."""
    x = np.asarray(signal, dtype=float)
    d = delay_steps(tau, sample_period)
    if d == 0 or len(x) == 0:
        return x.copy()
    out = np.empty_like(x)
    out[:d] = x[0]
    out[d:] = x[:-d] if d < len(x) else x[:0]
    if d >= len(x):
        out[:] = x[0]
    return out
