"""Natural cubic spline (and piecewise-linear) paths with time appended as the
last channel.

Each channel keeps its own knots (the times at which it was observed) and
per-interval coefficients ``a, b, c, d`` of ``a + b*u + c*u**2 + d*u**3`` in
interval-local coordinates ``u = t - knot_start``.  Coefficient tables are
padded to a common knot count so that several paths over the same domain can
be stacked into one batched path and evaluated together.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, MalformedSeries, NumericalFailure, ShapeError
from .timeseries import TimeSeries


def solve_tridiagonal(diag, off, rhs) -> np.ndarray:
    """Thomas algorithm for the symmetric tridiagonal system with main
    diagonal ``diag`` and sub/super diagonal ``off``."""
    diag = np.asarray(diag, dtype=float)
    off = np.asarray(off, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    n = len(diag)
    if len(off) != n - 1 or len(rhs) != n:
        raise ShapeError(f"diag {n}, off {len(off)}, rhs {len(rhs)}")
    cp = np.empty(max(n - 1, 0))
    dp = np.empty(n)
    pivot = diag[0]
    if pivot == 0.0:
        raise NumericalFailure("zero pivot in tridiagonal solve")
    if n > 1:
        cp[0] = off[0] / pivot
    dp[0] = rhs[0] / pivot
    for i in range(1, n):
        pivot = diag[i] - off[i - 1] * cp[i - 1]
        if pivot == 0.0:
            raise NumericalFailure("zero pivot in tridiagonal solve")
        if i < n - 1:
            cp[i] = off[i] / pivot
        dp[i] = (rhs[i] - off[i - 1] * dp[i - 1]) / pivot
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def spline_system(times, x):
    """Diagonal, off-diagonal and right-hand side of the knot-derivative system."""
    tau = np.diff(times)
    inv = 1.0 / tau
    slope3 = 3.0 * np.diff(x) * inv * inv
    diag = np.empty(len(times))
    diag[0] = 2 * inv[0]
    diag[-1] = 2 * inv[-1]
    diag[1:-1] = 2 * (inv[:-1] + inv[1:])
    k = np.empty(len(times))
    k[0] = slope3[0]
    k[-1] = slope3[-1]
    k[1:-1] = slope3[1:] + slope3[:-1]
    return diag, inv, k


def natural_cubic_coeffs(times, x) -> np.ndarray:
    """Per-interval ``(a, b, c, d)`` rows for one channel."""
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(times) < 2:
        raise MalformedSeries("a channel needs at least 2 knots")
    if np.any(np.diff(times) <= 0):
        raise MalformedSeries("duplicate or unsorted knot times")
    tau = np.diff(times)
    if len(times) == 2:
        slope = (x[1] - x[0]) / tau[0]
        return np.array([[x[0], slope, 0.0, 0.0]])
    diag, off, k = spline_system(times, x)
    D = solve_tridiagonal(diag, off, k)
    dx = np.diff(x)
    c = 3 * dx / tau**2 - (D[1:] + 2 * D[:-1]) / tau
    d = -2 * dx / tau**3 + (D[1:] + D[:-1]) / tau**2
    return np.stack([x[:-1], D[:-1], c, d], axis=1)


def linear_coeffs(times, x) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    x = np.asarray(x, dtype=float)
    if len(times) < 2 or np.any(np.diff(times) <= 0):
        raise MalformedSeries("need at least 2 strictly increasing knots")
    slope = np.diff(x) / np.diff(times)
    zeros = np.zeros_like(slope)
    return np.stack([x[:-1], slope, zeros, zeros], axis=1)


@dataclass(frozen=True)
class SplinePath:
    """Piecewise-cubic path ``[t0, t1] -> R^dim``.

    ``knots`` has shape ``batch + (dim, K)`` padded with ``+inf``;
    ``coeffs`` has shape ``batch + (dim, K - 1, 4)``; ``n_intervals`` has
    shape ``batch + (dim,)``.  ``batch`` is ``()`` for a single path.
    """

    knots: np.ndarray
    coeffs: np.ndarray
    n_intervals: np.ndarray
    t0: float
    t1: float
    has_time: bool = True
    kind: str = "cubic"

    @classmethod
    def from_channels(cls, channels, t0, t1, has_time=True, kind="cubic") -> "SplinePath":
        """``channels`` is a list of ``(knot_times, coeff_rows)`` pairs."""
        K = max(len(k) for k, _ in channels)
        dim = len(channels)
        knots = np.full((dim, K), np.inf)
        coeffs = np.zeros((dim, K - 1, 4))
        n_int = np.empty(dim, dtype=int)
        for j, (kt, cf) in enumerate(channels):
            knots[j, :len(kt)] = kt
            coeffs[j, :len(cf)] = cf
            n_int[j] = len(cf)
        for arr in (knots, coeffs, n_int):
            arr.setflags(write=False)
        return cls(knots, coeffs, n_int, float(t0), float(t1), has_time, kind)

    @classmethod
    def stack(cls, paths) -> "SplinePath":
        paths = list(paths)
        first = paths[0]
        for p in paths:
            if p.batch_shape != ():
                raise ShapeError("only single paths can be stacked")
            if p.dim != first.dim or (p.t0, p.t1) != (first.t0, first.t1):
                raise ShapeError("stacked paths must share dim and domain")
        K = max(p.knots.shape[-1] for p in paths)
        B = len(paths)
        knots = np.full((B, first.dim, K), np.inf)
        coeffs = np.zeros((B, first.dim, K - 1, 4))
        n_int = np.empty((B, first.dim), dtype=int)
        for b, p in enumerate(paths):
            k = p.knots.shape[-1]
            knots[b, :, :k] = p.knots
            coeffs[b, :, :k - 1] = p.coeffs
            n_int[b] = p.n_intervals
        return cls(knots, coeffs, n_int, first.t0, first.t1, first.has_time, first.kind)

    @property
    def dim(self) -> int:
        return self.knots.shape[-2]

    @property
    def batch_shape(self) -> tuple:
        return self.knots.shape[:-2]

    @property
    def domain(self):
        return self.t0, self.t1

    def _locate(self, t, side):
        tol = 1e-12 * max(1.0, abs(self.t0), abs(self.t1))
        if not (self.t0 - tol <= t <= self.t1 + tol):
            raise DomainError(f"t={t!r} outside [{self.t0}, {self.t1}]")
        if side == "right":
            idx = (self.knots <= t).sum(axis=-1) - 1
        else:
            idx = (self.knots < t).sum(axis=-1) - 1
        idx = np.clip(idx, 0, self.n_intervals - 1)
        start = np.take_along_axis(self.knots, idx[..., None], axis=-1)[..., 0]
        cf = np.take_along_axis(self.coeffs, idx[..., None, None], axis=-2)[..., 0, :]
        return t - start, cf

    def evaluate(self, t, side="right") -> np.ndarray:
        u, cf = self._locate(t, side)
        return cf[..., 0] + u * (cf[..., 1] + u * (cf[..., 2] + u * cf[..., 3]))

    def derivative(self, t, side="right") -> np.ndarray:
        u, cf = self._locate(t, side)
        return cf[..., 1] + u * (2 * cf[..., 2] + 3 * u * cf[..., 3])

    def second_derivative(self, t, side="right") -> np.ndarray:
        u, cf = self._locate(t, side)
        return 2 * cf[..., 2] + 6 * u * cf[..., 3]

    def breakpoints(self) -> np.ndarray:
        k = self.knots[np.isfinite(self.knots)]
        k = k[(k >= self.t0) & (k <= self.t1)]
        return np.unique(np.concatenate([k, [self.t0, self.t1]]))

    def channel_table(self, j):
        """``(knot_start, a, b, c, d)`` rows for channel ``j`` of a single path."""
        if self.batch_shape:
            raise ShapeError("channel_table needs a single path")
        m = self.n_intervals[j]
        return np.column_stack([self.knots[j, :m], self.coeffs[j, :m]])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "knot_start", "a", "b", "c", "d"])
            for j in range(self.dim):
                for row in self.channel_table(j):
                    w.writerow([j] + [repr(float(x)) for x in row])


def _fit(series: TimeSeries, coeff_fn, kind, time_channel) -> SplinePath:
    channels = []
    for c in range(series.n_channels):
        t, x = series.channel(c)
        channels.append((t, coeff_fn(t, x)))
    t0, t1 = series.times[0], series.times[-1]
    if time_channel:
        channels.append((np.array([t0, t1]), np.array([[t0, 1.0, 0.0, 0.0]])))
    return SplinePath.from_channels(channels, t0, t1, time_channel, kind)


def fit_natural_cubic(series: TimeSeries, time_channel: bool = True) -> SplinePath:
    """Natural cubic spline through each channel's own observations, with the
    identity time channel appended last."""
    return _fit(series, natural_cubic_coeffs, "cubic", time_channel)


def fit_linear(series: TimeSeries, time_channel: bool = True) -> SplinePath:
    """Piecewise-linear interpolation through each channel's observations."""
    return _fit(series, linear_coeffs, "linear", time_channel)


def crude_bound(series: TimeSeries) -> float:
    """Structural size bound ``|tau|_inf |x|_inf (min tau)^-2 (|tau|_inf + (min tau)^-1)``
    with unit constant."""
    tau = np.diff(series.times)
    tmax, tmin = tau.max(), tau.min()
    xmax = float(np.max(np.abs(series.values.data[series.observed])))
    return float(tmax * xmax * tmin**-2 * (tmax + 1.0 / tmin))


def sup_norms(path: SplinePath, n_grid: int = 2001, channels=None):
    """Grid estimates of ``|X|_inf``, ``|X'|_inf`` and ``|X''|_inf`` over the
    chosen channels (default: all data channels, excluding time)."""
    if channels is None:
        channels = slice(0, path.dim - 1 if path.has_time else path.dim)
    ts = np.unique(np.concatenate([np.linspace(path.t0, path.t1, n_grid), path.breakpoints()]))
    v = max(np.max(np.abs(path.evaluate(t)[..., channels])) for t in ts)
    d1 = max(np.max(np.abs(path.derivative(t)[..., channels])) for t in ts)
    d2 = max(np.max(np.abs(path.second_derivative(t)[..., channels])) for t in ts)
    return float(v), float(d1), float(d2)
