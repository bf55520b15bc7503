"""Truncated path signatures, computed as the terminal value of the signature
CDE and, independently, by level-by-level quadrature of iterated integrals.

Flattening: ``M(y) b`` stacks ``b[0] * y, b[1] * y, ...``, so the depth-i
slice reshaped row-major to ``(d,) * i`` is indexed ``[j_i, ..., j_1]``:
the most recent integration letter comes first.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cdeint import rk4_solve
from .errors import ShapeError
from .spline import SplinePath


def kappa(N: int, v: int) -> int:
    if N < 0 or v < 0:
        raise ValueError("N and v must be non-negative")
    return sum((v + 1) ** i for i in range(N + 1))


def build_M(y, d: int) -> np.ndarray:
    """Block matrix of shape ``(k*d, d)`` with ``y`` down the j-th block of column j."""
    y = np.asarray(y, dtype=float).ravel()
    k = len(y)
    if k < 1 or d < 1:
        raise ShapeError("need k >= 1 and d >= 1")
    M = np.zeros((k * d, d))
    for j in range(d):
        M[j * k:(j + 1) * k, j] = y
    return M


@dataclass(frozen=True)
class SignatureTensor:
    depth: int
    dim: int
    flat: np.ndarray

    def level(self, i: int) -> np.ndarray:
        start = sum(self.dim ** j for j in range(i))
        return self.flat[start:start + self.dim ** i]


def _level_slices(N, d):
    out, start = [], 0
    for i in range(N + 1):
        out.append(slice(start, start + d ** i))
        start += d ** i
    return out


class SignatureField:
    """``dy/ds = Mtilde(y) dX/ds``: level ``i`` grows by ``dX (x) y^{i-1}``."""

    n_params = 0

    def __init__(self, path: SplinePath, N: int):
        self.path = path
        self.N = N
        self.d = path.dim
        self.slices = _level_slices(N, self.d)

    def forward(self, y, s, side="right"):
        dX = self.path.derivative(s, side)
        out = np.zeros_like(y)
        for i in range(1, self.N + 1):
            prev = y[..., self.slices[i - 1]]
            out[..., self.slices[i]] = (dX[..., :, None] * prev[..., None, :]).reshape(prev.shape[:-1] + (-1,))
        return out, (dX, y)

    def vjp(self, cache, a):
        dX, y = cache
        yb = np.zeros_like(y)
        for i in range(1, self.N + 1):
            k = self.d ** (i - 1)
            ai = a[..., self.slices[i]].reshape(a.shape[:-1] + (self.d, k))
            yb[..., self.slices[i - 1]] = np.einsum("...jk,...j->...k", ai, dX)
        return yb, np.zeros(0)

    def time_vjp(self, cache, a):
        raise NotImplementedError

    def grads(self, flat):
        return flat


def signature_cde(path: SplinePath, N: int, step: float, align_knots: bool = True) -> SignatureTensor:
    """Depth-``N`` signature of ``path`` by integrating the signature CDE.

    With ``align_knots`` the step partition includes every knot, so RK4 never
    straddles a kink of a piecewise-linear path.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    d = path.dim
    y0 = np.zeros(kappa(N, d - 1))
    y0[0] = 1.0
    bp = path.breakpoints() if align_knots else None
    rec = rk4_solve(SignatureField(path, N), y0, path.t0, path.t1, step, breakpoints=bp)
    return SignatureTensor(N, d, rec.z)


def signature_oracle(polyline, N: int, grid: int = 10_000) -> SignatureTensor:
    """Iterated integrals of the piecewise-linear path through ``polyline``.

    Each segment is cut into ``grid`` equal pieces; level ``i`` is the
    cumulative trapezoid sum of ``dX (x) y^{i-1}`` over the fine grid, using
    the already-computed level ``i - 1`` values at the grid points.
    """
    pts = np.asarray(polyline, dtype=float)
    if pts.ndim != 2 or len(pts) < 2:
        raise ShapeError("polyline must be a (points, dim) array with >= 2 points")
    d = pts.shape[1]
    u = np.linspace(0.0, 1.0, grid + 1)[1:]
    fine = [pts[:1]]
    for a, b in zip(pts[:-1], pts[1:]):
        fine.append(a + u[:, None] * (b - a))
    path = np.concatenate(fine)
    dX = np.diff(path, axis=0)
    levels = [np.ones((len(path), 1))]
    for _ in range(N):
        prev = levels[-1]
        mid = 0.5 * (prev[:-1] + prev[1:])
        incr = (dX[:, :, None] * mid[:, None, :]).reshape(len(dX), -1)
        cur = np.zeros((len(path), incr.shape[1]))
        np.cumsum(incr, axis=0, out=cur[1:])
        levels.append(cur)
    flat = np.concatenate([lv[-1] for lv in levels])
    return SignatureTensor(N, d, flat)


def linear_path(points, times=None, time_channel=False) -> SplinePath:
    """Piecewise-linear path through ``points`` with knots at ``times``
    (default ``0, 1, 2, ...``).  Every channel shares the same knots."""
    pts = np.asarray(points, dtype=float)
    t = np.arange(len(pts), dtype=float) if times is None else np.asarray(times, dtype=float)
    slope = np.diff(pts, axis=0) / np.diff(t)[:, None]
    channels = []
    for j in range(pts.shape[1]):
        cf = np.stack([pts[:-1, j], slope[:, j], np.zeros(len(slope)), np.zeros(len(slope))], axis=1)
        channels.append((t, cf))
    if time_channel:
        channels.append((t[[0, -1]], np.array([[t[0], 1.0, 0.0, 0.0]])))
    return SplinePath.from_channels(channels, t[0], t[-1], time_channel, "linear")
