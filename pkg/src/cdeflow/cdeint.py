"""CDE-to-ODE reduction, fixed-step RK4 (3/8 rule) and the two backward passes.

A vector field is any object with

* ``forward(z, s, side) -> (dz, cache)``
* ``vjp(cache, a) -> (z_bar, theta_bar_flat)`` where ``theta_bar`` is summed
  over any batch dimension,
* ``time_vjp(cache, a) -> a . dg/ds`` (per batch row), needed only for the
  initial-time gradient,
* ``n_params`` and ``grads(flat)`` to restructure a flat parameter gradient.

``side`` says from which side a path derivative is taken when ``s`` falls on
a knot.  Stages at the far end of a step use the side facing back into the
step, so steps aligned to knots never see the neighbouring piece.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, NamedTuple

import numpy as np

from .errors import ModeError, NumericalBlowup, ShapeError
from .nn import MLPParams, flatten_tensors, grads_from_flat, mlp_forward, mlp_vjp
from .spline import SplinePath

RECORD_MODES = ("terminal", "trajectory", "direct")
# k1..k4 plus the running state: all a fixed-step RK4 pass ever holds at once
_WORKING_SET = 5


class OdeField:
    """``g(z, s) = reshape(f(z), (w, dim)) @ dX/ds(s)`` for a learned ``f``."""

    def __init__(self, f_params: MLPParams, path: SplinePath):
        w = f_params.in_dim
        if f_params.out_dim != w * path.dim:
            raise ShapeError(f"field output {f_params.out_dim} != hidden {w} x path dim {path.dim}")
        self.f = f_params
        self.path = path
        self.width = w
        self.n_params = f_params.n_params

    def matrix(self, z):
        y, cache = mlp_forward(self.f, z)
        return y.reshape(y.shape[:-1] + (self.width, self.path.dim)), cache

    def forward(self, z, s, side="right"):
        F, mc = self.matrix(z)
        dX = self.path.derivative(s, side)
        g = np.einsum("...ij,...j->...i", F, dX)
        return g, (mc, F, dX, s, side)

    def vjp(self, cache, a):
        mc, F, dX, _, _ = cache
        F_bar = a[..., :, None] * dX[..., None, :]
        z_bar, pg = mlp_vjp(self.f, mc, F_bar.reshape(F.shape[:-2] + (-1,)))
        return z_bar, flatten_tensors(pg.tensors())

    def time_vjp(self, cache, a):
        _, F, _, s, side = cache
        d2X = self.path.second_derivative(s, side)
        return np.einsum("...i,...ij,...j->...", a, F, d2X)

    def grads(self, flat):
        return grads_from_flat(self.f, flat)


def make_field(f_params: MLPParams, path: SplinePath) -> OdeField:
    return OdeField(f_params, path)


def time_grid(t_start, t_end, step, breakpoints=None) -> np.ndarray:
    """Step partition of ``[t_start, t_end]``; the last step of each piece is
    shortened to land exactly on the piece end.  Interior ``breakpoints`` are
    forced onto the grid."""
    if not t_start < t_end:
        raise ValueError(f"need t_start < t_end, got {t_start}, {t_end}")
    if not step > 0:
        raise ValueError("step must be positive")
    pts = [t_start, t_end]
    if breakpoints is not None:
        bp = np.asarray(breakpoints, dtype=float)
        pts += bp[(bp > t_start) & (bp < t_end)].tolist()
    pts = np.unique(np.asarray(pts, dtype=float))
    pieces = []
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(1, math.ceil((b - a) / step - 1e-9))
        pieces.append(a + step * np.arange(n))
    pieces.append([t_end])
    return np.concatenate(pieces)


def _rk4_step(fn, y, t, tn, keep):
    """One 3/8-rule step on a tuple of arrays; returns (y_next, k's, caches)."""
    h = tn - t
    into, back = ("right", "left") if h > 0 else ("left", "right")

    def comb(ks, cs):
        return tuple(yi + h * sum(c * k[i] for c, k in zip(cs, ks)) for i, yi in enumerate(y))

    k1, c1 = fn(y, t, into)
    y2 = comb([k1], [1 / 3])
    k2, c2 = fn(y2, t + h / 3, into)
    y3 = comb([k1, k2], [-1 / 3, 1.0])
    k3, c3 = fn(y3, t + 2 * h / 3, into)
    y4 = comb([k1, k2, k3], [1.0, -1.0, 1.0])
    k4, c4 = fn(y4, tn, back)
    y_next = comb([k1, k2, k3, k4], [1 / 8, 3 / 8, 3 / 8, 1 / 8])
    return y_next, ((c1, c2, c3, c4) if keep else None)


def _check_finite(z, s):
    if not np.all(np.isfinite(z)):
        rows = []
        if z.ndim > 1:
            rows = np.flatnonzero(~np.all(np.isfinite(z.reshape(z.shape[0], -1)), axis=1))
        raise NumericalBlowup(s, rows)


@dataclass
class SolveRecord:
    z: np.ndarray
    times: np.ndarray
    step_size: float
    steps: int
    retained_state_count: int
    mode: str
    states: list | None = None
    stage_caches: list | None = None
    field: Any = None


def rk4_solve(field, z0, t_start, t_end, step, record_mode="terminal", breakpoints=None) -> SolveRecord:
    if record_mode not in RECORD_MODES:
        raise ModeError(f"record_mode must be one of {RECORD_MODES}")
    grid = time_grid(t_start, t_end, step, breakpoints)
    direct = record_mode == "direct"
    keep_states = record_mode != "terminal"
    z = np.array(z0, dtype=float)

    def fn(y, s, side):
        dz, cache = field.forward(y[0], s, side)
        return (dz,), cache

    states = [z] if keep_states else None
    caches = [] if direct else None
    for t, tn in zip(grid[:-1], grid[1:]):
        (z,), stage = _rk4_step(fn, (z,), t, tn, direct)
        _check_finite(z, tn)
        if keep_states:
            states.append(z)
        if direct:
            caches.append((t, tn, stage))
    steps = len(grid) - 1
    if direct:
        retained = len(states) + 4 * len(caches)
    elif keep_states:
        retained = len(states) + 4
    else:
        retained = _WORKING_SET
    return SolveRecord(z, grid, float(step), steps, retained, record_mode, states, caches, field)


class AdjointResult(NamedTuple):
    z0_bar: np.ndarray
    theta_bar: Any
    t0_bar: np.ndarray | float | None
    steps: int
    retained_state_count: int


def adjoint_backward(field, z_T, loss_grad, t_start, t_end, step, want_t0_grad=False,
                     breakpoints=None) -> AdjointResult:
    """Integrate ``(z, a, theta_bar[, q])`` backward from ``t_end`` to ``t_start``.

    ``q`` accumulates ``int a . dg/ds ds``; the initial-time gradient is
    ``-a_T . g(z_T, T) + q``, i.e. the derivative of the loss with respect to
    the integration start time with the initial state held fixed.
    """
    grid = time_grid(t_start, t_end, step, breakpoints)[::-1]
    z = np.array(z_T, dtype=float)
    a = np.array(loss_grad, dtype=float)
    if a.shape != z.shape:
        raise ShapeError(f"loss_grad {a.shape} != state {z.shape}")
    batch = z.shape[:-1]

    def fn(y, s, side):
        dz, cache = field.forward(y[0], s, side)
        zb, tb = field.vjp(cache, y[1])
        dq = -field.time_vjp(cache, y[1]) if want_t0_grad else np.zeros(batch)
        return (dz, -zb, -tb, dq), cache

    t0_bar = None
    if want_t0_grad:
        g_T, _ = field.forward(z, t_end, "left")
        t0_bar = -np.sum(a * g_T, axis=-1)
    y = (z, a, np.zeros(field.n_params), np.zeros(batch))
    for t, tn in zip(grid[:-1], grid[1:]):
        y, _ = _rk4_step(fn, y, t, tn, False)
        _check_finite(y[1], tn)
    if want_t0_grad:
        t0_bar = t0_bar + y[3]
        if t0_bar.ndim == 0:
            t0_bar = float(t0_bar)
    return AdjointResult(y[1], field.grads(y[2]), t0_bar, len(grid) - 1, _WORKING_SET)


def direct_backward(record: SolveRecord, loss_grad):
    """Reverse-mode differentiation of the stored discrete RK4 recursion."""
    if record.mode != "direct":
        raise ModeError("direct_backward needs a record produced with record_mode='direct'")
    field = record.field
    z_bar = np.array(loss_grad, dtype=float)
    theta = np.zeros(field.n_params)
    for t, tn, (c1, c2, c3, c4) in reversed(record.stage_caches):
        h = tn - t
        k1b = h / 8 * z_bar
        k2b = 3 * h / 8 * z_bar
        k3b = 3 * h / 8 * z_bar
        k4b = h / 8 * z_bar
        yb, tb = field.vjp(c4, k4b)
        theta += tb
        z_bar = z_bar + yb
        k1b = k1b + h * yb
        k2b = k2b - h * yb
        k3b = k3b + h * yb
        yb, tb = field.vjp(c3, k3b)
        theta += tb
        z_bar = z_bar + yb
        k1b = k1b - h / 3 * yb
        k2b = k2b + h * yb
        yb, tb = field.vjp(c2, k2b)
        theta += tb
        z_bar = z_bar + yb
        k1b = k1b + h / 3 * yb
        yb, tb = field.vjp(c1, k1b)
        theta += tb
        z_bar = z_bar + yb
    return z_bar, field.grads(theta)
