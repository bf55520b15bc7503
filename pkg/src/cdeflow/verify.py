"""Numerical property suites with fixed seeds.

Each suite returns a list of :class:`Check` records.  ``run`` collects the
requested suites into a JSON-ready report; the ``verify`` command and the
acceptance tests both go through here.
"""
from __future__ import annotations

import math
import time
import tracemalloc
from dataclasses import asdict, dataclass

import numpy as np

from .cdeint import OdeField, adjoint_backward, direct_backward, rk4_solve
from .models import (
    DirectField, NeuralCDEModel, ODERNNModel, RecurrentBatch, build_model, embed_direct_ode, embed_initial,
    gru_dt_forward, neural_cde_backward, neural_cde_forward, ode_rnn_forward,
)
from .nn import mlp_forward, mlp_init, mlp_vjp
from .signature import build_M, kappa, linear_path, signature_cde, signature_oracle
from .spline import crude_bound, fit_linear, fit_natural_cubic, solve_tridiagonal, spline_system, sup_norms
from .timeseries import TimeSeries, TimeSeriesSet, drop_observations, normalize
from .train import cross_entropy

SUITES = ("spline", "gradients", "signature", "embedding", "invariance", "rk4", "memory")


@dataclass
class Check:
    name: str
    measured: float
    tolerance: float
    passed: bool
    seconds: float = 0.0


class _Collector:
    def __init__(self, scale):
        self.scale = scale
        self.checks: list[Check] = []
        self._t = time.perf_counter()

    def add(self, name, measured, tolerance, upper=True):
        """``upper``: pass iff measured <= tolerance; otherwise measured >= tolerance."""
        tol = tolerance * self.scale if upper else tolerance / self.scale if self.scale else math.inf
        measured = float(measured)
        ok = bool(measured <= tol) if upper else bool(measured >= tol)
        now = time.perf_counter()
        self.checks.append(Check(name, measured, float(tol), ok and math.isfinite(measured), now - self._t))
        self._t = now


def _rel(a, b, floor=1e-300):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(float(np.max(np.abs(b))), floor))


# --- helpers shared with the tests -------------------------------------------

def random_series(rng, n_points=None, channels=None, missing=0.0, min_gap=0.5, max_gap=1.5) -> TimeSeries:
    n = int(n_points or rng.integers(4, 12))
    v = int(channels or rng.integers(1, 4))
    times = np.concatenate([[0.0], np.cumsum(rng.uniform(min_gap, max_gap, n - 1))])
    vals = rng.uniform(-1, 1, (n, v))
    mask = rng.random((n, v)) < missing
    for c in range(v):
        if (~mask[:, c]).sum() < 2:
            mask[:, c] = False
    return TimeSeries(times, np.ma.array(vals, mask=mask))


def spline_checks(rng, n_series=50):
    """Maximum errors over ``n_series`` random series for each spline property."""
    out = dict(interp=0.0, c1=0.0, c2=0.0, natural=0.0, deriv=0.0, bound_ratio=0.0)
    h = 1e-6
    for _ in range(n_series):
        s = random_series(rng, missing=0.2)
        p = fit_natural_cubic(s, time_channel=False)
        for c in range(s.n_channels):
            t, x = s.channel(c)
            for ti, xi in zip(t, x):
                out["interp"] = max(out["interp"], abs(p.evaluate(ti)[c] - xi) / (1 + abs(xi)))
            for ti in t[1:-1]:
                # second-order one-sided differences from each side must meet
                # the analytic value; a kink would show up as an O(1) gap
                for fn, dfn, key in ((p.evaluate, p.derivative, "c1"), (p.derivative, p.second_derivative, "c2")):
                    exact = dfn(ti)[c]
                    left = (3 * fn(ti, "left")[c] - 4 * fn(ti - h)[c] + fn(ti - 2 * h)[c]) / (2 * h)
                    right = (-3 * fn(ti)[c] + 4 * fn(ti + h)[c] - fn(ti + 2 * h)[c]) / (2 * h)
                    scale = max(1.0, abs(exact))
                    err = max(abs(left - exact), abs(right - exact), abs(left - right)) / scale
                    out[key] = max(out[key], err)
            out["natural"] = max(out["natural"], abs(p.second_derivative(t[0])[c]),
                                 abs(p.second_derivative(t[-1], "left")[c]))
        for u in rng.uniform(s.times[0] + 2 * h, s.times[-1] - 2 * h, 2):
            fd = (p.evaluate(u + h) - p.evaluate(u - h)) / (2 * h)
            ex = p.derivative(u)
            out["deriv"] = max(out["deriv"], float(np.max(np.abs(fd - ex) / np.maximum(1.0, np.abs(ex)))))
    for _ in range(n_series):
        # the boundedness check wants tightly packed knots: min gap >= 0.1
        s = random_series(rng, min_gap=0.1, max_gap=1.0)
        sn = sup_norms(fit_natural_cubic(s, time_channel=False), 401)
        out["bound_ratio"] = max(out["bound_ratio"], sum(sn) / crude_bound(s))
    return out


def tridiagonal_dense_error(rng, instances=100):
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(2, 40))
        t = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 2.0, n - 1))])
        x = rng.normal(size=n)
        diag, off, rhs = spline_system(t, x)
        A = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
        dense = np.linalg.solve(A, rhs)
        worst = max(worst, _rel(solve_tridiagonal(diag, off, rhs), dense, 1e-12))
    return worst


def _model_flat(model):
    return np.concatenate([t.ravel() for t in model.param_arrays().values()])


def _set_flat(model, flat):
    i = 0
    for t in model.param_arrays().values():
        t[...] = flat[i:i + t.size].reshape(t.shape)
        i += t.size


def _grads_flat(model, grads):
    named = model.flatten_grads(grads)
    return np.concatenate([np.asarray(named[k]).ravel() for k in model.param_arrays()])


def gradient_instance(seed=0, hidden=3, channels=3, points=5, amplitude=0.03):
    """Neural CDE and series for the gradient checks.

    Hidden layers are tanh so the loss is smooth enough for finite
    differences.  ``amplitude`` is the standard deviation of the observations;
    the agreement between the continuous adjoint and the discrete map at
    step = min gap is an O(step^4) effect whose constant grows with the path
    variation per step.
    """
    rng = np.random.default_rng(seed)
    gaps = rng.uniform(0.5, 1.5, points - 1)
    times = np.concatenate([[0.0], np.cumsum(gaps)]) / gaps.sum()
    s = TimeSeries(times, amplitude * rng.normal(size=(points, channels)))
    d = channels + 1
    model = NeuralCDEModel(mlp_init([d, hidden], "tanh", "none", rng),
                           mlp_init([hidden, 8, hidden * d], "tanh", "tanh", rng),
                           mlp_init([hidden, 2], "tanh", "none", rng))
    return s, model, rng.normal(size=2)


def ncde_gradient_errors(seed=0, amplitude=0.03, fd_eps=1e-6):
    """Relative errors of adjoint and direct gradients against central finite
    differences at step = min gap, and adjoint vs direct at min gap / 4."""
    s, model, w = gradient_instance(seed, amplitude=amplitude)
    path = fit_natural_cubic(s)
    step = s.min_gap()

    def loss(m, st):
        return float(w @ neural_cde_forward(m, path, st)[0])

    theta = _model_flat(model)
    fd = np.empty_like(theta)
    probe = model.copy()
    for i in range(len(theta)):
        vals = []
        for sgn in (1, -1):
            th = theta.copy()
            th[i] += sgn * fd_eps
            _set_flat(probe, th)
            vals.append(loss(probe, step))
        fd[i] = (vals[0] - vals[1]) / (2 * fd_eps)
    g_adj = _grads_flat(model, neural_cde_backward(model, path, step, w, "adjoint"))
    g_dir = _grads_flat(model, neural_cde_backward(model, path, step, w, "direct"))
    fine = step / 4
    g_adj4 = _grads_flat(model, neural_cde_backward(model, path, fine, w, "adjoint"))
    g_dir4 = _grads_flat(model, neural_cde_backward(model, path, fine, w, "direct"))
    return {
        "adjoint_vs_fd": _rel(g_adj, fd),
        "direct_vs_fd": _rel(g_dir, fd),
        "adjoint_vs_direct_quarter_step": _rel(g_adj4, g_dir4),
    }


def t0_gradient_error(seed=0):
    """Adjoint initial-time gradient against a central difference in ``t_start``."""
    rng = np.random.default_rng(seed)
    s = random_series(rng, n_points=5, channels=2, min_gap=0.3, max_gap=0.8)
    path = fit_natural_cubic(s)
    f = mlp_init([3, 8, 3 * path.dim], "relu", "tanh", rng)
    field = OdeField(f, path)
    z0 = rng.normal(size=3)
    w = rng.normal(size=3)
    t0, t1 = path.t0 + 0.05, path.t1
    step = 1e-3
    zT = rk4_solve(field, z0, t0, t1, step).z
    res = adjoint_backward(field, zT, w, t0, t1, step, want_t0_grad=True)
    eps = 1e-5
    fd = (w @ rk4_solve(field, z0, t0 + eps, t1, step).z - w @ rk4_solve(field, z0, t0 - eps, t1, step).z) / (2 * eps)
    return abs(res.t0_bar - fd) / max(abs(fd), 1e-12)


def mlp_vjp_error(rng, trials=10):
    worst = 0.0
    eps = 1e-6
    for _ in range(trials):
        dims = [int(k) for k in rng.integers(2, 6, rng.integers(2, 5))]
        act = ["tanh", "relu"][int(rng.integers(2))]
        p = mlp_init(dims, act, ["tanh", "none"][int(rng.integers(2))], rng)
        x = rng.uniform(-1, 1, dims[0])
        yb = rng.uniform(-1, 1, dims[-1])
        _, cache = mlp_forward(p, x)
        xb, _ = mlp_vjp(p, cache, yb)
        fd = np.array([(yb @ mlp_forward(p, x + eps * e)[0] - yb @ mlp_forward(p, x - eps * e)[0]) / (2 * eps)
                       for e in np.eye(dims[0])])
        worst = max(worst, _rel(xb, fd, 1e-12))
    return worst


def direct_discrete_error(seed=0):
    """direct_backward against finite differences of the discrete RK4 map in z0."""
    rng = np.random.default_rng(seed)
    s = random_series(rng, n_points=5, channels=2, min_gap=0.3, max_gap=0.8)
    path = fit_natural_cubic(s)
    field = OdeField(mlp_init([3, 8, 3 * path.dim], "tanh", "tanh", rng), path)
    z0 = rng.normal(size=3)
    w = rng.normal(size=3)
    step = s.min_gap()
    rec = rk4_solve(field, z0, path.t0, path.t1, step, "direct")
    zb, _ = direct_backward(rec, w)
    eps = 1e-6
    fd = np.array([(w @ rk4_solve(field, z0 + eps * e, path.t0, path.t1, step).z
                    - w @ rk4_solve(field, z0 - eps * e, path.t0, path.t1, step).z) / (2 * eps)
                   for e in np.eye(3)])
    return _rel(zb, fd)


def signature_backend_error(rng, n_paths=20, N=3, grid=10_000):
    """Worst per-entry relative error between the CDE and the quadrature oracle
    over random time-augmented polylines of 2 to 4 segments."""
    worst = 0.0
    for _ in range(n_paths):
        segs = int(rng.integers(2, 5))
        v = int(rng.integers(1, 3))
        pts = rng.uniform(-1, 1, (segs + 1, v))
        times = np.concatenate([[0.0], np.cumsum(rng.uniform(0.3, 1.0, segs))])
        poly = np.column_stack([pts, times])
        path = linear_path(poly, times)
        cde = signature_cde(path, N, step=0.05).flat
        ora = signature_oracle(poly, N, grid).flat
        # entries are compared relative to the largest entry of their level so
        # that near-cancelling entries do not divide by ~0
        d = poly.shape[1]
        start = 0
        for i in range(N + 1):
            sl = slice(start, start + d ** i)
            denom = np.maximum(np.abs(ora[sl]), 1e-3 * np.max(np.abs(ora[sl])) + 1e-300)
            worst = max(worst, float(np.max(np.abs(cde[sl] - ora[sl]) / denom)))
            start += d ** i
    return worst


def factorial_error(N=4, grid=100_000):
    sig = signature_oracle([[0.0], [1.0]], N, grid)
    exact = np.array([1 / math.factorial(k) for k in range(N + 1)])
    cde = signature_cde(linear_path([[0.0], [1.0]]), N, step=0.01)
    return float(np.max(np.abs(sig.flat - exact))), float(np.max(np.abs(cde.flat - exact)))


def embedding_errors(seed=0, n_triples=20, step=0.01):
    """Worst ``pi`` and ``sigma`` errors of the ODE-in-CDE construction."""
    rng = np.random.default_rng(seed)
    worst_pi = worst_sigma = 0.0
    for _ in range(n_triples):
        v = int(rng.integers(1, 4))
        p = int(rng.integers(1, 4))
        s = random_series(rng, n_points=int(rng.integers(4, 8)), channels=v, min_gap=0.2, max_gap=0.6)
        path = fit_natural_cubic(s)
        d = path.dim
        h = mlp_init([p + d] + [int(rng.integers(3, 9))] * int(rng.integers(1, 3)) + [p], "tanh", "none", rng)
        xi = mlp_init([d] + [int(rng.integers(3, 9))] * int(rng.integers(0, 2)) + [p], "relu", "none", rng)
        f = embed_direct_ode(h, d)
        zeta = embed_initial(xi)
        bp = path.breakpoints()
        x0 = path.evaluate(path.t0)
        y0, _ = mlp_forward(xi, x0)
        direct = rk4_solve(DirectField(h, path), y0, path.t0, path.t1, step, "trajectory", bp)
        z0, _ = mlp_forward(zeta, x0)
        cde = rk4_solve(OdeField(f, path), z0, path.t0, path.t1, step, "trajectory", bp)
        for t, zc, yd in zip(cde.times, cde.states, direct.states):
            worst_pi = max(worst_pi, float(np.max(np.abs(zc[:p] - yd))))
            worst_sigma = max(worst_sigma, float(np.max(np.abs(zc[p:] - path.evaluate(t, "left")))))
    return worst_pi, worst_sigma


def reparameterization_error(seed=0, n_paths=5, step=1e-3):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_paths):
        n = int(rng.integers(3, 7))
        pts = rng.uniform(-1, 1, (n, 2))
        times = np.linspace(0.0, 1.0, n)
        f = mlp_init([3, 8, 6], "tanh", "tanh", rng)
        z0 = rng.normal(size=3)

        def terminal(tt):
            path = linear_path(pts, tt)
            return rk4_solve(OdeField(f, path), z0, path.t0, path.t1, step, breakpoints=path.breakpoints()).z

        base = terminal(times)
        # smooth increasing re-timing of [0, 1] onto [0, 2]
        phi = 2 * times + 0.3 * np.sin(np.pi * times) ** 2
        worst = max(worst, _rel(terminal(phi), base))
    return worst


def translation_error(seed=0, step=0.05):
    rng = np.random.default_rng(seed)
    s = random_series(rng, n_points=6, channels=2, min_gap=0.3, max_gap=0.8)
    shifted = s.with_values(s.values + 3.7)
    f = mlp_init([3, 8, 9], "tanh", "tanh", rng)
    z0 = rng.normal(size=3)
    ends = []
    for ser in (s, shifted):
        path = fit_natural_cubic(ser)
        ends.append(rk4_solve(OdeField(f, path), z0, path.t0, path.t1, step).z)
    return _rel(ends[1], ends[0])


def rk4_slope(steps=(0.1, 0.05, 0.025, 0.0125)):
    """Convergence slope on ``dz/dt = z (1 - z) + sin(t) z / 4`` against a
    high-resolution reference."""

    class Field:
        def forward(self, z, s, side="right"):
            return z * (1 - z) + 0.25 * math.sin(s) * z, None

    ref = rk4_solve(Field(), np.array([0.2]), 0.0, 2.0, 1e-4).z
    errs = [abs(float(rk4_solve(Field(), np.array([0.2]), 0.0, 2.0, h).z[0] - ref[0])) for h in steps]
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    return float(slope), errs


def memory_report(steps=(10, 100, 1000), seed=0, with_tracemalloc=False):
    """retained_state_count of both backward modes on a fixed model over [0, 1]."""
    rng = np.random.default_rng(seed)
    s = random_series(rng, n_points=5, channels=2)
    path = fit_natural_cubic(s)
    model = build_model("ncde", 2, 2, 4, field_width=8, field_depth=1, rng=rng)
    z0, _ = mlp_forward(model.zeta, path.evaluate(path.t0))
    field = OdeField(model.field, path)
    span = path.t1 - path.t0
    rows = []
    for n in steps:
        step = span / n
        row = {"steps": int(n)}
        for mode in ("adjoint", "direct"):
            if with_tracemalloc:
                tracemalloc.start()
            if mode == "adjoint":
                zT = rk4_solve(field, z0, path.t0, path.t1, step).z
                res = adjoint_backward(field, zT, np.ones_like(zT), path.t0, path.t1, step)
                count, taken = res.retained_state_count, res.steps
            else:
                rec = rk4_solve(field, z0, path.t0, path.t1, step, "direct")
                direct_backward(rec, np.ones_like(rec.z))
                count, taken = rec.retained_state_count, rec.steps
            row[f"{mode}_retained"] = int(count)
            row[f"{mode}_steps_taken"] = int(taken)
            if with_tracemalloc:
                row[f"{mode}_peak_bytes"] = int(tracemalloc.get_traced_memory()[1])
                tracemalloc.stop()
        rows.append(row)
    return rows


def memory_metrics(rows):
    adj = [r["adjoint_retained"] for r in rows]
    base = rows[0]
    worst = 0.0
    for r in rows[1:]:
        ratio = r["direct_retained"] / base["direct_retained"]
        expect = r["steps"] / base["steps"]
        worst = max(worst, abs(ratio / expect - 1.0))
    return float(max(adj) - min(adj)), worst


# --- suites ------------------------------------------------------------------

def suite_spline(c: _Collector):
    rng = np.random.default_rng(101)
    m = spline_checks(rng)
    c.add("spline.interpolation", m["interp"], 1e-12)
    c.add("spline.c1_continuity", m["c1"], 1e-5)
    c.add("spline.c2_continuity", m["c2"], 1e-5)
    c.add("spline.natural_boundary", m["natural"], 1e-10)
    c.add("spline.derivative_consistency", m["deriv"], 1e-6)
    c.add("spline.boundedness_ratio", m["bound_ratio"], 50.0)
    c.add("spline.tridiagonal_vs_dense", tridiagonal_dense_error(rng), 1e-9)
    line = 0.0
    for _ in range(20):
        n = int(rng.integers(2, 15))
        t = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 1.0, n - 1))])
        s = TimeSeries(t, (rng.normal() + rng.normal() * t)[:, None])
        cf = fit_natural_cubic(s, False).coeffs[0, :n - 1]
        line = max(line, float(np.max(np.abs(cf[:, 2:]))))
    c.add("spline.line_reproduction", line, 1e-12)
    s = random_series(rng, missing=0.2)
    a = fit_natural_cubic(s, False)
    b = fit_natural_cubic(s.with_values(s.values + 2.5), False)
    shift = 0.0
    for t in np.linspace(s.times[0], s.times[-1], 37):
        shift = max(shift, float(np.max(np.abs(b.evaluate(t) - a.evaluate(t) - 2.5))),
                    float(np.max(np.abs(b.derivative(t) - a.derivative(t)))),
                    float(np.max(np.abs(b.second_derivative(t) - a.second_derivative(t)))))
    c.add("spline.translation_covariance", shift, 1e-12)


def suite_gradients(c: _Collector):
    rng = np.random.default_rng(202)
    c.add("nn.vjp_vs_fd", mlp_vjp_error(rng), 1e-6)
    g = ncde_gradient_errors(0)
    c.add("ncde.adjoint_vs_fd", g["adjoint_vs_fd"], 1e-4)
    c.add("ncde.direct_vs_fd", g["direct_vs_fd"], 1e-4)
    c.add("ncde.adjoint_vs_direct_quarter_step", g["adjoint_vs_direct_quarter_step"], 1e-5)
    c.add("cdeint.direct_exact_discrete", direct_discrete_error(1), 1e-7)
    c.add("cdeint.t0_gradient_vs_fd", t0_gradient_error(2), 1e-4)
    logits = rng.uniform(-700, 700, (50, 3))
    finite = all(np.isfinite(cross_entropy(lg, int(k))[0]) for lg, k in zip(logits, rng.integers(0, 3, 50)))
    c.add("train.cross_entropy_finite", 0.0 if finite else 1.0, 0.0)


def suite_signature(c: _Collector):
    rng = np.random.default_rng(303)
    c.add("signature.cde_vs_oracle", signature_backend_error(rng), 1e-5)
    o, d = factorial_error()
    c.add("signature.oracle_inverse_factorials", o, 1e-4)
    c.add("signature.cde_inverse_factorials", d, 1e-4)
    pts = rng.uniform(-1, 1, (4, 2))
    path = linear_path(pts)
    sig = signature_cde(path, 3, 0.05)
    c.add("signature.level1_increment", _rel(sig.level(1), pts[-1] - pts[0]), 1e-10)
    c.add("signature.unit_level0", abs(sig.flat[0] - 1.0), 0.0)
    scaled = signature_cde(linear_path(2.0 * pts), 3, 0.05)
    c.add("signature.scaling", max(_rel(scaled.level(i), 2.0 ** i * sig.level(i)) for i in range(1, 4)), 1e-6)
    y, b = rng.normal(size=5), rng.normal(size=3)
    loop = np.array([b[j] * y[k] for j in range(3) for k in range(5)])
    c.add("signature.M_layout", float(np.max(np.abs(build_M(y, 3) @ b - loop))), 0.0)
    c.add("signature.kappa", abs(kappa(3, 2) - 40), 0.0)


def suite_embedding(c: _Collector):
    pi, sigma = embedding_errors(0)
    c.add("embedding.projection", pi, 1e-6)
    c.add("embedding.copy", sigma, 1e-8)
    rng = np.random.default_rng(404)
    gd = build_model("grudt", 2, 3, 5, rng=rng)
    orn = build_model("odernn", 2, 3, 5, rng=rng)
    orn = ODERNNModel(gd.cell, orn.ode, gd.readout)
    for W in orn.ode.weights:
        W[...] = 0.0
    for b_ in orn.ode.biases:
        b_[...] = 0.0
    batch = RecurrentBatch(rng.normal(size=(4, 6, 2)),
                           np.column_stack([np.zeros(4), rng.uniform(0.1, 1.0, (4, 5))]))
    diff = np.max(np.abs(gru_dt_forward(gd, batch)[0] - ode_rnn_forward(orn, batch, 0.1)[0]))
    c.add("models.odernn_zero_field_is_grudt", float(diff), 0.0)
    m = build_model("ncde", 2, 2, 4, field_width=8, field_depth=1, rng=rng)
    s = random_series(rng, n_points=6, channels=2)
    big = 0.0
    for _ in range(5):
        z = rng.normal(scale=3, size=(10, 4))
        big = max(big, float(np.max(np.abs(mlp_forward(m.field, z)[0]))))
    c.add("models.field_tanh_bound", big, np.nextafter(1.0, 0.0))
    m.field.weights[-1][...] = 0.0
    m.field.biases[-1][...] = 0.0
    s2 = s.with_values(s.values + np.array([[0.5, 0.0]] + [[0.0, 0.0]] * (len(s) - 1)))
    la = neural_cde_forward(m, fit_natural_cubic(s), 0.1)[0]
    lb = neural_cde_forward(m, fit_natural_cubic(s2), 0.1)[0]
    c.add("models.initial_condition_dependence", float(np.max(np.abs(la - lb))), 1e-9, upper=False)


def suite_invariance(c: _Collector):
    c.add("cdeint.reparameterization", reparameterization_error(0), 1e-4)
    c.add("cdeint.translation", translation_error(0), 1e-12)
    rng = np.random.default_rng(505)
    samples = [random_series(rng, n_points=8, channels=3) for _ in range(10)]
    ts = TimeSeriesSet(tuple(TimeSeries(s.times, s.values, 0) for s in samples), 3, 1)
    once, stats = normalize(ts)
    twice, _ = normalize(ts, stats)
    idem = max(float(np.max(np.abs(a.values.data - b.values.data))) for a, b in zip(once, twice))
    c.add("timeseries.normalize_idempotent", idem, 1e-12)
    endpoints = 0.0
    for s in samples:
        d = drop_observations(s, 0.7, rng)
        ok = d.times[0] == s.times[0] and d.times[-1] == s.times[-1] and set(d.times) <= set(s.times)
        endpoints = max(endpoints, 0.0 if ok else 1.0)
    c.add("timeseries.drop_keeps_endpoints", endpoints, 0.0)
    a = drop_observations(samples[0], 0.5, np.random.default_rng(9))
    b = drop_observations(samples[0], 0.5, np.random.default_rng(9))
    c.add("timeseries.drop_reproducible", float(not np.array_equal(a.times, b.times)), 0.0)


def suite_rk4(c: _Collector):
    slope, _ = rk4_slope()
    c.add("cdeint.rk4_order_deviation", abs(slope - 4.0), 0.3)


def suite_memory(c: _Collector):
    spread, linear = memory_metrics(memory_report())
    c.add("cdeint.adjoint_retained_constant", spread, 0.0)
    c.add("cdeint.direct_retained_linear", linear, 0.10)


_SUITE_FNS = {
    "spline": suite_spline, "gradients": suite_gradients, "signature": suite_signature,
    "embedding": suite_embedding, "invariance": suite_invariance, "rk4": suite_rk4, "memory": suite_memory,
}


def run(suite="all", tolerance_scale=1.0) -> dict:
    names = SUITES if suite == "all" else (suite,)
    for n in names:
        if n not in _SUITE_FNS:
            raise ValueError(f"unknown suite {n!r}; choose from {SUITES + ('all',)}")
    col = _Collector(tolerance_scale)
    start = time.perf_counter()
    for n in names:
        _SUITE_FNS[n](col)
    checks = [asdict(ch) for ch in col.checks]
    return {
        "suite": suite,
        "tolerance_scale": tolerance_scale,
        "passed": all(ch["passed"] for ch in checks),
        "seconds": time.perf_counter() - start,
        "checks": checks,
    }
