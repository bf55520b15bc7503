import math

import numpy as np
import pytest

from cdeflow.cdeint import OdeField, adjoint_backward, direct_backward, rk4_solve, time_grid
from cdeflow.errors import ModeError, NumericalBlowup
from cdeflow.nn import MLPParams, mlp_forward, mlp_init
from cdeflow.signature import linear_path
from cdeflow.spline import fit_natural_cubic
from cdeflow.timeseries import TimeSeries


def time_only_path(t0=0.0, t1=1.0):
    return linear_path([[t0], [t1]], [t0, t1])


def linear_field(theta):
    """dz/ds = theta * z driven by the identity path."""
    return OdeField(MLPParams([np.array([[theta]])], [np.zeros(1)]), time_only_path())


def small_instance(seed=0):
    rng = np.random.default_rng(seed)
    s = TimeSeries(np.array([0.0, 0.3, 0.55, 1.0]), 0.5 * rng.normal(size=(4, 2)))
    path = fit_natural_cubic(s)
    f = mlp_init([3, 6, 3 * path.dim], "tanh", "tanh", rng)
    return OdeField(f, path), rng.normal(size=3), rng.normal(size=3)


def test_time_grid_lands_on_breakpoints():
    g = time_grid(0.0, 1.0, 0.3, breakpoints=[0.5])
    assert g[0] == 0.0 and g[-1] == 1.0 and 0.5 in g
    assert np.all(np.diff(g) <= 0.3 + 1e-15)


def test_field_matches_loop_oracle():
    field, z, _ = small_instance(1)
    g, _ = field.forward(z, 0.4)
    F, _ = mlp_forward(field.f, z)
    dX = field.path.derivative(0.4)
    w, d = 3, field.path.dim
    oracle = [sum(F[i * d + j] * dX[j] for j in range(d)) for i in range(w)]
    assert np.allclose(g, oracle, atol=1e-15)


def test_zero_field_is_constant():
    p = MLPParams([np.zeros((4, 2))], [np.zeros(4)])
    rec = rk4_solve(OdeField(p, linear_path([[0.0, 0.0], [1.0, 1.0]], [0.0, 1.0])), np.array([1.0, 2.0]), 0, 1, 0.1)
    assert rec.z.tolist() == [1.0, 2.0]


def test_unit_field_on_time_path():
    p = MLPParams([np.zeros((1, 1))], [np.ones(1)])
    rec = rk4_solve(OdeField(p, time_only_path(0.0, 2.0)), np.array([0.5]), 0.0, 2.0, 0.25)
    assert rec.z[0] == pytest.approx(2.5, abs=1e-14)


def test_exponential():
    rec = rk4_solve(linear_field(1.0), np.array([1.0]), 0.0, 1.0, 0.01)
    assert abs(rec.z[0] - math.e) <= 1e-8


def test_adjoint_exponential_sensitivities():
    field = linear_field(1.0)
    zT = rk4_solve(field, np.array([1.0]), 0.0, 1.0, 0.01).z
    res = adjoint_backward(field, zT, np.array([1.0]), 0.0, 1.0, 0.01, want_t0_grad=True)
    assert abs(res.z0_bar[0] - math.e) <= 1e-5
    assert abs(res.theta_bar.weights[0][0, 0] - math.e) <= 1e-5
    # moving the start later with z0 fixed shortens the growth: dL/dt0 = -e
    assert abs(res.t0_bar + math.e) <= 1e-5


def test_zero_field_adjoint_and_direct():
    p = MLPParams([np.zeros((4, 2))], [np.zeros(4)])
    field = OdeField(p, linear_path([[0.0, 0.0], [1.0, 1.0]], [0.0, 1.0]))
    lg = np.array([0.3, -0.7])
    res = adjoint_backward(field, np.zeros(2), lg, 0.0, 1.0, 0.1)
    assert np.array_equal(res.z0_bar, lg)
    # z stays at 0, so the weight gradient vanishes; the bias gradient is
    # a (x) (X_T - X_0) with a constant
    assert np.all(res.theta_bar.weights[0] == 0)
    assert np.allclose(res.theta_bar.biases[0], np.outer(lg, [1.0, 1.0]).ravel(), atol=1e-14)
    rec = rk4_solve(field, np.zeros(2), 0.0, 1.0, 0.1, "direct")
    zb, _ = direct_backward(rec, lg)
    assert np.array_equal(zb, lg)


def _fd_theta(field, z0, w, step, eps=1e-6):
    out = []
    for t in field.f.tensors():
        g = np.zeros_like(t)
        for idx in np.ndindex(t.shape):
            old = t[idx]
            t[idx] = old + eps
            hi = w @ rk4_solve(field, z0, field.path.t0, field.path.t1, step).z
            t[idx] = old - eps
            lo = w @ rk4_solve(field, z0, field.path.t0, field.path.t1, step).z
            t[idx] = old
            g[idx] = (hi - lo) / (2 * eps)
        out.append(g)
    return np.concatenate([g.ravel() for g in out])


def test_direct_is_exact_for_discrete_map():
    field, z0, w = small_instance(2)
    step = 0.1
    rec = rk4_solve(field, z0, 0.0, 1.0, step, "direct")
    zb, g = direct_backward(rec, w)
    fd = _fd_theta(field, z0, w, step)
    got = np.concatenate([t.ravel() for t in g.tensors()])
    assert np.max(np.abs(got - fd)) <= 1e-7 * max(1.0, np.max(np.abs(fd)))


def test_adjoint_matches_finite_differences():
    field, z0, w = small_instance(3)
    step = 0.01
    zT = rk4_solve(field, z0, 0.0, 1.0, step).z
    res = adjoint_backward(field, zT, w, 0.0, 1.0, step)
    fd = _fd_theta(field, z0, w, step)
    got = np.concatenate([t.ravel() for t in res.theta_bar.tensors()])
    assert np.max(np.abs(got - fd)) <= 1e-4 * np.max(np.abs(fd))


def test_adjoint_converges_to_direct():
    field, z0, w = small_instance(4)
    errs = []
    for step in (0.2, 0.1, 0.05):
        rec = rk4_solve(field, z0, 0.0, 1.0, step, "direct")
        zd, _ = direct_backward(rec, w)
        za = adjoint_backward(field, rec.z, w, 0.0, 1.0, step).z0_bar
        errs.append(np.max(np.abs(za - zd)))
    assert errs[0] > errs[1] > errs[2]


def test_t0_gradient_matches_closed_form_term():
    field, z0, w = small_instance(5)
    step = 1e-3
    zT = rk4_solve(field, z0, 0.0, 1.0, step).z
    res = adjoint_backward(field, zT, w, 0.0, 1.0, step, want_t0_grad=True)
    # dL/dt0 = -a(t0) . g(z0, t0) with a(t0) the adjoint at the start
    g0, _ = field.forward(z0, 0.0)
    assert res.t0_bar == pytest.approx(-res.z0_bar @ g0, rel=1e-6)


def test_memory_contract_counts():
    field, z0, _ = small_instance(6)
    adj, direct = [], []
    for n in (10, 100, 1000):
        rec = rk4_solve(field, z0, 0.0, 1.0, 1.0 / n)
        adj.append(adjoint_backward(field, rec.z, np.ones(3), 0.0, 1.0, 1.0 / n).retained_state_count)
        direct.append(rk4_solve(field, z0, 0.0, 1.0, 1.0 / n, "direct").retained_state_count)
    assert len(set(adj)) == 1
    assert abs(direct[2] / direct[0] / 100 - 1) <= 0.1


def test_direct_backward_needs_direct_record():
    field, z0, _ = small_instance(7)
    with pytest.raises(ModeError):
        direct_backward(rk4_solve(field, z0, 0.0, 1.0, 0.1), np.ones(3))
    with pytest.raises(ModeError):
        rk4_solve(field, z0, 0.0, 1.0, 0.1, "everything")


def test_blowup_reports_time():
    class Squared:
        n_params = 0
        def forward(self, z, s, side="right"):
            return z * z, None
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericalBlowup) as info:
        rk4_solve(Squared(), np.array([10.0]), 0.0, 10.0, 0.5)
    assert 0.0 < info.value.time <= 10.0


def test_order_four_slope():
    class Logistic:
        def forward(self, z, s, side="right"):
            return z * (1 - z), None
    exact = lambda t: 1 / (1 + 4 * math.exp(-t))
    steps = [0.1, 0.05, 0.025, 0.0125]
    errs = [abs(rk4_solve(Logistic(), np.array([0.2]), 0.0, 2.0, h).z[0] - exact(2.0)) for h in steps]
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert abs(slope - 4) <= 0.3
