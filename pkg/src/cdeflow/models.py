"""Neural CDE classifier, the baselines it is compared with, and the exact
embedding of data-driven ODEs ``dy = h(y, X_s) ds`` into a CDE.

Every model works on batches.  Path-driven models (``ncde``, ``gruode``,
``directode``) take a stacked :class:`SplinePath`; recurrent models
(``grudt``, ``odernn``) take observation arrays of shape ``(B, L, channels)``
together with the time gaps ``(B, L)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cdeint import AdjointResult, OdeField, adjoint_backward, direct_backward, rk4_solve
from .errors import ModeError, ShapeError
from .nn import (MLPParams, ParamGrads, flatten_tensors, mlp_forward, mlp_from_dict, mlp_init,
                 mlp_to_dict, mlp_vjp, unflatten_like)
from .spline import SplinePath, fit_natural_cubic
from .timeseries import TimeSeries

MODEL_KINDS = ("ncde", "gruode", "grudt", "odernn", "directode")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --- GRU cells ---------------------------------------------------------------

@dataclass
class GRUCell:
    """Standard GRU: gates ordered (reset, update, candidate)."""

    w_in: np.ndarray  # (3H, I)
    w_hid: np.ndarray  # (3H, H)
    b_in: np.ndarray
    b_hid: np.ndarray

    @classmethod
    def init(cls, input_dim, hidden, rng):
        rng = np.random.default_rng(rng)
        k = 1.0 / math.sqrt(hidden)
        return cls(rng.uniform(-k, k, (3 * hidden, input_dim)), rng.uniform(-k, k, (3 * hidden, hidden)),
                   rng.uniform(-k, k, 3 * hidden), rng.uniform(-k, k, 3 * hidden))

    @property
    def hidden(self):
        return self.w_hid.shape[1]

    def tensors(self):
        return [self.w_in, self.w_hid, self.b_in, self.b_hid]

    def copy(self):
        return GRUCell(*(t.copy() for t in self.tensors()))

    def to_dict(self):
        return {"type": "gru", "shapes": [list(t.shape) for t in self.tensors()],
                "data": [t.ravel().tolist() for t in self.tensors()]}


def gru_forward(cell: GRUCell, x, h):
    H = cell.hidden
    gi = x @ cell.w_in.T + cell.b_in
    gh = h @ cell.w_hid.T + cell.b_hid
    r = _sigmoid(gi[..., :H] + gh[..., :H])
    u = _sigmoid(gi[..., H:2 * H] + gh[..., H:2 * H])
    nh = gh[..., 2 * H:]
    n = np.tanh(gi[..., 2 * H:] + r * nh)
    h_new = (1.0 - u) * n + u * h
    return h_new, (x, h, r, u, n, nh)


def gru_vjp(cell: GRUCell, cache, h_bar):
    x, h, r, u, n, nh = cache
    n_bar = h_bar * (1.0 - u)
    u_pre = h_bar * (h - n) * u * (1.0 - u)
    hb = h_bar * u
    n_pre = n_bar * (1.0 - n * n)
    r_pre = n_pre * nh * r * (1.0 - r)
    gi_bar = np.concatenate([r_pre, u_pre, n_pre], axis=-1)
    gh_bar = np.concatenate([r_pre, u_pre, n_pre * r], axis=-1)
    x_bar = gi_bar @ cell.w_in
    hb = hb + gh_bar @ cell.w_hid
    if gi_bar.ndim == 1:
        grads = [np.outer(gi_bar, x), np.outer(gh_bar, h), gi_bar, gh_bar]
    else:
        grads = [gi_bar.T @ x, gh_bar.T @ h, gi_bar.sum(0), gh_bar.sum(0)]
    return x_bar, hb, grads


@dataclass
class GRUODECell:
    """Continuous GRU: ``dh/dt = (1 - u) * (g - h)`` with gates read from the
    control value ``x`` and ``g = tanh(W_x x + W_h (r * h) + b)``."""

    w_x: np.ndarray  # (3H, D)
    w_h: np.ndarray  # (3H, H)
    b: np.ndarray

    @classmethod
    def init(cls, input_dim, hidden, rng):
        rng = np.random.default_rng(rng)
        k = 1.0 / math.sqrt(hidden)
        return cls(rng.uniform(-k, k, (3 * hidden, input_dim)), rng.uniform(-k, k, (3 * hidden, hidden)),
                   rng.uniform(-k, k, 3 * hidden))

    @property
    def hidden(self):
        return self.w_h.shape[1]

    def tensors(self):
        return [self.w_x, self.w_h, self.b]

    def copy(self):
        return GRUODECell(*(t.copy() for t in self.tensors()))

    def to_dict(self):
        return {"type": "gruode", "shapes": [list(t.shape) for t in self.tensors()],
                "data": [t.ravel().tolist() for t in self.tensors()]}


def _cell_from_dict(d):
    arrays = [np.array(a, dtype=float).reshape(s) for a, s in zip(d["data"], d["shapes"])]
    return GRUCell(*arrays) if d["type"] == "gru" else GRUODECell(*arrays)


# --- vector fields -----------------------------------------------------------

class DirectField:
    """``g(z, s) = h(concat(z, X_s))`` with an MLP ``h``."""

    def __init__(self, h_params: MLPParams, path: SplinePath):
        self.width = h_params.out_dim
        if h_params.in_dim != self.width + path.dim:
            raise ShapeError(f"h input {h_params.in_dim} != state {self.width} + path {path.dim}")
        self.h = h_params
        self.path = path
        self.n_params = h_params.n_params

    def forward(self, z, s, side="right"):
        x = self.path.evaluate(s, side)
        x = np.broadcast_to(x, z.shape[:-1] + x.shape[-1:])
        y, cache = mlp_forward(self.h, np.concatenate([z, x], axis=-1))
        return y, cache

    def vjp(self, cache, a):
        xb, pg = mlp_vjp(self.h, cache, a)
        return xb[..., :self.width], flatten_tensors(pg.tensors())

    def time_vjp(self, cache, a):
        raise NotImplementedError("initial-time gradients are only defined for CDE fields")

    def grads(self, flat):
        ts = unflatten_like(flat, self.h.tensors())
        return ParamGrads(ts[0::2], ts[1::2])


class GRUODEField:
    def __init__(self, cell: GRUODECell, path: SplinePath):
        if cell.w_x.shape[1] != path.dim:
            raise ShapeError("GRU-ODE input size does not match path dim")
        self.cell = cell
        self.path = path
        self.n_params = sum(t.size for t in cell.tensors())

    def forward(self, h, s, side="right"):
        c = self.cell
        H = c.hidden
        x = self.path.evaluate(s, side)
        gx = x @ c.w_x.T + c.b
        gh = h @ c.w_h[:2 * H].T
        r = _sigmoid(gx[..., :H] + gh[..., :H])
        u = _sigmoid(gx[..., H:2 * H] + gh[..., H:])
        rh = r * h
        g = np.tanh(gx[..., 2 * H:] + rh @ c.w_h[2 * H:].T)
        return (1.0 - u) * (g - h), (x, h, r, u, rh, g)

    def vjp(self, cache, a):
        c = self.cell
        H = c.hidden
        x, h, r, u, rh, g = cache
        g_bar = a * (1.0 - u)
        u_pre = -a * (g - h) * u * (1.0 - u)
        h_bar = -a * (1.0 - u)
        n_pre = g_bar * (1.0 - g * g)
        rh_bar = n_pre @ c.w_h[2 * H:]
        r_pre = rh_bar * h * r * (1.0 - r)
        h_bar = h_bar + rh_bar * r
        ru_pre = np.concatenate([r_pre, u_pre], axis=-1)
        h_bar = h_bar + ru_pre @ c.w_h[:2 * H]
        gx_bar = np.concatenate([ru_pre, n_pre], axis=-1)
        xb = np.broadcast_to(x, h.shape[:-1] + x.shape[-1:])
        if a.ndim == 1:
            gw_x = np.outer(gx_bar, xb)
            gw_h = np.concatenate([np.outer(ru_pre, h), np.outer(n_pre, rh)])
            gb = gx_bar
        else:
            gw_x = gx_bar.T @ xb
            gw_h = np.concatenate([ru_pre.T @ h, n_pre.T @ rh])
            gb = gx_bar.sum(0)
        return h_bar, flatten_tensors([gw_x, gw_h, gb])

    def time_vjp(self, cache, a):
        raise NotImplementedError("initial-time gradients are only defined for CDE fields")

    def grads(self, flat):
        return unflatten_like(flat, self.cell.tensors())


class ScaledField:
    """Autonomous MLP field time-rescaled per batch row: ``g(z) = scale * f(z)``.

    Solving over ``u in [0, 1]`` with scale ``dt`` is the same ODE as solving
    ``dz/dt = f(z)`` over a gap of length ``dt``.
    """

    def __init__(self, f_params: MLPParams, scale):
        self.f = f_params
        self.scale = np.asarray(scale, dtype=float)
        self.n_params = f_params.n_params

    def forward(self, z, s, side="right"):
        y, cache = mlp_forward(self.f, z)
        return self.scale[..., None] * y, cache

    def vjp(self, cache, a):
        xb, pg = mlp_vjp(self.f, cache, self.scale[..., None] * a)
        return xb, flatten_tensors(pg.tensors())

    def time_vjp(self, cache, a):
        return np.zeros(a.shape[:-1])

    def grads(self, flat):
        ts = unflatten_like(flat, self.f.tensors())
        return ParamGrads(ts[0::2], ts[1::2])


# --- models ------------------------------------------------------------------

def _component_tensors(comp):
    return comp.tensors()


class Model:
    """Shared plumbing: named parameter arrays, checkpoints, parameter counts."""

    kind = ""
    uses_path = True
    readout_names = ("readout",)
    decay_names: tuple = ()

    def components(self) -> dict:
        raise NotImplementedError

    def param_arrays(self) -> dict:
        out = {}
        for name, comp in self.components().items():
            for j, t in enumerate(_component_tensors(comp)):
                out[f"{name}.{j}"] = t
        return out

    def flatten_grads(self, grads: dict) -> dict:
        out = {}
        for name, g in grads.items():
            ts = g.tensors() if hasattr(g, "tensors") else g
            for j, t in enumerate(ts):
                out[f"{name}.{j}"] = t
        return out

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.param_arrays().values())

    def copy(self):
        new = object.__new__(type(self))
        new.__dict__.update({k: (v.copy() if hasattr(v, "copy") else v) for k, v in self.__dict__.items()})
        return new

    def to_dict(self) -> dict:
        comps = {}
        for name, c in self.components().items():
            comps[name] = mlp_to_dict(c) if isinstance(c, MLPParams) else c.to_dict()
        return {"version": 1, "kind": self.kind, "components": comps}

    def prepare(self, series: TimeSeries):
        raise NotImplementedError

    def collate(self, prepared):
        raise NotImplementedError


@dataclass
class NeuralCDEModel(Model):
    zeta: MLPParams
    field: MLPParams
    readout: MLPParams
    kind = "ncde"

    def __post_init__(self):
        w = self.field.in_dim
        d = self.zeta.in_dim
        if self.zeta.out_dim != w or self.readout.in_dim != w or self.field.out_dim != w * d:
            raise ShapeError("inconsistent Neural CDE dimensions")

    decay_names = ("field",)

    @property
    def hidden(self):
        return self.field.in_dim

    def components(self):
        return {"zeta": self.zeta, "field": self.field, "readout": self.readout}

    def prepare(self, series):
        return fit_natural_cubic(series)

    def collate(self, prepared):
        return SplinePath.stack(prepared)

    def logits(self, batch, step):
        return neural_cde_forward(self, batch, step)[0]

    def grads(self, batch, step, logits_bar, mode="adjoint"):
        return neural_cde_backward(self, batch, step, logits_bar, mode)


def neural_cde_forward(model: NeuralCDEModel, path: SplinePath, step, record_mode="terminal",
                       breakpoints=None):
    if path.dim != model.zeta.in_dim:
        raise ShapeError(f"path dim {path.dim} != model input {model.zeta.in_dim}")
    z0, _ = mlp_forward(model.zeta, path.evaluate(path.t0))
    rec = rk4_solve(OdeField(model.field, path), z0, path.t0, path.t1, step, record_mode, breakpoints)
    logits, _ = mlp_forward(model.readout, rec.z)
    return logits, rec


def neural_cde_backward(model: NeuralCDEModel, path: SplinePath, step, loss_grad, mode="adjoint",
                        breakpoints=None) -> dict:
    """Gradients of ``loss_grad . logits`` for every component."""
    if mode not in ("adjoint", "direct"):
        raise ModeError(f"unknown backward mode {mode!r}")
    x0 = path.evaluate(path.t0)
    z0, zc = mlp_forward(model.zeta, x0)
    field = OdeField(model.field, path)
    rec = rk4_solve(field, z0, path.t0, path.t1, step, "direct" if mode == "direct" else "terminal",
                    breakpoints)
    _, rc = mlp_forward(model.readout, rec.z)
    zT_bar, g_readout = mlp_vjp(model.readout, rc, np.asarray(loss_grad, dtype=float))
    if mode == "adjoint":
        res: AdjointResult = adjoint_backward(field, rec.z, zT_bar, path.t0, path.t1, step,
                                              breakpoints=breakpoints)
        z0_bar, g_field = res.z0_bar, res.theta_bar
    else:
        z0_bar, g_field = direct_backward(rec, zT_bar)
    _, g_zeta = mlp_vjp(model.zeta, zc, z0_bar)
    return {"zeta": g_zeta, "field": g_field, "readout": g_readout}


@dataclass
class DirectOdeModel(Model):
    """``dz/ds = h(z, X_s)``; ``h`` is an MLP on ``concat(z, X_s)`` or a GRU-ODE cell."""

    zeta: MLPParams
    h: MLPParams | GRUODECell
    readout: MLPParams

    decay_names = ("h",)

    @property
    def kind(self):
        return "gruode" if isinstance(self.h, GRUODECell) else "directode"

    def components(self):
        return {"zeta": self.zeta, "h": self.h, "readout": self.readout}

    def make_field(self, path):
        if isinstance(self.h, GRUODECell):
            return GRUODEField(self.h, path)
        return DirectField(self.h, path)

    def prepare(self, series):
        return fit_natural_cubic(series)

    def collate(self, prepared):
        return SplinePath.stack(prepared)

    def logits(self, batch, step):
        return direct_ode_forward(self, batch, step)[0]

    def grads(self, batch, step, logits_bar, mode="adjoint"):
        x0 = batch.evaluate(batch.t0)
        z0, zc = mlp_forward(self.zeta, x0)
        field = self.make_field(batch)
        rec = rk4_solve(field, z0, batch.t0, batch.t1, step, "direct" if mode == "direct" else "terminal")
        _, rc = mlp_forward(self.readout, rec.z)
        zT_bar, g_readout = mlp_vjp(self.readout, rc, np.asarray(logits_bar, dtype=float))
        if mode == "direct":
            z0_bar, g_h = direct_backward(rec, zT_bar)
        else:
            res = adjoint_backward(field, rec.z, zT_bar, batch.t0, batch.t1, step)
            z0_bar, g_h = res.z0_bar, res.theta_bar
        _, g_zeta = mlp_vjp(self.zeta, zc, z0_bar)
        return {"zeta": g_zeta, "h": g_h, "readout": g_readout}


def direct_ode_forward(model: DirectOdeModel, path: SplinePath, step, record_mode="terminal",
                       breakpoints=None):
    z0, _ = mlp_forward(model.zeta, path.evaluate(path.t0))
    rec = rk4_solve(model.make_field(path), z0, path.t0, path.t1, step, record_mode, breakpoints)
    logits, _ = mlp_forward(model.readout, rec.z)
    return logits, rec


@dataclass
class RecurrentBatch:
    x: np.ndarray  # (B, L, channels) observations, gaps filled from the spline
    dt: np.ndarray  # (B, L), dt[:, 0] == 0


def filled_observations(series: TimeSeries) -> np.ndarray:
    """Observation matrix with missing cells read off each channel's spline."""
    data = np.array(series.values.data, dtype=float)
    obs = series.observed
    if obs.all():
        return data
    path = fit_natural_cubic(series, time_channel=False)
    for i, t in enumerate(series.times):
        if not obs[i].all():
            data[i, ~obs[i]] = path.evaluate(t)[~obs[i]]
    return data


class _RecurrentModel(Model):
    uses_path = False

    def prepare(self, series):
        dt = np.concatenate([[0.0], np.diff(series.times)])
        return filled_observations(series), dt

    def collate(self, prepared):
        lengths = {len(dt) for _, dt in prepared}
        if len(lengths) != 1:
            raise ShapeError("recurrent batches need equal-length series")
        return RecurrentBatch(np.stack([x for x, _ in prepared]), np.stack([dt for _, dt in prepared]))


@dataclass
class GRUDtModel(_RecurrentModel):
    cell: GRUCell
    readout: MLPParams
    kind = "grudt"
    decay_names = ("cell",)

    def components(self):
        return {"cell": self.cell, "readout": self.readout}

    def _inputs(self, batch, i):
        return np.concatenate([batch.x[:, i], batch.dt[:, i, None]], axis=-1)

    def logits(self, batch, step=None):
        return gru_dt_forward(self, batch)[0]

    def grads(self, batch, step, logits_bar, mode=None):
        hT, caches = gru_dt_forward(self, batch)[1:]
        _, rc = mlp_forward(self.readout, hT)
        h_bar, g_readout = mlp_vjp(self.readout, rc, logits_bar)
        gc = [np.zeros_like(t) for t in self.cell.tensors()]
        for cache in reversed(caches):
            _, h_bar, g = gru_vjp(self.cell, cache, h_bar)
            gc = [a + b for a, b in zip(gc, g)]
        return {"cell": gc, "readout": g_readout}


def gru_dt_forward(model: GRUDtModel, batch: RecurrentBatch):
    B = batch.x.shape[0]
    h = np.zeros((B, model.cell.hidden))
    caches = []
    for i in range(batch.x.shape[1]):
        h, cache = gru_forward(model.cell, model._inputs(batch, i), h)
        caches.append(cache)
    logits, _ = mlp_forward(model.readout, h)
    return logits, h, caches


@dataclass
class ODERNNModel(_RecurrentModel):
    cell: GRUCell
    ode: MLPParams
    readout: MLPParams
    kind = "odernn"
    decay_names = ("cell", "ode")

    def components(self):
        return {"cell": self.cell, "ode": self.ode, "readout": self.readout}

    _inputs = GRUDtModel._inputs

    def logits(self, batch, step):
        return ode_rnn_forward(self, batch, step)[0]

    def grads(self, batch, step, logits_bar, mode=None):
        _, hT, trace = ode_rnn_forward(self, batch, step)
        _, rc = mlp_forward(self.readout, hT)
        h_bar, g_readout = mlp_vjp(self.readout, rc, logits_bar)
        gc = [np.zeros_like(t) for t in self.cell.tensors()]
        g_ode = np.zeros(self.ode.n_params)
        for cache, ode_leg in reversed(trace):
            _, h_bar, g = gru_vjp(self.cell, cache, h_bar)
            gc = [a + b for a, b in zip(gc, g)]
            if ode_leg is not None:
                field, h_end, n_sub = ode_leg
                res = adjoint_backward(field, h_end, h_bar, 0.0, 1.0, 1.0 / n_sub)
                h_bar = res.z0_bar
                g_ode += flatten_tensors(res.theta_bar.tensors())
        ts = unflatten_like(g_ode, self.ode.tensors())
        return {"cell": gc, "ode": ParamGrads(ts[0::2], ts[1::2]), "readout": g_readout}


def ode_rnn_forward(model: ODERNNModel, batch: RecurrentBatch, step):
    """GRU updates at observations; between them the hidden state follows
    ``dh/dt = f(h)`` solved with RK4 at a step no larger than ``step``."""
    B = batch.x.shape[0]
    h = np.zeros((B, model.cell.hidden))
    trace = []
    for i in range(batch.x.shape[1]):
        leg = None
        if i > 0:
            gap = batch.dt[:, i]
            n_sub = max(1, math.ceil(float(gap.max()) / step - 1e-9))
            field = ScaledField(model.ode, gap)
            h = rk4_solve(field, h, 0.0, 1.0, 1.0 / n_sub).z
            leg = (field, h, n_sub)
        h, cache = gru_forward(model.cell, model._inputs(batch, i), h)
        trace.append((cache, leg))
    logits, _ = mlp_forward(model.readout, h)
    return logits, h, trace


# --- construction ------------------------------------------------------------

def build_model(kind, input_channels, class_count, hidden, field_width=32, field_depth=2, rng=None) -> Model:
    """``input_channels`` counts data (and intensity) channels, excluding time."""
    rng = np.random.default_rng(rng)
    d = input_channels + 1
    readout = mlp_init([hidden, class_count], "relu", "none", rng)
    if kind == "ncde":
        zeta = mlp_init([d, hidden], "relu", "none", rng)
        field = mlp_init([hidden] + [field_width] * field_depth + [hidden * d], "relu", "tanh", rng)
        return NeuralCDEModel(zeta, field, readout)
    if kind == "directode":
        zeta = mlp_init([d, hidden], "relu", "none", rng)
        h = mlp_init([hidden + d] + [field_width] * field_depth + [hidden], "relu", "tanh", rng)
        return DirectOdeModel(zeta, h, readout)
    if kind == "gruode":
        zeta = mlp_init([d, hidden], "relu", "none", rng)
        return DirectOdeModel(zeta, GRUODECell.init(d, hidden, rng), readout)
    if kind == "grudt":
        return GRUDtModel(GRUCell.init(input_channels + 1, hidden, rng), readout)
    if kind == "odernn":
        cell = GRUCell.init(input_channels + 1, hidden, rng)
        ode = mlp_init([hidden] + [field_width] * field_depth + [hidden], "tanh", "none", rng)
        return ODERNNModel(cell, ode, readout)
    raise ValueError(f"unknown model kind {kind!r}")


def param_count(kind, input_channels, class_count, hidden, field_width=32, field_depth=2) -> int:
    return build_model(kind, input_channels, class_count, hidden, field_width, field_depth, 0).n_params


def match_hidden(kind, target, input_channels, class_count, field_width=32, field_depth=2, max_hidden=256) -> int:
    """Hidden size whose parameter count is closest to ``target``."""
    best = min(range(1, max_hidden + 1),
               key=lambda h: (abs(param_count(kind, input_channels, class_count, h, field_width, field_depth)
                                  - target), h))
    return best


def model_from_dict(d: dict) -> Model:
    if d.get("version") != 1:
        raise ValueError("unsupported model checkpoint version")
    comps = {}
    for name, c in d["components"].items():
        comps[name] = _cell_from_dict(c) if c.get("type") in ("gru", "gruode") else mlp_from_dict(c)
    kind = d["kind"]
    if kind == "ncde":
        return NeuralCDEModel(comps["zeta"], comps["field"], comps["readout"])
    if kind in ("gruode", "directode"):
        return DirectOdeModel(comps["zeta"], comps["h"], comps["readout"])
    if kind == "grudt":
        return GRUDtModel(comps["cell"], comps["readout"])
    if kind == "odernn":
        return ODERNNModel(comps["cell"], comps["ode"], comps["readout"])
    raise ValueError(f"unknown model kind {kind!r}")


def save_model(model: Model, path, extra=None) -> None:
    d = model.to_dict()
    if extra:
        d["extra"] = extra
    Path(path).write_text(json.dumps(d))


def load_model(path):
    d = json.loads(Path(path).read_text())
    return model_from_dict(d), d.get("extra", {})


# --- embedding of h-driven ODEs into CDEs -----------------------------------

def embed_direct_ode(h_params: MLPParams, path_dim: int) -> MLPParams:
    """Vector field ``f: R^w -> R^{w x path_dim}`` whose CDE reproduces the ODE
    ``dy/ds = h(y, X_s)`` in its first ``w - path_dim`` coordinates and copies
    ``X`` into the last ``path_dim``.

    ``h`` takes ``concat(y, x)`` (so its input is the whole CDE state) and must
    end in a linear layer; the time channel must be the last path channel.
    """
    p = h_params.out_dim
    w = h_params.in_dim
    d = int(path_dim)
    if w - p != d or p < 1 or d < 1:
        raise ShapeError(f"h maps R^{w} -> R^{p}; expected input {p} + {d}")
    if h_params.final_activation != "none":
        raise ShapeError("embedding needs h to end in a linear layer")
    W, b = h_params.weights[-1], h_params.biases[-1]
    W_new = np.zeros((w * d, W.shape[1]))
    b_new = np.zeros(w * d)
    for r in range(p):
        W_new[r * d + d - 1] = W[r]
        b_new[r * d + d - 1] = b[r]
    for j in range(d):
        b_new[(p + j) * d + j] = 1.0
    return MLPParams([x.copy() for x in h_params.weights[:-1]] + [W_new],
                     [x.copy() for x in h_params.biases[:-1]] + [b_new],
                     h_params.hidden_activation, "none")


def embed_initial(xi: MLPParams) -> MLPParams:
    """``zeta(x) = concat(xi(x), x)`` as an MLP.

    Single-layer ``xi`` gets the identity stacked under it; deeper ``xi`` must
    use relu, and ``x`` is carried through as ``relu(x) - relu(-x)``.
    """
    if xi.final_activation != "none":
        raise ShapeError("embedding needs xi to end in a linear layer")
    d = xi.in_dim
    eye = np.eye(d)
    if len(xi.weights) == 1:
        return MLPParams([np.vstack([xi.weights[0], eye])],
                         [np.concatenate([xi.biases[0], np.zeros(d)])], xi.hidden_activation, "none")
    if xi.hidden_activation != "relu":
        raise ShapeError("deep xi must use relu to carry the input through")
    Ws, bs = [], []
    n = len(xi.weights)
    for i, (W, b) in enumerate(zip(xi.weights, xi.biases)):
        if i == 0:
            Ws.append(np.vstack([W, eye, -eye]))
            bs.append(np.concatenate([b, np.zeros(2 * d)]))
        elif i < n - 1:
            blk = np.zeros((W.shape[0] + 2 * d, W.shape[1] + 2 * d))
            blk[:W.shape[0], :W.shape[1]] = W
            blk[W.shape[0]:, W.shape[1]:] = np.eye(2 * d)
            Ws.append(blk)
            bs.append(np.concatenate([b, np.zeros(2 * d)]))
        else:
            blk = np.zeros((W.shape[0] + d, W.shape[1] + 2 * d))
            blk[:W.shape[0], :W.shape[1]] = W
            blk[W.shape[0]:, W.shape[1]:W.shape[1] + d] = eye
            blk[W.shape[0]:, W.shape[1] + d:] = -eye
            Ws.append(blk)
            bs.append(np.concatenate([b, np.zeros(d)]))
    return MLPParams(Ws, bs, "relu", "none")
