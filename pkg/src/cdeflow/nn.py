"""Feedforward networks with explicit forward caches and vector-Jacobian products.

Inputs may be a single vector ``(in_dim,)`` or a batch ``(B, in_dim)``.  For
batched inputs the parameter gradients returned by :func:`mlp_vjp` are summed
over the batch.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ShapeError

ACTIVATIONS = ("relu", "tanh", "none")
CHECKPOINT_VERSION = 1


@dataclass
class MLPParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_activation: str = "relu"
    final_activation: str = "none"

    def __post_init__(self):
        if not self.weights:
            raise ShapeError("an MLP needs at least one layer")
        if len(self.weights) != len(self.biases):
            raise ShapeError("weights and biases differ in length")
        for act in (self.hidden_activation, self.final_activation):
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[1]} does not chain")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def dims(self) -> list[int]:
        return [self.in_dim] + [w.shape[0] for w in self.weights]

    def tensors(self) -> list[np.ndarray]:
        """Parameter arrays in canonical order ``W0, b0, W1, b1, ...``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self.tensors())

    def copy(self) -> "MLPParams":
        return MLPParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.hidden_activation, self.final_activation)


@dataclass
class ParamGrads:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, params: MLPParams) -> "ParamGrads":
        return cls([np.zeros_like(w) for w in params.weights],
                   [np.zeros_like(b) for b in params.biases])

    def tensors(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __add__(self, other: "ParamGrads") -> "ParamGrads":
        return ParamGrads([a + b for a, b in zip(self.weights, other.weights)],
                          [a + b for a, b in zip(self.biases, other.biases)])

    def scale(self, alpha: float) -> "ParamGrads":
        return ParamGrads([alpha * w for w in self.weights], [alpha * b for b in self.biases])


@dataclass
class MLPCache:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    output: np.ndarray | None = None


def _act(name, x):
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    return x


def _act_vjp(name, pre, post, bar):
    if name == "relu":
        # subgradient 0 at 0
        return np.where(pre > 0.0, bar, 0.0)
    if name == "tanh":
        return bar * (1.0 - post * post)
    return bar


def mlp_init(dims, hidden_activation="relu", final_activation="none", rng=None) -> MLPParams:
    """Glorot-uniform weights on +-sqrt(6 / (fan_in + fan_out)) and zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2:
        raise ShapeError("dims needs at least an input and an output size")
    rng = np.random.default_rng(rng)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases, hidden_activation, final_activation)


def mlp_forward(params: MLPParams, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.in_dim or x.ndim > 2:
        raise ShapeError(f"expected input (..., {params.in_dim}), got {x.shape}")
    cache = MLPCache()
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(h)
        pre = h @ w.T + b
        cache.pre.append(pre)
        h = _act(params.final_activation if i == last else params.hidden_activation, pre)
    cache.output = h
    return h, cache


def mlp_vjp(params: MLPParams, cache: MLPCache, y_bar):
    y_bar = np.asarray(y_bar, dtype=float)
    if y_bar.shape != cache.output.shape:
        raise ShapeError(f"y_bar shape {y_bar.shape} != output shape {cache.output.shape}")
    n = len(params.weights)
    gw: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    bar = y_bar
    for i in reversed(range(n)):
        act = params.final_activation if i == n - 1 else params.hidden_activation
        post = cache.output if i == n - 1 else cache.inputs[i + 1]
        bar = _act_vjp(act, cache.pre[i], post, bar)
        inp = cache.inputs[i]
        if bar.ndim == 1:
            gw[i] = np.outer(bar, inp)
            gb[i] = bar.copy()
        else:
            gw[i] = bar.T @ inp
            gb[i] = bar.sum(axis=0)
        bar = bar @ params.weights[i]
    return bar, ParamGrads(gw, gb)


def flatten_tensors(tensors) -> np.ndarray:
    if not tensors:
        return np.zeros(0)
    return np.concatenate([np.ravel(t) for t in tensors])


def unflatten_like(flat, tensors) -> list[np.ndarray]:
    out, i = [], 0
    for t in tensors:
        out.append(np.asarray(flat[i:i + t.size]).reshape(t.shape))
        i += t.size
    if i != len(flat):
        raise ShapeError(f"flat vector has {len(flat)} entries, expected {i}")
    return out


def grads_from_flat(params: MLPParams, flat) -> ParamGrads:
    ts = unflatten_like(flat, params.tensors())
    return ParamGrads(ts[0::2], ts[1::2])


def mlp_to_dict(params: MLPParams) -> dict:
    # json writes floats via repr, which round-trips float64 exactly
    return {
        "version": CHECKPOINT_VERSION,
        "dims": params.dims,
        "hidden_activation": params.hidden_activation,
        "final_activation": params.final_activation,
        "weights": [w.ravel().tolist() for w in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def mlp_from_dict(d: dict) -> MLPParams:
    if d.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {d.get('version')!r}")
    dims = d["dims"]
    weights = [np.array(w, dtype=float).reshape(o, i)
               for w, i, o in zip(d["weights"], dims[:-1], dims[1:])]
    biases = [np.array(b, dtype=float) for b in d["biases"]]
    return MLPParams(weights, biases, d["hidden_activation"], d["final_activation"])


def save_mlp(params: MLPParams, path) -> None:
    Path(path).write_text(json.dumps(mlp_to_dict(params)))


def load_mlp(path) -> MLPParams:
    return mlp_from_dict(json.loads(Path(path).read_text()))
