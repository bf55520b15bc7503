"""Loss, optimizer, plateau scheduling and the training / evaluation loops.

Every sample is interpolated once up front.  Minibatches are split into
groups that can share one batched solve (same domain for path models, same
length for recurrent ones); gradients are summed over samples in sample-id
order and averaged.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import NumericalBlowup, ShapeError
from .models import Model, build_model, load_model, model_from_dict, save_model
from .timeseries import ChannelStats, TimeSeries, TimeSeriesSet, append_intensity, normalize

INTENSITY_MODES = ("none", "shared", "per_channel")
METRICS = ("val_loss", "train_loss", "val_acc")


@dataclass
class TrainConfig:
    model: str = "ncde"
    hidden: int = 16
    field_width: int = 32
    field_depth: int = 2
    lr: float = 0.001
    readout_lr_multiplier: float = 100.0
    batch_size: int = 32
    max_epochs: int = 100
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    terminate_patience: int = 50
    plateau_metric: str = "val_loss"
    terminate_metric: str = "train_loss"
    weight_decay: float = 0.0
    seed: int = 0
    step: float | None = None  # None: minimum observation gap of each batch
    step_divisor: float = 1.0
    intensity: str = "none"
    backward: str = "adjoint"
    hidden_by_model: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("hidden", "field_width", "field_depth", "batch_size", "plateau_patience",
                     "terminate_patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be non-negative")
        if not self.lr > 0 or not 0 < self.plateau_factor <= 1 or self.weight_decay < 0:
            raise ValueError("lr, plateau_factor and weight_decay out of range")
        if self.readout_lr_multiplier < 1:
            raise ValueError("readout_lr_multiplier must be >= 1")
        if self.intensity not in INTENSITY_MODES:
            raise ValueError(f"intensity must be one of {INTENSITY_MODES}")
        if self.plateau_metric not in METRICS or self.terminate_metric not in METRICS:
            raise ValueError(f"metrics must be one of {METRICS}")
        if self.backward not in ("adjoint", "direct"):
            raise ValueError("backward must be 'adjoint' or 'direct'")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)

    def hidden_for(self, kind: str) -> int:
        return int(self.hidden_by_model.get(kind, self.hidden))


# --- loss ----------------------------------------------------------------------

def cross_entropy(logits, label):
    """``-log softmax(logits)[label]`` and its gradient with respect to logits.

    Accepts a single logit vector with an integer label, or a ``(B, K)``
    batch with a label array (returns per-sample losses).
    """
    logits = np.asarray(logits, dtype=float)
    label = np.asarray(label)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    onehot = np.zeros_like(logits)
    np.put_along_axis(onehot, label[..., None], 1.0, axis=-1)
    loss = -(logp * onehot).sum(axis=-1)
    grad = np.exp(logp) - onehot
    if loss.ndim == 0:
        loss = float(loss)
    return loss, grad


# --- optimizer -----------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()})


def layerwise_lrs(names, lr, readout_multiplier=1.0, readout_prefixes=("readout",)) -> dict:
    return {n: lr * readout_multiplier if n.split(".")[0] in readout_prefixes else lr for n in names}


def adam_step(params: dict, grads: dict, state: AdamState, lr_map, weight_decay=0.0, decay_names=None):
    """One Adam update; returns ``(new_params, new_state)`` without mutating inputs.

    ``lr_map`` maps parameter name to learning rate (a float applies to all).
    ``weight_decay * param`` is added to the gradient of every name in
    ``decay_names`` (all names when ``None``).
    """
    if set(params) != set(grads):
        raise ValueError("params and grads have different names")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=float)
        if g.shape != p.shape:
            raise ShapeError(f"{k}: grad {g.shape} vs param {p.shape}")
        if weight_decay and (decay_names is None or k in decay_names):
            g = g + weight_decay * p
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        lr = lr_map if isinstance(lr_map, (int, float)) else lr_map[k]
        new_p[k] = p - lr * mhat / (np.sqrt(vhat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# --- plateau schedule -----------------------------------------------------------

class _Patience:
    def __init__(self, mode):
        self.best = math.inf if mode == "min" else -math.inf
        self.sign = 1.0 if mode == "min" else -1.0
        self.bad = 0

    def update(self, metric) -> bool:
        if self.sign * metric < self.sign * self.best:
            self.best = metric
            self.bad = 0
            return True
        self.bad += 1
        return False


class PlateauSchedule:
    """Divide the learning rate by ``1/factor`` after ``patience`` epochs
    without improvement; signal termination after ``terminate_patience``."""

    def __init__(self, lr, patience, factor=0.1, terminate_patience=50, mode="min", terminate_mode="min"):
        self.lr = lr
        self.patience = patience
        self.factor = factor
        self.terminate_patience = terminate_patience
        self._plateau = _Patience(mode)
        self._stop = _Patience(terminate_mode)
        self.reductions = 0

    def step(self, metric, terminate_metric=None):
        if not math.isfinite(metric):
            raise ValueError("plateau metric must be finite")
        self._plateau.update(metric)
        if self._plateau.bad >= self.patience:
            self.lr *= self.factor
            self.reductions += 1
            self._plateau.bad = 0
        self._stop.update(metric if terminate_metric is None else terminate_metric)
        return self.lr, self._stop.bad >= self.terminate_patience


def plateau_schedule(state: PlateauSchedule, metric, terminate_metric=None):
    return state.step(metric, terminate_metric)


# --- data pipeline ----------------------------------------------------------------

@dataclass
class TrainedModel:
    model: Model
    stats: ChannelStats
    config: TrainConfig

    def save(self, path, extra=None):
        d = {"config": self.config.to_dict(), "stats": self.stats.to_dict()}
        if extra:
            d.update(extra)
        save_model(self.model, path, d)

    @classmethod
    def load(cls, path) -> "TrainedModel":
        model, extra = load_model(path)
        return cls(model, ChannelStats.from_dict(extra["stats"]), TrainConfig.from_dict(extra["config"]))


def transform(ts: TimeSeriesSet, stats: ChannelStats, config: TrainConfig) -> TimeSeriesSet:
    out, _ = normalize(ts, stats)
    if config.intensity != "none":
        out = out.map(lambda s: append_intensity(s, config.intensity == "per_channel"))
    return out


def _sample_step(series: TimeSeries, config: TrainConfig) -> float:
    if config.step is not None:
        return float(config.step)
    return series.min_gap() / config.step_divisor


@dataclass
class Prepared:
    inputs: list
    steps: np.ndarray
    keys: list
    labels: np.ndarray


def prepare(model: Model, ts: TimeSeriesSet, config: TrainConfig) -> Prepared:
    inputs, steps, keys = [], [], []
    for s in ts:
        inputs.append(model.prepare(s))
        steps.append(_sample_step(s, config))
        keys.append((float(s.times[0]), float(s.times[-1])) if model.uses_path else len(s))
    return Prepared(inputs, np.array(steps), keys, ts.labels)


def _groups(prep: Prepared, idx):
    groups = {}
    for i in sorted(idx):
        groups.setdefault(prep.keys[i], []).append(i)
    return [groups[k] for k in sorted(groups)]


def _run_group(model, prep, ids, fn):
    batch = model.collate([prep.inputs[i] for i in ids])
    step = float(prep.steps[ids].min())
    try:
        return fn(batch, step)
    except NumericalBlowup as e:
        bad = [ids[r] for r in e.rows] if e.rows else ids
        raise NumericalBlowup(e.time, bad) from e


def predict_logits(model: Model, prep: Prepared, batch_size=256) -> np.ndarray:
    out = [None] * len(prep.inputs)
    all_idx = np.arange(len(prep.inputs))
    for start in range(0, len(all_idx), batch_size):
        for ids in _groups(prep, all_idx[start:start + batch_size]):
            logits = _run_group(model, prep, ids, lambda b, h: model.logits(b, h))
            for i, row in zip(ids, logits):
                out[i] = row
    return np.stack(out)


def batch_loss_and_grads(model: Model, prep: Prepared, idx, mode="adjoint"):
    """Mean cross-entropy over ``idx`` and the matching mean gradient."""
    total = 0.0
    grads = None
    for ids in _groups(prep, idx):
        def fn(batch, step):
            logits = model.logits(batch, step)
            losses, bar = cross_entropy(logits, prep.labels[ids])
            return losses, model.flatten_grads(model.grads(batch, step, bar, mode))
        losses, g = _run_group(model, prep, ids, fn)
        total += float(np.sum(losses))
        grads = g if grads is None else {k: grads[k] + g[k] for k in grads}
    n = len(idx)
    return total / n, {k: v / n for k, v in grads.items()}


def accuracy_from_logits(logits, labels) -> float:
    # np.argmax breaks ties toward the lower class index
    return float(np.mean(np.argmax(logits, axis=-1) == np.asarray(labels)))


# --- loops -----------------------------------------------------------------------------

def init_model(config: TrainConfig, input_channels: int, class_count: int) -> Model:
    rng = np.random.default_rng([config.seed, 1])
    return build_model(config.model, input_channels, class_count, config.hidden_for(config.model),
                       config.field_width, config.field_depth, rng)


def _intensity_channels(config, v):
    return {"none": 0, "shared": 1, "per_channel": v}[config.intensity]


def train(config: TrainConfig, train_set: TimeSeriesSet, val_set: TimeSeriesSet, on_epoch=None):
    """Returns ``(TrainedModel, log, timings)``; the model carries the
    parameters with the best validation accuracy seen."""
    _, stats = normalize(train_set)
    tr = transform(train_set, stats, config)
    va = transform(val_set, stats, config)
    v = train_set.channel_count + _intensity_channels(config, train_set.channel_count)
    model = init_model(config, v, train_set.class_count)
    log, timings = [], []
    if config.max_epochs == 0:
        return TrainedModel(model, stats, config), log, timings
    ptr = prepare(model, tr, config)
    pva = prepare(model, va, config)
    params = model.param_arrays()
    lrs_base = layerwise_lrs(params, 1.0, config.readout_lr_multiplier)
    decay = {n for n in params if n.split(".")[0] in model.decay_names}
    adam = AdamState.zeros_like(params)
    sched = PlateauSchedule(config.lr, config.plateau_patience, config.plateau_factor,
                            config.terminate_patience, mode="max" if config.plateau_metric == "val_acc" else "min",
                            terminate_mode="max" if config.terminate_metric == "val_acc" else "min")
    rng = np.random.default_rng([config.seed, 2])
    best_acc, best = -1.0, None
    lr = config.lr
    n = len(ptr.inputs)
    for epoch in range(config.max_epochs):
        t_start = time.perf_counter()
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            loss, grads = batch_loss_and_grads(model, ptr, idx, config.backward)
            losses.append(loss * len(idx))
            lr_map = {k: lr * s for k, s in lrs_base.items()}
            new, adam = adam_step(params, grads, adam, lr_map, config.weight_decay, decay)
            for k in params:
                np.copyto(params[k], new[k])
        train_loss = float(np.sum(losses) / n)
        val_logits = predict_logits(model, pva)
        val_loss = float(np.mean(cross_entropy(val_logits, pva.labels)[0]))
        val_acc = accuracy_from_logits(val_logits, pva.labels)
        entry = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "val_acc": val_acc, "lr": lr}
        log.append(entry)
        timings.append({"epoch": epoch, "wall_ms": round(1000 * (time.perf_counter() - t_start), 3)})
        if on_epoch is not None:
            on_epoch(entry)
        if val_acc > best_acc:
            best_acc, best = val_acc, {k: p.copy() for k, p in params.items()}
        metrics = {"val_loss": val_loss, "train_loss": train_loss, "val_acc": val_acc}
        lr, stop = sched.step(metrics[config.plateau_metric], metrics[config.terminate_metric])
        if stop:
            break
    for k in params:
        np.copyto(params[k], best[k])
    return TrainedModel(model, stats, config), log, timings


def evaluate(trained: TrainedModel, ts: TimeSeriesSet) -> float:
    """Accuracy of ``trained`` on the labelled set ``ts``."""
    data = transform(ts, trained.stats, trained.config)
    prep = prepare(trained.model, data, trained.config)
    return accuracy_from_logits(predict_logits(trained.model, prep), prep.labels)


def write_jsonl(rows, path) -> None:
    with Path(path).open("w") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


__all__ = [
    "TrainConfig", "cross_entropy", "AdamState", "adam_step", "layerwise_lrs", "PlateauSchedule",
    "plateau_schedule", "TrainedModel", "train", "evaluate", "prepare", "predict_logits",
    "batch_loss_and_grads", "accuracy_from_logits", "write_jsonl", "model_from_dict", "load_model",
]
