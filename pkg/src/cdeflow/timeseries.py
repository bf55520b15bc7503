"""Irregular, partially observed time series: data model, CSV ingestion,
normalization, observation dropping, intensity channels and a toy generator.

Missing observations are masked entries of a ``numpy.ma.MaskedArray``; no
sentinel number ever stands in for an absent value.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InsufficientObservations, MalformedSeries, SchemaMismatch

MISSING = np.ma.masked

# gen_toy_curves constants
TOY_BASE_FREQ = 1.0
TOY_FREQ_GAP = 0.5  # channel-0 frequency difference between adjacent classes (cycles per unit time)
TOY_FREQ_JITTER = 0.15
TOY_PHASE_JITTER = 3.141592653589793
TOY_DECAY_GAP = 0.3
TOY_NOISE = 0.1


@dataclass(frozen=True)
class TimeSeries:
    times: np.ndarray
    values: np.ma.MaskedArray
    label: int | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.ma.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1)
        values = np.ma.array(values, mask=np.ma.getmaskarray(values))
        if times.ndim != 1 or values.ndim != 2 or len(times) != values.shape[0]:
            raise MalformedSeries(f"times {times.shape} and values {values.shape} disagree")
        if len(times) < 2:
            raise InsufficientObservations("a series needs at least 2 time points")
        if not np.all(np.isfinite(times)):
            raise MalformedSeries("non-finite timestamp")
        if np.any(np.diff(times) <= 0):
            raise MalformedSeries("timestamps must be strictly increasing")
        if not np.all(np.isfinite(values.filled(0.0))):
            raise MalformedSeries("non-finite observation")
        counts = self._counts(values)
        if np.any(counts < 2):
            bad = np.flatnonzero(counts < 2).tolist()
            raise InsufficientObservations(f"channels {bad} have fewer than 2 observations")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    @staticmethod
    def _counts(values):
        return (~np.ma.getmaskarray(values)).sum(axis=0)

    @classmethod
    def from_rows(cls, times, rows, label=None) -> "TimeSeries":
        """Build from nested lists where ``None`` marks a missing cell."""
        rows = [list(r) if isinstance(r, (list, tuple)) else [r] for r in rows]
        mask = np.array([[c is None for c in r] for r in rows], dtype=bool)
        data = np.array([[0.0 if c is None else float(c) for c in r] for r in rows])
        return cls(np.asarray(times, dtype=float), np.ma.array(data, mask=mask), label)

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.times)

    @property
    def observed(self) -> np.ndarray:
        return ~np.ma.getmaskarray(self.values)

    def channel(self, c: int):
        """Observed ``(times, values)`` of channel ``c``."""
        keep = self.observed[:, c]
        return self.times[keep], np.asarray(self.values.data[keep, c])

    def cell(self, i: int, c: int):
        """Value at time index ``i`` and channel ``c``, or ``None`` if missing."""
        return None if not self.observed[i, c] else float(self.values.data[i, c])

    def min_gap(self) -> float:
        return float(np.min(np.diff(self.times)))

    def with_values(self, values, times=None) -> "TimeSeries":
        return TimeSeries(self.times if times is None else times, values, self.label)


@dataclass(frozen=True)
class TimeSeriesSet:
    samples: tuple
    channel_count: int
    class_count: int
    names: tuple = field(default=())

    def __post_init__(self):
        samples = tuple(self.samples)
        object.__setattr__(self, "samples", samples)
        for i, s in enumerate(samples):
            if s.n_channels != self.channel_count:
                raise SchemaMismatch(f"sample {i} has {s.n_channels} channels, expected {self.channel_count}")
            if s.label is not None and not 0 <= s.label < self.class_count:
                raise ValueError(f"sample {i} label {s.label} outside [0, {self.class_count})")
        if self.names and len(self.names) != len(samples):
            raise ValueError("names must match samples")
        object.__setattr__(self, "names", tuple(self.names))

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples])

    def subset(self, idx) -> "TimeSeriesSet":
        idx = list(idx)
        names = tuple(self.names[i] for i in idx) if self.names else ()
        return TimeSeriesSet(tuple(self.samples[i] for i in idx), self.channel_count, self.class_count, names)

    def map(self, fn, channel_count=None) -> "TimeSeriesSet":
        samples = tuple(fn(s) for s in self.samples)
        cc = channel_count if channel_count is not None else (samples[0].n_channels if samples else self.channel_count)
        return TimeSeriesSet(samples, cc, self.class_count, self.names)


@dataclass(frozen=True)
class ChannelStats:
    mean: np.ndarray
    std: np.ndarray
    degenerate: np.ndarray

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "degenerate": self.degenerate.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   np.array(d["degenerate"], dtype=bool))


# --- ingestion -------------------------------------------------------------

def _parse_cell(text, where):
    text = text.strip()
    if text == "":
        return None
    try:
        return float(text)
    except ValueError:
        raise MalformedSeries(f"{where}: cannot parse {text!r}") from None


def read_series_csv(path, label=None) -> TimeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "t":
            raise MalformedSeries(f"{path}: header must start with 't'")
        width = len(header)
        times, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise MalformedSeries(f"{path}:{lineno}: expected {width} cells, got {len(row)}")
            t = _parse_cell(row[0], f"{path}:{lineno}")
            if t is None:
                raise MalformedSeries(f"{path}:{lineno}: missing timestamp")
            times.append(t)
            rows.append([_parse_cell(c, f"{path}:{lineno}") for c in row[1:]])
    if any(b <= a for a, b in zip(times, times[1:])):
        raise MalformedSeries(f"{path}: timestamps not strictly increasing")
    try:
        return TimeSeries.from_rows(times, rows, label)
    except InsufficientObservations as e:
        raise InsufficientObservations(f"{path}: {e}") from None


def load_csv(path, manifest=None) -> TimeSeriesSet:
    """Load every data file listed in ``manifest`` (lines ``filename,label``).

    ``path`` is the data directory; the manifest defaults to
    ``path/manifest.csv``.  File names are resolved relative to ``path``.
    """
    root = Path(path)
    manifest = Path(manifest) if manifest is not None else root / "manifest.csv"
    entries = []
    with manifest.open(newline="") as fh:
        for row in csv.reader(fh):
            if not row or not row[0].strip() or row[0].strip() == "filename":
                continue
            label = row[1].strip() if len(row) > 1 else ""
            entries.append((row[0].strip(), int(label) if label else None))
    samples = [read_series_csv(root / name, label) for name, label in entries]
    if not samples:
        raise MalformedSeries(f"{manifest}: no entries")
    v = samples[0].n_channels
    for (name, _), s in zip(entries, samples):
        if s.n_channels != v:
            raise SchemaMismatch(f"{name}: {s.n_channels} channels, expected {v}")
    labels = [s.label for s in samples if s.label is not None]
    k = max(labels) + 1 if labels else 0
    return TimeSeriesSet(tuple(samples), v, k, tuple(n for n, _ in entries))


def _fmt(x):
    return repr(float(x))


def write_series_csv(series: TimeSeries, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"ch{c}" for c in range(series.n_channels)])
        for i, t in enumerate(series.times):
            w.writerow([_fmt(t)] + ["" if (v := series.cell(i, c)) is None else _fmt(v)
                                     for c in range(series.n_channels)])


def save_set(ts: TimeSeriesSet, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    names = ts.names or tuple(f"sample_{i:05d}.csv" for i in range(len(ts)))
    with (root / "manifest.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for name, s in zip(names, ts.samples):
            write_series_csv(s, root / name)
            w.writerow([name, "" if s.label is None else s.label])


# --- transforms ------------------------------------------------------------

def compute_stats(ts: TimeSeriesSet) -> ChannelStats:
    v = ts.channel_count
    total = np.zeros(v)
    count = np.zeros(v)
    for s in ts:
        obs = s.observed
        total += np.where(obs, s.values.data, 0.0).sum(axis=0)
        count += obs.sum(axis=0)
    mean = total / count
    sq = np.zeros(v)
    for s in ts:
        obs = s.observed
        sq += np.where(obs, (s.values.data - mean) ** 2, 0.0).sum(axis=0)
    std = np.sqrt(sq / count)  # population convention
    degenerate = ~(std > 0)
    std = np.where(degenerate, 1.0, std)
    return ChannelStats(mean, std, degenerate)


def normalize(ts: TimeSeriesSet, stats: ChannelStats | None = None):
    if stats is None:
        stats = compute_stats(ts)

    def one(s):
        data = (s.values.data - stats.mean) / stats.std
        return s.with_values(np.ma.array(data, mask=~s.observed))

    return ts.map(one), stats


def drop_observations(series: TimeSeries, fraction: float, rng) -> TimeSeries:
    """Remove ``floor(fraction * interior)`` interior time points, all channels at once.

    The first and last time points are always kept.  Raises
    InsufficientObservations when ``floor(fraction * n_points)`` exceeds the
    number of droppable interior points, or when a channel would be left with
    fewer than two observations.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must lie in [0, 1)")
    n = len(series)
    interior = n - 2
    if math.floor(fraction * n) > interior:
        raise InsufficientObservations(
            f"cannot drop {fraction:.0%} of {n} points while keeping both endpoints")
    k = math.floor(fraction * interior)
    rng = np.random.default_rng(rng)
    if k == 0:
        return series
    dropped = rng.choice(np.arange(1, n - 1), size=k, replace=False)
    keep = np.setdiff1d(np.arange(n), dropped)
    return TimeSeries(series.times[keep], series.values[keep], series.label)


def append_intensity(series: TimeSeries, per_channel: bool) -> TimeSeries:
    obs = series.observed
    if per_channel:
        extra = np.cumsum(obs, axis=0).astype(float)
    else:
        extra = np.arange(len(series), dtype=float)[:, None]
    data = np.concatenate([series.values.data, extra], axis=1)
    mask = np.concatenate([~obs, np.zeros(extra.shape, dtype=bool)], axis=1)
    return series.with_values(np.ma.array(data, mask=mask))


def gen_toy_curves(n_samples: int, class_count: int, length: int, rng) -> TimeSeriesSet:
    """Three-channel parametric curves on [0, 1] with irregular timestamps.

    Class ``c`` has channel-0/1 frequency ``TOY_BASE_FREQ + c * TOY_FREQ_GAP``
    (plus uniform jitter), phase offset ``c * pi / class_count`` and an
    envelope ``exp(-c * TOY_DECAY_GAP * t)`` that channel 2 carries directly.
    Sample ``i`` has label ``i % class_count``.
    """
    if class_count < 2:
        raise ValueError("class_count must be at least 2")
    if length < 2:
        raise ValueError("length must be at least 2")
    rng = np.random.default_rng(rng)
    samples = []
    for i in range(n_samples):
        c = i % class_count
        gaps = rng.uniform(0.5, 1.5, size=length - 1)
        times = np.concatenate([[0.0], np.cumsum(gaps)])
        times /= times[-1]
        freq = TOY_BASE_FREQ + c * TOY_FREQ_GAP + rng.uniform(-TOY_FREQ_JITTER, TOY_FREQ_JITTER)
        phase = c * np.pi / class_count + rng.uniform(-TOY_PHASE_JITTER, TOY_PHASE_JITTER)
        env = np.exp(-c * TOY_DECAY_GAP * times)
        arg = 2 * np.pi * freq * times + phase
        data = np.stack([env * np.sin(arg), env * np.cos(arg), env], axis=1)
        data += TOY_NOISE * rng.standard_normal(data.shape)
        samples.append(TimeSeries(times, np.ma.array(data, mask=False), c))
    return TimeSeriesSet(tuple(samples), 3, class_count)
