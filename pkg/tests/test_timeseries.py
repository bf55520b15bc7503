import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdeflow.errors import InsufficientObservations, MalformedSeries, SchemaMismatch
from cdeflow.timeseries import (
    TimeSeries, TimeSeriesSet, append_intensity, drop_observations, gen_toy_curves, load_csv,
    normalize, read_series_csv, save_set,
)


def write(path, text):
    path.write_text(text)
    return path


def test_parse_fully_observed(tmp_path):
    s = read_series_csv(write(tmp_path / "a.csv", "t,x\n0.0,1.0\n1.0,2.0\n"))
    assert s.times.tolist() == [0.0, 1.0]
    assert s.values.data.tolist() == [[1.0], [2.0]]
    assert s.observed.all()


def test_parse_missing_cells(tmp_path):
    s = read_series_csv(write(tmp_path / "a.csv", "t,a,b\n0.0,1.0,\n1.0,,3.0\n2.0,5.0,4.0\n"))
    assert s.cell(0, 1) is None and s.cell(1, 0) is None
    assert s.cell(2, 0) == 5.0 and s.cell(0, 0) == 1.0


def test_parse_rejects_non_monotone(tmp_path):
    with pytest.raises(MalformedSeries):
        read_series_csv(write(tmp_path / "a.csv", "t,x\n1.0,1\n0.5,2\n"))


def test_parse_rejects_garbage_and_ragged(tmp_path):
    with pytest.raises(MalformedSeries):
        read_series_csv(write(tmp_path / "a.csv", "t,x\n0,1\n1,abc\n"))
    with pytest.raises(MalformedSeries):
        read_series_csv(write(tmp_path / "b.csv", "t,x\n0,1\n1,2,3\n"))
    with pytest.raises(MalformedSeries):
        read_series_csv(write(tmp_path / "c.csv", "time,x\n0,1\n1,2\n"))


def test_channel_needs_two_observations(tmp_path):
    with pytest.raises(InsufficientObservations):
        read_series_csv(write(tmp_path / "a.csv", "t,a,b\n0,1,\n1,2,\n2,3,4\n"))


def test_load_csv_manifest_and_schema(tmp_path):
    write(tmp_path / "a.csv", "t,x\n0,1\n1,2\n")
    write(tmp_path / "b.csv", "t,x\n0,3\n2,1\n")
    write(tmp_path / "manifest.csv", "filename,label\na.csv,0\nb.csv,1\n")
    ts = load_csv(tmp_path)
    assert len(ts) == 2 and ts.class_count == 2 and ts.labels.tolist() == [0, 1]
    write(tmp_path / "c.csv", "t,x,y\n0,3,1\n2,1,1\n")
    write(tmp_path / "m2.csv", "a.csv,0\nc.csv,1\n")
    with pytest.raises(SchemaMismatch):
        load_csv(tmp_path, tmp_path / "m2.csv")


def test_save_load_roundtrip_bitwise(tmp_path):
    ts = gen_toy_curves(6, 2, 7, 3)
    ts = ts.map(lambda s: s.with_values(np.ma.array(s.values.data, mask=np.eye(7, 3, k=-2, dtype=bool))))
    save_set(ts, tmp_path)
    back = load_csv(tmp_path)
    for a, b in zip(ts, back):
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.observed, b.observed)
        assert np.array_equal(a.values.data[a.observed], b.values.data[b.observed])
        assert a.label == b.label


def test_set_invariants():
    s = TimeSeries([0, 1], [[1.0], [2.0]], 3)
    with pytest.raises(ValueError):
        TimeSeriesSet((s,), 1, 2)
    with pytest.raises(SchemaMismatch):
        TimeSeriesSet((s, TimeSeries([0, 1], [[1.0, 1], [2.0, 2]], 0)), 1, 4)


def _set(*cols):
    samples = tuple(TimeSeries(np.arange(len(c), dtype=float), np.asarray(c, float)[:, None], 0) for c in cols)
    return TimeSeriesSet(samples, 1, 1)


def test_normalize_two_point_symmetry():
    out, stats = normalize(_set([1.0, 3.0]))
    assert out[0].values.data[:, 0].tolist() == [-1.0, 1.0]
    assert stats.mean.tolist() == [2.0] and stats.std.tolist() == [1.0]


def test_normalize_constant_channel():
    out, stats = normalize(_set([5.0, 5.0, 5.0]))
    assert out[0].values.data[:, 0].tolist() == [0.0, 0.0, 0.0]
    assert stats.degenerate.tolist() == [True] and stats.std.tolist() == [1.0]


def test_normalize_with_returned_stats_is_idempotent():
    ts = gen_toy_curves(8, 2, 6, 0)
    once, stats = normalize(ts)
    again, _ = normalize(ts, stats)
    for a, b in zip(once, again):
        assert np.max(np.abs(a.values.data - b.values.data)) <= 1e-12
    renorm, st2 = normalize(once)
    assert np.allclose(st2.mean, 0, atol=1e-12) and np.allclose(st2.std, 1, atol=1e-12)
    for a, b in zip(once, normalize(once, st2)[0]):
        assert np.max(np.abs(a.values.data - b.values.data)) <= 1e-12


def test_drop_fraction_zero_is_identity():
    s = gen_toy_curves(1, 2, 9, 0)[0]
    assert drop_observations(s, 0.0, 1) is s


def test_drop_twelve_points_seed_seven():
    s = TimeSeries(np.arange(12.0), np.arange(12.0)[:, None])
    d = drop_observations(s, 0.5, 7)
    assert len(d) == 7
    assert d.times[0] == 0 and d.times[-1] == 11
    assert np.array_equal(d.times, drop_observations(s, 0.5, 7).times)
    assert set(d.times) <= set(s.times)


def test_drop_three_points_errors():
    s = TimeSeries([0.0, 1.0, 2.0], [[1.0], [2.0], [3.0]])
    with pytest.raises(InsufficientObservations):
        drop_observations(s, 0.9, 0)


@settings(max_examples=50, deadline=None)
@given(n=st.integers(3, 40), frac=st.floats(0, 0.99), seed=st.integers(0, 2**32 - 1))
def test_drop_keeps_endpoints_and_subsequence(n, frac, seed):
    s = TimeSeries(np.arange(n, dtype=float), np.random.default_rng(seed).normal(size=(n, 2)))
    try:
        d = drop_observations(s, frac, seed)
    except InsufficientObservations:
        assert np.floor(frac * n) > n - 2
        return
    assert d.times[0] == 0 and d.times[-1] == n - 1
    assert set(d.times) <= set(s.times)
    assert len(d) == n - int(np.floor(frac * (n - 2)))


def test_intensity_shared_index():
    s = TimeSeries([0.0, 1.0, 2.0], [[1.0], [2.0], [3.0]])
    out = append_intensity(s, per_channel=False)
    assert out.values.data[:, 1].tolist() == [0.0, 1.0, 2.0]


def test_intensity_per_channel_counts():
    # a fourth row gives channel 1 the two observations every channel needs
    s = TimeSeries.from_rows([0.0, 1.0, 2.0, 3.0], [[1.0, None], [None, 2.0], [3.0, None], [None, 4.0]])
    out = append_intensity(s, per_channel=True)
    assert out.values.data[:3, 2].tolist() == [1, 1, 2]
    assert out.values.data[:3, 3].tolist() == [0, 1, 1]
    full = append_intensity(TimeSeries([0.0, 1, 2, 3], np.ones((4, 2))), per_channel=True)
    assert full.values.data[:, 2].tolist() == [1, 2, 3, 4] == full.values.data[:, 3].tolist()


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_intensity_monotone_and_final_count(seed):
    rng = np.random.default_rng(seed)
    n, v = 8, 3
    mask = rng.random((n, v)) < 0.4
    mask[:2] = False
    s = TimeSeries(np.arange(n, dtype=float), np.ma.array(rng.normal(size=(n, v)), mask=mask))
    out = append_intensity(s, True)
    counts = out.values.data[:, v:]
    assert np.all(np.diff(counts, axis=0) >= 0)
    assert counts[-1].tolist() == (~mask).sum(axis=0).tolist()


def test_toy_balanced_and_reproducible():
    a = gen_toy_curves(10, 2, 12, 5)
    b = gen_toy_curves(10, 2, 12, 5)
    assert np.bincount(a.labels).tolist() == [5, 5]
    assert a.channel_count == 3
    for x, y in zip(a, b):
        assert np.array_equal(x.times, y.times) and np.array_equal(x.values.data, y.values.data)
    assert a[0].times[0] == 0.0 and a[0].times[-1] == 1.0
