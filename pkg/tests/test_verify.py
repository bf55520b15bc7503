import numpy as np
import pytest

from cdeflow import verify


@pytest.mark.parametrize("suite", ["invariance", "rk4", "memory"])
def test_suite_passes(suite):
    report = verify.run(suite)
    assert report["passed"], [c for c in report["checks"] if not c["passed"]]
    assert all(c["tolerance"] >= 0 for c in report["checks"])


def test_tolerance_scale_zero_fails():
    report = verify.run("rk4", tolerance_scale=0.0)
    assert not report["passed"]


def test_unknown_suite():
    with pytest.raises(ValueError):
        verify.run("everything")


def test_random_series_gaps():
    s = verify.random_series(np.random.default_rng(0), 8, 2, min_gap=0.5, max_gap=1.5)
    gaps = np.diff(s.times)
    assert len(s) == 8 and np.all(gaps >= 0.5) and np.all(gaps <= 1.5)


def test_memory_metrics():
    rows = verify.memory_report((10, 100))
    spread, dev = verify.memory_metrics(rows)
    assert spread == 0 and dev <= 0.10
    assert rows[0]["adjoint_retained"] == 5
    assert rows[1]["direct_retained"] == rows[1]["direct_steps_taken"] * 5 + 1


def test_gradient_instance_is_reproducible():
    s1, m1, w1 = verify.gradient_instance(3)
    s2, m2, w2 = verify.gradient_instance(3)
    assert np.array_equal(s1.values.data, s2.values.data) and np.array_equal(w1, w2)
    assert len(s1) == 5 and s1.n_channels == 3
