import math

import numpy as np
from hypothesis import given, settings, strategies as st

from cdeflow.signature import build_M, kappa, linear_path, signature_cde, signature_oracle


def test_kappa():
    assert kappa(0, 3) == 1
    assert kappa(2, 1) == 1 + 2 + 4
    assert kappa(3, 2) == 40


def test_M_examples():
    assert np.array_equal(build_M([1.0], 2), np.eye(2))
    assert (build_M([2.0, 3.0], 2) @ np.array([5.0, 7.0])).tolist() == [10.0, 15.0, 14.0, 21.0]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), k=st.integers(1, 6), d=st.integers(1, 4))
def test_M_matches_loop_oracle(seed, k, d):
    rng = np.random.default_rng(seed)
    y, b = rng.normal(size=k), rng.normal(size=d)
    loop = np.array([b[j] * y[i] for j in range(d) for i in range(k)])
    assert np.array_equal(build_M(y, d) @ b, loop)


def test_constant_path():
    sig = signature_cde(linear_path([[1.0, 2.0], [1.0, 2.0]]), 3, 0.1)
    assert sig.flat[0] == 1.0 and np.all(sig.flat[1:] == 0)
    ora = signature_oracle([[1.0, 2.0], [1.0, 2.0]], 3, 100)
    assert ora.flat[0] == 1.0 and np.all(ora.flat[1:] == 0)


def test_single_segment_tensor_powers():
    delta = np.array([0.5, -1.5])
    sig = signature_cde(linear_path([[0.0, 0.0], delta]), 3, 0.1)
    assert np.allclose(sig.level(1), delta, atol=1e-14)
    assert np.allclose(sig.level(2), np.outer(delta, delta).ravel() / 2, atol=1e-14)
    assert np.allclose(sig.level(3), np.einsum("i,j,k->ijk", delta, delta, delta).ravel() / 6, atol=1e-14)


def test_inverse_factorials():
    ora = signature_oracle([[0.0], [1.0]], 4, 100_000)
    cde = signature_cde(linear_path([[0.0], [1.0]]), 4, 0.1)
    exact = [1 / math.factorial(k) for k in range(5)]
    assert np.max(np.abs(ora.flat - exact)) <= 1e-4
    assert np.max(np.abs(cde.flat - exact)) <= 1e-12


def chen_level2(pts):
    """Segmentwise closed form: S2 = sum_k a_k a_k / 2 + sum_{j<k} a_k (x) a_j
    in the M layout (latest increment first)."""
    incs = np.diff(np.asarray(pts, float), axis=0)
    total = np.zeros((incs.shape[1], incs.shape[1]))
    for k, a in enumerate(incs):
        total += np.outer(a, a) / 2
        for b in incs[:k]:
            total += np.outer(a, b)
    return total.ravel()


def test_two_segments_against_closed_form_and_oracle():
    pts = [[0.0, 0.0], [1.0, 0.5], [0.2, 1.3]]
    sig = signature_cde(linear_path(pts), 3, 0.1)
    ora = signature_oracle(pts, 3, 10_000)
    assert np.max(np.abs(sig.level(2) - chen_level2(pts))) <= 1e-12
    assert np.max(np.abs(ora.level(2) - chen_level2(pts))) <= 1e-4
    rel = np.abs(sig.flat - ora.flat) / np.maximum(np.abs(ora.flat), 1e-12)
    assert np.max(rel) <= 1e-6


def test_scaling_and_unit_level():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(4, 3))
    a = signature_cde(linear_path(pts), 3, 0.1)
    b = signature_cde(linear_path(0.7 * pts), 3, 0.1)
    for i in range(1, 4):
        assert np.allclose(b.level(i), 0.7 ** i * a.level(i), rtol=1e-6, atol=1e-15)
    assert a.flat[0] == 1.0
