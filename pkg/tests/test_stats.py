import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbivector.exceptions import RejectedInputError
from vbivector.oracles import naive_sbar, naive_stats
from vbivector.stats import (
    GmmBackend,
    RawStats,
    accumulate_stats,
    compute_stats,
    denormalize_stats,
    global_stats,
    normalize_stats,
)


def _random_resp(rng, T, K):
    r = rng.random((T, K))
    return r / r.sum(axis=1, keepdims=True)


def test_backend_validation():
    with pytest.raises(RejectedInputError):
        GmmBackend(np.zeros((2, 3)), np.ones((2, 2)))
    with pytest.raises(RejectedInputError):
        GmmBackend(np.zeros((2, 3)), np.array([[1, 1, 0], [1, 1, 1.0]]))
    with pytest.raises(RejectedInputError):
        GmmBackend(np.zeros((2, 1)), np.ones((2, 1)), weights=[0.7, 0.7])


def test_accumulate_single_frame():
    raw = accumulate_stats([[3.0]], [[1.0]])
    np.testing.assert_array_equal(raw.N, [1.0])
    np.testing.assert_array_equal(raw.F, [[3.0]])


def test_accumulate_split_frames():
    raw = accumulate_stats([[1.0], [3.0]], [[0.5, 0.5], [0.5, 0.5]])
    np.testing.assert_array_equal(raw.N, [1.0, 1.0])
    np.testing.assert_array_equal(raw.F, [[2.0], [2.0]])


def test_accumulate_against_naive():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(50, 4))
    r = _random_resp(rng, 50, 3)
    raw = accumulate_stats(x, r)
    N, F = naive_stats(x, r)
    np.testing.assert_allclose(raw.N, N, rtol=0, atol=1e-12)
    np.testing.assert_allclose(raw.F, F, rtol=0, atol=1e-12)


def test_accumulate_rejects_bad_input():
    with pytest.raises(RejectedInputError):
        accumulate_stats(np.ones((3, 2)), np.ones((2, 1)))
    with pytest.raises(RejectedInputError):
        accumulate_stats(np.ones((2, 2)), [[0.7, 0.7], [0.5, 0.5]])
    with pytest.raises(RejectedInputError):
        accumulate_stats([[np.inf]], [[1.0]])


def test_normalize_examples():
    be = GmmBackend([[1.0]], [[4.0]])
    n = normalize_stats(RawStats("", np.array([1.0]), np.array([[3.0]])), be)
    assert n.Fbar[0, 0] == 4.0
    be0 = GmmBackend([[0.0, 0.0]], [[1.0, 1.0]])
    F = np.array([[2.5, -1.0]])
    np.testing.assert_array_equal(normalize_stats(RawStats("", np.array([3.0]), F), be0).Fbar, F)
    z = normalize_stats(RawStats("", np.array([0.0]), np.zeros((1, 1))), be)
    assert z.Fbar[0, 0] == 0.0


def test_global_stats_examples():
    be = GmmBackend([[1.0]], [[4.0]])
    g = global_stats([(np.array([[3.0]]), np.array([[1.0]]))], be)
    assert g.Sbar[0] == 16.0
    be2 = GmmBackend([[1.0, 2.0], [5.0, 5.0]], np.ones((2, 2)))
    x = np.array([[1.0, 2.0], [1.0, 2.0]])
    g = global_stats([(x, np.array([[1.0, 0.0], [1.0, 0.0]]))], be2)
    np.testing.assert_array_equal(g.Sbar, [0.0, 0.0])


def test_global_stats_against_naive():
    rng = np.random.default_rng(3)
    be = GmmBackend(rng.normal(size=(3, 2)), rng.uniform(0.5, 2.0, size=(3, 2)))
    sessions = [(rng.normal(size=(20, 2)), _random_resp(rng, 20, 3)) for _ in range(4)]
    g = global_stats(sessions, be)
    np.testing.assert_allclose(g.Sbar, naive_sbar(sessions, be), rtol=0, atol=1e-10)
    assert np.all(g.Sbar >= 0) and np.all(g.Ntot >= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_order_independence(seed):
    rng = np.random.default_rng(seed)
    be = GmmBackend(rng.normal(size=(3, 2)), rng.uniform(0.5, 2.0, size=(3, 2)))
    frames = [rng.normal(size=(int(rng.integers(1, 30)), 2)) for _ in range(5)]
    resp = [_random_resp(rng, f.shape[0], 3) for f in frames]
    base = compute_stats(frames, resp, be)
    perm = rng.permutation(5)
    fperm = [rng.permutation(len(frames[i])) for i in perm]
    s2 = compute_stats([frames[i][p] for i, p in zip(perm, fperm)], [resp[i][p] for i, p in zip(perm, fperm)], be)
    np.testing.assert_allclose(s2.glob.Sbar, base.glob.Sbar, rtol=1e-9)
    np.testing.assert_allclose(s2.glob.Ntot, base.glob.Ntot, rtol=1e-9)
    np.testing.assert_allclose(s2.Fbar, base.Fbar[perm], rtol=1e-9, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_normalize_invertible(seed):
    rng = np.random.default_rng(seed)
    be = GmmBackend(rng.normal(size=(4, 3)) * 5, rng.uniform(0.1, 10.0, size=(4, 3)))
    raw = accumulate_stats(rng.normal(size=(25, 3)), _random_resp(rng, 25, 4))
    back = denormalize_stats(normalize_stats(raw, be), be)
    np.testing.assert_allclose(back.F, raw.F, rtol=0, atol=1e-10 * max(1.0, np.abs(raw.F).max()))


def test_one_hot_equals_hard_sums():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(40, 3))
    z = rng.integers(0, 4, size=40)
    r = np.eye(4)[z]
    raw = accumulate_stats(x, r)
    for k in range(4):
        assert raw.N[k] == float(np.sum(z == k))
        np.testing.assert_array_equal(raw.F[k], x[z == k].sum(axis=0) if np.any(z == k) else np.zeros(3))


def test_zero_count_rows_are_zero():
    be = GmmBackend(np.zeros((3, 2)), np.ones((3, 2)))
    s = compute_stats([np.ones((4, 2))], [np.tile([1.0, 0.0, 0.0], (4, 1))], be)
    assert s.N[0, 1] == 0 and np.all(s.Fbar[0, 1] == 0) and np.all(s.Fbar[0, 2] == 0)


def test_posteriors_normalized_and_fingerprint():
    rng = np.random.default_rng(6)
    be = GmmBackend(rng.normal(size=(3, 2)), np.ones((3, 2)))
    p = be.posteriors(rng.normal(size=(10, 2)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    be2 = GmmBackend(be.means + 1e-9, be.precisions)
    assert be.fingerprint() != be2.fingerprint()
    assert be.fingerprint() == GmmBackend(be.means.copy(), be.precisions.copy()).fingerprint()
