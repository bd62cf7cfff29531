import tracemalloc

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vbivector.ard import (
    AlphaPosterior,
    Hyper,
    TrainConfig,
    accumulate_moments,
    elbo,
    init_loadings,
    train_ard,
    update_alpha,
    update_w,
    update_y,
)
from vbivector.block import (
    BlockPartition,
    audit_allocations,
    block_residual,
    cross_moment,
    elbo_block,
    init_block_state,
    train_block,
    update_alpha_block,
    update_w_block,
    update_y_block,
)
from vbivector.exceptions import RejectedInputError

from conftest import random_stats


def _warm_state(seed, P=2, n=6, sweeps=3, H=12, K=3, d=2):
    rng = np.random.default_rng(seed)
    stats = random_stats(rng, H=H, K=K, d=d)
    hyper = Hyper(0.5, 0.5)
    part = BlockPartition(n, P)
    state = init_block_state(stats, part, hyper, seed)
    alpha = AlphaPosterior.from_prior(hyper, n)
    for _ in range(sweeps):
        for p in range(P):
            state.set_latents(p, update_y_block(p, stats, state))
            state.set_loadings(p, update_w_block(p, stats, state, alpha))
        alpha = update_alpha_block(state, hyper)
    return stats, state, alpha, hyper


def _naive_residual(stats, state, p):
    r = np.array(stats.Fbar)
    for i in range(stats.H):
        for q in range(state.P):
            if q != p:
                for k in range(stats.K):
                    r[i, k] -= stats.N[i, k] * (state.loadings[q].wbar[k] @ state.ybar[q][i])
    return r


def test_partition():
    part = BlockPartition(10, 2)
    assert part.size == 5 and part.cols(1) == slice(5, 10)
    covered = np.concatenate([np.arange(10)[part.cols(p)] for p in range(2)])
    np.testing.assert_array_equal(covered, np.arange(10))
    with pytest.raises(RejectedInputError):
        BlockPartition(10, 3)
    with pytest.raises(RejectedInputError):
        BlockPartition(10, 0)


def test_single_block_matches_joint_updates(kernel_backend):
    rng = np.random.default_rng(0)
    stats = random_stats(rng, H=8)
    hyper = Hyper(0.5, 0.5)
    state = init_block_state(stats, BlockPartition(4, 1), hyper, 3)
    lp = init_loadings(stats.K, stats.d, 4, hyper, 3)
    np.testing.assert_array_equal(state.loadings[0].wbar, lp.wbar)
    assert block_residual(stats, state, 0) is stats.Fbar
    a = update_y_block(0, stats, state)
    b = update_y(stats, lp)
    for x, y in ((a.ybar, b.ybar), (a.cov, b.cov), (a.logdet, b.logdet)):
        np.testing.assert_array_equal(x, y)
    state.set_latents(0, a)
    alpha = AlphaPosterior(2.0, rng.uniform(0.5, 2.0, size=4))
    w1 = update_w_block(0, stats, state, alpha)
    w2 = update_w(accumulate_moments(stats, b), alpha)
    np.testing.assert_array_equal(w1.wbar, w2.wbar)
    np.testing.assert_array_equal(w1.prec, w2.prec)
    state.set_loadings(0, w1)
    alpha = update_alpha(w2, hyper)
    assert elbo_block(stats, state, alpha, hyper).total == pytest.approx(
        elbo(stats, b, w2, alpha, hyper).total, rel=1e-12
    )


def test_train_single_block_is_ard(reference_stats):
    cfg = TrainConfig(n_y=10, iters=20, seed=1, partitions=1)
    a = [r.total for r in train_block(reference_stats, cfg).history]
    b = [r.total for r in train_ard(reference_stats, cfg).history]
    assert a == b


def test_zero_other_means_reduce_to_joint_on_slice():
    rng = np.random.default_rng(1)
    stats = random_stats(rng, H=8)
    hyper = Hyper(0.5, 0.5)
    state = init_block_state(stats, BlockPartition(6, 2), hyper, 2)
    alpha = AlphaPosterior(2.0, rng.uniform(0.5, 2.0, size=6))
    lat = update_y_block(1, stats, state)
    ref = update_y(stats, state.loadings[1])
    np.testing.assert_allclose(lat.ybar, ref.ybar, rtol=0, atol=1e-15)
    state.set_latents(1, lat)
    lp = update_w_block(1, stats, state, alpha)
    ref_w = update_w(accumulate_moments(stats, ref), alpha.subset(slice(3, 6)))
    np.testing.assert_allclose(lp.wbar, ref_w.wbar, rtol=1e-14, atol=1e-15)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_block_updates_against_naive_residual(seed):
    stats, state, alpha, _ = _warm_state(seed)
    for p in range(2):
        r = _naive_residual(stats, state, p)
        np.testing.assert_allclose(block_residual(stats, state, p), r, rtol=0, atol=1e-12)
        lp = state.loadings[p]
        lat = update_y_block(p, stats, state)
        for i in range(stats.H):
            L = np.eye(3) + np.einsum("k,kab->ab", stats.N[i], lp.gram)
            rhs = sum(lp.wbar[k].T @ r[i, k] for k in range(stats.K))
            np.testing.assert_allclose(lat.ybar[i], np.linalg.solve(L, rhs), rtol=0, atol=1e-12)
        ybar, cov = state.ybar[p], state.ycov[p]
        ea = alpha.mean[state.partition.cols(p)]
        new = update_w_block(p, stats, state, alpha)
        for k in range(stats.K):
            Rk = sum(stats.N[i, k] * (cov[i] + np.outer(ybar[i], ybar[i])) for i in range(stats.H))
            Ck = sum(np.outer(r[i, k], ybar[i]) for i in range(stats.H))
            Lw = np.diag(ea) + Rk
            np.testing.assert_allclose(new.wbar[k], np.linalg.solve(Lw, Ck.T).T, rtol=0, atol=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_block_elbo_against_joint_formula(seed):
    stats, state, alpha, hyper = _warm_state(seed)
    ref = elbo(stats, state.full_latents(), state.full_loadings(), alpha, hyper)
    got = elbo_block(stats, state, alpha, hyper)
    assert got.total == pytest.approx(ref.total, rel=1e-10)
    for name in ref.terms:
        assert got.terms[name] == pytest.approx(ref.terms[name], rel=1e-10, abs=1e-9)


def test_cross_terms_vanish_with_zero_block():
    stats, state, alpha, hyper = _warm_state(5)
    lp = state.loadings[1]
    state.loadings[1] = type(lp)(np.zeros_like(lp.wbar), lp.cov, lp.prec, lp.logdet)
    state.refresh()
    whole = elbo_block(stats, state, alpha, hyper).terms["data"]
    # independent blocks: quadratic part splits into per-block sums
    const = -0.5 * stats.d * np.log(2 * np.pi) * stats.glob.Ntot.sum() - 0.5 * stats.glob.Sbar.sum()
    parts = 0.0
    for p in range(2):
        acc = accumulate_moments(stats, state.latents(p))
        lp = state.loadings[p]
        parts += float(np.sum(lp.wbar * acc.C)) - 0.5 * float(np.einsum("kab,kba->", lp.gram, acc.R))
    assert whole == pytest.approx(const + parts, rel=1e-12)


def test_cross_moment_symmetry():
    stats, state, _, _ = _warm_state(6, P=3, n=6)
    for m in range(3):
        for n in range(3):
            np.testing.assert_allclose(cross_moment(stats, state, m, n), np.swapaxes(cross_moment(stats, state, n, m), 1, 2), atol=1e-12)


def test_incremental_prediction_matches_refresh():
    stats, state, _, _ = _warm_state(7, sweeps=7)
    pred = state.pred.copy()
    state.refresh()
    np.testing.assert_allclose(pred, state.pred, rtol=0, atol=1e-10)


def test_train_two_blocks_monotone(reference_stats):
    res = train_block(reference_stats, TrainConfig(n_y=10, iters=50, seed=1, partitions=2))
    h = [r.total for r in res.history]
    for prev, cur in zip(h, h[1:]):
        assert cur >= prev - 1e-6 * abs(prev)
    assert res.loadings.wbar.shape == (8, 4, 10)


def test_train_block_rejects_min_div(reference_stats):
    with pytest.raises(RejectedInputError):
        train_block(reference_stats, TrainConfig(n_y=10, iters=1, partitions=2, min_div=True))


def test_allocation_audit(reference_stats):
    n_y = 10
    with audit_allocations() as log:
        train_block(reference_stats, TrainConfig(n_y=n_y, iters=3, seed=1, partitions=2, hyper_opt=True, burn_in=0))
    assert log
    for label, shape in log:
        assert sum(s >= n_y for s in shape) <= 1, (label, shape)


def _peak_bytes(stats, P):
    tracemalloc.start()
    try:
        train_block(stats, TrainConfig(n_y=64, iters=1, seed=0, partitions=P))
        return tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()


def test_peak_memory_shrinks_with_blocks():
    rng = np.random.default_rng(9)
    stats = random_stats(rng, H=400, K=4, d=2)
    full = _peak_bytes(stats, 1)
    blocked = _peak_bytes(stats, 8)
    assert blocked < 0.25 * full
