"""Block-partitioned VB for high-rank loading matrices.

The latent vector is split into P equal groups that are independent in the
posterior, and W into the matching column blocks.  Every precision matrix is
then ñ x ñ with ñ = n_y / P, so memory grows linearly in n_y.  Each block
sees the statistics with the other blocks' current predictions removed.

With P = 1 the residual is the raw statistic and every update goes through
the same code as :mod:`vbivector.ard`; ``train_block`` simply delegates.
"""

import contextlib
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .ard import (
    LOG_2PI,
    AlphaPosterior,
    ArdResult,
    ElboReport,
    LatentPosterior,
    LoadingPosterior,
    _check_report,
    _moments,
    alpha_terms,
    optimize_hyper,
    train_ard,
    update_w,
)
from .exceptions import RejectedInputError

__all__ = [
    "BlockPartition",
    "BlockState",
    "BlockResult",
    "init_block_state",
    "block_residual",
    "update_y_block",
    "update_w_block",
    "update_alpha_block",
    "cross_moment",
    "elbo_block",
    "train_block",
    "audit_allocations",
]

_AUDIT = None


@contextlib.contextmanager
def audit_allocations():
    """Record ``(label, shape)`` of every array the block code creates."""
    global _AUDIT
    previous = _AUDIT
    _AUDIT = []
    try:
        yield _AUDIT
    finally:
        _AUDIT = previous


def _track(label, *arrays):
    if _AUDIT is not None:
        for a in arrays:
            if a is not None:
                _AUDIT.append((label, tuple(np.shape(a))))


@dataclass(frozen=True)
class BlockPartition:
    n_y: int
    P: int

    def __post_init__(self):
        if self.P < 1 or self.n_y < 1 or self.n_y % self.P:
            raise RejectedInputError(f"{self.P} blocks do not evenly divide n_y={self.n_y}")

    @property
    def size(self):
        return self.n_y // self.P

    def cols(self, p):
        m = self.size
        return slice(p * m, (p + 1) * m)


@dataclass
class BlockState:
    partition: BlockPartition
    ybar: list  # P arrays (H, m)
    ycov: list  # P arrays (H, m, m)
    ylogdet: list  # P arrays (H,)
    loadings: list  # P LoadingPosterior of width m
    pred: np.ndarray  # (H, K, d) sum_p E[W^(p)] ybar^(p)

    @property
    def P(self):
        return self.partition.P

    def contribution(self, p):
        c = np.einsum("kdm,hm->hkd", self.loadings[p].wbar, self.ybar[p])
        _track("contribution", c)
        return c

    def refresh(self):
        """Recompute the running prediction from scratch (removes drift)."""
        pred = np.zeros_like(self.pred)
        for p in range(self.P):
            pred += self.contribution(p)
        self.pred = pred

    def set_latents(self, p, lat):
        old = self.contribution(p)
        self.ybar[p], self.ycov[p], self.ylogdet[p] = lat.ybar, lat.cov, lat.logdet
        self.pred += self.contribution(p) - old

    def set_loadings(self, p, lp):
        old = self.contribution(p)
        self.loadings[p] = lp
        self.pred += self.contribution(p) - old

    def latents(self, p):
        return LatentPosterior(self.ybar[p], self.ycov[p], self.ylogdet[p])

    def column_energy(self):
        return np.concatenate([lp.column_energy() for lp in self.loadings])

    def full_loadings(self):
        """Reassemble q(W) at full width with block-diagonal row precisions."""
        m = self.partition.size
        K, d = self.loadings[0].K, self.loadings[0].d
        n = self.partition.n_y
        wbar = np.zeros((K, d, n))
        cov = np.zeros((K, n, n))
        prec = np.zeros((K, n, n))
        for p, lp in enumerate(self.loadings):
            s = slice(p * m, (p + 1) * m)
            wbar[:, :, s] = lp.wbar
            cov[:, s, s] = lp.cov
            prec[:, s, s] = lp.prec
        logdet = np.sum([lp.logdet for lp in self.loadings], axis=0)
        return LoadingPosterior(wbar, cov, prec, logdet)

    def full_latents(self):
        m = self.partition.size
        H = self.ybar[0].shape[0]
        n = self.partition.n_y
        cov = np.zeros((H, n, n))
        for p in range(self.P):
            s = slice(p * m, (p + 1) * m)
            cov[:, s, s] = self.ycov[p]
        return LatentPosterior(np.concatenate(self.ybar, axis=1), cov, np.sum(self.ylogdet, axis=0))


@dataclass
class BlockResult:
    state: BlockState
    alpha: AlphaPosterior
    hyper: object
    history: list
    config: object = None

    @property
    def loadings(self):
        return self.state.full_loadings()


def init_block_state(stats, partition, hyper, seed):
    """Same random draw as the joint trainer, split into column blocks."""
    K, d, n = stats.K, stats.d, partition.n_y
    m = partition.size
    rng = np.random.default_rng(seed)
    wbar = rng.normal(0.0, 1.0 / math.sqrt(n), size=(K, d, n))
    prec = np.broadcast_to(np.eye(m) * (hyper.a / hyper.b), (K, m, m))
    loads = [
        LoadingPosterior.from_precision(np.ascontiguousarray(wbar[:, :, partition.cols(p)]), prec)
        for p in range(partition.P)
    ]
    H = stats.H
    state = BlockState(
        partition,
        [np.zeros((H, m)) for _ in range(partition.P)],
        [np.broadcast_to(np.eye(m), (H, m, m)).copy() for _ in range(partition.P)],
        [np.zeros(H) for _ in range(partition.P)],
        loads,
        np.zeros((H, K, d)),
    )
    for lp in loads:
        _track("init_loadings", lp.wbar, lp.cov, lp.prec, lp.gram)
    return state


def block_residual(stats, state, p):
    """Fbar_i - N_i sum_{n != p} E[W^(n)] ybar^(n)_i, shape (H, K, d)."""
    if state.P == 1:
        return stats.Fbar
    others = state.pred - state.contribution(p)
    r = stats.Fbar - stats.N[:, :, None] * others
    _track("residual", others, r)
    return r


def update_y_block(p, stats, state):
    """Optimal q(y^(p)) given all other blocks' current means."""
    lp = state.loadings[p]
    r = block_residual(stats, state, p)
    proj = r.reshape(stats.H, stats.K * stats.d) @ lp.stacked
    ybar, cov, logdet = kernels.session_posteriors(stats.N, lp.gram, proj)
    _track("update_y_block", proj, ybar, cov, logdet)
    return LatentPosterior(ybar, cov, logdet)


def update_w_block(p, stats, state, alpha):
    """Optimal q(W^(p)) from the residualized C^(p) and R^(p)_k."""
    r = block_residual(stats, state, p)
    acc = _moments(
        stats.N,
        r.reshape(stats.H, stats.K * stats.d),
        state.ybar[p],
        state.ycov[p],
        state.ylogdet[p],
        stats.K,
        stats.d,
    )
    sub = alpha if state.P == 1 else alpha.subset(state.partition.cols(p))
    lp = update_w(acc, sub)
    _track("update_w_block", acc.C, acc.R, acc.rho, lp.wbar, lp.cov, lp.prec, lp.gram)
    return lp


def update_alpha_block(state, hyper):
    K, d = state.loadings[0].K, state.loadings[0].d
    return AlphaPosterior(hyper.a + 0.5 * K * d, hyper.b + 0.5 * state.column_energy())


def cross_moment(stats, state, m, n):
    """R^(m,n)_k = sum_i N_ik ybar^(m)_i ybar^(n)_i^T, shape (K, ñ, ñ)."""
    out = np.einsum("hk,ha,hb->kab", stats.N, state.ybar[m], state.ybar[n])
    _track("cross_moment", out)
    return out


def elbo_block(stats, state, alpha, hyper):
    """Lower bound for the block-factorized posterior.

    Block-diagonal second moments are never assembled: the quadratic part of
    the data term is the per-block ``tr(E[W^(n)T W^(n)] R^(n))`` plus the
    cross products of means through ``R^(m,n)``.
    """
    P = state.P
    K, d = stats.K, stats.d
    n = state.partition.n_y
    m = state.partition.size
    H = stats.H
    glob = stats.glob
    flat = stats.flat

    linear = 0.0
    quad = 0.0
    trace_rho = 0.0
    for p in range(P):
        lp = state.loadings[p]
        C = flat.T @ state.ybar[p]
        R, rho = kernels.second_moments(stats.N, state.ybar[p], state.ycov[p])
        _track("elbo_block", C, R, rho)
        linear += float(np.sum(lp.stacked * C))
        quad += float(np.einsum("kab,kba->", lp.gram, R))
        trace_rho += float(np.trace(rho))
        for q in range(p + 1, P):
            Rqp = cross_moment(stats, state, q, p)
            cross = np.matmul(np.swapaxes(lp.wbar, 1, 2), state.loadings[q].wbar)
            _track("elbo_block", cross)
            quad += 2.0 * float(np.einsum("kab,kba->", cross, Rqp))
    data = (
        -0.5 * d * LOG_2PI * float(np.sum(glob.Ntot))
        - 0.5 * float(np.sum(glob.Sbar))
        + linear
        - 0.5 * quad
    )
    prior_w, prior_alpha, ent_alpha = alpha_terms(alpha, hyper, state.column_energy(), K, d)
    logdet_y = math.fsum(math.fsum(ld) for ld in state.ylogdet)
    logdet_w = sum(float(np.sum(lp.logdet)) for lp in state.loadings)
    terms = {
        "data": data,
        "prior_Y": -0.5 * H * n * LOG_2PI - 0.5 * trace_rho,
        "prior_W": prior_w,
        "prior_alpha": prior_alpha,
        "entropy_Y": P * 0.5 * H * m * (LOG_2PI + 1.0) - 0.5 * logdet_y,
        "entropy_W": P * 0.5 * K * d * m * (LOG_2PI + 1.0) - 0.5 * d * logdet_w,
        "entropy_alpha": ent_alpha,
    }
    return ElboReport.from_terms(terms)


def train_block(stats, config):
    """Sweep p = 1..P (y-block then W-block), then q(alpha); record the bound."""
    partition = BlockPartition(int(config.n_y), int(config.partitions))
    if partition.P == 1:
        return train_ard(stats, config)
    if config.min_div:
        raise RejectedInputError(
            "minimum divergence needs the full latent covariance; not available with partitions > 1"
        )
    if stats.H < 1:
        raise RejectedInputError("need at least one session")
    hyper = config.hyper
    state = init_block_state(stats, partition, hyper, config.seed)
    alpha = AlphaPosterior.from_prior(hyper, partition.n_y)
    history = []
    for it in range(config.iters):
        for p in range(partition.P):
            state.set_latents(p, update_y_block(p, stats, state))
            state.set_loadings(p, update_w_block(p, stats, state, alpha))
        alpha = update_alpha_block(state, hyper)
        report = elbo_block(stats, state, alpha, hyper)
        _check_report(report, it)
        history.append(report)
        if config.refresh_every and (it + 1) % config.refresh_every == 0:
            state.refresh()
        if config.hyper_opt and it >= config.burn_in:
            hyper = optimize_hyper(alpha, hyper)
    return BlockResult(state, alpha, hyper, history, config)


def as_result(res):
    """Uniform view (loadings, alpha, hyper, history) over both result types."""
    if isinstance(res, ArdResult):
        return res
    return ArdResult(res.loadings, res.alpha, res.hyper, res.history, None, None, res.config)
