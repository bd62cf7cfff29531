"""Adaptation with an informative full-covariance Gaussian prior on W.

A q(W) trained on a large corpus becomes the prior for a small one: each
loading row gets prior mean ``wbar0`` and prior precision ``prec0[k]``.  The
posterior factorizes as q(Y) q(W) and there is no column-precision factor.
"""

from dataclasses import dataclass

import numpy as np

from .ard import (
    LOG_2PI,
    ElboReport,
    LoadingPosterior,
    TrainConfig,
    _check_compatible,
    _check_report,
    _solve_rows,
    accumulate_moments,
    data_term,
    update_y,
)
from .exceptions import RejectedInputError
from .linalg import SymPosDef

__all__ = [
    "LoadingPrior",
    "AdaptResult",
    "update_w_map",
    "elbo_prior_term",
    "elbo_adapt",
    "train_adapt",
]


@dataclass
class LoadingPrior:
    """Row prior N(wbar0[k, r], prec0[k]^-1); ``prec0`` must be positive definite."""

    wbar0: np.ndarray  # (K, d, n)
    prec0: np.ndarray  # (K, n, n)

    def __post_init__(self):
        self.wbar0 = np.asarray(self.wbar0, dtype=np.float64)
        self.prec0 = np.asarray(self.prec0, dtype=np.float64)
        K, _, n = self.wbar0.shape
        if self.prec0.shape != (K, n, n):
            raise RejectedInputError(
                f"prior precision {self.prec0.shape} does not match means {self.wbar0.shape}"
            )
        self._logdet = np.array([SymPosDef(p).logdet() for p in self.prec0])

    @property
    def K(self):
        return self.wbar0.shape[0]

    @property
    def d(self):
        return self.wbar0.shape[1]

    @property
    def n(self):
        return self.wbar0.shape[2]

    @property
    def logdet(self):
        return self._logdet

    @classmethod
    def from_posterior(cls, loadings):
        """The large-corpus posterior taken as-is: ``L0 := L_W``, ``w0 := E[W]``."""
        if loadings.prec is None:
            raise RejectedInputError("a point-mass posterior has no precision to export")
        return cls(loadings.wbar.copy(), loadings.prec.copy())

    def as_posterior(self):
        return LoadingPosterior.from_precision(self.wbar0.copy(), self.prec0.copy())


@dataclass
class AdaptResult:
    loadings: LoadingPosterior
    prior: LoadingPrior
    history: list
    latents: object = None
    config: TrainConfig = None


def update_w_map(acc, prior):
    """Optimal q(W): ``L_k = L0_k + R_k`` and ``L_k wbar_kr = L0_k wbar0_kr + C_kr``.

    With no sessions the accumulators are zero and the prior is returned
    unchanged.
    """
    if acc.C.shape != prior.wbar0.shape:
        raise RejectedInputError(f"accumulators {acc.C.shape} do not match prior {prior.wbar0.shape}")
    if acc.H == 0:
        return prior.as_posterior()
    precs = prior.prec0 + acc.R
    rhs = np.matmul(prior.wbar0, prior.prec0) + acc.C  # rows: (L0 w0)^T, L0 symmetric
    return _solve_rows(precs, rhs)


def elbo_prior_term(loadings, prior):
    """E[ln P(W)] under q(W) for the Gaussian row prior."""
    K, d, n = prior.K, prior.d, prior.n
    diff = loadings.wbar - prior.wbar0
    scatter = np.matmul(np.swapaxes(diff, 1, 2), diff)
    return float(
        -0.5 * n * K * d * LOG_2PI
        + 0.5 * d * np.sum(prior.logdet)
        - 0.5 * d * np.einsum("kab,kba->", prior.prec0, loadings.cov)
        - 0.5 * np.einsum("kab,kba->", prior.prec0, scatter)
    )


def elbo_adapt(stats, latents, loadings, prior, acc=None):
    if acc is None:
        acc = accumulate_moments(stats, latents)
    K, d, n = loadings.K, loadings.d, loadings.n
    H = acc.H
    terms = {
        "data": data_term(stats.glob, d, acc, loadings),
        "prior_Y": -0.5 * H * n * LOG_2PI - 0.5 * float(np.trace(acc.rho)),
        "prior_W": elbo_prior_term(loadings, prior),
        "entropy_Y": 0.5 * H * n * (LOG_2PI + 1.0) - 0.5 * acc.logdet_y,
        "entropy_W": 0.5 * K * d * n * (LOG_2PI + 1.0) - 0.5 * d * float(np.sum(loadings.logdet)),
    }
    return ElboReport.from_terms(terms)


def train_adapt(stats, prior, config):
    """Sweeps of Y -> W starting from q(W) = prior; bound recorded each sweep."""
    if int(config.n_y) != prior.n:
        raise RejectedInputError(f"config n_y={config.n_y} but prior has n_y={prior.n}")
    loadings = prior.as_posterior()
    if stats.H == 0:
        return AdaptResult(loadings, prior, [], None, config)
    _check_compatible(stats, loadings)
    history = []
    latents = None
    for it in range(config.iters):
        latents = update_y(stats, loadings)
        acc = accumulate_moments(stats, latents)
        loadings = update_w_map(acc, prior)
        report = elbo_adapt(stats, latents, loadings, prior, acc=acc)
        _check_report(report, it)
        history.append(report)
    return AdaptResult(loadings, prior, history, latents, config)
