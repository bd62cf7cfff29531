"""Variational Bayes i-vector extractor with an ARD (Gaussian-Gamma) prior on W.

The posterior is factorized as q(Y) q(W) q(alpha): per-session Gaussians over
the latent factors, one Gaussian per loading row with a precision shared by
all d rows of a component, and independent Gammas over the column
precisions.  All statistics are the whitened ones from :mod:`vbivector.stats`,
so the backend means and precisions never appear here.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .exceptions import (
    ConvergenceError,
    DegeneracyError,
    NumericalError,
    RejectedInputError,
)
from .linalg import SymPosDef
from .special import digamma, lgamma, trigamma

__all__ = [
    "TERM_NAMES",
    "Hyper",
    "TrainConfig",
    "LatentPosterior",
    "LoadingPosterior",
    "AlphaPosterior",
    "Accumulators",
    "ElboReport",
    "MinDivStats",
    "ArdResult",
    "init_loadings",
    "update_y",
    "accumulate_moments",
    "update_w",
    "update_alpha",
    "elbo",
    "data_term",
    "alpha_terms",
    "optimize_hyper",
    "min_divergence",
    "transform_latents",
    "fold_offset",
    "train_ard",
    "extract_ivector",
]

LOG_2PI = math.log(2.0 * math.pi)
TERM_NAMES = (
    "data",
    "prior_Y",
    "prior_W",
    "prior_alpha",
    "entropy_Y",
    "entropy_W",
    "entropy_alpha",
)
JITTER = 1e-8


@dataclass(frozen=True)
class Hyper:
    """Shape ``a`` and rate ``b`` of the Gamma prior on each column precision."""

    a: float = 1e-3
    b: float = 1e-3

    def __post_init__(self):
        for name in ("a", "b"):
            v = float(getattr(self, name))
            if not (v > 0 and math.isfinite(v)):
                raise RejectedInputError(f"hyperparameter {name} must be finite and > 0, got {v}")
            object.__setattr__(self, name, v)


@dataclass
class TrainConfig:
    n_y: int
    iters: int = 50
    seed: int = 0
    hyper: Hyper = field(default_factory=Hyper)
    hyper_opt: bool = False
    min_div: bool = False
    burn_in: int = 3
    partitions: int = 1
    refresh_every: int = 10

    def to_dict(self):
        out = asdict(self)
        out["hyper"] = {"a": self.hyper.a, "b": self.hyper.b}
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        hyper = data.pop("hyper", None)
        cfg = cls(**data)
        if hyper is not None:
            cfg.hyper = Hyper(**hyper)
        return cfg


@dataclass
class LatentPosterior:
    """Stacked q(y_i) for H sessions: means, covariances and ln det of precisions."""

    ybar: np.ndarray  # (H, n)
    cov: np.ndarray  # (H, n, n)
    logdet: np.ndarray  # (H,)

    @property
    def H(self):
        return self.ybar.shape[0]

    @property
    def n(self):
        return self.ybar.shape[1]

    def precision(self):
        return np.linalg.inv(self.cov)

    def second_moment(self):
        return self.cov + self.ybar[:, :, None] * self.ybar[:, None, :]


@dataclass
class LoadingPosterior:
    """q(W) as K blocks of d x n row means with one row precision per component.

    ``prec`` is ``None`` for a point mass (zero row covariance); in that case
    ``logdet`` is ``+inf`` and the entropy of q(W) is undefined.
    """

    wbar: np.ndarray  # (K, d, n)
    cov: np.ndarray  # (K, n, n)
    prec: np.ndarray  # (K, n, n) or None
    logdet: np.ndarray  # (K,)
    gram: np.ndarray = None  # (K, n, n)

    def __post_init__(self):
        if self.gram is None:
            self.gram = self.d * self.cov + np.matmul(np.swapaxes(self.wbar, 1, 2), self.wbar)

    @property
    def K(self):
        return self.wbar.shape[0]

    @property
    def d(self):
        return self.wbar.shape[1]

    @property
    def n(self):
        return self.wbar.shape[2]

    @property
    def stacked(self):
        """E[W] as the (K*d, n) supervector loading matrix."""
        return self.wbar.reshape(self.K * self.d, self.n)

    @classmethod
    def from_precision(cls, wbar, prec):
        wbar = np.asarray(wbar, dtype=np.float64)
        prec = np.asarray(prec, dtype=np.float64)
        K, _, n = wbar.shape
        cov = np.empty((K, n, n))
        logdet = np.empty(K)
        sym = np.empty((K, n, n))
        for k in range(K):
            spd = SymPosDef(prec[k])
            sym[k] = spd.data
            cov[k] = spd.inverse()
            logdet[k] = spd.logdet()
        return cls(wbar, cov, sym, logdet)

    @classmethod
    def point_mass(cls, wbar):
        wbar = np.asarray(wbar, dtype=np.float64)
        K, _, n = wbar.shape
        return cls(wbar, np.zeros((K, n, n)), None, np.full(K, np.inf))

    def column_energy(self):
        """E[w_q^T w_q] for every column q of the supervector loading matrix."""
        return self.d * np.einsum("kqq->q", self.cov) + np.einsum("krq,krq->q", self.wbar, self.wbar)


@dataclass
class AlphaPosterior:
    """q(alpha_q) = Gamma(a_post, b_post[q])."""

    a_post: float
    b_post: np.ndarray  # (n,)

    def __post_init__(self):
        self.a_post = float(self.a_post)
        self.b_post = np.asarray(self.b_post, dtype=np.float64)
        if not self.a_post > 0 or np.any(self.b_post <= 0):
            raise RejectedInputError("Gamma posterior parameters must be positive")

    @property
    def mean(self):
        return self.a_post / self.b_post

    @property
    def log_mean(self):
        return digamma(self.a_post) - np.log(self.b_post)

    @classmethod
    def from_prior(cls, hyper, n):
        return cls(hyper.a, np.full(n, hyper.b))

    def subset(self, cols):
        return AlphaPosterior(self.a_post, self.b_post[cols])


@dataclass
class Accumulators:
    C: np.ndarray  # (K, d, n) blocks of sum_i Fbar_i ybar_i^T
    R: np.ndarray  # (K, n, n)
    rho: np.ndarray  # (n, n)
    sum_y: np.ndarray  # (n,)
    H: int
    logdet_y: float  # sum_i ln det L_yi

    @property
    def C_stacked(self):
        K, d, n = self.C.shape
        return self.C.reshape(K * d, n)


@dataclass
class ElboReport:
    total: float
    terms: dict

    @classmethod
    def from_terms(cls, terms):
        terms = {k: float(v) for k, v in terms.items()}
        return cls(math.fsum(terms.values()), terms)

    def row(self, names):
        return [self.total] + [self.terms[n] for n in names]


@dataclass
class MinDivStats:
    mu: np.ndarray  # (n,)
    sigma: np.ndarray  # (n, n)
    chol: np.ndarray  # lower factor with chol @ chol.T == sigma
    offset: np.ndarray  # (K, d) E[W] mu in whitened units


@dataclass
class ArdResult:
    loadings: LoadingPosterior
    alpha: AlphaPosterior
    hyper: Hyper
    history: list
    latents: LatentPosterior = None
    mindiv: MinDivStats = None
    config: TrainConfig = None


def init_loadings(K, d, n, hyper, seed):
    """Random row means with std 1/sqrt(n); row precision diag(a/b)."""
    rng = np.random.default_rng(seed)
    wbar = rng.normal(0.0, 1.0 / math.sqrt(n), size=(K, d, n))
    prec = np.broadcast_to(np.eye(n) * (hyper.a / hyper.b), (K, n, n)).copy()
    return LoadingPosterior.from_precision(wbar, prec)


def _check_compatible(stats, loadings):
    if stats.K != loadings.K or stats.d != loadings.d:
        raise RejectedInputError(
            f"statistics are (K={stats.K}, d={stats.d}) but loadings are "
            f"(K={loadings.K}, d={loadings.d})"
        )


def update_y(stats, loadings):
    """Optimal q(y_i): precision I + sum_k N_ik E[W_k^T W_k], mean L^-1 E[W]^T Fbar_i."""
    proj = stats.flat @ loadings.stacked
    ybar, cov, logdet = kernels.session_posteriors(stats.N, loadings.gram, proj)
    return LatentPosterior(ybar, cov, logdet)


def _moments(N, flat, ybar, cov, logdet, K, d):
    C = np.einsum("hj,hn->jn", flat, ybar).reshape(K, d, -1)
    R, rho = kernels.second_moments(N, ybar, cov)
    return Accumulators(C, R, rho, ybar.sum(axis=0), ybar.shape[0], math.fsum(logdet))


def accumulate_moments(stats, latents):
    if latents.H != stats.H:
        raise RejectedInputError(f"{latents.H} latent posteriors for {stats.H} sessions")
    return _moments(stats.N, stats.flat, latents.ybar, latents.cov, latents.logdet, stats.K, stats.d)


def _factor_with_jitter(mat, k):
    try:
        return SymPosDef(mat)
    except DegeneracyError:
        n = mat.shape[0]
        bumped = mat + np.eye(n) * (JITTER * np.trace(mat) / n)
        try:
            return SymPosDef(bumped)
        except DegeneracyError as exc:
            raise DegeneracyError(
                f"row precision of component {k} is singular even after jitter", component=k
            ) from exc


def _solve_rows(precs, rhs):
    """Row posterior for every component: returns a LoadingPosterior.

    ``precs`` (K, n, n) row precisions, ``rhs`` (K, d, n) right-hand sides so
    that each row mean solves ``L_k w = rhs_kr``.
    """
    K, d, n = rhs.shape
    wbar = np.empty((K, d, n))
    cov = np.empty((K, n, n))
    sym = np.empty((K, n, n))
    logdet = np.empty(K)
    for k in range(K):
        spd = _factor_with_jitter(precs[k], k)
        sym[k] = spd.data
        wbar[k] = spd.solve(rhs[k].T).T
        cov[k] = spd.inverse()
        logdet[k] = spd.logdet()
    return LoadingPosterior(wbar, cov, sym, logdet)


def update_w(acc, alpha):
    """Optimal q(W): row precision diag(E[alpha]) + R_k, row means L^-1 C_kr^T."""
    ealpha = alpha.mean
    if not np.all(ealpha > 0):
        raise RejectedInputError("E[alpha] must be positive")
    precs = acc.R + np.diag(ealpha)[None, :, :]
    return _solve_rows(precs, acc.C)


def update_alpha(loadings, hyper):
    """Optimal q(alpha): a' = a + Kd/2, b'_q = b + E[w_q^T w_q] / 2."""
    a_post = hyper.a + 0.5 * loadings.K * loadings.d
    return AlphaPosterior(a_post, hyper.b + 0.5 * loadings.column_energy())


def data_term(glob, d, acc, loadings):
    """E[ln P(X | Y, W)] from the accumulators."""
    const = -0.5 * d * LOG_2PI * float(np.sum(glob.Ntot)) - 0.5 * float(np.sum(glob.Sbar))
    linear = float(np.sum(loadings.wbar * acc.C))
    quad = float(np.einsum("kab,kba->", loadings.gram, acc.R))
    return const + linear - 0.5 * quad


def alpha_terms(alpha, hyper, energy, K, d):
    """Returns (prior_W, prior_alpha, entropy_alpha) for the ARD prior."""
    n = energy.shape[0]
    ea = alpha.mean
    ela = alpha.log_mean
    a, b, a2 = hyper.a, hyper.b, alpha.a_post
    prior_w = -0.5 * n * K * d * LOG_2PI + 0.5 * K * d * np.sum(ela) - 0.5 * np.sum(ea * energy)
    prior_alpha = n * (a * math.log(b) - lgamma(a)) + (a - 1) * np.sum(ela) - b * np.sum(ea)
    e_ln_q = n * ((a2 - 1) * digamma(a2) - a2 - lgamma(a2)) + np.sum(np.log(alpha.b_post))
    return float(prior_w), float(prior_alpha), float(-e_ln_q)


def elbo(stats, latents, loadings, alpha, hyper, acc=None):
    """Seven-term variational lower bound.

    The constant of the data term is computed in whitened space, i.e. without
    the ``N_k ln det Lambda_k / 2`` Jacobian of the backend normalization.
    """
    if acc is None:
        acc = accumulate_moments(stats, latents)
    K, d, n = loadings.K, loadings.d, loadings.n
    H = acc.H
    prior_w, prior_alpha, ent_alpha = alpha_terms(alpha, hyper, loadings.column_energy(), K, d)
    terms = {
        "data": data_term(stats.glob, d, acc, loadings),
        "prior_Y": -0.5 * H * n * LOG_2PI - 0.5 * float(np.trace(acc.rho)),
        "prior_W": prior_w,
        "prior_alpha": prior_alpha,
        "entropy_Y": 0.5 * H * n * (LOG_2PI + 1.0) - 0.5 * acc.logdet_y,
        "entropy_W": 0.5 * K * d * n * (LOG_2PI + 1.0) - 0.5 * d * float(np.sum(loadings.logdet)),
        "entropy_alpha": ent_alpha,
    }
    return ElboReport.from_terms(terms)


def optimize_hyper(alpha, hyper, tol=1e-10, max_iter=200):
    """Type-II update of (a, b) given q(alpha).

    Solves ``psi(a) - ln a + ln dt - c = 0`` with Newton steps on ``ln a``
    (so ``a`` stays positive), halving a step whenever it would increase the
    residual; then ``b = a / dt``.  Here ``c`` is the mean of E[ln alpha_q]
    and ``dt`` the mean of E[alpha_q].
    """
    c = float(np.mean(alpha.log_mean))
    dt = float(np.mean(alpha.mean))
    gap = math.log(dt) - c
    if not gap > 0:
        raise ConvergenceError(f"no stationary point: ln mean E[alpha] - mean E[ln alpha] = {gap}")

    def resid(a):
        return digamma(a) - math.log(a) + gap

    a = hyper.a
    r = resid(a)
    for _ in range(max_iter):
        if abs(r) <= tol:
            break
        step = r / (a * trigamma(a) - 1.0)
        for _ in range(64):
            a_new = a * math.exp(-step)
            if a_new > 0 and math.isfinite(a_new):
                r_new = resid(a_new)
                if abs(r_new) < abs(r):
                    break
            step *= 0.5
        else:
            break
        a, r = a_new, r_new
    if not abs(r) <= tol:
        raise ConvergenceError(
            f"hyperparameter Newton did not converge after {max_iter} iterations "
            f"(residual {r:.3e})",
            residual=r,
        )
    return Hyper(a, a / dt)


def min_divergence(acc, loadings):
    """Re-estimate the latent prior and fold its covariance into q(W).

    With ``mu = mean E[y]`` and ``Sigma = mean E[y y^T] - mu mu^T = L L^T``
    (lower Cholesky), the loadings become ``W L`` so that ``y' = L^-1 y`` has
    unit aggregate covariance.  The mean shift is not applied; it is returned
    as ``offset = E[W] mu`` for the caller to fold into the backend means
    (see :func:`fold_offset`).
    """
    H = acc.H
    if H < 2:
        raise RejectedInputError("minimum divergence needs at least two sessions")
    mu = acc.sum_y / H
    sigma = acc.rho / H - np.outer(mu, mu)
    sigma = 0.5 * (sigma + sigma.T)
    try:
        chol = np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError(
            "aggregate latent covariance is singular; use more sessions or a smaller n_y"
        ) from exc
    offset = np.einsum("kdn,n->kd", loadings.wbar, mu)
    wbar = loadings.wbar @ chol
    cov = np.matmul(np.matmul(chol.T, loadings.cov), chol)
    ld_chol = 2.0 * float(np.sum(np.log(np.diag(chol))))
    if loadings.prec is None:
        new = LoadingPosterior(wbar, cov, None, loadings.logdet.copy())
    else:
        inv_chol = np.linalg.inv(chol)
        prec = np.matmul(np.matmul(inv_chol, loadings.prec), inv_chol.T)
        prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
        new = LoadingPosterior(wbar, cov, prec, loadings.logdet - ld_chol)
    return new, MinDivStats(mu, sigma, chol, offset)


def transform_latents(latents, md):
    """Map q(y) through ``y' = L^-1 y``, the change of variables matching the new W."""
    inv_chol = np.linalg.inv(md.chol)
    ybar = latents.ybar @ inv_chol.T
    cov = np.matmul(np.matmul(inv_chol, latents.cov), inv_chol.T)
    ld_chol = 2.0 * float(np.sum(np.log(np.diag(md.chol))))
    return LatentPosterior(ybar, cov, latents.logdet + ld_chol)


def fold_offset(stats, md):
    """Statistics re-centred on the shifted means ``m + E[W] mu``."""
    from .stats import StatsBatch

    fbar = stats.Fbar - stats.N[:, :, None] * md.offset[None, :, :]
    return StatsBatch(stats.N.copy(), fbar, None, list(stats.session_ids), stats.backend_hash)


def _check_report(report, it):
    if not math.isfinite(report.total):
        raise NumericalError(f"lower bound is not finite at iteration {it}", iteration=it)


def train_ard(stats, config, init=None):
    """Run ``config.iters`` sweeps of Y -> W -> alpha updates.

    The bound is recorded after the three factor updates of every sweep;
    hyperparameter optimization and minimum divergence (when enabled) run
    after the record, from sweep ``burn_in`` onward.
    """
    n = int(config.n_y)
    if n < 1:
        raise RejectedInputError("n_y must be >= 1")
    if stats.H < 1:
        raise RejectedInputError("need at least one session")
    hyper = config.hyper
    loadings = init if init is not None else init_loadings(stats.K, stats.d, n, hyper, config.seed)
    _check_compatible(stats, loadings)
    alpha = AlphaPosterior.from_prior(hyper, n)
    history = []
    latents = None
    md = None
    for it in range(config.iters):
        latents = update_y(stats, loadings)
        acc = accumulate_moments(stats, latents)
        loadings = update_w(acc, alpha)
        alpha = update_alpha(loadings, hyper)
        report = elbo(stats, latents, loadings, alpha, hyper, acc=acc)
        _check_report(report, it)
        history.append(report)
        if it >= config.burn_in:
            if config.hyper_opt:
                hyper = optimize_hyper(alpha, hyper)
            if config.min_div:
                loadings, md = min_divergence(acc, loadings)
    return ArdResult(loadings, alpha, hyper, history, latents, md, config)


def extract_ivector(stats, loadings):
    """Posterior of the latent vectors of (possibly held-out) sessions."""
    _check_compatible(stats, loadings)
    return update_y(stats, loadings)
