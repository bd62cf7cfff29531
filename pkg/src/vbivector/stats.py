"""GMM backend and Baum-Welch style sufficient statistics.

Zero- and first-order statistics are accumulated per session from frames and
fixed frame-to-component responsibilities, then whitened against the backend
so that the factor analysis downstream sees a model with zero means and unit
precisions.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .exceptions import RejectedInputError

__all__ = [
    "GmmBackend",
    "RawStats",
    "NormStats",
    "GlobalStats",
    "StatsBatch",
    "accumulate_stats",
    "normalize_stats",
    "denormalize_stats",
    "session_sbar",
    "global_stats",
    "compute_stats",
]

_RESP_TOL = 1e-6


@dataclass(frozen=True)
class GmmBackend:
    """Fixed diagonal-covariance mixture: means and precisions, both ``(K, d)``.

    ``weights`` is only used by :meth:`posteriors`; when omitted the
    components are taken as equally likely.
    """

    means: np.ndarray
    precisions: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64, ndmin=2)
        prec = np.array(self.precisions, dtype=np.float64, ndmin=2)
        if means.ndim != 2 or means.shape != prec.shape:
            raise RejectedInputError(
                f"means {means.shape} and precisions {prec.shape} must both be (K, d)"
            )
        if not (np.all(np.isfinite(means)) and np.all(np.isfinite(prec))):
            raise RejectedInputError("backend parameters must be finite")
        if np.any(prec <= 0):
            raise RejectedInputError("all precision entries must be > 0")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "precisions", prec)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=np.float64).ravel()
            if w.shape != (means.shape[0],) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise RejectedInputError("weights must be a K-simplex")
            object.__setattr__(self, "weights", w)

    @property
    def K(self):
        return self.means.shape[0]

    @property
    def d(self):
        return self.means.shape[1]

    def fingerprint(self):
        """SHA-256 of the parameters that define the normalization."""
        h = hashlib.sha256()
        h.update(np.asarray(self.means.shape, dtype="<i8").tobytes())
        h.update(self.means.astype("<f8").tobytes())
        h.update(self.precisions.astype("<f8").tobytes())
        return h.hexdigest()

    def posteriors(self, frames):
        """Frame responsibilities ``P(z_t = k | x_t)`` under the backend.

        Mixture weights default to uniform because the model never specifies
        them; pass ``weights`` at construction to override.
        """
        x = _as_frames(frames, self.d)
        logw = np.log(self.weights) if self.weights is not None else np.full(self.K, -np.log(self.K))
        diff = x[:, None, :] - self.means[None, :, :]
        ll = (
            0.5 * np.log(self.precisions).sum(axis=1)
            - 0.5 * self.d * np.log(2 * np.pi)
            - 0.5 * np.einsum("tkd,kd->tk", diff * diff, self.precisions)
        )
        logp = ll + logw
        return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


@dataclass
class RawStats:
    session_id: str
    N: np.ndarray  # (K,)
    F: np.ndarray  # (K, d)


@dataclass
class NormStats:
    session_id: str
    N: np.ndarray  # (K,)
    Fbar: np.ndarray  # (K, d)

    @property
    def stacked(self):
        """Component-major supervector view of length K*d."""
        return self.Fbar.reshape(-1)


@dataclass
class GlobalStats:
    Sbar: np.ndarray  # (K,) traces of the normalized scatter
    Ntot: np.ndarray  # (K,)
    H: int


@dataclass
class StatsBatch:
    """Normalized statistics of H sessions stacked for the trainers."""

    N: np.ndarray  # (H, K)
    Fbar: np.ndarray  # (H, K, d)
    glob: GlobalStats = None
    session_ids: list = field(default_factory=list)
    backend_hash: str = ""

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=np.float64)
        self.Fbar = np.asarray(self.Fbar, dtype=np.float64)
        if self.N.ndim != 2 or self.Fbar.ndim != 3 or self.Fbar.shape[:2] != self.N.shape:
            raise RejectedInputError(f"N {self.N.shape} and Fbar {self.Fbar.shape} disagree")
        if not self.session_ids:
            self.session_ids = [f"s{i:05d}" for i in range(self.N.shape[0])]
        if self.glob is None:
            self.glob = GlobalStats(np.zeros(self.K), self.N.sum(axis=0), self.H)

    @property
    def H(self):
        return self.N.shape[0]

    @property
    def K(self):
        return self.N.shape[1]

    @property
    def d(self):
        return self.Fbar.shape[2]

    @property
    def flat(self):
        """Fbar as an (H, K*d) matrix of stacked supervectors."""
        return self.Fbar.reshape(self.H, self.K * self.d)

    def session(self, i):
        return NormStats(self.session_ids[i], self.N[i], self.Fbar[i])

    def subset(self, idx):
        idx = np.atleast_1d(idx)
        return StatsBatch(
            self.N[idx], self.Fbar[idx], None, [self.session_ids[i] for i in idx], self.backend_hash
        )

    @classmethod
    def from_sessions(cls, sessions, glob=None, backend_hash=""):
        sessions = list(sessions)
        if not sessions:
            raise RejectedInputError("need at least one session; build StatsBatch directly for H=0")
        return cls(
            np.stack([s.N for s in sessions]),
            np.stack([s.Fbar for s in sessions]),
            glob,
            [s.session_id for s in sessions],
            backend_hash,
        )


def _as_frames(frames, d=None):
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise RejectedInputError(f"frames must be a (T, d) matrix, got shape {x.shape}")
    if d is not None and x.shape[1] != d:
        raise RejectedInputError(f"frames have dimension {x.shape[1]}, backend expects {d}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("frames contain non-finite values")
    return x


def _check_resp(resp, T):
    r = np.asarray(resp, dtype=np.float64)
    if r.ndim == 1:
        r = r[:, None]
    if r.ndim != 2 or r.shape[0] != T:
        raise RejectedInputError(f"responsibilities {r.shape} do not match {T} frames")
    if np.any(r < 0):
        raise RejectedInputError("negative responsibilities")
    if np.any(r > 1 + _RESP_TOL) or (T and np.max(np.abs(r.sum(axis=1) - 1.0)) > _RESP_TOL):
        raise RejectedInputError("responsibility rows must lie in [0, 1] and sum to 1")
    return r


def accumulate_stats(frames, resp, session_id=""):
    """Zero- and first-order statistics ``N_k = sum_t r_tk``, ``F_k = sum_t r_tk x_t``."""
    x = _as_frames(frames)
    r = _check_resp(resp, x.shape[0])
    return RawStats(session_id, r.sum(axis=0), r.T @ x)


def normalize_stats(raw, backend):
    """Whiten first-order statistics: ``Lambda_k^{1/2} (F_k - N_k m_k)``."""
    if raw.F.shape != (backend.K, backend.d):
        raise RejectedInputError(
            f"statistics shape {raw.F.shape} does not match backend ({backend.K}, {backend.d})"
        )
    fbar = np.sqrt(backend.precisions) * (raw.F - raw.N[:, None] * backend.means)
    return NormStats(raw.session_id, raw.N.copy(), fbar)


def denormalize_stats(norm, backend):
    """Inverse of :func:`normalize_stats`."""
    F = norm.Fbar / np.sqrt(backend.precisions) + norm.N[:, None] * backend.means
    return RawStats(norm.session_id, norm.N.copy(), F)


def session_sbar(frames, resp, backend):
    """Per-component ``sum_t r_tk (x_t - m_k)^T Lambda_k (x_t - m_k)``."""
    x = _as_frames(frames, backend.d)
    r = _check_resp(resp, x.shape[0])
    if r.shape[1] != backend.K:
        raise RejectedInputError(f"responsibilities have {r.shape[1]} columns, backend has {backend.K}")
    diff = x[:, None, :] - backend.means[None, :, :]
    maha = np.einsum("tkd,kd->tk", diff * diff, backend.precisions)
    return np.einsum("tk,tk->k", r, maha)


def global_stats(sessions, backend):
    """Global scatter traces and occupancies over ``(frames, resp)`` pairs."""
    Sbar = np.zeros(backend.K)
    Ntot = np.zeros(backend.K)
    H = 0
    for frames, resp in sessions:
        Sbar += session_sbar(frames, resp, backend)
        Ntot += _check_resp(resp, _as_frames(frames).shape[0]).sum(axis=0)
        H += 1
    return GlobalStats(Sbar, Ntot, H)


def compute_stats(frames_list, resp_list, backend, session_ids=None):
    """Everything the trainers need, in one pass over the sessions."""
    if len(frames_list) != len(resp_list):
        raise RejectedInputError("need one responsibility matrix per session")
    if session_ids is None:
        session_ids = [f"s{i:05d}" for i in range(len(frames_list))]
    H = len(frames_list)
    N = np.zeros((H, backend.K))
    Fbar = np.zeros((H, backend.K, backend.d))
    Sbar = np.zeros(backend.K)
    for i, (x, r) in enumerate(zip(frames_list, resp_list)):
        raw = accumulate_stats(x, r, session_ids[i])
        if raw.F.shape != (backend.K, backend.d):
            raise RejectedInputError(
                f"session {session_ids[i]}: statistics shape {raw.F.shape} "
                f"does not match backend ({backend.K}, {backend.d})"
            )
        norm = normalize_stats(raw, backend)
        N[i] = norm.N
        Fbar[i] = norm.Fbar
        Sbar += session_sbar(x, r, backend)
    glob = GlobalStats(Sbar, N.sum(axis=0), H)
    return StatsBatch(N, Fbar, glob, list(session_ids), backend.fingerprint())
