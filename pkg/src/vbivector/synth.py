"""Synthetic sessions drawn from the mixture-of-factor-analysers model.

Each frame of session i picks a component z, then emits
``m_z + W_z y_i + eps`` with ``y_i ~ N(0, I)`` and ``eps ~ N(0, Lambda_z^-1)``.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .exceptions import RejectedInputError
from .stats import GmmBackend, compute_stats

__all__ = ["SynthSpec", "SynthData", "lattice_backend", "generate", "reference_spec"]


def lattice_backend(K, d, spacing=10.0, precision=1.0):
    """Means on a coarse integer lattice, identical isotropic precisions."""
    side = 2
    while side**d < K:
        side += 1
    pts = list(itertools.islice(itertools.product(range(side), repeat=d), K))
    means = spacing * np.array(pts, dtype=np.float64)[:, ::-1]
    return GmmBackend(means, np.full((K, d), float(precision)))


@dataclass
class SynthSpec:
    K: int = 8
    d: int = 4
    n_y_true: int = 3
    H: int = 200
    frames_per_session: int = 100
    seed: int = 0
    backend: GmmBackend = None
    W_true: np.ndarray = None  # (K*d, n_y_true)
    component_weights: np.ndarray = None
    w_scale: float = 1.0
    spacing: float = 10.0
    soft: bool = False

    def __post_init__(self):
        if self.backend is None:
            self.backend = lattice_backend(self.K, self.d, self.spacing)
        if (self.backend.K, self.backend.d) != (self.K, self.d):
            raise RejectedInputError("backend dimensions disagree with K, d")
        if self.component_weights is None:
            self.component_weights = np.full(self.K, 1.0 / self.K)
        w = np.asarray(self.component_weights, dtype=np.float64)
        if w.shape != (self.K,) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise RejectedInputError("component weights must be a K-simplex")
        self.component_weights = w
        if self.W_true is not None:
            W = np.asarray(self.W_true, dtype=np.float64)
            if W.shape != (self.K * self.d, self.n_y_true):
                raise RejectedInputError(f"W_true must be ({self.K * self.d}, {self.n_y_true})")
            self.W_true = W


@dataclass
class SynthData:
    frames: list
    resp: list
    y: np.ndarray  # (H, n_y_true)
    z: list
    W_true: np.ndarray
    backend: GmmBackend
    session_ids: list

    def stats(self):
        return compute_stats(self.frames, self.resp, self.backend, self.session_ids)


def reference_spec(seed=0, **overrides):
    """Desk-scale reference configuration: K=8, d=4, rank 3, 200 x 100 frames."""
    return SynthSpec(seed=seed, **overrides)


def generate(spec):
    """Draw frames, responsibilities and the ground truth.

    Responsibilities are one-hot on the true component unless ``spec.soft``
    is set, in which case they are the backend's posteriors (with
    ``component_weights`` as mixture weights).
    """
    root = np.random.SeedSequence(spec.seed)
    model_seq, *session_seqs = root.spawn(spec.H + 1)
    model_rng = np.random.default_rng(model_seq)
    if spec.W_true is None:
        W = spec.w_scale * model_rng.normal(size=(spec.K * spec.d, spec.n_y_true))
    else:
        W = spec.W_true
    Wk = W.reshape(spec.K, spec.d, spec.n_y_true)
    be = spec.backend
    std = 1.0 / np.sqrt(be.precisions)
    soft_backend = GmmBackend(be.means, be.precisions, spec.component_weights) if spec.soft else None

    frames, resp, zs = [], [], []
    ys = np.zeros((spec.H, spec.n_y_true))
    T = spec.frames_per_session
    for i, seq in enumerate(session_seqs):
        rng = np.random.default_rng(seq)
        y = rng.normal(size=spec.n_y_true)
        z = rng.choice(spec.K, size=T, p=spec.component_weights)
        eps = rng.normal(size=(T, spec.d)) * std[z]
        x = be.means[z] + np.einsum("tdq,q->td", Wk[z], y) + eps
        if spec.soft:
            r = soft_backend.posteriors(x)
        else:
            r = np.zeros((T, spec.K))
            r[np.arange(T), z] = 1.0
        ys[i] = y
        frames.append(x)
        resp.append(r)
        zs.append(z)
    ids = [f"s{i:05d}" for i in range(spec.H)]
    return SynthData(frames, resp, ys, zs, W, be, ids)
