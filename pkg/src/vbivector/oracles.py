"""Brute-force reference computations used to check the fast paths.

Nothing here shares code with the trainers: loops are explicit, linear
systems go through ``numpy.linalg.solve``, and the evidence is integrated
numerically.
"""

import math

import numpy as np
from scipy.special import gammaln, logsumexp

from .exceptions import RejectedInputError

__all__ = [
    "exact_y_posterior",
    "naive_stats",
    "naive_sbar",
    "naive_moments",
    "quadrature_evidence",
    "evidence_with_certificate",
    "orthonormal_basis",
    "principal_angles",
    "procrustes_align",
]


def exact_y_posterior(stats, W):
    """Latent posterior for a known loading matrix ``W`` (K*d, n).

    Returns means (H, n) and precisions (H, n, n) of the linear-Gaussian
    model ``Fbar_i | y ~ N(N_i W y, N_i)``, ``y ~ N(0, I)``.
    """
    W = np.asarray(W, dtype=np.float64)
    K, d = stats.K, stats.d
    n = W.shape[1]
    Wk = W.reshape(K, d, n)
    means = np.zeros((stats.H, n))
    precs = np.zeros((stats.H, n, n))
    for i in range(stats.H):
        L = np.eye(n)
        b = np.zeros(n)
        for k in range(K):
            L += stats.N[i, k] * Wk[k].T @ Wk[k]
            b += Wk[k].T @ stats.Fbar[i, k]
        precs[i] = L
        means[i] = np.linalg.solve(L, b)
    return means, precs


def naive_stats(frames, resp):
    """Double-loop zero/first-order statistics."""
    T, d = frames.shape
    K = resp.shape[1]
    N = np.zeros(K)
    F = np.zeros((K, d))
    for t in range(T):
        for k in range(K):
            N[k] += resp[t, k]
            for j in range(d):
                F[k, j] += resp[t, k] * frames[t, j]
    return N, F


def naive_sbar(sessions, backend):
    K, d = backend.K, backend.d
    S = np.zeros(K)
    for frames, resp in sessions:
        for t in range(frames.shape[0]):
            for k in range(K):
                acc = 0.0
                for j in range(d):
                    diff = frames[t, j] - backend.means[k, j]
                    acc += diff * diff * backend.precisions[k, j]
                S[k] += resp[t, k] * acc
    return S


def naive_moments(stats, ybar, cov):
    """Per-session loop for C (K*d, n), R (K, n, n), rho and sum of means."""
    H, K = stats.N.shape
    n = ybar.shape[1]
    C = np.zeros((K * stats.d, n))
    R = np.zeros((K, n, n))
    rho = np.zeros((n, n))
    sum_y = np.zeros(n)
    for i in range(H):
        second = cov[i] + np.outer(ybar[i], ybar[i])
        C += np.outer(stats.Fbar[i].reshape(-1), ybar[i])
        for k in range(K):
            R[k] += stats.N[i, k] * second
        rho += second
        sum_y += ybar[i]
    return C, R, rho, sum_y


def _log_integrand(W, N, F, a, b):
    W2 = W * W
    log_prior = (
        gammaln(a + 0.5) - gammaln(a) + a * math.log(b) - 0.5 * math.log(2 * math.pi)
        - (a + 0.5) * np.log(b + 0.5 * W2)
    )
    out = log_prior
    for Ni, Fi in zip(N, F):
        q = 1.0 + W2 * Ni
        out = out - 0.5 * np.log(q) + 0.5 * W2 * Fi * Fi / q
    return out


def quadrature_evidence(stats, hyper, step=0.005, s_range=(-60.0, 60.0), half=False):
    """ln p(X | a, b) for the one-dimensional model (K = d = n_y = 1, H <= 3).

    The latent y is integrated in closed form per session and alpha
    analytically against its Gamma prior (giving a Student-t marginal on W).
    The remaining integral over W is a trapezoid rule in ``s = ln|W|`` on
    both half-lines; ``half=True`` evaluates only ``W > 0`` and doubles it.
    """
    if stats.K != 1 or stats.d != 1:
        raise RejectedInputError("quadrature evidence supports K = d = 1 only")
    if stats.H > 3:
        raise RejectedInputError("quadrature evidence supports at most 3 sessions")
    if stats.H == 0:
        return 0.0
    N = stats.N[:, 0]
    F = stats.Fbar[:, 0, 0]
    const = -0.5 * math.log(2 * math.pi) * float(np.sum(stats.glob.Ntot)) - 0.5 * float(
        np.sum(stats.glob.Sbar)
    )
    s = np.arange(s_range[0], s_range[1] + 0.5 * step, step)
    wts = np.full(s.shape, step)
    wts[0] = wts[-1] = 0.5 * step
    logw = np.log(wts)
    Wpos = np.exp(s)
    pos = _log_integrand(Wpos, N, F, hyper.a, hyper.b) + s + logw
    if half:
        log_int = math.log(2.0) + logsumexp(pos)
    else:
        neg = _log_integrand(-Wpos, N, F, hyper.a, hyper.b) + s + logw
        log_int = logsumexp(np.concatenate([pos, neg]))
    return const + float(log_int)


def evidence_with_certificate(stats, hyper, step=0.005):
    """Evidence plus the change observed when the grid step is halved."""
    coarse = quadrature_evidence(stats, hyper, step=step)
    fine = quadrature_evidence(stats, hyper, step=step / 2)
    return fine, abs(fine - coarse)


def orthonormal_basis(A, tol=1e-12):
    """Modified Gram-Schmidt with re-orthogonalization; drops dependent columns."""
    A = np.asarray(A, dtype=np.float64)
    basis = []
    for j in range(A.shape[1]):
        v = A[:, j].copy()
        for _ in range(2):
            for q in basis:
                v -= (q @ v) * q
        nrm = np.sqrt(v @ v)
        if nrm > tol * max(1.0, np.sqrt(A[:, j] @ A[:, j])):
            basis.append(v / nrm)
    return np.stack(basis, axis=1)


def principal_angles(A, B):
    """Principal angles (radians, ascending) between the column spans of A and B."""
    Qa = orthonormal_basis(A)
    Qb = orthonormal_basis(B)
    sv = np.linalg.svd(Qa.T @ Qb, compute_uv=False)
    return np.sort(np.arccos(np.clip(sv, -1.0, 1.0)))


def procrustes_align(X, Y):
    """Orthogonal Q minimizing ||X Q - Y||_F; returns (Q, X @ Q)."""
    U, _, Vt = np.linalg.svd(X.T @ Y)
    Q = U @ Vt
    return Q, X @ Q
