"""Pure numpy implementation of the per-session kernels.

Mirrors ``_kernels.pyx`` function for function; used when the compiled
extension is unavailable or explicitly selected.
"""

import numpy as np

from .exceptions import DegeneracyError


def session_posteriors(N, grams, proj):
    """Posterior of every session's latent vector.

    Parameters
    ----------
    N : (H, K) occupancies
    grams : (K, n, n) expected loading grams E[W_k^T W_k]
    proj : (H, n) projected statistics E[W]^T Fbar_i

    Returns
    -------
    ybar : (H, n) posterior means
    cov : (H, n, n) posterior covariances L_i^-1
    logdet : (H,) ln det L_i
    """
    H = N.shape[0]
    n = grams.shape[-1]
    if H == 0:
        return np.zeros((0, n)), np.zeros((0, n, n)), np.zeros(0)
    prec = np.tensordot(N, grams, axes=(1, 0))
    idx = np.arange(n)
    prec[:, idx, idx] += 1.0
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise DegeneracyError("session precision is not positive definite") from exc
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    inv_chol = np.linalg.inv(chol)
    cov = np.matmul(np.swapaxes(inv_chol, 1, 2), inv_chol)
    ybar = np.einsum("hab,hb->ha", cov, proj)
    return ybar, cov, logdet


def second_moments(N, ybar, cov):
    """Occupancy-weighted and plain sums of E[y y^T].

    Returns ``R`` of shape (K, n, n) with ``R_k = sum_i N_ik E[y_i y_i^T]``
    and ``rho = sum_i E[y_i y_i^T]``.
    """
    K = N.shape[1]
    n = ybar.shape[1]
    if N.shape[0] == 0:
        return np.zeros((K, n, n)), np.zeros((n, n))
    S = cov + ybar[:, :, None] * ybar[:, None, :]
    R = np.einsum("hk,hab->kab", N, S)
    return R, S.sum(axis=0)
