"""Operator-norm estimates used by the sampled bound checks."""
import warnings

import numpy as np
import scipy.linalg as sla


def _start_vector(n):
    # fixed start so repeated checks are reproducible
    return np.random.default_rng(12345).standard_normal(n) + 0j


def operator_norm(M, iters=50, tol=1e-10):
    """Spectral norm of ``M`` by power iteration on ``M M*``.

    Power iteration approaches the norm from below; the full SVD is the
    reference in tests.
    """
    M = np.asarray(M)
    if not np.any(M):
        return 0.0
    x = _start_vector(M.shape[0])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        y = M.conj().T @ x
        s = np.linalg.norm(y)
        if s == 0.0:
            return 0.0
        z = M @ y
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return float(s)
        x = z / nz
        if abs(s - sigma) <= tol * s:
            sigma = s
            break
        sigma = s
    return float(sigma)


def inverse_norm(M, iters=50, tol=1e-10):
    """``||M^{-1}||`` by power iteration on ``(M M*)^{-1}`` via an LU factorization."""
    M = np.asarray(M, dtype=complex)
    with warnings.catch_warnings():
        # a zero pivot surfaces below as a non-finite norm
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu = sla.lu_factor(M, check_finite=True)
    x = _start_vector(M.shape[0])
    x /= np.linalg.norm(x)
    sigma = 0.0
    for _ in range(iters):
        # y = M^{-*} x, z = M^{-1} y
        y = sla.lu_solve(lu, x, trans=2)
        s = np.linalg.norm(y)
        z = sla.lu_solve(lu, y)
        x = z / np.linalg.norm(z)
        if abs(s - sigma) <= tol * s:
            sigma = s
            break
        sigma = s
    return float(sigma)
