"""Dense linear algebra used by the analysis modules.

Thin, checked wrappers over LAPACK (via numpy). Everything is float64 or
complex128; inputs are validated for finiteness and LAPACK failures surface as
:class:`ConvergenceError` instead of propagating garbage.
"""
import numpy as np

from .errors import ConvergenceError, NonFiniteError


def _as_matrix(m, dtype=np.float64):
    a = np.asarray(m)
    if a.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.iscomplexobj(a):
        a = a.astype(dtype, copy=False)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("matrix contains non-finite entries")
    return a


def svd(m):
    """Thin SVD ``m = U @ diag(sigma) @ V.T``.

    Returns ``(U, sigma, V)`` with ``V`` (not ``V.T``) so the columns of both
    factors are the singular vectors. Singular values are nonincreasing.
    """
    a = _as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"SVD did not converge: {exc}") from exc
    return u, s, vt.conj().T


def eig_general(m):
    """Eigenvalues and right eigenvectors of a small square matrix.

    Eigenvectors are unit-norm columns. Defective inputs are not detected; the
    contract is the residual ``|m w - lambda w| <= 1e-8 |w|``.
    """
    a = _as_matrix(m)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"eig_general needs a square matrix, got {a.shape}")
    if a.shape[0] > 64:
        raise ValueError("eig_general is meant for reduced operators (r <= 64)")
    try:
        w, v = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError(f"eigendecomposition did not converge: {exc}") from exc
    return w.astype(np.complex128), v.astype(np.complex128)


def pinv(m, tol=1e-12):
    """Moore-Penrose pseudoinverse; singular values below ``tol * sigma_max`` count as zero."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    a = _as_matrix(m)
    if a.size == 0:
        return np.zeros(a.shape[::-1], dtype=a.dtype)
    u, s, v = svd(a)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(a.shape[::-1], dtype=a.dtype)
    keep = s > tol * s[0]
    inv = np.zeros_like(s)
    inv[keep] = 1.0 / s[keep]
    return (v * inv) @ u.conj().T


def numerical_rank(sigma, rtol=1e-10):
    sigma = np.asarray(sigma)
    if sigma.size == 0 or sigma[0] == 0.0:
        return 0
    return int(np.count_nonzero(sigma > rtol * sigma[0]))
