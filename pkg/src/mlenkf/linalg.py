"""Small dense symmetric linear algebra.

Everything here works on plain ``numpy`` arrays. The matrices involved are
covariances of dimension at most a few dozen, so a cyclic Jacobi eigensolver
is both fast enough and easy to audit.
"""
from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ConvergenceError, InvalidInputError, NotSPDError

JACOBI_TOL = 1e-13
JACOBI_MAX_SWEEPS = 100


class EigenDecomposition(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns


def as_sym(a, name: str = "matrix") -> np.ndarray:
    """Return ``a`` as a float square array, checking exact symmetry and finiteness."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} has non-finite entries")
    if not np.array_equal(a, a.T):
        raise InvalidInputError(f"{name} is not symmetric")
    return a


def symmetrize(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def sym_eigen(a) -> EigenDecomposition:
    """Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps over all (p, q) pairs above the diagonal until the off-diagonal
    Frobenius mass drops below ``JACOBI_TOL * ||a||_F``. Eigenvalues are
    returned in descending order with matching eigenvector columns.
    """
    a = as_sym(a).copy()
    d = a.shape[0]
    v = np.eye(d)
    if d == 1:
        return EigenDecomposition(a[0].copy(), v)

    target = JACOBI_TOL * math.sqrt(float(np.sum(a * a)))
    for _ in range(JACOBI_MAX_SWEEPS + 1):
        off = math.sqrt(2.0 * float(np.sum(np.triu(a, 1) ** 2)))
        if off <= target:
            break
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                h = a[q, q] - a[p, p]
                if abs(h) > 1e150 * abs(apq):
                    t = apq / h  # tau*tau would overflow; t ~ 1/(2 tau)
                else:
                    tau = h / (2.0 * apq)
                    t = math.copysign(1.0, tau) / (abs(tau) + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q]
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :]
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps")

    lam = np.diag(a).copy()
    order = np.argsort(-lam, kind="stable")
    return EigenDecomposition(lam[order], v[:, order])


def truncate_psd(a) -> tuple[np.ndarray, bool]:
    """Like :func:`psd_truncate` but also report whether anything was removed.

    A matrix with no negative eigenvalue is returned unchanged (a copy), so
    truncating an already PSD covariance is bit-exact.
    """
    a = as_sym(a)
    lam, q = sym_eigen(a)
    if lam[-1] >= 0.0:
        return a.copy(), False
    keep = lam > 0.0
    qk = q[:, keep]
    out = (qk * lam[keep]) @ qk.T
    return symmetrize(out), True


def psd_truncate(a) -> np.ndarray:
    """Drop the non-positive part of the spectrum: ``sum_{lam_k > 0} lam_k q_k q_k^T``."""
    return truncate_psd(a)[0]


def cholesky(s) -> np.ndarray:
    """Lower Cholesky factor, no pivoting. Raises :class:`NotSPDError` on failure."""
    s = as_sym(s)
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotSPDError("matrix is not symmetric positive definite") from exc


def spd_solve(s, b) -> np.ndarray:
    """Solve ``s x = b`` for SPD ``s`` by Cholesky; ``b`` may be a vector or d x k."""
    low = cholesky(s)
    b = np.asarray(b, dtype=float)
    y = solve_triangular(low, b, lower=True)
    return solve_triangular(low.T, y, lower=False)


def spectral_norm(a) -> float:
    """Induced 2-norm of a symmetric matrix, i.e. its largest |eigenvalue|."""
    lam = sym_eigen(a).eigenvalues
    return float(max(abs(lam[0]), abs(lam[-1])))


def operator_norm(a) -> float:
    """Induced 2-norm of a general (possibly rectangular) matrix."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    gram = a.T @ a if a.shape[0] >= a.shape[1] else a @ a.T
    return math.sqrt(max(spectral_norm(symmetrize(gram)), 0.0))


def psd_sqrt_factor(c) -> np.ndarray:
    """A factor ``F`` with ``F F^T = c`` for PSD ``c`` (singular allowed).

    Uses Cholesky when possible and falls back to the eigenbasis, clipping
    negative round-off eigenvalues to zero.
    """
    c = as_sym(symmetrize(c))
    try:
        return np.linalg.cholesky(c)
    except np.linalg.LinAlgError:
        lam, q = sym_eigen(c)
        return q * np.sqrt(np.clip(lam, 0.0, None))
