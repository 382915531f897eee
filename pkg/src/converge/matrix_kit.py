"""Dense linear algebra for small symmetric matrices.

Everything here works on plain ``numpy`` arrays. Functions that accept a
single ``(n, n)`` matrix also have ``*_batch`` counterparts that accept a
stack ``(N, n, n)``; the grid analyses use those so that one Jacobi sweep
handles thousands of matrices at once.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidMatrix, NotPositiveDefinite, SingularFactor

MAX_DIM = 64
_MAX_SWEEPS = 100
# S >= 0 accepted when lambda_min >= -PSD_RTOL * max(1, ||S||)
PSD_RTOL = 1e-9


@dataclass(frozen=True)
class EigenDecomp:
    values: np.ndarray   # ascending
    vectors: np.ndarray  # columns are orthonormal eigenvectors


def _finite(A, what="matrix"):
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise InvalidMatrix(f"{what} has non-finite entries")
    return A


def sym(S):
    """Return the symmetric matrix whose upper triangle is that of ``S``.

    Small rounding asymmetry (products like J^T P J) is accepted; anything
    larger than 1e-8 relative is rejected.
    """
    S = _finite(S)
    if S.ndim < 2 or S.shape[-1] != S.shape[-2]:
        raise InvalidMatrix(f"expected square matrix, got shape {S.shape}")
    n = S.shape[-1]
    if n < 1 or n > MAX_DIM:
        raise InvalidMatrix(f"dimension {n} outside 1..{MAX_DIM}")
    scale = 1.0 + np.max(np.abs(S), initial=0.0)
    if np.max(np.abs(S - np.swapaxes(S, -1, -2)), initial=0.0) > 1e-8 * scale:
        raise InvalidMatrix("matrix is not symmetric")
    upper = np.triu(S)
    return upper + np.swapaxes(np.triu(S, 1), -1, -2)


def _jacobi_stack(A):
    """Cyclic Jacobi on a stack of symmetric matrices, in place on a copy.

    Returns (eigenvalues unsorted, eigenvectors).
    """
    A = np.array(A, dtype=float)
    N, n, _ = A.shape
    V = np.broadcast_to(np.eye(n), (N, n, n)).copy()
    if n == 1:
        return A[:, :, 0].copy(), V
    norm = np.sqrt(np.sum(A * A, axis=(1, 2)))
    iu = np.triu_indices(n, 1)
    for _ in range(_MAX_SWEEPS):
        off = np.sqrt(2.0 * np.sum(A[:, iu[0], iu[1]] ** 2, axis=1))
        if np.all(off <= 1e-15 * norm):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[:, p, q]
                active = apq != 0.0
                if not np.any(active):
                    continue
                safe = np.where(active, apq, 1.0)
                theta = (A[:, q, q] - A[:, p, p]) / (2.0 * safe)
                sgn = np.where(theta >= 0.0, 1.0, -1.0)
                t = sgn / (np.abs(theta) + np.hypot(theta, 1.0))
                t = np.where(active, t, 0.0)
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                c3 = c[:, None]
                s3 = s[:, None]
                colp = A[:, :, p].copy()
                colq = A[:, :, q].copy()
                A[:, :, p] = c3 * colp - s3 * colq
                A[:, :, q] = s3 * colp + c3 * colq
                rowp = A[:, p, :].copy()
                rowq = A[:, q, :].copy()
                A[:, p, :] = c3 * rowp - s3 * rowq
                A[:, q, :] = s3 * rowp + c3 * rowq
                A[:, p, q] = np.where(active, 0.0, A[:, p, q])
                A[:, q, p] = A[:, p, q]
                vp = V[:, :, p].copy()
                vq = V[:, :, q].copy()
                V[:, :, p] = c3 * vp - s3 * vq
                V[:, :, q] = s3 * vp + c3 * vq
    return np.diagonal(A, axis1=1, axis2=2).copy(), V


def sym_eig_batch(S):
    """Eigen-decompose a stack ``(N, n, n)``; values ascending per matrix."""
    S = sym(S)
    if S.ndim != 3:
        raise InvalidMatrix("sym_eig_batch expects a stack of matrices")
    if S.shape[0] == 0:
        n = S.shape[-1]
        return np.zeros((0, n)), np.zeros((0, n, n))
    w, V = _jacobi_stack(S)
    order = np.argsort(w, axis=1, kind="stable")
    w = np.take_along_axis(w, order, axis=1)
    V = np.take_along_axis(V, order[:, None, :], axis=2)
    return w, V


def sym_eig(S):
    S = np.asarray(S, dtype=float)
    w, V = sym_eig_batch(S[None])
    return EigenDecomp(w[0], V[0])


def eigvals_batch(S):
    return sym_eig_batch(S)[0]


def psd_margin(S):
    """Smallest eigenvalue of a symmetric matrix."""
    return float(sym_eig(S).values[0])


def lambda_max(S):
    return float(sym_eig(S).values[-1])


def spectral_norm_sym(S):
    w = sym_eig(S).values
    return float(max(abs(w[0]), abs(w[-1])))


def is_psd(S, rtol=PSD_RTOL):
    w = sym_eig(S).values
    scale = max(1.0, abs(w[0]), abs(w[-1]))
    return bool(w[0] >= -rtol * scale)


def induced_norm_batch(A):
    A = _finite(A)
    AtA = np.swapaxes(A, -1, -2) @ A
    w = eigvals_batch(AtA)
    return np.sqrt(np.maximum(w[:, -1], 0.0))


def induced_norm(A):
    """Spectral norm sqrt(lambda_max(A^T A)) of a square matrix."""
    A = np.atleast_2d(_finite(A))
    return float(induced_norm_batch(A[None])[0])


def cholesky(Q):
    """Upper-triangular ``Theta`` with positive diagonal and ``Theta^T Theta = Q``."""
    Q = sym(Q)
    w = sym_eig(Q).values
    scale = max(abs(w[0]), abs(w[-1]))
    if not w[0] > 1e-12 * scale or scale == 0.0:
        raise NotPositiveDefinite(w[0])
    n = Q.shape[0]
    R = np.zeros_like(Q)
    for i in range(n):
        d = Q[i, i] - R[:i, i] @ R[:i, i]
        if d <= 0.0:
            raise NotPositiveDefinite(w[0])
        R[i, i] = np.sqrt(d)
        for j in range(i + 1, n):
            R[i, j] = (Q[i, j] - R[:i, i] @ R[:i, j]) / R[i, i]
    return R


def cholesky_batch(Q):
    """Row-wise Cholesky of a stack; raises on the first non-PD member."""
    Q = sym(Q)
    N, n, _ = Q.shape
    w = eigvals_batch(Q)
    scale = np.maximum(np.abs(w[:, 0]), np.abs(w[:, -1]))
    bad = ~(w[:, 0] > 1e-12 * scale) | (scale == 0.0)
    if np.any(bad):
        raise NotPositiveDefinite(w[np.argmax(bad), 0])
    R = np.zeros_like(Q)
    for i in range(n):
        d = Q[:, i, i] - np.einsum("nk,nk->n", R[:, :i, i], R[:, :i, i])
        R[:, i, i] = np.sqrt(d)
        for j in range(i + 1, n):
            R[:, i, j] = (Q[:, i, j] - np.einsum("nk,nk->n", R[:, :i, i], R[:, :i, j])) / R[:, i, i]
    return R


def solve_triangular(R, b):
    """Back substitution for upper-triangular ``R x = b``."""
    R = _finite(R)
    b = _finite(b, "right-hand side")
    n = R.shape[0]
    diag = np.abs(np.diag(R))
    if np.any(diag <= 1e-14):
        raise SingularFactor(f"zero pivot at index {int(np.argmin(diag))}")
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (b[i] - R[i, i + 1:] @ x[i + 1:]) / R[i, i]
    return x


def inv_upper_batch(R):
    """Inverse of a stack of upper-triangular matrices by column back-substitution."""
    R = np.asarray(R, dtype=float)
    N, n, _ = R.shape
    diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
    if np.any(diag <= 1e-14):
        raise SingularFactor("zero pivot in triangular stack")
    X = np.zeros_like(R)
    eye = np.eye(n)
    for i in range(n - 1, -1, -1):
        rhs = eye[i][None, :] - np.einsum("nk,nkj->nj", R[:, i, i + 1:], X[:, i + 1:, :])
        X[:, i, :] = rhs / R[:, i, i][:, None]
    return X
