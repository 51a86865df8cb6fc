"""Small dense linear-algebra helpers shared by the estimators."""

import numpy as np
import scipy.linalg

from .exceptions import MatrixLogError, RankDeficiencyError

RANK_RTOL = 1e-10
EIG_COND_LIMIT = 1e8


def lstsq_qr(phi, y, names=None, rtol=RANK_RTOL):
    """Least-squares solve of ``phi @ theta ~= y`` by column-pivoted QR.

    Columns are equilibrated to unit norm first so the rank test is scale free.
    A column whose pivot falls below ``rtol`` times the leading pivot raises
    :class:`RankDeficiencyError` naming it.

    Returns ``(theta, residual)`` where ``residual = y - phi @ theta``.
    """
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(y, dtype=float)
    n_rows, n_cols = phi.shape
    if names is None:
        names = [f"col{j}" for j in range(n_cols)]
    scale = np.linalg.norm(phi, axis=0)
    zero = np.flatnonzero(scale == 0.0)
    if zero.size:
        raise RankDeficiencyError(names[zero[0]], "column is identically zero")
    if n_rows < n_cols:
        raise RankDeficiencyError(names[n_rows], f"{n_rows} rows for {n_cols} unknowns")
    q, r, piv = scipy.linalg.qr(phi / scale, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero(diag <= rtol * diag[0])
    if bad.size:
        raise RankDeficiencyError(
            names[piv[bad[0]]], f"pivot ratio {diag[bad[0]] / diag[0]:.3g} below {rtol:g}"
        )
    z = scipy.linalg.solve_triangular(r, q.T @ y)
    theta = np.empty(n_cols)
    theta[piv] = z
    theta /= scale
    return theta, y - phi @ theta


def logm_principal(a):
    """Principal matrix logarithm of a real matrix with a real result.

    Uses the eigendecomposition when the eigenvector matrix is well conditioned
    (condition number at most ``EIG_COND_LIMIT``) and falls back to the inverse
    scaling-and-squaring algorithm of :func:`scipy.linalg.logm` otherwise.
    """
    a = np.asarray(a, dtype=float)
    lam, vec = np.linalg.eig(a)
    on_cut = (np.abs(lam.imag) <= 1e-14 * np.maximum(1.0, np.abs(lam))) & (lam.real <= 0)
    if np.any(on_cut):
        raise MatrixLogError(
            f"eigenvalue {lam[on_cut][0].real:.6g} on the closed negative real axis"
        )
    if np.linalg.cond(vec) <= EIG_COND_LIMIT:
        out = (vec * np.log(lam)) @ np.linalg.inv(vec)
    else:
        out = scipy.linalg.logm(a)
    # conjugate eigenpairs make the imaginary part pure rounding
    return np.asarray(out).real
