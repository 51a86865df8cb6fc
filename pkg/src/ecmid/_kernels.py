"""Inner-loop kernels.

Every model in the package reduces to the same linear recursion
``x[k+1] = a x[k] + b u[k]`` run over tens of thousands of samples, so the
loop lives here once. The numba version is used when numba imports and
``ECMID_PURE_NUMPY`` is unset (or ``0``). Otherwise the recursion is
triangularized with a complex Schur decomposition and each scalar mode is run
through ``scipy.signal.lfilter``. Both paths agree to rounding.
"""

import os

import numpy as np
import scipy.linalg
import scipy.signal

_FLAG = os.environ.get("ECMID_PURE_NUMPY", "").strip().lower()
PURE_NUMPY = _FLAG not in ("", "0", "false", "no")

try:  # pragma: no cover - import guard
    if PURE_NUMPY:
        raise ImportError
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False


def _schur_run(a, forcing, x0):
    """States of ``x[k+1] = a x[k] + forcing[..., k, :]`` for a batch of forcings.

    ``forcing`` has shape (batch, N, n) and ``x0`` shape (batch, n); returns
    (batch, N + 1, n).
    """
    t, z = scipy.linalg.schur(a, output="complex")
    f = forcing @ z.conj()
    w0 = x0 @ z.conj()
    batch, n_samples, n = f.shape
    w = np.empty((batch, n_samples + 1, n), dtype=complex)
    w[:, 0, :] = w0
    for i in range(n - 1, -1, -1):
        g = f[:, :, i] + w[:, :-1, i + 1 :] @ t[i, i + 1 :]
        zi = (t[i, i] * w0[:, i])[:, None]
        w[:, 1:, i], _ = scipy.signal.lfilter([1.0], [1.0, -t[i, i]], g, axis=-1, zi=zi)
    return (w @ z.T).real


def _lsim_numpy(a, b, u, x0):
    return _schur_run(a, (u @ b.T)[None], x0[None])[0]


if HAVE_NUMBA:

    @njit(cache=True, nogil=True)
    def _lsim_numba(a, b, u, x0):
        n_samples, m = u.shape
        n = a.shape[0]
        out = np.empty((n_samples + 1, n))
        for i in range(n):
            out[0, i] = x0[i]
        for k in range(n_samples):
            for i in range(n):
                acc = 0.0
                for j in range(n):
                    acc += a[i, j] * out[k, j]
                for j in range(m):
                    acc += b[i, j] * u[k, j]
                out[k + 1, i] = acc
        return out

    @njit(cache=True, nogil=True)
    def _filter_columns_numba(a, c, u):
        # s_j[k+1] = a s_j[k] + c u_j[k], s_j[0] = 0, independently for each column j
        n_samples, m = u.shape
        n = a.shape[0]
        out = np.zeros((n_samples, m, n))
        tmp = np.empty(n)
        for k in range(n_samples - 1):
            for col in range(m):
                for i in range(n):
                    acc = c[i] * u[k, col]
                    for j in range(n):
                        acc += a[i, j] * out[k, col, j]
                    tmp[i] = acc
                for i in range(n):
                    out[k + 1, col, i] = tmp[i]
        return out

    @njit(cache=True, nogil=True)
    def _design_numba(a, c, u, extra, powers):
        # [c^T a^k (if powers) | extra | s(u_0) | s(u_1) | ...], s as in _filter_columns_numba
        n_samples, m = u.shape
        n = a.shape[0]
        e = extra.shape[1]
        w = n if powers else 0
        out = np.empty((n_samples, w + e + m * n))
        s = np.zeros((m, n))
        pw = c.copy()
        live = powers
        floor = 0.0
        for i in range(n):
            floor = max(floor, abs(c[i]))
        floor *= 1e-250
        tmp = np.empty(n)
        for k in range(n_samples):
            if powers:
                for i in range(n):
                    out[k, i] = pw[i]
                if live:
                    big = 0.0
                    for i in range(n):
                        acc = 0.0
                        for j in range(n):
                            acc += a[i, j] * pw[j]
                        tmp[i] = acc
                        big = max(big, abs(acc))
                    if big <= floor:
                        live = False
                        for i in range(n):
                            pw[i] = 0.0
                    else:
                        for i in range(n):
                            pw[i] = tmp[i]
            for j in range(e):
                out[k, w + j] = extra[k, j]
            for col in range(m):
                for i in range(n):
                    out[k, w + e + col * n + i] = s[col, i]
                for i in range(n):
                    acc = c[i] * u[k, col]
                    for j in range(n):
                        acc += a[i, j] * s[col, j]
                    tmp[i] = acc
                for i in range(n):
                    s[col, i] = tmp[i]
        return out


def _filter_columns_numpy(a, c, u):
    n_samples, m = u.shape
    n = a.shape[0]
    forcing = u.T[:, :, None] * c[None, None, :]
    states = _schur_run(a, forcing, np.zeros((m, n)))
    return np.ascontiguousarray(states[:, :-1, :].transpose(1, 0, 2))


def lsim(a, b, u, x0=None, *, backend=None):
    """Run ``x[k+1] = a x[k] + b u[k]`` and return all states.

    ``u`` has shape (N,) or (N, m); ``b`` has shape (n,) or (n, m). The result
    has shape (N + 1, n): row k is the state before input sample k is applied,
    and the last row is the terminal state.
    """
    a = np.ascontiguousarray(a, dtype=float)
    n = a.shape[0]
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    b = np.asarray(b, dtype=float).reshape(n, -1)
    if b.shape[1] != u.shape[1]:
        raise ValueError(f"input width {u.shape[1]} does not match b with {b.shape[1]} columns")
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(n)
    u = np.ascontiguousarray(u)
    b = np.ascontiguousarray(b)
    x0 = np.ascontiguousarray(x0)
    if _use_numba(backend):
        return _lsim_numba(a, b, u, x0)
    return _lsim_numpy(a, b, u, x0)


def filter_columns(a, c, u, *, backend=None):
    """Filter each column of ``u`` through ``s[k+1] = a s[k] + c u[k]``, ``s[0] = 0``.

    Returns an array of shape (N, m, n) holding ``s[k]`` for k < N.
    """
    a = np.ascontiguousarray(a, dtype=float)
    c = np.ascontiguousarray(np.asarray(c, dtype=float).reshape(a.shape[0]))
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    u = np.ascontiguousarray(u)
    if _use_numba(backend):
        return _filter_columns_numba(a, c, u)
    return _filter_columns_numpy(a, c, u)


def filtered_design(a, c, u, extra, *, powers=False, backend=None):
    """Columns ``[extra, filter_columns(a, c, u)]`` as one (N, e + m n) array.

    Filtered column ``j`` of ``u`` contributes ``n`` consecutive columns. With
    ``powers`` the n columns of ``power_rows(a.T, c, N)`` are put first.
    """
    a = np.ascontiguousarray(a, dtype=float)
    c = np.ascontiguousarray(np.asarray(c, dtype=float).reshape(a.shape[0]))
    u = np.ascontiguousarray(np.asarray(u, dtype=float).reshape(len(u), -1))
    extra = np.ascontiguousarray(np.asarray(extra, dtype=float).reshape(len(u), -1))
    if _use_numba(backend):
        return _design_numba(a, c, u, extra, powers)
    s = _filter_columns_numpy(a, c, u).reshape(len(u), -1)
    parts = [power_rows(a.T, c, len(u))] if powers else []
    return np.concatenate(parts + [extra, s], axis=1)


_POWER_CHUNK = 4096
_UNDERFLOW = 1e-250


def power_rows(a, c, n_rows):
    """Rows ``c a^k`` for k = 0 .. n_rows-1, shape (n_rows, n).

    Once a stable sequence has decayed below 1e-250 of its start the rest is
    left at zero, which keeps subnormal numbers out of later arithmetic.
    """
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    x = np.asarray(c, dtype=float).reshape(n)
    out = np.zeros((n_rows, n))
    start_norm = np.max(np.abs(x))
    done = 0
    zero_in = np.zeros(_POWER_CHUNK)
    while done < n_rows:
        m = min(_POWER_CHUNK, n_rows - done)
        states = lsim(a.T, np.zeros(n), zero_in[:m], x)
        out[done : done + m] = states[:m]
        done += m
        x = states[m]
        if np.max(np.abs(x)) <= _UNDERFLOW * start_norm:
            break
    return out


def _use_numba(backend):
    if backend is None:
        return HAVE_NUMBA
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable or disabled")
        return True
    if backend == "numpy":
        return False
    raise ValueError(f"unknown backend {backend!r}")
