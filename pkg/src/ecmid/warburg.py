"""Warburg diffusion impedance: sampled impulse response and rational approximation.

The Warburg element ``A_w / sqrt(j w)`` is a semi-integrator of current. Under
zero-order hold its impulse response is known in closed form; a finite
state-space model of it is obtained with the Ho-Kalman algorithm and can be
mapped back to continuous time with the principal matrix logarithm.
"""

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, svds
from scipy.special import gamma

from . import _kernels
from ._linalg import logm_principal
from .exceptions import DegenerateOrderError, MatrixLogError, UnstableModelError

SV_RTOL = 1e-12
_DENSE_SVD_MAX = 400


@dataclass(frozen=True, eq=False)
class WarburgRealization:
    """Discrete model ``x[k+1] = a x[k] + b i[k]``, ``y[k] = c x[k]`` of the normalized
    Warburg impedance ``Z_w / (A_w sqrt(ts))``; ``b`` and ``c`` are flat length-n arrays.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    ts: float = 1.0

    def __post_init__(self):
        a = np.array(self.a, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError(f"a must be square, got shape {a.shape}")
        b = np.array(self.b, dtype=float).reshape(n)
        c = np.array(self.c, dtype=float).reshape(n)
        for arr in (a, b, c):
            arr.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)

    @property
    def order(self):
        return self.a.shape[0]

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.a))))

    def to_dict(self):
        return {"a": self.a.tolist(), "b": self.b.tolist(), "c": self.c.tolist(), "ts": self.ts}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["a"]), np.array(d["b"]), np.array(d["c"]), float(d.get("ts", 1.0)))


@dataclass(frozen=True, eq=False)
class ContinuousRealization:
    a_bar: np.ndarray
    b_bar: np.ndarray
    c_bar: np.ndarray


def fractional_impulse(alpha, ts, k_max):
    """ZOH impulse response of ``1/s**alpha`` for k = 0 .. k_max.

    ``h[0] = 0`` and ``h[k] = ts**alpha / (alpha*Gamma(alpha)) * (k**alpha - (k-1)**alpha)``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha!r}")
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    k = np.arange(1, int(k_max) + 1, dtype=float)
    h = np.zeros(int(k_max) + 1)
    h[1:] = ts**alpha / (alpha * gamma(alpha)) * (k**alpha - (k - 1.0) ** alpha)
    return h


def warburg_impulse(a_w, ts, k_max):
    """``w[k] = a_w sqrt(ts) * 2/sqrt(pi) * (sqrt(k) - sqrt(k-1))``, ``w[0] = 0``."""
    if not a_w > 0:
        raise ValueError(f"Warburg coefficient must be positive, got {a_w!r}")
    return a_w * math.sqrt(ts) * fractional_impulse(0.5, 1.0, k_max)


def _toeplitz_hankel_product(g, rows, cols, x):
    # H[i, j] = g[i + j] equals a Toeplitz matrix times the column-reversed x
    first_col = g[cols - 1 : cols - 1 + rows]
    first_row = g[cols - 1 :: -1][:cols]
    return scipy.linalg.matmul_toeplitz((first_col, first_row), x.reshape(cols, -1)[::-1])


def _hankel_operator(g, rows, cols):
    """Hankel ``H[i, j] = g[i + j]`` as an FFT-backed linear operator."""
    g = np.asarray(g, dtype=float)

    def matvec(x):
        return _toeplitz_hankel_product(g, rows, cols, np.asarray(x))

    def rmatvec(y):
        return _toeplitz_hankel_product(g, cols, rows, np.asarray(y))

    return LinearOperator(
        (rows, cols), matvec=matvec, rmatvec=rmatvec, matmat=matvec, rmatmat=rmatvec,
        dtype=float,
    )


def ho_kalman(impulse, order, hankel_size=None):
    """Balanced order-``order`` realization of a scalar impulse response.

    ``impulse[0]`` is the direct feedthrough (ignored; the realization has
    none) and ``impulse[1:]`` are the Markov parameters. The Hankel matrix is
    ``hankel_size x hankel_size`` built from ``impulse[1 : 2*hankel_size + 1]``;
    by default it is the largest square Hankel the data supports, which is
    what is needed to capture slowly decaying tails such as the Warburg
    ``1/sqrt(k)`` decay.

    The factorization uses the leading singular triplets (dense SVD for small
    Hankels, Lanczos on an FFT matrix-vector product otherwise). The square-root
    split of the singular values gives a balanced realization; each state's sign
    is fixed so that the corresponding entry of ``c`` is non-negative.
    """
    g = np.asarray(impulse, dtype=float).reshape(-1)
    order = int(order)
    if order < 1:
        raise ValueError("order must be at least 1")
    if g.size < 4 * order + 2:
        raise ValueError(f"need at least {4 * order + 2} impulse samples for order {order}")
    max_size = (g.size - 1) // 2
    size = max_size if hankel_size is None else int(hankel_size)
    if not order < size <= max_size:
        raise ValueError(f"hankel_size must lie in ({order}, {max_size}], got {size}")
    markov = g[1 : 2 * size + 1]

    if size <= _DENSE_SVD_MAX:
        h = scipy.linalg.hankel(markov[:size], markov[size - 1 : 2 * size - 1])
        u, s, vt = np.linalg.svd(h)
        u, s, vt = u[:, :order], s[:order], vt[:order]
    else:
        h_op = _hankel_operator(markov, size, size)
        k = min(order + 1, size - 1)
        u, s, vt = svds(h_op, k=k, v0=np.ones(size), tol=0, random_state=0)
        idx = np.argsort(s)[::-1]
        u, s, vt = u[:, idx[:order]], s[idx[:order]], vt[idx[:order]]
    if s[0] <= 0 or s[-1] <= SV_RTOL * s[0]:
        raise DegenerateOrderError(
            f"Hankel matrix has numerical rank below {order} "
            f"(sigma_{order}/sigma_1 = {s[-1] / s[0] if s[0] > 0 else 0.0:.3g})"
        )

    root = np.sqrt(s)
    # shifted Hankel applied to V: H_up[i, j] = markov[i + j + 1]
    if size <= _DENSE_SVD_MAX:
        h_up = scipy.linalg.hankel(markov[1 : size + 1], markov[size : 2 * size])
        hv = h_up @ vt.T
    else:
        hv = _toeplitz_hankel_product(markov[1:], size, size, vt.T.copy())
    a = (u / root).T @ hv / root
    b = vt[:, 0] * root
    c = u[0, :] * root
    flip = np.where(c < 0, -1.0, 1.0)
    a = a * np.outer(flip, flip)
    b = b * flip
    c = c * flip
    rho = float(np.max(np.abs(np.linalg.eigvals(a))))
    if rho >= 1.0:
        raise UnstableModelError(f"order-{order} realization is unstable (spectral radius {rho:.6g})")
    return WarburgRealization(a, b, c)


def realization_impulse(r, k_max):
    """``w_hat[0] = 0`` and ``w_hat[k] = c a^(k-1) b`` for k = 1 .. k_max."""
    k_max = int(k_max)
    if k_max < 0:
        raise ValueError("k_max must be non-negative")
    u = np.zeros(k_max)
    if k_max:
        u[0] = 1.0
    states = _kernels.lsim(r.a, r.b, u)
    return states @ r.c


def relative_error(w, w_hat):
    """RMS error of ``w_hat`` against ``w`` in percent of the RMS of ``w``."""
    w = np.asarray(w, dtype=float)
    w_hat = np.asarray(w_hat, dtype=float)
    if w.shape != w_hat.shape:
        raise ValueError(f"length mismatch: {w.shape} vs {w_hat.shape}")
    ref = np.sqrt(np.mean(w**2))
    if ref == 0.0:
        raise ValueError("reference impulse response has zero energy")
    return 100.0 * np.sqrt(np.mean((w - w_hat) ** 2)) / ref


def to_continuous(r, ts=None):
    """ZOH-inverse conversion: ``a_bar = log(a)/ts``, ``b_bar = -(I - a)^-1 a_bar b``, ``c_bar = c``."""
    ts = r.ts if ts is None else ts
    a_bar = logm_principal(r.a) / ts
    eye = np.eye(r.order)
    try:
        lu = scipy.linalg.lu_factor(eye - r.a, check_finite=True)
    except (ValueError, scipy.linalg.LinAlgError) as exc:  # pragma: no cover
        raise MatrixLogError("I - a is singular") from exc
    if np.min(np.abs(np.diag(lu[0]))) <= 1e-14 * np.max(np.abs(np.diag(lu[0]))):
        raise MatrixLogError("I - a is singular")
    b_bar = -scipy.linalg.lu_solve(lu, a_bar @ r.b)
    return ContinuousRealization(a_bar, b_bar, r.c.copy())


def to_discrete(cr, ts):
    """Exact ZOH discretization of a continuous realization (inverse of :func:`to_continuous`)."""
    n = cr.a_bar.shape[0]
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = cr.a_bar * ts
    m[:n, n] = cr.b_bar * ts
    e = scipy.linalg.expm(m)
    return WarburgRealization(e[:n, :n], e[:n, n], cr.c_bar, ts)


def freq_response(r, omegas):
    """``H(e^{jw}) = c (e^{jw} I - a)^-1 b`` at normalized frequencies ``omegas`` (rad/sample)."""
    omegas = np.atleast_1d(np.asarray(omegas, dtype=float))
    if np.any(omegas <= 0) or np.any(omegas > np.pi):
        raise ValueError("frequencies must lie in (0, pi]")
    lam, vec = np.linalg.eig(r.a)
    if np.linalg.cond(vec) < 1e8:
        left = r.c @ vec
        right = np.linalg.solve(vec, r.b)
        z = np.exp(1j * omegas)
        return (left * right / (z[:, None] - lam[None, :])).sum(axis=1)
    eye = np.eye(r.order)
    return np.array([r.c @ np.linalg.solve(np.exp(1j * w) * eye - r.a, r.b) for w in omegas])


def continuous_freq_response(cr, omegas):
    """``c_bar (j w I - a_bar)^-1 b_bar`` at angular frequencies ``omegas`` (rad/s)."""
    eye = np.eye(cr.a_bar.shape[0])
    return np.array(
        [cr.c_bar @ np.linalg.solve(1j * w * eye - cr.a_bar, cr.b_bar) for w in np.atleast_1d(omegas)]
    )


def warburg_reference(omegas):
    """Ideal normalized Warburg response ``1/sqrt(j w)`` with ``sqrt(j) = e^{j pi/4}``."""
    omegas = np.asarray(omegas, dtype=float)
    return np.exp(-1j * np.pi / 4) / np.sqrt(omegas)


def bode_table(r, omegas):
    """Columns: omega, |H| dB, phase deg, ideal |Z| dB, ideal phase deg."""
    h = freq_response(r, omegas)
    ref = warburg_reference(omegas)
    return np.column_stack(
        [
            omegas,
            20 * np.log10(np.abs(h)),
            np.degrees(np.angle(h)),
            20 * np.log10(np.abs(ref)),
            np.degrees(np.angle(ref)),
        ]
    )


def paper_realization():
    """The order-7 realization printed in the source publication (5-6 significant digits)."""
    text = resources.files("ecmid").joinpath("data/warburg_order7_printed.json").read_text()
    return WarburgRealization.from_dict(json.loads(text))


def default_realization(order=7, k_max=10000):
    """Order-``order`` Ho-Kalman fit of the normalized Warburg impulse over ``k_max`` samples.

    Cached per (order, k_max) since every Randles identification reuses it.
    """
    key = (int(order), int(k_max))
    if key not in _REALIZATION_CACHE:
        _REALIZATION_CACHE[key] = ho_kalman(fractional_impulse(0.5, 1.0, key[1]), key[0])
    return _REALIZATION_CACHE[key]


_REALIZATION_CACHE = {}
