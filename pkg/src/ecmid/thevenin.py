"""Thevenin model with n_x RC pairs, identified with an observer-based (MOLI) scheme.

The discrete model, in observable canonical coordinates with ``C = [1, 0, ...]``::

    x[k+1] = A x[k] + B i[k]
    v[k]   = OCV[0] - q[k]/C0 - R0 i[k] + C x[k],     q[k+1] = q[k] + ts i[k]

The state matrix is split as ``A = A0 + L C`` around a fixed stable companion
matrix ``A0``. Feeding the measured voltage back through ``L`` turns the output
error into a regression on signals filtered by ``(qI - A0^T)^-1 C^T``::

    v = C A0^k x0 + iF' Ba - i R0 + vF' L + OCV0 - q/C0 - 1F' L OCV0 + qF' L/C0

with ``Ba = B + L R0``. The last two terms are products of other unknowns, so
the estimate is found by a Jacobi fixed-point iteration that re-linearizes
those products each step, and ``A0`` itself is chosen by grid search.
"""

import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import _kernels
from ._linalg import logm_principal, lstsq_qr
from .exceptions import RankDeficiencyError, UnstableModelError
from .piecewise import PiecewiseModel, as_array
from .signals import SampledSignal, SegmentPlan

log = logging.getLogger(__name__)

JACOBI_TOL = 1e-10
JACOBI_MAX_ITER = 200
DESCENT_SLACK = 1e-12


# ---------------------------------------------------------------------------
# observer matrices and grids


@dataclass(frozen=True, eq=False)
class ObserverMatrix:
    """Companion matrix of the observable canonical form (``C = [1, 0, ...]``)."""

    a0: np.ndarray

    def __post_init__(self):
        a0 = np.array(self.a0, dtype=float, ndmin=2)
        n = a0.shape[0]
        expected = np.zeros((n, n))
        expected[:-1, 1:] = np.eye(n - 1)
        if a0.shape != (n, n) or not np.array_equal(a0[:, 1:], expected[:, 1:]):
            raise ValueError("a0 must be an observable-canonical companion matrix")
        a0.setflags(write=False)
        object.__setattr__(self, "a0", a0)

    @classmethod
    def from_eigenvalues(cls, eigenvalues):
        eig = np.atleast_1d(np.asarray(eigenvalues, dtype=complex))
        coeffs = np.real_if_close(np.poly(eig), tol=1e6)
        if np.iscomplexobj(coeffs):
            raise ValueError("eigenvalues must be real or come in conjugate pairs")
        return cls(companion(coeffs.real))

    @property
    def order(self):
        return self.a0.shape[0]

    @property
    def c_row(self):
        c = np.zeros(self.order)
        c[0] = 1.0
        return c

    @property
    def eigenvalues(self):
        return np.linalg.eigvals(self.a0)

    def validate(self):
        lam = self.eigenvalues
        problems = []
        if np.any(np.abs(lam) >= 1.0):
            problems.append("eigenvalue on or outside the unit circle")
        if np.any(lam.real <= 0):
            problems.append("eigenvalue with non-positive real part")
        if problems:
            raise ValueError(f"observer eigenvalues {np.round(lam, 6)}: " + "; ".join(problems))
        return self


def companion(poly):
    """Observable companion matrix of the monic polynomial ``poly`` (highest power first)."""
    poly = np.asarray(poly, dtype=float)
    n = poly.size - 1
    a = np.zeros((n, n))
    a[:, 0] = -poly[1:] / poly[0]
    a[:-1, 1:] = np.eye(n - 1)
    return a


def default_grid(order):
    """Observer eigenvalue candidates, one tuple per candidate ``A0``.

    Order 1: 0.01, 0.02, ..., 0.99. Order 2: every unordered pair (repeats
    allowed) from that real grid, then conjugate pairs ``r e^{+-j phi}`` with
    r = 0.10, 0.15, ..., 0.95 and phi = 5, 10, ..., 85 degrees.
    """
    real = np.round(np.arange(1, 100) * 0.01, 10)
    if order == 1:
        return [(float(x),) for x in real]
    if order == 2:
        cands = [(float(a), float(b)) for a, b in itertools.combinations_with_replacement(real, 2)]
        radii = np.round(np.arange(10, 96, 5) * 0.01, 10)
        angles = np.arange(1, 18) * (np.pi / 36)
        for r in radii:
            for phi in angles:
                z = r * np.exp(1j * phi)
                cands.append((complex(z), complex(np.conj(z))))
        return cands
    raise ValueError("default grids exist for orders 1 and 2 only")


def grid_from_points(points, order):
    """Build candidates from ``(re, im)`` eigenvalue rows.

    Order 1 uses every real row. Order 2 pairs all real rows (repeats
    allowed) and turns each row with ``im != 0`` into a conjugate pair; a row
    and its conjugate give one candidate.
    """
    pts = [complex(re, im) for re, im in points]
    real = [p.real for p in pts if p.imag == 0]
    cplx = list(dict.fromkeys(complex(p.real, abs(p.imag)) for p in pts if p.imag != 0))
    if order == 1:
        if cplx:
            raise ValueError("order-1 grids cannot contain complex eigenvalues")
        return [(r,) for r in real]
    if order == 2:
        cands = [tuple(p) for p in itertools.combinations_with_replacement(real, 2)]
        cands += [(p, p.conjugate()) for p in cplx]
        return cands
    raise ValueError("grids are defined for orders 1 and 2 only")


def read_grid(path, order):
    """CSV with header ``re,im``; one eigenvalue candidate per row."""
    import csv

    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != ["re", "im"]:
        raise ValueError(f"{path}: expected header re,im")
    points = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 2:
            raise ValueError(f"{path}: line {lineno}: expected 2 columns")
        points.append((float(row[0]), float(row[1])))
    return grid_from_points(points, order)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class JacobiReport:
    iterations: int
    converged: bool
    cost: float
    cost_history: tuple = field(repr=False)
    monotone: bool = True
    message: str = ""


@dataclass(frozen=True, eq=False)
class TheveninParams:
    """Identified segment parameters relative to the observer ``a0``.

    ``b_a = B + L R0``; the physical ``A`` and ``B`` are ``a0 + L C`` and
    ``b_a - L R0``. ``x0`` and ``ocv0`` are estimated in the first segment and
    carried from the previous segment otherwise.
    """

    a0: np.ndarray
    l_gain: np.ndarray
    b_a: np.ndarray
    r0: float
    inv_c0: float
    ocv0: float = math.nan
    x0: np.ndarray = None
    report: JacobiReport = None

    @property
    def order(self):
        return self.a0.shape[0]

    @property
    def c_row(self):
        c = np.zeros(self.order)
        c[0] = 1.0
        return c

    @property
    def a(self):
        return self.a0 + np.outer(self.l_gain, self.c_row)

    @property
    def b(self):
        return self.b_a - self.l_gain * self.r0

    @property
    def c0(self):
        return 1.0 / self.inv_c0 if self.inv_c0 != 0 else math.inf

    @property
    def stable(self):
        return bool(np.max(np.abs(np.linalg.eigvals(self.a))) < 1.0)

    @property
    def restriction_residuals(self):
        """``|theta_G - theta_D theta_E|`` and ``|theta_H - theta_D theta_F|``; zero by construction."""
        return 0.0, 0.0

    @classmethod
    def from_state_space(cls, a, b, r0, inv_c0, ocv0, x0=None, a0=None):
        """Express a canonical-form model ``(a, b)`` relative to observer ``a0``."""
        a = np.asarray(a, dtype=float)
        n = a.shape[0]
        if a0 is None:
            a0 = companion(np.poly(np.full(n, 0.5)))
        a0 = np.asarray(a0, dtype=float)
        l_gain = a[:, 0] - a0[:, 0]
        if not np.allclose(a[:, 1:], a0[:, 1:], rtol=0, atol=0):
            raise ValueError("a is not in observable canonical form")
        b = np.asarray(b, dtype=float).reshape(n)
        x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float)
        return cls(a0, l_gain, b + l_gain * r0, float(r0), float(inv_c0), float(ocv0), x0)

    @classmethod
    def from_physical(cls, ocv0, c0, r0, rc_pairs, ts, a0=None):
        """Build canonical-form parameters from a circuit with series RC pairs at rest."""
        a, b = canonical_from_rc(rc_pairs, ts)
        return cls.from_state_space(a, b, r0, 1.0 / c0, ocv0, None, a0)

    def theta(self):
        """Stacked ``[x0, Ba, R0, L, OCV0, 1/C0]`` (segment-1 layout)."""
        x0 = np.zeros(self.order) if self.x0 is None else self.x0
        return np.concatenate([x0, self.b_a, [self.r0], self.l_gain, [self.ocv0, self.inv_c0]])


# ---------------------------------------------------------------------------
# circuit <-> canonical form


@dataclass(frozen=True)
class RcPair:
    r: float
    c: float

    @property
    def tau(self):
        return self.r * self.c

    @property
    def valid(self):
        return self.r > 0 and self.c > 0


@dataclass(frozen=True)
class RcExtraction:
    pairs: tuple
    valid: bool
    poles: np.ndarray
    message: str = ""


def canonical_from_rc(rc_pairs, ts):
    """ZOH-discretize series RC pairs and return the canonical ``(A, B)`` of ``C x = -v_rc``."""
    rc_pairs = [p if isinstance(p, RcPair) else RcPair(*p) for p in rc_pairs]
    n = len(rc_pairs)
    if n == 0:
        raise ValueError("need at least one RC pair")
    poles = np.array([math.exp(-ts / p.tau) for p in rc_pairs])
    # each pair contributes R (1 - p) / (z - p) to v_rc / i; C x carries the opposite sign
    num = np.zeros(n)
    den = np.poly(poles)
    for j, p in enumerate(rc_pairs):
        others = np.poly(np.delete(poles, j)) if n > 1 else np.array([1.0])
        num -= p.r * (1.0 - poles[j]) * others
    a = companion(den)
    return a, num


def extract_rc(params, ts):
    """RC pairs ``v_rc(s)/i(s) = sum R_i / (1 + R_i C_i s)`` of an identified model.

    The discrete transfer ``-C (zI - A)^-1 B`` is mapped to continuous time with
    the principal matrix logarithm (exact ZOH inverse) and expanded in partial
    fractions. Pairs come back sorted by time constant, longest first. Complex,
    repeated or non-negative continuous poles give an invalid extraction with
    the poles reported.
    """
    a = params.a
    b = params.b
    c = params.c_row
    lam_d = np.linalg.eigvals(a)
    bad = (np.abs(lam_d.imag) > 1e-12) | (lam_d.real <= 0) | (lam_d.real >= 1.0)
    if np.any(bad):
        with np.errstate(divide="ignore", invalid="ignore"):
            poles = np.log(lam_d.astype(complex)) / ts
        return RcExtraction((), False, poles, "discrete poles outside (0, 1) on the real axis")
    a_bar = logm_principal(a) / ts
    b_bar = np.linalg.solve(a - np.eye(len(b)), a_bar @ b)
    poles, vec = np.linalg.eig(a_bar)
    if np.any(np.abs(poles.imag) > 1e-12 * np.max(np.abs(poles))) or np.any(poles.real >= 0):
        return RcExtraction((), False, poles, "continuous poles are not real and negative")
    poles = poles.real
    vec = vec.real
    if len(poles) > 1 and np.min(np.abs(np.diff(np.sort(poles)))) <= 1e-9 * np.max(np.abs(poles)):
        return RcExtraction((), False, poles, "repeated continuous pole")
    residues = (-c @ vec) * np.linalg.solve(vec, b_bar)
    pairs = []
    for p, res in zip(poles, residues):
        pairs.append(RcPair(r=-res / p, c=1.0 / res if res != 0 else math.inf))
    pairs.sort(key=lambda rc: -rc.tau if rc.valid else math.inf)
    valid = all(rc.valid for rc in pairs)
    return RcExtraction(tuple(pairs), valid, poles, "" if valid else "non-positive R or C")


# ---------------------------------------------------------------------------
# filtering and regressors


def observer_filter(observer, signal):
    """``s[k+1] = A0^T s[k] + C^T u[k]``, ``s[0] = 0``; returns an (N, n_x) array."""
    obs = observer if isinstance(observer, ObserverMatrix) else ObserverMatrix(observer)
    u = as_array(signal)
    return _kernels.filter_columns(obs.a0.T, obs.c_row, u)[:, 0, :]


@dataclass(frozen=True, eq=False)
class RegressorBlocks:
    """Named regressor blocks (each an (N, width) array) and the output ``y``.

    ``a0`` is set when the blocks come from the builders below, which lets the
    solvers use the exact linear dependence of the G and H blocks on the others.
    """

    blocks: dict
    y: np.ndarray
    order: int
    ts: float
    segment1: bool
    a0: np.ndarray = None

    @property
    def names(self):
        return list(self.blocks)

    def stacked(self):
        return np.column_stack([self.blocks[k] for k in self.blocks])

    def widths(self):
        return [self.blocks[k].shape[1] for k in self.blocks]

    def column_names(self):
        out = []
        for key, w in zip(self.names, self.widths()):
            out += [key] if w == 1 else [f"{key}[{j}]" for j in range(w)]
        return out


def _filtered(obs, i, v, q):
    u = np.column_stack([i, v, np.ones_like(i), q])
    s = _kernels.filter_columns(obs.a0.T, obs.c_row, u)
    return s[:, 0], s[:, 1], s[:, 2], s[:, 3]


def _charge(i, ts):
    return np.concatenate([[0.0], np.cumsum(ts * i[:-1])])


def build_regressors_segment1(current, voltage, observer, ts):
    """Blocks A..H for a segment with unknown OCV[0] and x[0]; widths n,n,1,n,1,1,n,n."""
    obs = observer if isinstance(observer, ObserverMatrix) else ObserverMatrix(observer)
    i = as_array(current)
    v = as_array(voltage)
    q = _charge(i, ts)
    i_f, v_f, one_f, q_f = _filtered(obs, i, v, q)
    blocks = {
        "A": _kernels.power_rows(obs.a0, obs.c_row, i.size),
        "B": i_f,
        "C": -i[:, None],
        "D": v_f,
        "E": np.ones((i.size, 1)),
        "F": -q[:, None],
        "G": -one_f,
        "H": q_f,
    }
    return RegressorBlocks(blocks, v.copy(), obs.order, ts, True, obs.a0)


def build_regressors_segment_i(current, voltage, observer, ts, ocv0, x0):
    """Blocks B, C, I, F, H for a segment whose OCV[0] and x[0] are known."""
    obs = observer if isinstance(observer, ObserverMatrix) else ObserverMatrix(observer)
    i = as_array(current)
    v = as_array(voltage)
    q = _charge(i, ts)
    i_f, v_f, one_f, q_f = _filtered(obs, i, v, q)
    free = _kernels.power_rows(obs.a0, obs.c_row, i.size) @ np.asarray(x0, dtype=float)
    blocks = {
        "B": i_f,
        "C": -i[:, None],
        "I": v_f - ocv0 * one_f,
        "F": -q[:, None],
        "H": q_f,
    }
    return RegressorBlocks(blocks, v - ocv0 - free, obs.order, ts, False, obs.a0)


# ---------------------------------------------------------------------------
# parameter layout


class _Layout:
    """Column bookkeeping of the full ``theta`` and the restricted ``Theta``."""

    def __init__(self, n, segment1):
        self.n = n
        self.segment1 = segment1
        if segment1:
            widths = {"A": n, "B": n, "C": 1, "D": n, "E": 1, "F": 1, "G": n, "H": n}
            big_widths = {"A": n, "B": n, "C": 1, "D": n, "E": 1, "F": 1}
        else:
            widths = {"B": n, "C": 1, "I": n, "F": 1, "H": n}
            big_widths = {"B": n, "C": 1, "D": n, "F": 1}
        self.cols = _slices(widths)
        self.params = _slices(big_widths)
        self.n_full = sum(widths.values())
        self.n_theta = sum(big_widths.values())
        self.names = []
        for key, w in widths.items():
            self.names += [key] if w == 1 else [f"{key}[{j}]" for j in range(w)]

    def transforms(self, theta):
        """Matrices ``T_psi``, ``T_j`` with ``Psi = Phi T_psi`` and ``J = Phi T_j``."""
        n = self.n
        c, p = self.cols, self.params
        t_psi = np.zeros((self.n_full, self.n_theta))
        eye = np.eye(n)
        theta_f = theta[p["F"]][0]
        theta_d = theta[p["D"]]
        if self.segment1:
            theta_e = theta[p["E"]][0]
            for key in "ABCDEF":
                t_psi[c[key], p[key]] = np.eye(c[key].stop - c[key].start)
            t_psi[c["G"], p["D"]] = theta_e * eye
            t_psi[c["H"], p["D"]] = theta_f * eye
            t_j = t_psi.copy()
            t_j[c["G"], p["E"]] = theta_d[:, None]
            t_j[c["H"], p["F"]] = theta_d[:, None]
        else:
            for key in "BCF":
                t_psi[c[key], p[key]] = np.eye(c[key].stop - c[key].start)
            t_psi[c["I"], p["D"]] = eye
            t_psi[c["H"], p["D"]] = theta_f * eye
            t_j = t_psi.copy()
            t_j[c["H"], p["F"]] = theta_d[:, None]
        return t_psi, t_j

    def expand(self, theta):
        """Full ``theta`` with the product terms filled in from the restrictions."""
        p = self.params
        theta_d = theta[p["D"]]
        theta_f = theta[p["F"]][0]
        if self.segment1:
            theta_e = theta[p["E"]][0]
            return np.concatenate([theta, theta_d * theta_e, theta_d * theta_f])
        return np.concatenate([theta, theta_d * theta_f])

    def structure(self, a0, ts):
        """``T`` with ``Phi = Phi[:, :n_theta] T`` for builder regressors.

        With ``P = (I - A0)^-1``: ``Phi_G = Phi_A P - Phi_E C P`` and
        ``Phi_H = -ts Phi_B P - Phi_F C P``.
        """
        n, c, p = self.n, self.cols, self.params
        pm = np.linalg.inv(np.eye(n) - a0)
        t = np.zeros((self.n_theta, self.n_full))
        t[:, : self.n_theta] = np.eye(self.n_theta)
        if self.segment1:
            t[p["A"], c["G"]] = pm
            t[p["E"], c["G"]] = -pm[0]
        t[p["B"], c["H"]] = -ts * pm
        t[p["F"], c["H"]] = -pm[0]
        return t

    def complete(self, alpha, a0, ts):
        """Full ``theta`` reproducing ``Phi[:, :n_theta] alpha`` that meets the restrictions."""
        n, p = self.n, self.params
        pm = np.linalg.inv(np.eye(n) - a0)
        theta = np.array(alpha, dtype=float)
        pd = pm @ theta[p["D"]]
        gain = 1.0 - pd[0]
        if abs(gain) < 1e-12:
            raise RankDeficiencyError("D", "A0 + L C has an eigenvalue at 1")
        theta[p["F"]] /= gain
        theta[p["B"]] += ts * pd * theta[p["F"]][0]
        if self.segment1:
            theta[p["E"]] /= gain
            theta[p["A"]] -= pd * theta[p["E"]][0]
        return self.expand(theta)


def _slices(widths):
    out, start = {}, 0
    for key, w in widths.items():
        out[key] = slice(start, start + w)
        start += w
    return out


# ---------------------------------------------------------------------------
# compressed least squares


@dataclass(frozen=True, eq=False)
class _Compressed:
    """``|y - phi theta|^2 = |z - r theta|^2 + floor`` for every theta."""

    r: np.ndarray
    z: np.ndarray
    floor: float


def _compress_qr(phi, y):
    q, r = scipy.linalg.qr(phi, mode="economic")
    z = q.T @ y
    return _Compressed(r, z, float(np.sum((y - q @ z) ** 2)))


def _compress_gram(gram, const_col=None, shift=0.0):
    """Compression from the Gram matrix of ``[phi, y - shift]`` (``y`` last).

    ``phi`` must have full column rank. Centring ``y`` on the constant column
    ``const_col`` keeps the residual floor from being a small difference of
    large numbers; the shift is added back into ``z``.
    """
    p = gram.shape[0] - 1
    d = np.sqrt(np.diag(gram)[:p]).copy()
    d[d == 0] = 1.0
    g = gram[:p, :p] / np.outer(d, d)
    try:
        r_s = scipy.linalg.cholesky(g, lower=False)
    except np.linalg.LinAlgError as exc:
        raise RankDeficiencyError("gram", "Gram matrix is not positive definite") from exc
    z = scipy.linalg.solve_triangular(r_s, gram[:p, p] / d, trans="T")
    floor = max(float(gram[p, p] - z @ z), 0.0)
    r = r_s * d[None, :]
    if const_col is not None:
        z = z + shift * r[:, const_col]
    return _Compressed(r, z, floor)


class _ScreeningData:
    """Observer-independent columns of one segment, shared by all grid candidates."""

    def __init__(self, current, voltage, ts, ocv0=None, x0=None):
        self.i = as_array(current)
        self.v = as_array(voltage)
        self.ts = ts
        self.ocv0 = ocv0
        self.x0 = None if x0 is None else np.asarray(x0, dtype=float)
        i, v = self.i, self.v
        q = _charge(i, ts)
        if ocv0 is None:
            self.shift = float(np.mean(v))
            self.extra = np.column_stack([-i, np.ones_like(i), -q, v - self.shift])
            self.inputs = np.column_stack([i, v])
        else:
            self.shift = 0.0
            self.extra = np.column_stack([-i, -q, v - ocv0])
            self.inputs = np.column_stack([i, v - ocv0])

    def compress(self, obs):
        """Gram-based compression of the full regressor for observer ``obs``."""
        n = obs.order
        layout = _Layout(n, self.ocv0 is None)
        x = _kernels.filtered_design(obs.a0.T, obs.c_row, self.inputs, self.extra, powers=True)
        if layout.segment1:
            # columns: powers(n), -i, 1, -q, y, s_i(n), s_v(n)
            e = n + 4
            idx = np.r_[0:n, e : e + n, n, e + n : e + 2 * n, n + 1, n + 2, n + 3]
            gram = x.T @ x
            const = layout.params["E"].start
        else:
            # columns: powers(n), -i, -q, v - ocv0, s_i(n), s_(v - ocv0)(n); the known
            # free response C A0^k x0 moves from the regressors into y
            e = n + 3
            t = np.zeros((x.shape[1], 2 * n + 3))
            t[e : e + n, :n] = np.eye(n)
            t[n, n] = 1.0
            t[e + n : e + 2 * n, n + 1 : 2 * n + 1] = np.eye(n)
            t[n + 1, 2 * n + 1] = 1.0
            t[n + 2, 2 * n + 2] = 1.0
            t[:n, 2 * n + 2] = -self.x0
            xt = x @ t
            gram = xt.T @ xt
            idx = np.arange(2 * n + 3)
            const = None
        red = _compress_gram(gram[np.ix_(idx, idx)], const, self.shift)
        return _Compressed(red.r @ layout.structure(obs.a0, self.ts), red.z, red.floor), layout


def _initial_theta(comp, layout, a0, ts):
    k = layout.n_theta
    alpha = lstsq_qr(comp.r[:, :k], comp.z, names=layout.names[:k])[0]
    return layout.complete(alpha, a0, ts)


def unconstrained_ls(blocks, y=None):
    """Ordinary least-squares estimate of the stacked parameter vector.

    For regressors built from data the G and H blocks are exact linear
    combinations of the others (the filtered step lies in the span of
    ``C A0^k`` and the constant, the filtered charge in the span of the
    filtered current and the charge), so the minimizer is not unique. The one
    returned is the minimizer that also satisfies ``theta_G = theta_D theta_E``
    and ``theta_H = theta_D theta_F``. Custom blocks (no ``a0``) and plain
    arrays must have full column rank. Rank problems raise
    :class:`RankDeficiencyError` naming a column.
    """
    if not isinstance(blocks, RegressorBlocks):
        return lstsq_qr(np.asarray(blocks, dtype=float), np.asarray(y, dtype=float))[0]
    y = blocks.y if y is None else np.asarray(y, dtype=float)
    if blocks.a0 is None:
        return lstsq_qr(blocks.stacked(), y, names=blocks.column_names())[0]
    layout = _Layout(blocks.order, blocks.segment1)
    k = layout.n_theta
    alpha = lstsq_qr(blocks.stacked()[:, :k], y, names=blocks.column_names()[:k])[0]
    return layout.complete(alpha, blocks.a0, blocks.ts)


# ---------------------------------------------------------------------------
# restricted Jacobi iteration


def _cost(comp, r_psi, theta):
    resid = comp.z - r_psi @ theta
    return 0.5 * (float(resid @ resid) + comp.floor)


def _jacobi(comp, layout, theta, tol, max_iter):
    theta = np.asarray(theta, dtype=float).copy()
    if theta.size != layout.n_theta:
        raise ValueError(f"theta_init has {theta.size} entries, expected {layout.n_theta}")
    costs = [_cost(comp, comp.r @ layout.transforms(theta)[0], theta)]
    best_theta, best_cost = theta.copy(), costs[0]
    converged = False
    monotone = True
    message = ""
    it = 0
    for it in range(1, max_iter + 1):
        t_psi, t_j = layout.transforms(theta)
        r_psi = comp.r @ t_psi
        r_j = comp.r @ t_j
        # J^T Psi Theta_new = J^T Y, solved for the increment so that rounding
        # scales with the gradient rather than with Y
        lhs = r_j.T @ r_psi
        rhs = r_j.T @ (comp.z - r_psi @ theta)
        scale = np.sqrt(np.abs(np.diag(lhs)))
        scale[scale == 0] = 1.0
        try:
            step = np.linalg.solve(lhs / scale[:, None] / scale[None, :], rhs / scale)
        except np.linalg.LinAlgError:
            message = "singular iteration matrix"
            break
        new = theta + step / scale
        if not np.all(np.isfinite(new)):
            message = "non-finite iterate"
            break
        cost_new = _cost(comp, comp.r @ layout.transforms(new)[0], new)
        if cost_new > costs[-1] + DESCENT_SLACK * max(1.0, costs[-1]):
            monotone = False
        costs.append(cost_new)
        change = np.linalg.norm(new - theta) / max(np.linalg.norm(theta), np.finfo(float).tiny)
        theta = new
        if cost_new <= best_cost:
            best_theta, best_cost = theta.copy(), cost_new
        if change < tol:
            converged = True
            break
    if converged and not monotone:
        converged = False
        message = "cost increased between iterations"
    elif not converged and not message:
        message = f"no convergence after {max_iter} iterations"
    return best_theta, JacobiReport(it, converged, best_cost, tuple(costs), monotone, message)


def jacobi_constrained(blocks, y=None, theta_init=None, tol=JACOBI_TOL, max_iter=JACOBI_MAX_ITER):
    """Minimize ``V(Theta) = 0.5 |Y - Psi(Theta) Theta|^2`` under the product restrictions.

    Each step solves ``[J^T Psi] Theta_new = J^T Y`` with ``Psi`` and
    ``J = Psi + (dPsi/dTheta) Theta`` evaluated at the previous iterate.
    Iteration stops when the relative step falls below ``tol``. The default
    start is :func:`unconstrained_ls` truncated to ``Theta``. The returned
    ``Theta`` is the lowest-cost iterate; a non-convergent or non-monotone run
    is flagged in the :class:`JacobiReport` and with a warning.
    """
    layout = _Layout(blocks.order, blocks.segment1)
    y = blocks.y if y is None else np.asarray(y, dtype=float)
    if theta_init is None:
        theta_init = unconstrained_ls(blocks, y)[: layout.n_theta]
    comp = _compress_qr(blocks.stacked(), y)
    theta, report = _jacobi(comp, layout, theta_init, tol, max_iter)
    if not report.converged:
        warnings.warn(f"Jacobi iteration: {report.message}", RuntimeWarning, stacklevel=2)
    return theta, report


def cost(blocks, theta, y=None):
    """``V(Theta)`` evaluated directly on the regressor."""
    layout = _Layout(blocks.order, blocks.segment1)
    full = layout.expand(np.asarray(theta, dtype=float))
    y = blocks.y if y is None else y
    resid = y - blocks.stacked() @ full
    return 0.5 * float(resid @ resid)


# ---------------------------------------------------------------------------
# segment estimators and observer search


def _params_from_theta(theta, obs, layout, ocv0=None, x0=None, report=None):
    p = layout.params
    common = dict(
        a0=obs.a0, l_gain=theta[p["D"]].copy(), b_a=theta[p["B"]].copy(),
        r0=float(theta[p["C"]][0]), inv_c0=float(theta[p["F"]][0]), report=report,
    )
    if layout.segment1:
        return TheveninParams(ocv0=float(theta[p["E"]][0]), x0=theta[p["A"]].copy(), **common)
    return TheveninParams(ocv0=float(ocv0), x0=np.asarray(x0, dtype=float).copy(), **common)


def estimate_segment(current, voltage, observer, ts, ocv0=None, x0=None, *, compression="qr",
                     tol=JACOBI_TOL, max_iter=JACOBI_MAX_ITER):
    """Segment estimator for a fixed observer: initial least squares, then Jacobi.

    With ``ocv0``/``x0`` unset this is the first-segment estimator (both
    unknown); otherwise both are treated as known. ``compression="gram"``
    trades accuracy for speed and is meant for screening. Returns
    ``(params, V)``.
    """
    obs = observer if isinstance(observer, ObserverMatrix) else ObserverMatrix(observer)
    if (ocv0 is None) != (x0 is None):
        raise ValueError("give both ocv0 and x0, or neither")
    i = as_array(current)
    v = as_array(voltage)
    if compression == "gram":
        comp, layout = _ScreeningData(i, v, ts, ocv0, x0).compress(obs)
    elif compression == "qr":
        if ocv0 is None:
            blocks = build_regressors_segment1(i, v, obs, ts)
        else:
            blocks = build_regressors_segment_i(i, v, obs, ts, ocv0, x0)
        layout = _Layout(obs.order, blocks.segment1)
        comp = _compress_qr(blocks.stacked(), blocks.y)
    else:
        raise ValueError(f"unknown compression {compression!r}")
    theta0 = _initial_theta(comp, layout, obs.a0, ts)[: layout.n_theta]
    theta, report = _jacobi(comp, layout, theta0, tol, max_iter)
    return _params_from_theta(theta, obs, layout, ocv0, x0, report), report.cost


@dataclass(frozen=True, eq=False)
class SearchResult:
    observer: ObserverMatrix
    params: TheveninParams
    cost: float
    costs: np.ndarray
    candidates: list


def observer_search(current, voltage, order, ts, grid=None, ocv0=None, x0=None, *,
                    screening="gram"):
    """Run the segment estimator for every observer in ``grid`` and keep the lowest ``V``.

    Candidates are scored with the Gram-based estimator and the winner is
    refitted with QR. Ties go to the first candidate in grid order. Candidates
    whose regressor is numerically singular are skipped.
    """
    grid = default_grid(order) if grid is None else list(grid)
    if not grid:
        raise ValueError("observer grid is empty")
    i = as_array(current)
    v = as_array(voltage)
    costs = np.full(len(grid), np.inf)
    data = _ScreeningData(i, v, ts, ocv0, x0) if screening == "gram" else None
    for idx, eig in enumerate(grid):
        if len(eig) != order:
            raise ValueError(f"grid candidate {eig} does not have {order} eigenvalues")
        obs = ObserverMatrix.from_eigenvalues(eig).validate()
        try:
            if data is None:
                _, costs[idx] = estimate_segment(i, v, obs, ts, ocv0, x0, compression=screening)
            else:
                comp, layout = data.compress(obs)
                theta0 = _initial_theta(comp, layout, obs.a0, ts)[: layout.n_theta]
                costs[idx] = _jacobi(comp, layout, theta0, JACOBI_TOL, JACOBI_MAX_ITER)[1].cost
        except (RankDeficiencyError, np.linalg.LinAlgError) as exc:
            log.debug("observer %s skipped: %s", eig, exc)
    if not np.any(np.isfinite(costs)):
        raise RankDeficiencyError("all", "no observer candidate produced an estimate")
    best = int(np.argmin(costs))
    obs = ObserverMatrix.from_eigenvalues(grid[best])
    params, v_best = estimate_segment(i, v, obs, ts, ocv0, x0, compression="qr")
    if not params.report.converged:
        warnings.warn(f"Jacobi iteration: {params.report.message}", RuntimeWarning, stacklevel=2)
    log.info("observer %s selected, V = %.6g", np.round(obs.eigenvalues, 4), v_best)
    return SearchResult(obs, params, v_best, costs, grid)


# ---------------------------------------------------------------------------
# simulation and piecewise identification


def simulate_segment(params, current, ts, ocv_init, state=None):
    """Returns ``(voltage, ocv, final_ocv, final_x)``."""
    i = as_array(current)
    n = params.order
    x0 = np.zeros(n) if state is None else np.asarray(state, dtype=float).reshape(n)
    if not params.stable:
        warnings.warn("simulating an unstable Thevenin model", RuntimeWarning, stacklevel=2)
    x = _kernels.lsim(params.a, params.b, i, x0)
    q = np.concatenate([[0.0], np.cumsum(ts * i)])
    ocv_all = ocv_init - params.inv_c0 * q
    ocv = ocv_all[:-1]
    v = ocv - params.r0 * i + x[:-1, 0]
    return v, ocv, float(ocv_all[-1]), x[-1].copy()


def thevenin_simulate(params, current, ocv_init, x_init, ts=None, strict=False):
    """Simulate one segment; ``strict`` turns an unstable ``A`` into an error."""
    if strict and not params.stable:
        raise UnstableModelError("A = A0 + L C has an eigenvalue on or outside the unit circle")
    if ts is None:
        ts = current.ts
    v, _, _, _ = simulate_segment(params, current, ts, ocv_init, x_init)
    return SampledSignal(v, ts, "V")


def thevenin_identify(record, order, plan=None, grid=None):
    """Piecewise MOLI identification with an observer search in every segment.

    Later segments start from the OCV and canonical state reached by
    simulating the previous identified segment.
    """
    if order not in (1, 2):
        raise ValueError("Thevenin identification supports orders 1 and 2")
    plan = SegmentPlan((len(record),)) if plan is None else plan
    plan.validate(len(record), min_length=3 * order + 3)
    ts = record.ts
    i = record.current.values
    v = record.voltage.values
    fitted = []
    ocv = x = None
    for idx, (start, stop) in enumerate(plan.bounds):
        res = observer_search(i[start:stop], v[start:stop], order, ts, grid, ocv, x)
        p = res.params
        if idx == 0:
            ocv, x = p.ocv0, p.x0
        fitted.append(p)
        _, _, ocv, x = simulate_segment(p, i[start:stop], ts, ocv, x)
    return PiecewiseModel("thevenin", tuple(fitted), plan, ts, fitted[0].ocv0, fitted[0].x0)
