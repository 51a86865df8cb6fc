"""Simplified Randles circuit: OCV capacitor, lumped resistance R_b and a Warburg element.

Discrete model (zero-order hold)::

    OCV[k+1] = OCV[k] - ts/C0 * i[k]
    x_w[k+1] = A_z x_w[k] + B_z i[k]
    v[k]     = OCV[k] - sqrt(ts) A_w C_z x_w[k] - R_b i[k]

``(A_z, B_z, C_z)`` is a fixed realization of the normalized Warburg impedance,
so only C0, A_w and R_b (plus the initial OCV and diffusion state in the first
segment) are estimated, and the regression is linear in them.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from ._linalg import lstsq_qr
from .piecewise import PiecewiseModel, as_array
from .signals import SampledSignal, SegmentPlan
from .warburg import paper_realization


@dataclass(frozen=True, eq=False)
class RandlesParams:
    """Per-segment parameters.

    ``aw_scaled`` is ``sqrt(ts) * A_w`` (ohm). ``xw0_scaled`` is
    ``sqrt(ts) * A_w * x_w[0]`` and, like ``ocv0``, is only estimated in the
    first segment.
    """

    inv_c0: float
    aw_scaled: float
    rb: float
    ocv0: float = math.nan
    xw0_scaled: np.ndarray = None
    residual_rms: float = field(default=math.nan, compare=False)

    @classmethod
    def from_physical(cls, ocv0, c0, a_w, rb, ts, order=7):
        return cls(1.0 / c0, math.sqrt(ts) * a_w, rb, ocv0, np.zeros(order))

    @property
    def c0(self):
        return 1.0 / self.inv_c0 if self.inv_c0 != 0 else math.inf

    def a_w(self, ts):
        return self.aw_scaled / math.sqrt(ts)

    @property
    def valid(self):
        return self.inv_c0 > 0 and self.rb >= 0 and self.aw_scaled > 0

    @property
    def n_params(self):
        return 3 if self.xw0_scaled is None else 4 + len(self.xw0_scaled)

    def initial_diffusion_state(self):
        """Unscaled ``x_w[0]`` recovered from ``xw0_scaled``."""
        if self.xw0_scaled is None:
            return None
        if self.aw_scaled == 0:
            return np.zeros_like(self.xw0_scaled)
        return np.asarray(self.xw0_scaled) / self.aw_scaled

    def as_dict(self, ts):
        return {"ocv0": self.ocv0, "c0": self.c0, "a_w": self.a_w(ts), "r_b": self.rb}


def zero_state_response(realization, current):
    """States of ``(A_z, B_z, I)`` driven by ``current`` from rest: row k is ``x_w0[k]``."""
    i = as_array(current)
    return _kernels.lsim(realization.a, realization.b, i)[:-1]


def simulate_segment(params, current, ts, ocv_init, state=None, realization=None):
    """Returns ``(voltage, ocv, final_ocv, final_xw)``; ``state`` is the unscaled ``x_w``."""
    r = realization if realization is not None else paper_realization()
    i = as_array(current)
    xw0 = np.zeros(r.order) if state is None else np.asarray(state, dtype=float)
    if xw0.shape != (r.order,):
        raise ValueError(f"diffusion state has shape {xw0.shape}, realization order is {r.order}")
    xw = _kernels.lsim(r.a, r.b, i, xw0)
    q = np.concatenate([[0.0], np.cumsum(ts * i)])
    ocv_all = ocv_init - params.inv_c0 * q
    ocv = ocv_all[:-1]
    v = ocv - params.aw_scaled * (xw[:-1] @ r.c) - params.rb * i
    return v, ocv, float(ocv_all[-1]), xw[-1].copy()


def randles_simulate(params, realization, current, ocv_init, xw_init=None):
    """One-segment simulation. Returns ``(voltage, final_ocv, final_xw)``."""
    v, _, ocv_end, xw_end = simulate_segment(
        params, current, current.ts, ocv_init, xw_init, realization
    )
    return SampledSignal(v, current.ts, "V"), ocv_end, xw_end


def _charge(i, ts):
    return np.concatenate([[0.0], np.cumsum(ts * i[:-1])])


def segment1_regressor(current, ts, realization):
    """Columns ``[1, -C_z A_z^k, -q_d, -C_z x_w0[k], -i]`` (n + 4 of them)."""
    i = as_array(current)
    r = realization
    n = r.order
    free = _kernels.power_rows(r.a, r.c, i.size)
    forced = zero_state_response(r, i) @ r.c
    phi = np.column_stack([np.ones_like(i), -free, -_charge(i, ts), -forced, -i])
    names = ["ocv0"] + [f"xw0_scaled[{j}]" for j in range(n)] + ["inv_c0", "aw_scaled", "rb"]
    return phi, names


def randles_identify_segment1(current, voltage, ts, realization):
    """LSE of ``[OCV[0], sqrt(ts) A_w x_w[0], 1/C0, sqrt(ts) A_w, R_b]``."""
    phi, names = segment1_regressor(current, ts, realization)
    theta, resid = lstsq_qr(phi, as_array(voltage), names=names)
    n = realization.order
    return RandlesParams(
        inv_c0=theta[n + 1],
        aw_scaled=theta[n + 2],
        rb=theta[n + 3],
        ocv0=theta[0],
        xw0_scaled=theta[1 : n + 1].copy(),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def segment_i_regressor(current, ts, realization, xw_boundary):
    i = as_array(current)
    r = realization
    xw_b = np.asarray(xw_boundary, dtype=float).reshape(r.order)
    free = _kernels.power_rows(r.a, r.c, i.size) @ xw_b
    forced = zero_state_response(r, i) @ r.c
    phi = np.column_stack([-_charge(i, ts), -(free + forced), -i])
    return phi, ["inv_c0", "aw_scaled", "rb"]


def randles_identify_segment_i(current, voltage, ts, realization, ocv_boundary, xw_boundary):
    """LSE of ``[1/C0, sqrt(ts) A_w, R_b]`` given the starting OCV and diffusion state."""
    phi, names = segment_i_regressor(current, ts, realization, xw_boundary)
    y = as_array(voltage) - ocv_boundary
    theta, resid = lstsq_qr(phi, y, names=names)
    return RandlesParams(
        inv_c0=theta[0], aw_scaled=theta[1], rb=theta[2], ocv0=float(ocv_boundary),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def randles_identify(record, plan=None, realization=None):
    """Piecewise identification; boundary OCV and ``x_w`` come from simulating each
    identified segment forward."""
    r = realization if realization is not None else paper_realization()
    plan = SegmentPlan((len(record),)) if plan is None else plan
    plan.validate(len(record), min_length=3)
    if plan.lengths[0] < r.order + 4:
        raise ValueError(f"first segment needs at least {r.order + 4} samples")
    ts = record.ts
    i = record.current.values
    v = record.voltage.values
    fitted = []
    ocv = xw = None
    for idx, (start, stop) in enumerate(plan.bounds):
        if idx == 0:
            p = randles_identify_segment1(i[start:stop], v[start:stop], ts, r)
            ocv, xw = p.ocv0, p.initial_diffusion_state()
            xw_start = xw
        else:
            p = randles_identify_segment_i(i[start:stop], v[start:stop], ts, r, ocv, xw)
        fitted.append(p)
        _, _, ocv, xw = simulate_segment(p, i[start:stop], ts, ocv, xw, r)
    return PiecewiseModel(
        "randles", tuple(fitted), plan, ts, fitted[0].ocv0, xw_start, {"realization": r}
    )
