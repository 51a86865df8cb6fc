"""Series-resistance-equivalent (SRE) cell model.

``OCV[k+1] = OCV[k] - ts/C0 * i[k]`` and ``v[k] = OCV[k] - R0 * i[k]``, with
C0 and R0 constant inside each segment.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._linalg import lstsq_qr
from .piecewise import PiecewiseModel, as_array
from .signals import SegmentPlan


@dataclass(frozen=True)
class SreParams:
    """Per-segment SRE parameters. ``ocv0`` is only estimated in the first segment."""

    inv_c0: float
    r0: float
    ocv0: float = math.nan
    residual_rms: float = field(default=math.nan, compare=False)

    @classmethod
    def from_physical(cls, ocv0, c0, r0):
        return cls(inv_c0=1.0 / c0, r0=r0, ocv0=ocv0)

    @property
    def c0(self):
        return 1.0 / self.inv_c0 if self.inv_c0 != 0 else math.inf

    @property
    def valid(self):
        return self.inv_c0 > 0 and self.r0 >= 0

    def as_dict(self):
        return {"ocv0": self.ocv0, "c0": self.c0, "r0": self.r0}


def simulate_segment(params, current, ts, ocv_init, state=None):
    """Single-segment simulation. Returns ``(voltage, ocv, final_ocv, final_state)``."""
    i = as_array(current)
    q = np.concatenate([[0.0], np.cumsum(ts * i)])
    ocv_all = ocv_init - params.inv_c0 * q
    ocv = ocv_all[:-1]
    return ocv - params.r0 * i, ocv, float(ocv_all[-1]), None


def sre_simulate(params, current, ocv_init, plan=None):
    """Simulate one or more segments with OCV carried across boundaries.

    ``params`` is a single :class:`SreParams` or a sequence aligned with ``plan``.
    """
    if isinstance(params, SreParams):
        params = [params]
    ts = current.ts
    if plan is None:
        plan = SegmentPlan((len(current),))
    model = PiecewiseModel("sre", tuple(params), plan, ts, ocv_init)
    return model.simulate(current).voltage


def _regression(current, ts):
    i = as_array(current)
    q = np.concatenate([[0.0], np.cumsum(ts * i[:-1])])
    return i, q


def sre_identify_segment1(current, voltage, ts):
    """Estimate ``[OCV[0], 1/C0, R0]`` from ``v = OCV[0] - q_d/C0 - R0 i`` with ``q_d[0] = 0``."""
    i, q = _regression(current, ts)
    v = as_array(voltage)
    phi = np.column_stack([np.ones_like(i), -q, -i])
    theta, resid = lstsq_qr(phi, v, names=["ocv0", "inv_c0", "r0"])
    return SreParams(
        inv_c0=theta[1], r0=theta[2], ocv0=theta[0], residual_rms=float(np.sqrt(np.mean(resid**2)))
    )


def sre_identify_segment_i(current, voltage, ts, ocv_boundary):
    """Estimate ``[1/C0, R0]`` of a later segment whose starting OCV is known."""
    i, q = _regression(current, ts)
    y = as_array(voltage) - ocv_boundary
    phi = np.column_stack([-q, -i])
    theta, resid = lstsq_qr(phi, y, names=["inv_c0", "r0"])
    return SreParams(
        inv_c0=theta[0], r0=theta[1], ocv0=float(ocv_boundary),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def sre_identify(record, plan=None):
    """Segment-by-segment identification; each segment starts from the OCV the previous
    identified segment ends with."""
    plan = SegmentPlan((len(record),)) if plan is None else plan
    plan.validate(len(record), min_length=2)
    ts = record.ts
    i = record.current.values
    v = record.voltage.values
    fitted = []
    ocv = None
    for idx, (start, stop) in enumerate(plan.bounds):
        if idx == 0:
            p = sre_identify_segment1(i[start:stop], v[start:stop], ts)
            ocv = p.ocv0
        else:
            p = sre_identify_segment_i(i[start:stop], v[start:stop], ts, ocv)
        fitted.append(p)
        _, _, ocv, _ = simulate_segment(p, i[start:stop], ts, ocv)
    return PiecewiseModel("sre", tuple(fitted), plan, ts, fitted[0].ocv0)


def residual_sum(params, current, voltage, ts, ocv_boundary=None):
    """Sum of squared regression residuals of ``params`` on one segment."""
    ocv0 = params.ocv0 if ocv_boundary is None else ocv_boundary
    sim, _, _, _ = simulate_segment(params, current, ts, ocv0)
    return float(np.sum((as_array(voltage) - sim) ** 2))

