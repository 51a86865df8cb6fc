"""Piecewise LTI models: per-segment parameters chained through boundary states."""

import importlib
from dataclasses import dataclass, field

import numpy as np

from .signals import SampledSignal, SegmentPlan

_SEGMENT_SIMULATORS = {
    "sre": "ecmid.sre",
    "randles": "ecmid.randles",
    "thevenin": "ecmid.thevenin",
}


def as_array(x):
    if isinstance(x, SampledSignal):
        return x.values
    return np.asarray(x, dtype=float).reshape(-1)


@dataclass(frozen=True)
class PiecewiseSimulation:
    voltage: SampledSignal
    ocv: np.ndarray
    boundary_ocv: tuple
    final_ocv: float
    final_state: object


@dataclass(frozen=True, eq=False)
class PiecewiseModel:
    """Ordered per-segment parameters of one model family.

    ``ocv0`` and ``state0`` are the initial OCV and dynamic state (diffusion
    state for Randles, canonical state for Thevenin, ``None`` for SRE).
    ``extra`` holds family-wide fixed quantities passed to every segment
    simulation (the Warburg realization for Randles).
    """

    kind: str
    segments: tuple
    plan: SegmentPlan
    ts: float
    ocv0: float
    state0: object = None
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _SEGMENT_SIMULATORS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if len(self.segments) != len(self.plan.lengths):
            raise ValueError(
                f"{len(self.segments)} parameter sets for {len(self.plan.lengths)} segments"
            )

    def simulate(self, current):
        return piecewise_simulate(self, current)


def piecewise_simulate(model, current, ts=None):
    """Simulate ``model`` over ``current`` carrying OCV and state across boundaries.

    Samples past the end of the segment plan are simulated with the last
    segment's parameters, which is how a model identified on a window is
    evaluated outside it.
    """
    ts = model.ts if ts is None else ts
    i = as_array(current)
    sim = importlib.import_module(_SEGMENT_SIMULATORS[model.kind]).simulate_segment
    bounds = list(model.plan.bounds)
    if i.size > bounds[-1][1]:
        bounds[-1] = (bounds[-1][0], i.size)
    elif i.size < bounds[-1][1]:
        raise ValueError(f"current has {i.size} samples; the segment plan needs {bounds[-1][1]}")
    v = np.empty_like(i)
    ocv_trace = np.empty_like(i)
    ocv = model.ocv0
    state = model.state0
    boundary = []
    for params, (start, stop) in zip(model.segments, bounds):
        boundary.append(ocv)
        seg_v, seg_ocv, ocv, state = sim(params, i[start:stop], ts, ocv, state, **model.extra)
        v[start:stop] = seg_v
        ocv_trace[start:stop] = seg_ocv
    return PiecewiseSimulation(SampledSignal(v, ts, "V"), ocv_trace, tuple(boundary), ocv, state)
