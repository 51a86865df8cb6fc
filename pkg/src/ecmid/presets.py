"""Named synthetic cells and the pulse-train experiment used to exercise them.

The ``paper-*`` presets carry the parameter magnitudes reported for a
commercial Li-ion cell (Randles model, first- and second-order Thevenin), so
the synthetic data sits at realistic scales. ``sre-demo`` is a plain
series-resistance cell for quick checks.
"""

from dataclasses import dataclass, field

from .piecewise import PiecewiseModel
from .signals import DischargeRecord, SegmentPlan, add_noise, pulse_train

PULSE_AMPLITUDE = 0.75
PULSE_ON_S = 10.0
PULSE_OFF_S = 10.0
DEFAULT_TS = 0.008
DEFAULT_DURATION_S = 400.0


@dataclass(frozen=True)
class Preset:
    name: str
    model: str
    params: dict
    description: str = ""


PRESETS = {
    p.name: p
    for p in (
        Preset(
            "paper-mrandles",
            "randles",
            {"ocv0": 4.166, "c0": 4093.8, "a_w": 0.0047, "r_b": 0.1205},
            "simplified Randles cell with an order-7 Warburg element",
        ),
        Preset(
            "paper-m1",
            "thevenin1",
            {"ocv0": 4.165, "c0": 2439.3, "r0": 0.1206, "r1": 0.0153, "c1": 531.69},
            "Thevenin cell with one RC pair",
        ),
        Preset(
            "paper-m2",
            "thevenin2",
            {
                "ocv0": 4.1633, "c0": 2368.3, "r0": 0.1202,
                "r1": 0.0183, "c1": 211.17, "r2": 0.0063, "c2": 5.7168,
            },
            "Thevenin cell with two RC pairs",
        ),
        Preset("sre-demo", "sre", {"ocv0": 4.1, "c0": 4000.0, "r0": 0.12}, "OCV source and R0"),
    )
}

DEFAULT_PRESET = {"sre": "sre-demo", "randles": "paper-mrandles", "thevenin1": "paper-m1",
                  "thevenin2": "paper-m2"}


def get_preset(name):
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None


def segment_params(model, params, ts, realization=None):
    """Per-segment parameter object of ``model`` built from physical values."""
    if model == "sre":
        from .sre import SreParams

        return SreParams.from_physical(params["ocv0"], params["c0"], params["r0"])
    if model == "randles":
        from .randles import RandlesParams

        order = 7 if realization is None else realization.order
        return RandlesParams.from_physical(
            params["ocv0"], params["c0"], params["a_w"], params["r_b"], ts, order
        )
    if model in ("thevenin1", "thevenin2"):
        from .thevenin import TheveninParams

        n = 1 if model == "thevenin1" else 2
        pairs = [(params[f"r{j}"], params[f"c{j}"]) for j in range(1, n + 1)]
        return TheveninParams.from_physical(params["ocv0"], params["c0"], params["r0"], pairs, ts)
    raise ValueError(f"unknown model {model!r}")


def truth_model(preset, n_samples, ts, realization=None):
    """Single-segment :class:`PiecewiseModel` that generates data for ``preset``."""
    p = segment_params(preset.model, preset.params, ts, realization)
    kind = "thevenin" if preset.model.startswith("thevenin") else preset.model
    extra = {}
    state0 = None
    if kind == "randles":
        from .warburg import paper_realization

        extra["realization"] = realization if realization is not None else paper_realization()
        state0 = p.initial_diffusion_state()
    elif kind == "thevenin":
        state0 = p.x0
    return PiecewiseModel(kind, (p,), SegmentPlan((n_samples,)), ts, preset.params["ocv0"], state0,
                          extra)


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic experiment: a preset cell driven by the discharge pulse train."""

    preset: str = "paper-mrandles"
    duration_s: float = DEFAULT_DURATION_S
    ts: float = DEFAULT_TS
    amplitude: float = PULSE_AMPLITUDE
    on_s: float = PULSE_ON_S
    off_s: float = PULSE_OFF_S
    extra: dict = field(default_factory=dict, compare=False)

    @property
    def cell(self):
        return get_preset(self.preset)

    def current(self):
        return pulse_train(self.amplitude, self.on_s, self.off_s, self.duration_s, self.ts)

    def clean_record(self):
        current = self.current()
        model = truth_model(self.cell, len(current), self.ts, self.extra.get("realization"))
        voltage = model.simulate(current).voltage
        return DischargeRecord(current, voltage, {"preset": self.preset})

    def noisy_record(self, snr_db, seed):
        """Noise on the voltage only; ``snr_db=None`` gives the clean record."""
        clean = self.clean_record()
        return DischargeRecord(clean.current, add_noise(clean.voltage, snr_db, seed), clean.meta)
