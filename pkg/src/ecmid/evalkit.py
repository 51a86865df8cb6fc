"""Fit metrics, windowed evaluation and the Monte Carlo noise harness."""

import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import EcmidError
from .piecewise import PiecewiseModel, PiecewiseSimulation, as_array, piecewise_simulate
from .presets import GeneratorConfig
from .signals import SegmentPlan

__all__ = [
    "BfrReport",
    "IdentifierConfig",
    "MonteCarloReport",
    "PiecewiseModel",
    "PiecewiseSimulation",
    "bfr",
    "bfr_report",
    "identify",
    "model_estimates",
    "monte_carlo",
    "paper_windows",
    "parse_windows",
    "piecewise_simulate",
    "segment_estimates",
]

log = logging.getLogger(__name__)

PAPER_WINDOW = 50000
MODELS = ("sre", "randles", "thevenin1", "thevenin2")


def bfr(reference, simulated, window=None):
    """Best fit rate ``100 (1 - |ref - sim| / |ref - mean(ref)|)`` over ``window`` (start, stop).

    Can be negative. Raises ``ValueError`` for a constant reference.
    """
    ref = as_array(reference)
    sim = as_array(simulated)
    if window is not None:
        start, stop = _check_window(window, min(ref.size, sim.size))
        ref, sim = ref[start:stop], sim[start:stop]
    elif ref.size != sim.size:
        raise ValueError(f"signals differ in length: {ref.size} vs {sim.size}")
    spread = np.linalg.norm(ref - np.mean(ref))
    if spread == 0.0:
        raise ValueError("reference is constant on the window; BFR is undefined")
    return 100.0 * (1.0 - np.linalg.norm(ref - sim) / spread)


def _check_window(window, length):
    start, stop = (int(w) for w in window)
    if not 0 <= start < stop <= length:
        raise ValueError(f"window {start}:{stop} does not fit in {length} samples")
    return start, stop


@dataclass(frozen=True)
class BfrReport:
    windows: tuple  # (start, stop, bfr)
    overall: float

    def __post_init__(self):
        for (_, stop, _), (start, _, _) in zip(self.windows, self.windows[1:]):
            if start < stop:
                raise ValueError("windows must be ordered and non-overlapping")


def bfr_report(reference, simulated, windows=None):
    """BFR per window plus the BFR over the whole signal."""
    ref = as_array(reference)
    sim = as_array(simulated)
    windows = [] if windows is None else [tuple(w) for w in windows]
    rows = tuple((int(a), int(b), bfr(ref, sim, (a, b))) for a, b in windows)
    return BfrReport(rows, bfr(ref, sim))


def paper_windows(count=5, length=PAPER_WINDOW):
    """Consecutive ``length``-sample windows starting at 0 (W0 = samples 0 .. 49999)."""
    return [(j * length, (j + 1) * length) for j in range(count)]


def parse_windows(text):
    """``"0:50000,50000:100000"`` to ``[(0, 50000), (50000, 100000)]`` (half-open)."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        try:
            a, b = part.split(":")
            out.append((int(a), int(b)))
        except ValueError:
            raise ValueError(f"bad window {part!r}; expected start:stop") from None
    if not out:
        raise ValueError("no windows given")
    return out


# ---------------------------------------------------------------------------
# identification dispatch


@dataclass(frozen=True)
class IdentifierConfig:
    """Which model to identify and how the record is split.

    ``segments`` is a number of equal segments or an explicit tuple of lengths.
    ``grid`` (observer candidates) only applies to the Thevenin models.
    """

    model: str = "randles"
    segments: object = 1
    grid: tuple = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {', '.join(MODELS)}")
        if self.grid is not None and not self.model.startswith("thevenin"):
            raise ValueError("an observer grid only applies to Thevenin models")

    def plan(self, n_samples):
        if isinstance(self.segments, SegmentPlan):
            return self.segments
        if isinstance(self.segments, int):
            return SegmentPlan.uniform(n_samples, self.segments)
        return SegmentPlan(tuple(self.segments))


def identify(record, config):
    """Identify ``config.model`` on ``record``; returns a :class:`PiecewiseModel`."""
    plan = config.plan(len(record))
    if config.model == "sre":
        from .sre import sre_identify

        return sre_identify(record, plan)
    if config.model == "randles":
        from .randles import randles_identify

        return randles_identify(record, plan, config.extra.get("realization"))
    from .thevenin import thevenin_identify

    order = 1 if config.model == "thevenin1" else 2
    return thevenin_identify(record, order, plan, config.grid)


def model_estimates(model):
    """Physical parameters of every segment as ``{name: value}``.

    Names are plain for the first segment (``c0``) and carry a ``_s<i>`` suffix
    for later ones (``c0_s1``). OCV0 is reported for the first segment only.
    """
    out = {}
    for idx, p in enumerate(model.segments):
        suffix = "" if idx == 0 else f"_s{idx}"
        vals = segment_estimates(model.kind, p, model.ts)
        if idx:
            vals.pop("ocv0", None)
        out.update({k + suffix: v for k, v in vals.items()})
    return out


def segment_estimates(kind, p, ts):
    if kind == "sre":
        return p.as_dict()
    if kind == "randles":
        return p.as_dict(ts)
    from .thevenin import extract_rc

    vals = {"ocv0": p.ocv0, "c0": p.c0, "r0": p.r0}
    ex = extract_rc(p, ts)
    for j in range(p.order):
        ok = ex.valid and j < len(ex.pairs)
        vals[f"r{j + 1}"] = ex.pairs[j].r if ok else math.nan
        vals[f"c{j + 1}"] = ex.pairs[j].c if ok else math.nan
    return vals


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    snr_db: float
    trials: int
    failures: int
    names: tuple
    truth: dict
    mean: dict
    std: dict
    windows: tuple
    bfr_mean: tuple
    bfr_std: tuple
    estimates: np.ndarray = field(repr=False)
    seconds: float = field(default=math.nan, compare=False)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")

    def relative_bias(self, name):
        return self.mean[name] / self.truth[name] - 1.0

    def rows(self):
        """CSV rows ``kind, name, truth, mean, std``."""
        out = [("param", k, self.truth.get(k, math.nan), self.mean[k], self.std[k]) for k in self.names]
        for (a, b), m, s in zip(self.windows, self.bfr_mean, self.bfr_std):
            out.append(("bfr", f"{a}:{b}", math.nan, m, s))
        return out


def _spread(values):
    values = values[np.isfinite(values)]
    if values.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(values))
    if values.size < 2 or np.ptp(values) == 0.0:
        return mean, 0.0
    return mean, float(np.std(values, ddof=1))


def monte_carlo(generator_config, identifier_config, snr_db, trials, base_seed, windows=None):
    """Repeat identification on independently noised copies of one synthetic record.

    Trial ``t`` uses noise seed ``base_seed + t``. ``snr_db=None`` means
    noise-free. Trials that raise a package error are counted as failures and
    left out of the statistics. BFR is measured against the noise-free voltage
    on ``windows`` (default: the whole record).
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if isinstance(generator_config, str):
        generator_config = GeneratorConfig(preset=generator_config)
    started = time.perf_counter()
    clean = generator_config.clean_record()
    n = len(clean)
    windows = [(0, n)] if windows is None else [tuple(w) for w in windows]
    truth = dict(generator_config.cell.params)
    names = None
    rows = []
    bfrs = []
    failures = 0
    for t in range(trials):
        noisy = generator_config.noisy_record(snr_db, base_seed + t)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                model = identify(noisy, identifier_config)
                sim = model.simulate(clean.current).voltage
        except (EcmidError, ValueError, np.linalg.LinAlgError) as exc:
            failures += 1
            log.warning("trial %d failed: %s", t, exc)
            continue
        est = model_estimates(model)
        if names is None:
            names = tuple(est)
        rows.append([est.get(k, math.nan) for k in names])
        bfrs.append([bfr(clean.voltage, sim, w) for w in windows])
    if names is None:
        names = tuple(truth)
        estimates = np.full((0, len(names)), math.nan)
        bfr_arr = np.full((0, len(windows)), math.nan)
    else:
        estimates = np.array(rows, dtype=float)
        bfr_arr = np.array(bfrs, dtype=float)
    stats = [_spread(estimates[:, j]) for j in range(len(names))]
    bstats = [_spread(bfr_arr[:, j]) for j in range(len(windows))]
    return MonteCarloReport(
        snr_db=math.inf if snr_db is None else float(snr_db),
        trials=trials,
        failures=failures,
        names=names,
        truth={k: truth[k] for k in names if k in truth},
        mean={k: s[0] for k, s in zip(names, stats)},
        std={k: s[1] for k, s in zip(names, stats)},
        windows=tuple(windows),
        bfr_mean=tuple(s[0] for s in bstats),
        bfr_std=tuple(s[1] for s in bstats),
        estimates=estimates,
        seconds=time.perf_counter() - started,
    )
