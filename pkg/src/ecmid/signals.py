"""Sampled signals, charge bookkeeping, excitation/noise generation and CSV I/O.

Sign convention: positive current discharges the cell.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import RecordFormatError

CSV_HEADER = ("t", "i_bat", "v_bat")


def _frozen_array(values):
    arr = np.array(values, dtype=float, copy=True).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class SampledSignal:
    """Uniformly sampled real time series.

    ``values`` is stored as a read-only float64 array; ``unit`` is a free-form
    label ("A", "V", "C").
    """

    values: np.ndarray
    ts: float
    unit: str = ""

    def __post_init__(self):
        if not (self.ts > 0 and math.isfinite(self.ts)):
            raise ValueError(f"sampling period must be positive and finite, got {self.ts!r}")
        arr = _frozen_array(self.values)
        if not np.all(np.isfinite(arr)):
            raise ValueError("signal contains non-finite samples")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "ts", float(self.ts))

    def __len__(self):
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, SampledSignal):
            return NotImplemented
        return (
            self.ts == other.ts
            and self.unit == other.unit
            and np.array_equal(self.values, other.values)
        )

    @property
    def time(self):
        return np.arange(len(self)) * self.ts

    def window(self, start, stop):
        return SampledSignal(self.values[start:stop], self.ts, self.unit)


@dataclass(frozen=True)
class ChargeState:
    """Removed charge and state of charge of a cell with capacity ``q_max`` (C)."""

    q_max: float
    q_d: float
    soc: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "soc", soc_from_charge(self.q_d, self.q_max))

    @classmethod
    def from_soc(cls, soc, q_max):
        return cls(q_max=q_max, q_d=initial_charge(soc, q_max))


@dataclass(frozen=True, eq=False)
class DischargeRecord:
    current: SampledSignal
    voltage: SampledSignal
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.current) != len(self.voltage):
            raise ValueError(
                f"current has {len(self.current)} samples but voltage has {len(self.voltage)}"
            )
        if self.current.ts != self.voltage.ts:
            raise ValueError("current and voltage must share the sampling period")

    @property
    def ts(self):
        return self.current.ts

    def __len__(self):
        return len(self.current)

    def __eq__(self, other):
        if not isinstance(other, DischargeRecord):
            return NotImplemented
        return self.current == other.current and self.voltage == other.voltage

    def window(self, start, stop):
        return DischargeRecord(
            self.current.window(start, stop), self.voltage.window(start, stop), dict(self.meta)
        )


@dataclass(frozen=True)
class SegmentPlan:
    """Lengths N_i of consecutive identification segments."""

    lengths: tuple

    def __post_init__(self):
        lengths = tuple(int(n) for n in self.lengths)
        if not lengths:
            raise ValueError("segment plan is empty")
        if any(n <= 0 for n in lengths):
            raise ValueError(f"segment lengths must be positive, got {lengths}")
        object.__setattr__(self, "lengths", lengths)

    @classmethod
    def uniform(cls, total, n_segments):
        base, extra = divmod(int(total), int(n_segments))
        return cls(tuple(base + (1 if i < extra else 0) for i in range(n_segments)))

    @property
    def total(self):
        return sum(self.lengths)

    @property
    def bounds(self):
        """(start, stop) index pairs of each segment."""
        edges = np.concatenate([[0], np.cumsum(self.lengths)])
        return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]

    def validate(self, record_length, min_length=1):
        problems = []
        if self.total > record_length:
            problems.append(f"segments cover {self.total} samples but record has {record_length}")
        short = [i for i, n in enumerate(self.lengths) if n < min_length]
        if short:
            problems.append(f"segments {short} shorter than the {min_length} samples required")
        if problems:
            raise ValueError("; ".join(problems))
        return self


def integrate_charge(current, q0=0.0):
    """Removed charge ``q[k+1] = q[k] + ts * i[k]`` with ``q[0] = q0``, same length as the input."""
    i = current.values
    q = np.empty_like(i)
    if i.size:
        q[0] = q0
        np.cumsum(current.ts * i[:-1], out=q[1:])
        q[1:] += q0
    return SampledSignal(q, current.ts, "C")


def soc_from_charge(q_d, q_max):
    if not q_max > 0:
        raise ValueError(f"cell capacity must be positive, got {q_max!r}")
    return (1.0 - q_d / q_max) * 100.0


def initial_charge(soc0, q_max):
    if not q_max > 0:
        raise ValueError(f"cell capacity must be positive, got {q_max!r}")
    if not 0.0 <= soc0 <= 100.0:
        raise ValueError(f"initial SOC must lie in [0, 100], got {soc0!r}")
    return (1.0 - soc0 / 100.0) * q_max


def pulse_train(amplitude, on_s, off_s, total_s, ts):
    """Rectangular discharge pulses starting in the ON phase."""
    for name, value in (("on_s", on_s), ("off_s", off_s), ("total_s", total_s), ("ts", ts)):
        if not value > 0:
            raise ValueError(f"{name} must be positive, got {value!r}")
    n_on = int(round(on_s / ts))
    n_off = int(round(off_s / ts))
    n_total = int(round(total_s / ts))
    if n_on < 1 or n_off < 1:
        raise ValueError("pulse phases shorter than one sample")
    phase = np.arange(n_total) % (n_on + n_off)
    values = np.where(phase < n_on, float(amplitude), 0.0)
    return SampledSignal(values, ts, "A")


def noise_sigma(signal, snr_db):
    """Noise standard deviation giving ``snr_db`` relative to the peak-to-peak value."""
    span = float(np.ptp(signal.values)) if len(signal) else 0.0
    if span <= 0.0:
        raise ValueError("cannot set a finite SNR on a constant signal")
    return span / 10.0 ** (snr_db / 20.0)


def add_noise(signal, snr_db, seed):
    """Add zero-mean white Gaussian noise at ``snr_db`` (peak-to-peak over sigma).

    ``snr_db=None`` means noise-free and returns ``signal`` unchanged. Draws come
    from numpy's PCG64 bit generator seeded with ``seed``, so a given seed gives
    the same noise on every platform.
    """
    if snr_db is None:
        return signal
    sigma = noise_sigma(signal, snr_db)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    noisy = signal.values + sigma * rng.standard_normal(len(signal))
    return SampledSignal(noisy, signal.ts, signal.unit)


def write_record(record, path):
    """Write ``t,i_bat,v_bat`` with 17 significant digits."""
    t = np.arange(len(record)) * record.ts
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in zip(t, record.current.values, record.voltage.values):
            writer.writerow([f"{x:.17g}" for x in row])


def read_record(path, rtol=1e-9):
    """Read a ``t,i_bat,v_bat`` CSV written by :func:`write_record` or by hand.

    The sampling period is the first time step; every step must agree with it
    within ``rtol``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise RecordFormatError("empty file", line=1)
    header = tuple(c.strip() for c in rows[0])
    if header != CSV_HEADER:
        raise RecordFormatError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}", 1)
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 3:
            raise RecordFormatError(f"expected 3 columns, found {len(row)}", lineno)
        try:
            vals = [float(c) for c in row]
        except ValueError as exc:
            raise RecordFormatError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in vals):
            raise RecordFormatError("non-finite value", lineno)
        data.append(vals)
    if len(data) < 2:
        raise RecordFormatError("need at least two samples to infer the sampling period")
    arr = np.array(data)
    steps = np.diff(arr[:, 0])
    ts = float(steps[0])
    if not ts > 0:
        raise RecordFormatError("time stamps must increase")
    bad = np.flatnonzero(np.abs(steps - ts) > rtol * ts)
    if bad.size:
        raise RecordFormatError(f"non-uniform time step {steps[bad[0]]!r} (expected {ts!r})",
                                int(bad[0]) + 3)
    return DischargeRecord(SampledSignal(arr[:, 1], ts, "A"), SampledSignal(arr[:, 2], ts, "V"))
