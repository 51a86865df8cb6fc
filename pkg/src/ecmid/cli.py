"""``ecmid`` command line: synthetic data, Warburg approximation, identification, evaluation.

Every subcommand writes CSV (to ``--out`` or standard output) and logs to
standard error. Failures print one ``error: <code>: <message>`` line per
problem and exit nonzero (2 for bad invocations, 1 for runtime failures).
"""

import argparse
import csv
import logging
import math
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import evalkit, presets, warburg
from .exceptions import EcmidError
from .signals import SegmentPlan, read_record, write_record

log = logging.getLogger("ecmid")

MODEL_CHOICES = ("sre", "randles", "thevenin", "thevenin1", "thevenin2")
DEFAULT_SEED = 1
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Flattened, validated view of one invocation."""

    subcommand: str
    seed: int = DEFAULT_SEED
    out: str = None
    ts: float = None
    model: str = None
    order: int = None
    preset: str = None
    in_path: str = None
    ref_path: str = None
    sim_path: str = None
    segments: str = None
    grid: str = None
    snr: float = None
    trials: int = 100
    duration: float = presets.DEFAULT_DURATION_S
    amplitude: float = presets.PULSE_AMPLITUDE
    on_s: float = presets.PULSE_ON_S
    off_s: float = presets.PULSE_OFF_S
    windows: str = None
    k_max: int = 10000
    hankel: int = None
    printed: bool = False
    matrices: str = None
    points: int = 200
    w_min: float = 1e-3
    w_max: float = 1.0
    options: dict = field(default_factory=dict)

    @property
    def resolved_model(self):
        """``thevenin`` plus ``--order`` collapsed into ``thevenin1``/``thevenin2``."""
        if self.model == "thevenin" and self.order in (1, 2):
            return f"thevenin{self.order}"
        return self.model

    def violations(self):
        """Every problem with the configuration, not just the first."""
        out = []
        needs_model = self.subcommand in ("simulate", "identify", "montecarlo")
        if needs_model:
            if self.model is None:
                out.append("--model is required")
            elif self.model == "thevenin":
                if self.order is None:
                    out.append("--model thevenin needs --order 1 or 2")
            elif self.order is not None:
                if self.model == "sre":
                    out.append("--order does not apply to --model sre")
                elif self.model == "randles":
                    if not 1 <= self.order <= 20:
                        out.append("--order for randles (Warburg realization order) must be 1..20")
                elif int(self.model[-1]) != self.order:
                    out.append(f"--order {self.order} contradicts --model {self.model}")
        if needs_model and self.model == "thevenin" and self.order not in (None, 1, 2):
            out.append("--order must be 1 or 2 for Thevenin models")
        if self.grid is not None:
            if self.subcommand not in ("identify", "montecarlo"):
                out.append("--grid only applies to identify and montecarlo")
            elif self.model is not None and not self.model.startswith("thevenin"):
                out.append("--grid only applies to Thevenin models")
            elif not os.path.isfile(self.grid):
                out.append(f"--grid file {self.grid} does not exist")
        if self.ts is not None and not self.ts > 0:
            out.append("--ts must be positive")
        if self.preset is not None:
            if self.preset not in presets.PRESETS:
                out.append(f"unknown preset {self.preset!r}")
            elif self.resolved_model in evalkit.MODELS:
                p = presets.PRESETS[self.preset]
                if p.model != self.resolved_model:
                    out.append(f"preset {self.preset} is a {p.model} cell, not {self.resolved_model}")
        for name in ("in_path", "ref_path", "sim_path"):
            path = getattr(self, name)
            if path is not None and not os.path.isfile(path):
                out.append(f"input file {path} does not exist")
        if self.subcommand in ("simulate", "montecarlo"):
            for flag, value in (("--duration", self.duration), ("--on", self.on_s), ("--off", self.off_s)):
                if not value > 0:
                    out.append(f"{flag} must be positive")
        if self.subcommand == "montecarlo":
            if self.trials < 1:
                out.append("--trials must be at least 1")
        if self.snr is not None and math.isnan(self.snr):
            out.append("--snr must be a number")
        if self.segments is not None:
            try:
                _parse_segments(self.segments)
            except ValueError as exc:
                out.append(str(exc))
        if self.windows is not None:
            try:
                evalkit.parse_windows(self.windows)
            except ValueError as exc:
                out.append(str(exc))
        if self.subcommand in ("approx", "bode"):
            if self.order is None or self.order < 1:
                out.append("--order must be a positive integer")
            if self.k_max < 2:
                out.append("--kmax must be at least 2")
        if self.subcommand == "bode":
            if not 0 < self.w_min < self.w_max <= 1:
                out.append("need 0 < --wmin < --wmax <= 1 (fractions of the Nyquist frequency)")
            if self.points < 1:
                out.append("--points must be at least 1")
        return out


def _parse_segments(text):
    """``"3"`` (equal segments) or ``"50000,50000"`` (explicit lengths)."""
    parts = [p.strip() for p in str(text).split(",") if p.strip()]
    try:
        values = [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"--segments expects an integer or a comma list, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise ValueError("--segments values must be positive")
    return values[0] if len(values) == 1 else SegmentPlan(tuple(values))


# ---------------------------------------------------------------------------
# argument parsing


def _global_flags(parser, suppress):
    default = argparse.SUPPRESS if suppress else None
    g = parser.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else DEFAULT_SEED,
                   help=f"seed for every random draw (default {DEFAULT_SEED})")
    g.add_argument("--out", default=default, help="output CSV path (default: standard output)")
    g.add_argument("--ts", type=float, default=default,
                   help="sampling period in seconds (default 0.008 for data, 1 for approx/bode)")
    g.add_argument("--log-level", default=argparse.SUPPRESS if suppress else "WARNING",
                   choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="standard-error log level")


def _model_flags(p, preset=False):
    p.add_argument("--model", choices=MODEL_CHOICES,
                   help="cell model; 'thevenin' needs --order, thevenin1/thevenin2 imply it")
    p.add_argument("--order", type=int,
                   help="Thevenin order (1 or 2), or the Warburg realization order for randles "
                        "(default 7: the published matrices)")
    if preset:
        p.add_argument("--preset", help="synthetic cell: " + ", ".join(sorted(presets.PRESETS))
                       + " (default: the reference preset of the chosen model)")


def _experiment_flags(p):
    p.add_argument("--duration", type=float, default=presets.DEFAULT_DURATION_S,
                   help="record length in seconds (default 400)")
    p.add_argument("--amplitude", type=float, default=presets.PULSE_AMPLITUDE,
                   help="pulse current in amperes (default 0.75)")
    p.add_argument("--on", dest="on_s", type=float, default=presets.PULSE_ON_S,
                   help="pulse on time in seconds (default 10)")
    p.add_argument("--off", dest="off_s", type=float, default=presets.PULSE_OFF_S,
                   help="rest time between pulses in seconds (default 10)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ecmid",
        description="Battery equivalent-circuit identification: SRE, Randles with a "
                    "Warburg element, and observer-based Thevenin models.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    sub.required = True

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        _global_flags(p, suppress=True)
        return p

    p = add("simulate", "Generate a pulse-discharge record (t,i_bat,v_bat) for a preset cell.")
    _model_flags(p, preset=True)
    _experiment_flags(p)
    p.add_argument("--snr", type=float,
                   help="add voltage noise at this SNR in dB (peak-to-peak over sigma); "
                        "omit for noise-free data")

    p = add("identify", "Identify model parameters from a record CSV.")
    _model_flags(p)
    p.add_argument("--in", dest="in_path", required=True, help="record CSV with header t,i_bat,v_bat")
    p.add_argument("--segments", help="number of equal segments or comma-separated segment lengths")
    p.add_argument("--grid", help="observer eigenvalue grid CSV with header re,im (Thevenin only)")

    p = add("approx", "Order-n Ho-Kalman approximation of the normalized Warburg impulse. "
                      "Prints a one-row summary with E (percent); --out receives k,w,w_hat.")
    p.add_argument("--order", type=int, default=7, help="realization order (default 7)")
    p.add_argument("--kmax", dest="k_max", type=int, default=10000,
                   help="impulse samples used and scored (default 10000)")
    p.add_argument("--hankel", type=int, help="Hankel size (default: largest the data allows)")
    p.add_argument("--printed", action="store_true",
                   help="score the published order-7 matrices instead of fitting")
    p.add_argument("--matrices", help="also write the realization (matrix,row,col,value) here")

    p = add("bode", "Frequency response of the Warburg approximation against the ideal element.")
    p.add_argument("--order", type=int, default=7, help="realization order (default 7)")
    p.add_argument("--kmax", dest="k_max", type=int, default=10000,
                   help="impulse samples used for the fit (default 10000)")
    p.add_argument("--printed", action="store_true", help="use the published order-7 matrices")
    p.add_argument("--points", type=int, default=200, help="log-spaced frequencies (default 200)")
    p.add_argument("--wmin", dest="w_min", type=float, default=1e-3,
                   help="lowest frequency as a fraction of Nyquist (default 1e-3)")
    p.add_argument("--wmax", dest="w_max", type=float, default=1.0,
                   help="highest frequency as a fraction of Nyquist (default 1)")

    p = add("bfr", "Best fit rate of a simulated record against a reference record.")
    p.add_argument("--ref", dest="ref_path", required=True, help="reference record CSV")
    p.add_argument("--sim", dest="sim_path", required=True, help="simulated record CSV")
    p.add_argument("--windows",
                   help="half-open sample windows start:stop,...; default: five 50000-sample "
                        "windows when the record is long enough, else the whole record")

    p = add("montecarlo", "Noise robustness: repeated identification on noisy synthetic data.")
    _model_flags(p, preset=True)
    _experiment_flags(p)
    p.add_argument("--snr", type=float, required=True, help="voltage SNR in dB")
    p.add_argument("--trials", type=int, default=100, help="number of trials (default 100)")
    p.add_argument("--segments", help="number of equal segments or comma-separated segment lengths")
    p.add_argument("--grid", help="observer eigenvalue grid CSV with header re,im (Thevenin only)")
    p.add_argument("--windows", help="BFR windows start:stop,... (default: whole record)")
    return parser


def config_from_args(ns):
    fields = {k: v for k, v in vars(ns).items() if k in RunConfig.__dataclass_fields__}
    return RunConfig(**fields)


# ---------------------------------------------------------------------------
# subcommands


class _Output:
    def __init__(self, path):
        self.path = path

    def __enter__(self):
        if self.path in (None, "-"):
            self.fh = sys.stdout
            self.close = False
        else:
            self.fh = open(self.path, "w", newline="")
            self.close = True
        return csv.writer(self.fh, lineterminator="\n")

    def __exit__(self, *exc):
        if self.close:
            self.fh.close()
        else:
            self.fh.flush()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    return x


def _write_rows(path, header, rows):
    with _Output(path) as w:
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def _warburg(cfg):
    if cfg.resolved_model == "randles" and cfg.order not in (None, 7):
        return {"realization": warburg.default_realization(cfg.order)}
    return {}


def _generator(cfg):
    model = cfg.resolved_model
    return presets.GeneratorConfig(
        preset=cfg.preset or presets.DEFAULT_PRESET[model],
        duration_s=cfg.duration,
        ts=cfg.ts if cfg.ts is not None else presets.DEFAULT_TS,
        amplitude=cfg.amplitude,
        on_s=cfg.on_s,
        off_s=cfg.off_s,
        extra=_warburg(cfg),
    )


def _identifier(cfg):
    grid = None
    if cfg.grid is not None:
        from .thevenin import read_grid

        grid = tuple(read_grid(cfg.grid, int(cfg.resolved_model[-1])))
    segments = 1 if cfg.segments is None else _parse_segments(cfg.segments)
    return evalkit.IdentifierConfig(cfg.resolved_model, segments, grid, _warburg(cfg))


def _read(path, ts):
    record = read_record(path)
    if ts is not None and not math.isclose(record.ts, ts, rel_tol=1e-9):
        raise _ConfigError([f"--ts {ts} does not match the {record.ts} s sampling of {path}"])
    return record


class _ConfigError(Exception):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = problems


def cmd_simulate(cfg):
    gen = _generator(cfg)
    record = gen.noisy_record(cfg.snr, cfg.seed)
    log.info("simulated %d samples of %s", len(record), gen.preset)
    if cfg.out in (None, "-"):
        t = np.arange(len(record)) * record.ts
        rows = zip(t, record.current.values, record.voltage.values)
        _write_rows(None, ["t", "i_bat", "v_bat"], rows)
    else:
        write_record(record, cfg.out)


def cmd_identify(cfg):
    record = _read(cfg.in_path, cfg.ts)
    model = evalkit.identify(record, _identifier(cfg))
    fit = model.simulate(record.current).voltage.values
    err = record.voltage.values[: len(fit)] - fit
    rows = []
    for idx, ((start, stop), p) in enumerate(zip(model.plan.bounds, model.segments)):
        vals = evalkit.segment_estimates(model.kind, p, model.ts)
        if idx:
            vals.pop("ocv0", None)
        rows += [(idx, start, stop, k, v) for k, v in vals.items()]
        rows.append((idx, start, stop, "residual_rms", float(np.sqrt(np.mean(err[start:stop] ** 2)))))
        if model.kind == "thevenin":
            log.info("segment %d observer eigenvalues %s", idx, np.round(np.linalg.eigvals(p.a0), 4))
    log.info("training BFR %.4f %%", evalkit.bfr(record.voltage.values[: len(fit)], fit))
    _write_rows(cfg.out, ["segment", "start", "stop", "name", "value"], rows)


def _realization(cfg):
    if cfg.printed:
        if cfg.order != 7:
            raise _ConfigError(["--printed matrices exist for order 7 only"])
        return warburg.paper_realization()
    g = warburg.fractional_impulse(0.5, 1.0, cfg.k_max)
    return warburg.ho_kalman(g, cfg.order, cfg.hankel)


def cmd_approx(cfg):
    r = _realization(cfg)
    g = warburg.fractional_impulse(0.5, 1.0, cfg.k_max)
    err = warburg.relative_error(g, warburg.realization_impulse(r, cfg.k_max))
    hankel = "printed" if cfg.printed else (cfg.hankel or (cfg.k_max - 1) // 2)
    log.info("E_%d = %.4f %%", cfg.k_max, err)
    w_hat = warburg.realization_impulse(r, cfg.k_max)
    _write_rows(None, ["order", "k_max", "hankel_size", "e_percent", "spectral_radius"],
                [(r.order, cfg.k_max, hankel, err, r.spectral_radius)])
    if cfg.out not in (None, "-"):
        _write_rows(cfg.out, ["k", "w", "w_hat"], zip(range(cfg.k_max + 1), g, w_hat))
    if cfg.matrices:
        rows = [("a", i, j, r.a[i, j]) for i in range(r.order) for j in range(r.order)]
        rows += [("b", i, 0, r.b[i]) for i in range(r.order)]
        rows += [("c", 0, j, r.c[j]) for j in range(r.order)]
        _write_rows(cfg.matrices, ["matrix", "row", "col", "value"], rows)


def cmd_bode(cfg):
    r = _realization(cfg)
    ts = 1.0 if cfg.ts is None else cfg.ts
    frac = np.logspace(np.log10(cfg.w_min), np.log10(cfg.w_max), cfg.points)
    table = warburg.bode_table(r, frac * np.pi)
    rows = [(f, w / ts, *rest) for f, (w, *rest) in zip(frac, table)]
    _write_rows(cfg.out, ["omega_over_nyquist", "omega", "mag_db", "phase_deg", "ideal_mag_db",
                          "ideal_phase_deg"], rows)


def cmd_bfr(cfg):
    ref = _read(cfg.ref_path, cfg.ts)
    sim = _read(cfg.sim_path, cfg.ts)
    n = min(len(ref), len(sim))
    if cfg.windows:
        windows = evalkit.parse_windows(cfg.windows)
    elif n >= 5 * evalkit.PAPER_WINDOW:
        windows = evalkit.paper_windows()
    else:
        windows = [(0, n)]
    if len(ref) != len(sim):
        raise _ConfigError([f"records differ in length ({len(ref)} vs {len(sim)})"])
    report = evalkit.bfr_report(ref.voltage, sim.voltage, windows)
    rows = [(f"W{j}", a, b, v) for j, (a, b, v) in enumerate(report.windows)]
    rows.append(("overall", 0, n, report.overall))
    _write_rows(cfg.out, ["window", "start", "stop", "bfr_percent"], rows)


def cmd_montecarlo(cfg):
    gen = _generator(cfg)
    windows = evalkit.parse_windows(cfg.windows) if cfg.windows else None
    report = evalkit.monte_carlo(gen, _identifier(cfg), cfg.snr, cfg.trials, cfg.seed, windows)
    log.info("%d trials in %.1f s, %d failed", report.trials, report.seconds, report.failures)
    rows = [("meta", "snr_db", "", report.snr_db, ""), ("meta", "trials", "", report.trials, ""),
            ("meta", "failures", "", report.failures, ""), ("meta", "seed", "", cfg.seed, "")]
    rows += [(kind, name, "" if math.isnan(t) else t, m, s) for kind, name, t, m, s in report.rows()]
    _write_rows(cfg.out, ["kind", "name", "truth", "mean", "std"], rows)


COMMANDS = {
    "simulate": cmd_simulate,
    "identify": cmd_identify,
    "approx": cmd_approx,
    "bode": cmd_bode,
    "bfr": cmd_bfr,
    "montecarlo": cmd_montecarlo,
}


def _error(code, message):
    print(f"error: {code}: {message}", file=sys.stderr)


def run(cfg):
    """Execute a configuration; returns the process exit status."""
    problems = cfg.violations()
    if problems:
        for msg in problems:
            _error("config", msg)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            logging.captureWarnings(True)
            COMMANDS[cfg.subcommand](cfg)
    except _ConfigError as exc:
        for msg in exc.problems:
            _error("config", msg)
        return EXIT_CONFIG
    except (EcmidError, ValueError, OSError, np.linalg.LinAlgError) as exc:
        _error(type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    finally:
        logging.captureWarnings(False)
    return 0


def main(argv=None):
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, ns.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(config_from_args(ns))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
