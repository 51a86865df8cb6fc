"""Independent reference computations for the tests.

Nothing here calls the package's kernels or solvers. The models are written
as plain per-sample loops straight from their circuit equations, closed forms
use ``math``, and generic numerics come from scipy.
"""

import math

import numpy as np
import scipy.linalg
import scipy.signal


def pulse(amplitude, on_s, off_s, total_s, ts):
    n_on, n_off = round(on_s / ts), round(off_s / ts)
    n = round(total_s / ts)
    return np.array([amplitude if k % (n_on + n_off) < n_on else 0.0 for k in range(n)])


def cumulative_charge(i, ts, q0=0.0):
    out = [q0]
    for x in i[:-1]:
        out.append(out[-1] + ts * x)
    return np.array(out)


def sre_loop(i, ts, ocv0, c0, r0):
    ocv = ocv0
    v = []
    for x in i:
        v.append(ocv - r0 * x)
        ocv -= ts / c0 * x
    return np.array(v), ocv


def randles_loop(i, ts, ocv0, c0, a_w, rb, a, b, c, xw0=None):
    n = len(b)
    x = np.zeros(n) if xw0 is None else np.array(xw0, dtype=float)
    ocv = ocv0
    v = []
    for u in i:
        v.append(ocv - a_w * math.sqrt(ts) * float(np.dot(c, x)) - rb * u)
        x = a @ x + b * u
        ocv -= ts / c0 * u
    return np.array(v), ocv, x


def thevenin_loop(i, ts, ocv0, c0, r0, pairs, v_rc0=None):
    """Series R0 plus RC pairs, exact ZOH update of each capacitor voltage."""
    poles = [math.exp(-ts / (r * c)) for r, c in pairs]
    vrc = [0.0] * len(pairs) if v_rc0 is None else list(v_rc0)
    ocv = ocv0
    v = []
    for u in i:
        v.append(ocv - r0 * u - sum(vrc))
        vrc = [p * s + r * (1 - p) * u for p, s, (r, _) in zip(poles, vrc, pairs)]
        ocv -= ts / c0 * u
    return np.array(v), ocv, vrc


def fractional_impulse(alpha, ts, k_max):
    scale = ts**alpha / (alpha * math.gamma(alpha))
    return np.array([0.0] + [scale * (k**alpha - (k - 1) ** alpha) for k in range(1, k_max + 1)])


def markov(a, b, c, k_max):
    """``[0, c b, c a b, ...]`` via scipy's discrete impulse response."""
    sys = scipy.signal.dlti(a, np.reshape(b, (-1, 1)), np.reshape(c, (1, -1)), [[0.0]])
    _, (y,) = scipy.signal.dimpulse(sys, n=k_max + 1)
    return y.ravel()


def zoh(a_bar, b_bar, ts):
    n = a_bar.shape[0]
    m = np.zeros((n + 1, n + 1))
    m[:n, :n] = a_bar * ts
    m[:n, n] = b_bar.ravel() * ts
    e = scipy.linalg.expm(m)
    return e[:n, :n], e[:n, n]


def bfr(ref, sim):
    ref = np.asarray(ref, dtype=float)
    sim = np.asarray(sim, dtype=float)
    num = math.sqrt(sum((r - s) ** 2 for r, s in zip(ref, sim)))
    mean = sum(ref) / len(ref)
    den = math.sqrt(sum((r - mean) ** 2 for r in ref))
    return 100.0 * (1.0 - num / den)


def rms(x):
    return math.sqrt(sum(float(v) ** 2 for v in x) / len(x))
