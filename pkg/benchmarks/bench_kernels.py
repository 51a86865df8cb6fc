"""Compare the numba kernels with the Schur/lfilter numpy fallback.

    python3 benchmarks/bench_kernels.py [--samples 50000] [--repeat 5]

Prints one CSV row per kernel: median seconds for each backend, their ratio
and the largest absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from ecmid import _kernels
from ecmid.warburg import default_realization


def _median_time(fn, repeat):
    fn()  # warm-up (numba compiles or loads its cache here)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def cases(n_samples, seed):
    rng = np.random.default_rng(seed)
    r = default_realization()
    u = rng.standard_normal(n_samples)
    a2 = np.array([[1.2, -0.36], [1.0, 0.0]])
    c2 = np.array([1.0, 0.0])
    u3 = rng.standard_normal((n_samples, 3))
    extra = rng.standard_normal((n_samples, 4))
    return {
        "lsim_order7": lambda b: _kernels.lsim(r.a, r.b, u, backend=b),
        "filter_columns_order2": lambda b: _kernels.filter_columns(a2.T, c2, u3, backend=b),
        "filtered_design_order2": lambda b: _kernels.filtered_design(
            a2.T, c2, u3, extra, powers=True, backend=b
        ),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=50000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is unavailable or ECMID_PURE_NUMPY is set; nothing to compare")
    print("kernel,samples,numba_s,numpy_s,speedup,max_abs_diff")
    for name, fn in cases(args.samples, args.seed).items():
        t_nb = _median_time(lambda: fn("numba"), args.repeat)
        t_np = _median_time(lambda: fn("numpy"), args.repeat)
        diff = float(np.max(np.abs(fn("numba") - fn("numpy"))))
        print(f"{name},{args.samples},{t_nb:.6f},{t_np:.6f},{t_np / t_nb:.2f},{diff:.3g}")


if __name__ == "__main__":
    main()
