import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ecmid import _kernels

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba disabled")
BACKENDS = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])


def _loop(a, b, u, x0):
    x = x0.copy()
    out = [x.copy()]
    for row in u:
        x = a @ x + b @ row
        out.append(x.copy())
    return np.array(out)


def _stable(rng, n):
    a = rng.standard_normal((n, n))
    return 0.95 * a / np.max(np.abs(np.linalg.eigvals(a)))


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (7, 1)])
def test_lsim_matches_loop(backend, n, m, rng):
    a = _stable(rng, n)
    b = rng.standard_normal((n, m))
    u = rng.standard_normal((300, m))
    x0 = rng.standard_normal(n)
    got = _kernels.lsim(a, b, u, x0, backend=backend)
    assert got.shape == (301, n)
    np.testing.assert_allclose(got, _loop(a, b, u, x0), atol=1e-11)


@pytest.mark.parametrize("backend", BACKENDS)
def test_filter_columns_matches_loop(backend, rng):
    a = _stable(rng, 2)
    c = np.array([1.0, 0.0])
    u = rng.standard_normal((200, 3))
    got = _kernels.filter_columns(a, c, u, backend=backend)
    assert got.shape == (200, 3, 2)
    for j in range(3):
        ref = _loop(a, c[:, None], u[:, j : j + 1], np.zeros(2))[:-1]
        np.testing.assert_allclose(got[:, j, :], ref, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_filtered_design_layout(backend, rng):
    a = _stable(rng, 2)
    c = np.array([1.0, 0.0])
    u = rng.standard_normal((100, 2))
    extra = rng.standard_normal((100, 3))
    d = _kernels.filtered_design(a, c, u, extra, powers=True, backend=backend)
    assert d.shape == (100, 2 + 3 + 4)
    np.testing.assert_allclose(d[:, :2], _kernels.power_rows(a.T, c, 100), atol=1e-14)
    np.testing.assert_array_equal(d[:, 2:5], extra)
    np.testing.assert_allclose(d[:, 5:].reshape(100, 2, 2), _kernels.filter_columns(a, c, u),
                               atol=1e-13)


@needs_numba
@given(st.integers(1, 4), st.integers(0, 2**31))
def test_backends_agree(n, seed):
    rng = np.random.default_rng(seed)
    a = _stable(rng, n)
    b = rng.standard_normal(n)
    u = rng.standard_normal(500)
    nb = _kernels.lsim(a, b, u, backend="numba")
    npy = _kernels.lsim(a, b, u, backend="numpy")
    np.testing.assert_allclose(nb, npy, atol=1e-10 * (1 + np.max(np.abs(nb))))


def test_power_rows_flushes_underflow():
    a = np.array([[0.01]])
    rows = _kernels.power_rows(a, np.array([1.0]), 10000)
    assert rows[1, 0] == pytest.approx(0.01)
    assert np.all(rows[200:] == 0.0)
    assert np.all(np.isfinite(rows))


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.lsim(np.eye(1), [1.0], np.ones(3), backend="fortran")


def test_env_flag_selects_fallback():
    code = "from ecmid import _kernels; print(_kernels.HAVE_NUMBA, _kernels.PURE_NUMPY)"
    env = dict(os.environ, ECMID_PURE_NUMPY="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True).stdout.split()
    assert out == ["False", "True"]


def test_fallback_identifies_like_default(tmp_path):
    # the whole SRE and Randles pipelines must give the same numbers under the fallback
    code = (
        "from ecmid.presets import GeneratorConfig; from ecmid import evalkit;"
        "rec = GeneratorConfig('paper-mrandles', duration_s=40).clean_record();"
        "m = evalkit.identify(rec, evalkit.IdentifierConfig('randles'));"
        "print(repr(evalkit.model_estimates(m)))"
    )
    runs = []
    for flag in ("1", "0"):
        env = dict(os.environ, ECMID_PURE_NUMPY=flag)
        runs.append(eval(subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                        text=True, check=True).stdout))
    for k in runs[0]:
        assert runs[0][k] == pytest.approx(runs[1][k], rel=1e-8)
