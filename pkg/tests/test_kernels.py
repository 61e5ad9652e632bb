import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hmdchan import _kernels

needs_numba = pytest.mark.skipif(_kernels.numba is None, reason="numba not installed")


def _ctf_args(rng, M=6, N=3, K=16, L=5):
    return dict(
        rx_amp=rng.uniform(0, 1, (M, L)) + 0j, rx_pol=rng.integers(0, 2, M),
        rx_delay=rng.normal(0, 1e-10, (M, L)),
        tx_amp=rng.uniform(0, 1, (N, L)) + 0j, tx_pol=rng.integers(0, 2, N),
        tx_delay=rng.normal(0, 1e-10, (N, L)),
        gamma=rng.normal(size=(L, 2, 2)) + 1j * rng.normal(size=(L, 2, 2)),
        tau=rng.uniform(5e-9, 60e-9, L), doppler=rng.normal(0, 50, L),
        t_mn=rng.uniform(0, 1e-2, (M, N)), f0=27.6e9, df=6e6, num_tones=K)


@needs_numba
@given(st.integers(0, 2 ** 31))
def test_ctf_backends_agree(seed):
    kw = _ctf_args(np.random.default_rng(seed))
    a = _kernels.ctf_accumulate(**kw, backend="numpy")
    b = _kernels.ctf_accumulate(**kw, backend="numba")
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * np.max(np.abs(a)))


def test_ctf_numpy_matches_direct_sum():
    rng = np.random.default_rng(1)
    kw = _ctf_args(rng, M=2, N=2, K=3, L=2)
    out = _kernels.ctf_accumulate(**kw, backend="numpy")
    m, n, k = 1, 0, 2
    f = kw["f0"] + k * kw["df"]
    total = 0
    for l in range(2):
        g = kw["gamma"][l, kw["rx_pol"][m], kw["tx_pol"][n]]
        d = kw["tau"][l] + kw["rx_delay"][m, l] + kw["tx_delay"][n, l]
        total += (kw["rx_amp"][m, l] * kw["tx_amp"][n, l] * g
                  * np.exp(2j * np.pi * kw["doppler"][l] * kw["t_mn"][m, n])
                  * np.exp(-2j * np.pi * f * d))
    assert out[m, n, k] == pytest.approx(total, rel=1e-10)


@needs_numba
@given(st.integers(0, 2 ** 31), st.integers(1, 8), st.floats(0.1, 20))
def test_waterfill_backends_agree(seed, r, budget):
    rng = np.random.default_rng(seed)
    g = -np.sort(-rng.exponential(size=(30, r)), axis=1)
    g[rng.uniform(size=g.shape) < 0.2] = 0.0
    g = -np.sort(-g, axis=1)
    a = _kernels.waterfill(g, budget, backend="numpy")
    b = _kernels.waterfill(g, budget, backend="numba")
    np.testing.assert_allclose(a, b, atol=1e-12)
    live = g[:, 0] > 0
    np.testing.assert_allclose(a[live].sum(axis=1), budget, rtol=1e-12)
    assert np.all(a >= 0)
    assert np.all(a[g == 0] == 0)


def test_unknown_backend():
    with pytest.raises(ValueError):
        _kernels.waterfill(np.ones((1, 1)), 1.0, backend="cuda")


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, HMDCHAN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from hmdchan import _kernels; print(_kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
