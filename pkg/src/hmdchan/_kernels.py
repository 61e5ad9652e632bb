"""Hot inner loops, with a numba path and a pure-numpy fallback.

The backend is picked once at import time.  Set ``HMDCHAN_DISABLE_NUMBA=1``
to force the numpy implementations (useful for debugging and for checking
that both paths agree).  Both implementations are always importable under
explicit names so tests and benchmarks can compare them directly.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

_DISABLED = os.environ.get("HMDCHAN_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

USE_NUMBA = numba is not None and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"

TWO_PI = 2.0 * np.pi


# ---------------------------------------------------------------------------
# CTF accumulation
# ---------------------------------------------------------------------------
#
# out[m, n, k] = sum_l coef[m, n, l] * exp(-j 2 pi f_k D[m, n, l])
#   coef[m, n, l] = rx_amp[m, l] * tx_amp[n, l] * gamma[l, rx_pol[m], tx_pol[n]]
#                   * exp(j 2 pi nu_l t[m, n])
#   D[m, n, l]    = tau[l] + rx_delay[m, l] + tx_delay[n, l]
#   f_k           = f0 + k * df


def _ctf_numpy(rx_amp, rx_pol, rx_delay, tx_amp, tx_pol, tx_delay,
               gamma, tau, doppler, t_mn, f0, df, num_tones):
    M = rx_amp.shape[0]
    N = tx_amp.shape[0]
    L = tau.shape[0]
    out = np.zeros((M, N, num_tones), dtype=np.complex128)
    freqs = f0 + df * np.arange(num_tones)
    for l in range(L):
        g = gamma[l][rx_pol[:, None], tx_pol[None, :]]
        coef = rx_amp[:, l, None] * tx_amp[None, :, l] * g
        if doppler[l] != 0.0:
            coef = coef * np.exp(1j * TWO_PI * doppler[l] * t_mn)
        delay = tau[l] + rx_delay[:, l, None] + tx_delay[None, :, l]
        out += coef[:, :, None] * np.exp(-1j * TWO_PI * delay[:, :, None] * freqs)
    return out


def _ctf_loop(rx_amp, rx_pol, rx_delay, tx_amp, tx_pol, tx_delay,
              gamma, tau, doppler, t_mn, f0, df, num_tones):
    M = rx_amp.shape[0]
    N = tx_amp.shape[0]
    L = tau.shape[0]
    out = np.zeros((M, N, num_tones), dtype=np.complex128)
    for m in range(M):
        for n in range(N):
            for l in range(L):
                c = rx_amp[m, l] * tx_amp[n, l] * gamma[l, rx_pol[m], tx_pol[n]]
                if c == 0:
                    continue
                if doppler[l] != 0.0:
                    c = c * np.exp(1j * TWO_PI * doppler[l] * t_mn[m, n])
                d = tau[l] + rx_delay[m, l] + tx_delay[n, l]
                # phasor recurrence along the uniform tone grid
                ph = np.exp(-1j * TWO_PI * f0 * d)
                step = np.exp(-1j * TWO_PI * df * d)
                for k in range(num_tones):
                    out[m, n, k] += c * ph
                    ph *= step
    return out


# ---------------------------------------------------------------------------
# Batched waterfilling
# ---------------------------------------------------------------------------
#
# For every row b: maximise sum_r log2(1 + a[b, r] * p_r) s.t. sum p_r <= budget,
# with a[b, :] sorted descending.  Exact active-set search: the optimal set is
# a prefix of the sorted gains, and the largest feasible prefix wins.


def _waterfill_numpy(gains, budget):
    B, R = gains.shape
    power = np.zeros((B, R))
    if R == 0:
        return power
    with np.errstate(divide="ignore"):
        inv = np.where(gains > 0, 1.0 / gains, np.inf)
    csum = np.cumsum(np.where(np.isfinite(inv), inv, 0.0), axis=1)
    k = np.arange(1, R + 1)
    with np.errstate(invalid="ignore"):
        level = (budget + csum) / k
    feasible = (level > inv) & np.isfinite(inv)
    # largest feasible prefix length per row (0 when every gain is zero)
    active = np.where(feasible.any(axis=1), R - np.argmax(feasible[:, ::-1], axis=1), 0)
    rows = np.nonzero(active)[0]
    mu = level[rows, active[rows] - 1]
    power[rows] = np.maximum(mu[:, None] - inv[rows], 0.0)
    mask = k[None, :] <= active[:, None]
    power[~mask] = 0.0
    return power


def _waterfill_loop(gains, budget):
    B, R = gains.shape
    power = np.zeros((B, R))
    for b in range(B):
        csum = 0.0
        best_mu = 0.0
        best_k = 0
        for r in range(R):
            g = gains[b, r]
            if g <= 0.0:
                break
            csum += 1.0 / g
            mu = (budget + csum) / (r + 1)
            if mu > 1.0 / g:
                best_k = r + 1
                best_mu = mu
        for r in range(best_k):
            p = best_mu - 1.0 / gains[b, r]
            power[b, r] = p if p > 0.0 else 0.0
    return power


if numba is not None:
    _ctf_numba = numba.njit(cache=True)(_ctf_loop)
    _waterfill_numba = numba.njit(cache=True)(_waterfill_loop)
else:  # pragma: no cover
    _ctf_numba = _ctf_loop
    _waterfill_numba = _waterfill_loop


def ctf_accumulate(rx_amp, rx_pol, rx_delay, tx_amp, tx_pol, tx_delay,
                   gamma, tau, doppler, t_mn, f0, df, num_tones, backend=None):
    """Sum plane-wave contributions of every path into an ``(M, N, K)`` CTF."""
    backend = backend or BACKEND
    args = (
        np.ascontiguousarray(rx_amp, dtype=np.complex128),
        np.ascontiguousarray(rx_pol, dtype=np.int64),
        np.ascontiguousarray(rx_delay, dtype=np.float64),
        np.ascontiguousarray(tx_amp, dtype=np.complex128),
        np.ascontiguousarray(tx_pol, dtype=np.int64),
        np.ascontiguousarray(tx_delay, dtype=np.float64),
        np.ascontiguousarray(gamma, dtype=np.complex128),
        np.ascontiguousarray(tau, dtype=np.float64),
        np.ascontiguousarray(doppler, dtype=np.float64),
        np.ascontiguousarray(t_mn, dtype=np.float64),
        float(f0),
        float(df),
        int(num_tones),
    )
    if backend == "numba":
        return _ctf_numba(*args)
    if backend == "numpy":
        return _ctf_numpy(*args)
    raise ValueError(f"unknown backend {backend!r}")


def waterfill(gains, budget, backend=None):
    """Optimal power per row of descending ``gains`` under a sum ``budget``."""
    backend = backend or BACKEND
    gains = np.ascontiguousarray(np.atleast_2d(gains), dtype=np.float64)
    if backend == "numba":
        return _waterfill_numba(gains, float(budget))
    if backend == "numpy":
        return _waterfill_numpy(gains, float(budget))
    raise ValueError(f"unknown backend {backend!r}")
