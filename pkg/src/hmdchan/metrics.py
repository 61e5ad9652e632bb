"""Channel performance metrics: gain, stability, blockage, dispersion, capacity, correlation."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .channel import PowerDelayProfile
from .errors import ConfigurationError, DataError, DegenerateError


def _db(x):
    return 10.0 * np.log10(x)


# ---------------------------------------------------------------------------
# Gain
# ---------------------------------------------------------------------------


def tone_gain(h) -> np.ndarray:
    """Frobenius power ``||H[k]||_F^2`` of every tone; ``h`` is ``(..., M, N, K)``."""
    h = np.asarray(h)
    if h.ndim < 3:
        raise DataError("expected an (..., M, N, K) channel")
    return np.sum(h.real ** 2 + h.imag ** 2, axis=(-3, -2))


def mean_gain(h):
    """Frequency-averaged Frobenius power of each snapshot."""
    g = np.mean(tone_gain(h), axis=-1)
    return g if np.ndim(g) else float(g)


def gain_ratio(h_q, h_full) -> float:
    """Gain of a sub-configuration relative to the full HMD, in dB.

    Accepts channels or already-computed mean gains.
    """
    gq = mean_gain(h_q) if np.ndim(h_q) >= 3 else np.asarray(h_q, float)
    g8 = mean_gain(h_full) if np.ndim(h_full) >= 3 else np.asarray(h_full, float)
    if np.any(g8 <= 0):
        raise DegenerateError("full-HMD gain is zero")
    r = _db(gq / g8)
    return r if np.ndim(r) else float(r)


@dataclass(frozen=True)
class GainSeries:
    """Per-snapshot mean gains of one configuration at one (position, scenario)."""

    gains: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.gains, dtype=float).ravel()
        if g.size == 0:
            raise DataError("empty gain series")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise DataError("gains must be finite and non-negative")
        object.__setattr__(self, "gains", g)

    @property
    def grand_mean(self) -> float:
        return float(np.mean(self.gains))

    def __len__(self):
        return self.gains.size


def _series(s) -> GainSeries:
    return s if isinstance(s, GainSeries) else GainSeries(s)


def gain_std_db(series, mode: str = "literal", reference: str = "arithmetic") -> float:
    """Spread of the snapshot gains in the log domain, in dB.

    Parameters
    ----------
    mode : {"literal", "conventional"}
        ``literal``: ``(10/I) * sqrt(sum log10^2(g/g_ref))``.
        ``conventional``: ``10 * sqrt(mean log10^2(g/g_ref))``.
    reference : {"arithmetic", "geometric"}
        ``g_ref`` is the grand mean of the series or its geometric mean.
    """
    s = _series(series)
    I = len(s)
    if I < 2:
        raise DataError("need at least two snapshots")
    if np.any(s.gains <= 0):
        raise DegenerateError("log of a zero gain")
    if reference == "arithmetic":
        ref = s.grand_mean
    elif reference == "geometric":
        ref = float(np.exp(np.mean(np.log(s.gains))))
    else:
        raise ConfigurationError(f"unknown reference {reference!r}")
    sq = np.sum(np.log10(s.gains / ref) ** 2)
    if mode == "literal":
        return float(10.0 / I * np.sqrt(sq))
    if mode == "conventional":
        return float(10.0 * np.sqrt(sq / I))
    raise ConfigurationError(f"unknown mode {mode!r}")


def gain_autocorrelation(series, lag, mode: str = "standard"):
    """Normalised autocovariance of the snapshot gains at ``lag`` (scalar or array).

    ``standard`` divides by the full-series sum of squares, so lag 0 gives 1.
    ``literal`` divides by the partial sum over ``i = lag .. I-lag-1``; it is
    undefined once that range is empty.
    """
    s = _series(series)
    x = s.gains - s.grand_mean
    I = x.size
    lags = np.atleast_1d(np.asarray(lag, dtype=int))
    if np.any(lags < 0) or np.any(lags >= I):
        raise ConfigurationError(f"lag must be in [0, {I})")
    full = float(x @ x)
    if full <= 0.0:
        raise DegenerateError("constant gain series has no autocorrelation")
    out = np.empty(lags.size)
    for n, j in enumerate(lags):
        num = float(x[: I - j] @ x[j:])
        if mode == "standard":
            den = full
        elif mode == "literal":
            part = x[j: I - j]
            den = float(part @ part)
            if den <= 0.0:
                raise DegenerateError(f"literal denominator vanishes at lag {j}")
        else:
            raise ConfigurationError(f"unknown mode {mode!r}")
        out[n] = num / den
    return out if np.ndim(lag) else float(out[0])


def blockage_ratio(los, olos, first_only: bool = True) -> float:
    """LoS over obstructed gain in dB, from per-snapshot mean gains (or channels)."""
    if los is None or olos is None:
        raise DataError("blockage ratio needs both the LoS and the OLoS scenario")
    a = np.atleast_1d(mean_gain(los) if np.ndim(los) >= 3 else np.asarray(los, float))
    b = np.atleast_1d(mean_gain(olos) if np.ndim(olos) >= 3 else np.asarray(olos, float))
    if a.size == 0 or b.size == 0:
        raise DataError("empty scenario")
    if first_only:
        a, b = a[:1], b[:1]
    num, den = float(np.sum(a)), float(np.sum(b))
    if num <= 0 or den <= 0:
        raise DegenerateError("zero gain in a blockage comparison")
    return float(_db(num / den))


# ---------------------------------------------------------------------------
# Delay dispersion and frequency selectivity
# ---------------------------------------------------------------------------


def _pdp_weights(pdp: PowerDelayProfile, threshold_db=None):
    p = np.asarray(pdp.power, dtype=float)
    if threshold_db is not None:
        p = np.where(p >= p.max() * 10.0 ** (-abs(threshold_db) / 10.0), p, 0.0)
    total = p.sum()
    if total <= 0:
        raise DegenerateError("PDP carries no power")
    return p / total, np.asarray(pdp.delays, dtype=float)


def mean_excess_delay(pdp: PowerDelayProfile, threshold_db=None) -> float:
    """First moment of the normalised PDP.

    ``threshold_db`` optionally drops taps more than that far below the peak.
    """
    w, t = _pdp_weights(pdp, threshold_db)
    return float(w @ t)


def rms_delay_spread(pdp: PowerDelayProfile, threshold_db=None) -> float:
    """Square root of the second central moment of the normalised PDP."""
    w, t = _pdp_weights(pdp, threshold_db)
    mu = w @ t
    return float(np.sqrt(max(w @ (t - mu) ** 2, 0.0)))


def frequency_selective_fading(h, per_tone: bool = False):
    """Normalised gain variation across the band.

    Returns ``sum_k (g[k] - mean)^2 / mean^2`` over the tone gains of each
    snapshot; ``per_tone=True`` divides by the number of tones.  ``h`` may
    also be a 1-D array of tone gains.
    """
    g = np.asarray(h, dtype=float) if np.ndim(h) == 1 and not np.iscomplexobj(h) else tone_gain(h)
    K = g.shape[-1]
    if K < 2:
        raise DataError("need at least two tones")
    m = g.mean(axis=-1)
    if np.any(m <= 0):
        raise DegenerateError("zero mean gain")
    xi = np.sum((g - m[..., None]) ** 2, axis=-1) / m ** 2
    if per_tone:
        xi = xi / K
    return xi if np.ndim(xi) else float(xi)


# ---------------------------------------------------------------------------
# Eigenmodes and capacity
# ---------------------------------------------------------------------------


def eigenmodes(h) -> np.ndarray:
    """Eigenvalues of ``H H^H`` in descending order, ``min(M, N)`` of them.

    Works on stacks: ``h`` is ``(..., M, N)``.  The non-zero spectrum of
    ``H H^H`` equals that of ``H^H H``, so the smaller Gram matrix is used.
    """
    h = np.asarray(h)
    if not np.all(np.isfinite(h)):
        raise DataError("channel has non-finite entries")
    hc = np.conj(np.swapaxes(h, -1, -2))
    gram = hc @ h if h.shape[-2] >= h.shape[-1] else h @ hc
    lam = np.linalg.eigvalsh(gram)[..., ::-1]
    return np.clip(lam, 0.0, None)


@dataclass(frozen=True)
class CapacityConfig:
    """Linear ``snr`` (E_s/N_0), stream cap and band/per-tone evaluation."""

    snr: float = 10.0
    max_streams: int | None = None
    per_tone: bool = False

    def __post_init__(self):
        if not self.snr > 0:
            raise ConfigurationError("snr must be positive")
        if self.max_streams is not None and self.max_streams < 1:
            raise ConfigurationError("max_streams must be >= 1")

    @classmethod
    def from_db(cls, snr_db: float, **kw) -> "CapacityConfig":
        return cls(10.0 ** (snr_db / 10.0), **kw)


def _stream_count(num_eigs, config: CapacityConfig, num_hmd_ports, num_ap_ports=None):
    r = min(num_eigs, int(num_hmd_ports))
    if num_ap_ports is not None:
        r = min(r, int(num_ap_ports))
    if config.max_streams is not None:
        r = min(r, int(config.max_streams))
    return r


def waterfilling_batch(eigs, config: CapacityConfig, num_hmd_ports: int,
                       num_ap_ports=None, backend=None):
    """Capacity and power allocation for every row of ``eigs`` (``(..., R)``).

    Each row is waterfilled independently under the power budget
    ``num_hmd_ports`` with per-stream gain ``snr * lambda / num_hmd_ports``.
    """
    if num_hmd_ports < 1:
        raise ConfigurationError("num_hmd_ports must be >= 1")
    eigs = np.asarray(eigs, dtype=float)
    if np.any(eigs < -1e-12 * max(1.0, float(np.max(np.abs(eigs), initial=0.0)))):
        raise DataError("eigenvalues must be non-negative")
    lead = eigs.shape[:-1]
    lam = -np.sort(-np.clip(eigs, 0.0, None).reshape(-1, eigs.shape[-1]), axis=1)
    r = _stream_count(lam.shape[1], config, num_hmd_ports, num_ap_ports)
    lam = lam[:, :r]
    a = config.snr * lam / num_hmd_ports
    rho = _kernels.waterfill(a, float(num_hmd_ports), backend=backend)
    cap = np.sum(np.log2(1.0 + a * rho), axis=1)
    return cap.reshape(lead), rho.reshape(lead + (r,))


def waterfilling_capacity(eigenvalues, config: CapacityConfig, num_hmd_ports: int,
                          num_ap_ports=None):
    """Spatial-multiplexing capacity in bit/s/Hz and the per-stream powers.

    Maximises ``sum_r log2(1 + snr * rho_r * lambda_r / M_Q)`` subject to
    ``sum rho_r <= M_Q``, over the strongest ``min(M_Q, N, R_lim)`` modes.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    cap, rho = waterfilling_batch(lam[None, :], config, num_hmd_ports, num_ap_ports)
    return float(cap[0]), rho[0]


def channel_capacity(h, config: CapacityConfig, norm_gain: float = 1.0):
    """Capacity of an ``(..., M, N, K)`` channel.

    Band mode waterfills the tone-averaged eigenvalues and returns one value
    per snapshot; per-tone mode returns ``(..., K)``.  ``norm_gain`` is a
    power factor applied to the eigenvalues (e.g. a normalisation factor squared).
    """
    h = np.asarray(h)
    M, N = h.shape[-3], h.shape[-2]
    lam = eigenmodes(np.moveaxis(h, -1, -3)) * norm_gain  # (..., K, R)
    return capacity_from_eigs(lam, config, M, N)


def capacity_from_eigs(lam, config: CapacityConfig, num_hmd_ports: int, num_ap_ports=None):
    """Capacity from per-tone eigenvalues ``(..., K, R)``."""
    lam = np.asarray(lam, dtype=float)
    if config.per_tone:
        return waterfilling_batch(lam, config, num_hmd_ports, num_ap_ports)[0]
    return waterfilling_batch(lam.mean(axis=-2), config, num_hmd_ports, num_ap_ports)[0]


def minimal_service(samples, percentile: float = 3.0) -> float:
    """Low percentile of a capacity sample set (linear interpolation)."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size == 0:
        raise DataError("no capacity samples")
    if not 0.0 <= percentile <= 100.0:
        raise ConfigurationError("percentile must be in [0, 100]")
    return float(np.percentile(x, percentile, method="linear"))


# ---------------------------------------------------------------------------
# Correlation and angular spread
# ---------------------------------------------------------------------------


def gain_correlation(h, mode: str = "literal") -> float:
    """Mean off-diagonal entry of the normalised port-pair gain correlation matrix.

    The per-pair tone gains ``|H_mn[k]|^2`` form one vector per pair.
    ``literal`` uses the raw second moment ``(1/K) sum_k g_a[k] g_b[k]``;
    ``pearson`` subtracts each pair's band mean first and drops pairs with
    zero variance.  Either way the matrix is scaled to a unit diagonal.

    The full matrix is never formed: with unit-norm rows ``z_a``, the sum of
    all entries is ``||sum_a z_a||^2``.
    """
    h = np.asarray(h)
    if h.ndim != 3:
        raise DataError("expected an (M, N, K) channel")
    K = h.shape[-1]
    if K < 2:
        raise DataError("need at least two tones")
    z = (h.real ** 2 + h.imag ** 2).reshape(-1, K)
    if mode == "pearson":
        z = z - z.mean(axis=1, keepdims=True)
    elif mode != "literal":
        raise ConfigurationError(f"unknown mode {mode!r}")
    norm = np.sqrt(np.sum(z * z, axis=1))
    scale = np.max(norm, initial=0.0)
    keep = norm > 1e-12 * scale if scale > 0 else np.zeros(norm.shape, bool)
    if mode == "pearson" and not np.all(keep):
        warnings.warn(f"{int(np.sum(~keep))} port pairs have zero gain variance; excluded",
                      RuntimeWarning, stacklevel=2)
    z = z[keep] / norm[keep, None]
    P = z.shape[0]
    if P < 2:
        raise DegenerateError("need at least two port pairs with non-zero gain")
    s = z.sum(axis=0)
    return float((s @ s - P) / (P * (P - 1)))


def azimuth_spread(mpcs=None, azimuths=None, powers=None):
    """Circular azimuth spread of arrival and its ``Lambda`` counterpart.

    Either pass MPCs (power summed over polarisations) or ``azimuths`` and
    ``powers`` directly.  Returns ``(sigma, Lambda)``; a vanishing circular
    mean gives ``(inf, 1.0)``.
    """
    if mpcs is not None:
        azimuths = np.array([m.aoa_azimuth for m in mpcs])
        powers = np.array([m.power for m in mpcs])
    phi = np.asarray(azimuths, dtype=float).ravel()
    p = np.asarray(powers, dtype=float).ravel()
    if phi.shape != p.shape or phi.size == 0:
        raise DataError("azimuths and powers must be non-empty and equally long")
    total = p.sum()
    if total <= 0:
        raise DegenerateError("MPC set carries no power")
    r = min(abs(np.sum(p * np.exp(1j * phi))) / total, 1.0)
    if r <= 1e-15:
        return float("inf"), 1.0
    sigma = float(np.sqrt(max(-2.0 * np.log10(r), 0.0)))
    lam = float(np.sqrt(1.0 - 10.0 ** (-sigma ** 2)))
    return sigma, lam


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    """Summary metrics of one configuration at one (AP, position, scenario)."""

    gain_ratio_db: float = float("nan")
    gain_std_db: float = float("nan")
    gain_std_db_conventional: float = float("nan")
    autocorrelation: list = field(default_factory=list)
    blockage_db: float = float("nan")
    rms_delay_spread: float = float("nan")
    mean_excess_delay: float = float("nan")
    fading: float = float("nan")
    capacity: float = float("nan")
    minimal_service: float = float("nan")
    correlation: float = float("nan")
    azimuth_spread: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)
