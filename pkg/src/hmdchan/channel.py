"""Channel transfer functions from specular paths, and their bookkeeping."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import DataError, DegenerateError, ShapeError
from .geometry import (ArrayLayout, HmdConfiguration, NUM_HMD_ARRAYS, Orientation, PortSet,
                       port_index_map)


@dataclass(frozen=True, eq=False)
class Mpc:
    """One specular path.

    ``gamma`` is the 2x2 polarimetric amplitude matrix indexed
    ``[receive pol, transmit pol]`` with 0 = H and 1 = V.  Angles are in the
    world frame; departure angles are seen from the AP, arrival angles from
    the HMD.
    """

    gamma: np.ndarray
    aod_azimuth: float = 0.0
    aod_elevation: float = 0.0
    aoa_azimuth: float = 0.0
    aoa_elevation: float = 0.0
    delay: float = 0.0
    doppler: float = 0.0
    order: int = 0
    surfaces: tuple = ()

    def __post_init__(self):
        g = np.asarray(self.gamma, dtype=complex)
        if g.shape != (2, 2):
            raise ShapeError(f"gamma must be 2x2, got {g.shape}")
        if not np.all(np.isfinite(g)):
            raise DataError("gamma has non-finite entries")
        if self.delay < 0:
            raise DataError("delay must be non-negative")
        object.__setattr__(self, "gamma", g)

    @property
    def power(self) -> float:
        """Gain summed over all four polarisation pairs."""
        return float(np.sum(np.abs(self.gamma) ** 2))


def unit_vector(azimuth, elevation):
    az = np.asarray(azimuth, float)
    el = np.asarray(elevation, float)
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)


@dataclass(frozen=True)
class SounderModel:
    """Tone plan and non-ideal sounder terms.

    Tones sit at ``carrier + (k - K/2) * bandwidth / K``.
    """

    carrier_frequency: float = 28e9
    bandwidth: float = 768e6
    num_tones: int = 2048
    system_response: np.ndarray | None = None
    noise_power: float = 0.0
    sampling_time: float = 18.3e-6

    def __post_init__(self):
        if self.num_tones < 2:
            raise DataError("need at least two tones")
        if self.system_response is not None:
            g = np.asarray(self.system_response, dtype=complex)
            if g.shape != (self.num_tones,):
                raise ShapeError("system_response must have one entry per tone")
            if np.any(np.abs(g) == 0):
                raise DataError("system_response must be non-zero on every tone")

    @property
    def tone_spacing(self) -> float:
        return self.bandwidth / self.num_tones

    @property
    def first_tone(self) -> float:
        return self.carrier_frequency - 0.5 * self.num_tones * self.tone_spacing

    @property
    def delay_resolution(self) -> float:
        return 1.0 / self.bandwidth

    def tones(self) -> np.ndarray:
        return self.first_tone + self.tone_spacing * np.arange(self.num_tones)

    def sampling_times(self, num_rx: int, num_tx: int) -> np.ndarray:
        """Switched-sounder schedule, row-major over HMD port then AP port."""
        return self.sampling_time * np.arange(num_rx * num_tx, dtype=float).reshape(num_rx, num_tx)


def synthesize_ctf(mpcs, hmd_ports: PortSet, ap_ports: PortSet, sounder: SounderModel,
                   orientation: Orientation = Orientation(), rng=None, backend=None) -> np.ndarray:
    """Channel transfer function of every HMD/AP port pair on every tone.

    Parameters
    ----------
    mpcs : sequence of Mpc
        Paths in the world frame.
    hmd_ports, ap_ports : PortSet
        Receive and transmit antennas.  HMD ports live in the HMD frame, which
        ``orientation`` rotates into the world.
    sounder : SounderModel
        Tone grid, system response, noise and sampling schedule.
    rng : numpy.random.Generator, optional
        Source for the additive noise when ``sounder.noise_power > 0``.

    Returns
    -------
    ndarray, shape (M, N, K), complex128
    """
    M, N, K = len(hmd_ports), len(ap_ports), sounder.num_tones
    mpcs = list(mpcs)
    if not mpcs:
        out = np.zeros((M, N, K), dtype=complex)
    else:
        gamma = np.stack([p.gamma for p in mpcs])
        tau = np.array([p.delay for p in mpcs])
        nu = np.array([p.doppler for p in mpcs])
        u_rx = unit_vector([p.aoa_azimuth for p in mpcs], [p.aoa_elevation for p in mpcs])
        u_tx = unit_vector([p.aod_azimuth for p in mpcs], [p.aod_elevation for p in mpcs])
        # rows of u @ R are R^T u: world -> HMD frame
        u_rx = u_rx @ orientation.matrix()
        rx_amp, rx_delay = hmd_ports.response(u_rx)
        tx_amp, tx_delay = ap_ports.response(u_tx)
        out = _kernels.ctf_accumulate(
            rx_amp, hmd_ports.pol, rx_delay, tx_amp, ap_ports.pol, tx_delay,
            gamma, tau, nu, sounder.sampling_times(M, N),
            sounder.first_tone, sounder.tone_spacing, K, backend=backend)
    if sounder.system_response is not None:
        out *= np.asarray(sounder.system_response, dtype=complex)
    if sounder.noise_power > 0:
        rng = np.random.default_rng() if rng is None else rng
        scale = np.sqrt(sounder.noise_power / 2.0)
        out += scale * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out


# ---------------------------------------------------------------------------
# Delay domain
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerDelayProfile:
    power: np.ndarray
    delays: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.power) < 0):
            raise DataError("PDP taps must be non-negative")


def _check_uniform(freqs):
    if freqs is None:
        return
    d = np.diff(np.asarray(freqs, float))
    if d.size == 0 or not np.allclose(d, d[0], rtol=1e-9, atol=0.0):
        raise DataError("only uniform tone grids are supported")


def cir(ctf, freqs=None) -> np.ndarray:
    """Unitary inverse DFT along the tone axis (last axis)."""
    ctf = np.asarray(ctf)
    if ctf.shape[-1] < 2:
        raise DataError("need at least two tones")
    _check_uniform(freqs)
    return np.fft.ifft(ctf, axis=-1, norm="ortho")


def ctf_to_cir(ctf, bandwidth: float, freqs=None) -> PowerDelayProfile:
    """PDP summed over every port pair; delay bins are ``1 / bandwidth`` apart."""
    h = cir(ctf, freqs)
    power = np.sum(np.abs(h) ** 2, axis=tuple(range(h.ndim - 1)))
    K = h.shape[-1]
    return PowerDelayProfile(power, np.arange(K) / bandwidth)


# ---------------------------------------------------------------------------
# Normalisation and sub-channels
# ---------------------------------------------------------------------------


def normalization_factor(full, mode: str = "literal") -> float:
    """Amplitude factor that takes the full 8-array channel to unit mean entry power.

    ``full`` has shape ``(..., M, N, K)``; every leading axis counts as a
    snapshot.  ``mode="band"`` additionally divides by ``sqrt(K)`` so the
    per-entry power summed over the band is one instead.
    """
    full = np.asarray(full)
    total = float(np.sum(np.abs(full) ** 2))
    if total == 0.0 or not np.isfinite(total):
        raise DegenerateError("cannot normalise an all-zero channel")
    count = full.size
    factor = np.sqrt(count / total)
    if mode == "band":
        factor /= np.sqrt(full.shape[-1])
    elif mode != "literal":
        raise ValueError(f"unknown normalisation mode {mode!r}")
    return float(factor)


def normalize_channel(full, mode: str = "literal"):
    """Scale ``full`` so that ``sum |H|^2 = M N I K``.  Returns ``(H, factor)``."""
    f = normalization_factor(full, mode)
    return np.asarray(full) * f, f


def extract_subchannel(full, config: HmdConfiguration, layout: ArrayLayout = ArrayLayout(),
                       axis: int = -3) -> np.ndarray:
    """HMD rows of ``config`` taken from a full 8-array channel."""
    full = np.asarray(full)
    expected = NUM_HMD_ARRAYS * layout.num_ports
    if full.shape[axis] != expected:
        raise ShapeError(f"expected {expected} HMD rows, got {full.shape[axis]}")
    return np.take(full, port_index_map(config, layout), axis=axis)


@dataclass
class ChannelTensor:
    """CTF stack ``data[..., M, N, K]`` with its tone grid.

    Leading axes are free-form (typically position, scenario, snapshot) and
    are named in ``axes`` for bookkeeping only.
    """

    data: np.ndarray
    first_tone: float = 0.0
    tone_spacing: float = 1.0
    axes: tuple = ("snapshot",)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim < 3:
            raise ShapeError("channel tensor needs at least (M, N, K) axes")

    @property
    def num_rx(self) -> int:
        return self.data.shape[-3]

    @property
    def num_tx(self) -> int:
        return self.data.shape[-2]

    @property
    def num_tones(self) -> int:
        return self.data.shape[-1]

    def tones(self) -> np.ndarray:
        return self.first_tone + self.tone_spacing * np.arange(self.num_tones)

    def normalized(self, mode: str = "literal") -> "ChannelTensor":
        data, _ = normalize_channel(self.data, mode)
        return dataclasses.replace(self, data=data)

    def subchannel(self, config: HmdConfiguration, layout: ArrayLayout = ArrayLayout()) -> "ChannelTensor":
        return dataclasses.replace(self, data=extract_subchannel(self.data, config, layout))


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------

MAGIC = b"HMDCTF\x00\x01"


@dataclass
class ChannelSnapshot:
    """One ``(M, N, K)`` CTF plus the metadata needed to interpret it."""

    data: np.ndarray
    first_tone: float
    tone_spacing: float
    hmd_rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def shape(self):
        return self.data.shape

    def tones(self) -> np.ndarray:
        return self.first_tone + self.tone_spacing * np.arange(self.data.shape[-1])

    def header(self) -> dict:
        M, N, K = self.data.shape
        return {
            "format": "hmdchan-ctf",
            "version": 1,
            "dims": {"M": M, "N": N, "K": K},
            "first_tone_hz": self.first_tone,
            "tone_spacing_hz": self.tone_spacing,
            "hmd_rows": [int(r) for r in self.hmd_rows] or list(range(M)),
            "meta": self.meta,
        }


def write_container(path, snap: ChannelSnapshot) -> None:
    """Write ``magic | u32 header length | JSON header | complex64 LE payload``.

    The payload is the C-ordered ``(M, N, K)`` array with real and imaginary
    parts interleaved.
    """
    if snap.data.ndim != 3:
        raise ShapeError("container payload must be (M, N, K)")
    head = json.dumps(snap.header(), sort_keys=True, separators=(",", ":")).encode()
    payload = np.ascontiguousarray(snap.data, dtype="<c8").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(payload)


def read_container(path) -> ChannelSnapshot:
    raw = Path(path).read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise DataError(f"{path}: not a channel container")
    (n,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    try:
        head = json.loads(raw[start:start + n].decode())
        dims = head["dims"]
        shape = (dims["M"], dims["N"], dims["K"])
    except (ValueError, KeyError) as exc:
        raise DataError(f"{path}: malformed header") from exc
    payload = np.frombuffer(raw, dtype="<c8", offset=start + n)
    if payload.size != np.prod(shape):
        raise DataError(f"{path}: payload has {payload.size} values, header says {shape}")
    return ChannelSnapshot(payload.reshape(shape).astype(np.complex128), head["first_tone_hz"],
                           head["tone_spacing_hz"], head["hmd_rows"], head.get("meta", {}))


def slice_to_csv(snap: ChannelSnapshot, rows=None, cols=None) -> str:
    """CSV text ``m,n,k,freq_hz,re,im`` for a (small) slice of a snapshot."""
    rows = range(snap.data.shape[0]) if rows is None else rows
    cols = range(snap.data.shape[1]) if cols is None else cols
    freqs = snap.tones()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["m", "n", "k", "freq_hz", "re", "im"])
    for m in rows:
        for n in cols:
            for k, f in enumerate(freqs):
                v = snap.data[m, n, k]
                w.writerow([m, n, k, repr(float(f)), repr(float(v.real)), repr(float(v.imag))])
    return buf.getvalue()
