"""Room geometry, image-method multipath, human blockage and path loss."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
from scipy.special import fresnel

from .channel import Mpc
from .errors import ConfigurationError, DegenerateError
from .geometry import SPEED_OF_LIGHT

SURFACES = ("x0", "x1", "y0", "y1", "floor", "ceiling")
# surface -> (axis, which end of the room: 0 = low, 1 = high)
_PLANES = {"x0": (0, 0), "x1": (0, 1), "y0": (1, 0), "y1": (1, 1), "floor": (2, 0), "ceiling": (2, 1)}

DEFAULT_REFLECTIVITY = {"x0": 0.6, "x1": 0.6, "y0": 0.6, "y1": 0.6, "floor": 0.3, "ceiling": 0.6}


@dataclass(frozen=True)
class Room:
    width: float = 6.0
    length: float = 9.15
    height: float = 3.0

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width, self.length, self.height])

    def contains(self, p) -> bool:
        p = np.asarray(p, float)
        return bool(np.all(p > 0.0) and np.all(p < self.dims))

    def plane(self, surface: str) -> tuple[int, float]:
        axis, end = _PLANES[surface]
        return axis, float(self.dims[axis] * end)


@dataclass(frozen=True)
class Scenario:
    """One AP deployment and one HMD location inside a box-shaped room.

    ``reflectivity`` holds per-surface power reflection coefficients and
    ``xpol_db`` the cross-polarisation leakage added at every bounce.
    """

    room: Room = Room()
    ap_position: tuple = (0.3, 0.3, 1.9)
    ap_azimuth: float = np.deg2rad(56.7)
    ap_elevation: float = 0.0
    hmd_position: tuple = (3.0, 4.5, 1.6)
    reflectivity: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_REFLECTIVITY))
    carrier_frequency: float = 28e9
    bandwidth: float = 768e6
    num_tones: int = 128
    xpol_db: float = -15.0

    def __post_init__(self):
        refl = dict(DEFAULT_REFLECTIVITY)
        refl.update(self.reflectivity)
        unknown = set(refl) - set(SURFACES)
        if unknown:
            raise ConfigurationError(f"unknown surfaces {sorted(unknown)}")
        for name, rho in refl.items():
            if not 0.0 <= rho <= 1.0:
                raise ConfigurationError(f"reflectivity of {name} must be in [0, 1], got {rho}")
        object.__setattr__(self, "reflectivity", refl)
        object.__setattr__(self, "ap_position", tuple(float(v) for v in self.ap_position))
        object.__setattr__(self, "hmd_position", tuple(float(v) for v in self.hmd_position))
        if not self.room.contains(self.ap_position):
            raise ConfigurationError(f"AP position {self.ap_position} outside the room")
        if not self.room.contains(self.hmd_position):
            raise ConfigurationError(f"HMD position {self.hmd_position} outside the room")
        if self.num_tones < 2:
            raise ConfigurationError("num_tones must be at least 2")
        if self.bandwidth <= 0 or self.carrier_frequency <= 0:
            raise ConfigurationError("carrier frequency and bandwidth must be positive")

    @property
    def wavelength(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency

    def with_hmd(self, position) -> "Scenario":
        return replace(self, hmd_position=tuple(position))


@dataclass(frozen=True)
class Blocker:
    """Vertical cylinder standing on the floor; only its 2-D footprint matters."""

    center: tuple = (0.0, 0.0)
    diameter: float = 0.15
    present: bool = True

    def __post_init__(self):
        if self.diameter <= 0:
            raise ConfigurationError("blocker diameter must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center[:2]))


NO_BLOCKER = Blocker(present=False)


def blocker_on_los(scenario: Scenario, fraction: float = 0.5, diameter: float = 0.15) -> Blocker:
    """A blocker centred on the 2-D LoS, ``fraction`` of the way from the AP."""
    ap = np.asarray(scenario.ap_position[:2])
    hmd = np.asarray(scenario.hmd_position[:2])
    return Blocker(tuple(ap + fraction * (hmd - ap)), diameter, True)


# ---------------------------------------------------------------------------
# Image method
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImagePath:
    surfaces: tuple
    points: np.ndarray  # (order + 2, 3): TX, reflection points..., RX
    image: np.ndarray
    valid: bool

    @property
    def order(self) -> int:
        return len(self.surfaces)

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.points, axis=0), axis=1)))


def _reflect(p, room: Room, surface: str):
    axis, c = room.plane(surface)
    q = np.array(p, float)
    q[axis] = 2.0 * c - q[axis]
    return q


def _trace(tx, rx, room: Room, surfaces: Sequence[str]) -> ImagePath:
    images = [np.asarray(tx, float)]
    for s in surfaces:
        images.append(_reflect(images[-1], room, s))
    pts = [np.asarray(rx, float)]
    valid = True
    q = pts[0]
    for j in range(len(surfaces), 0, -1):
        axis, c = room.plane(surfaces[j - 1])
        target = images[j]
        denom = target[axis] - q[axis]
        if abs(denom) < 1e-12:
            valid = False
            break
        t = (c - q[axis]) / denom
        p = q + t * (target - q)
        others = [a for a in range(3) if a != axis]
        inside = all(-1e-9 <= p[a] <= room.dims[a] + 1e-9 for a in others)
        if not (1e-12 < t < 1.0 - 1e-12) or not inside:
            valid = False
        p[axis] = c
        pts.append(p)
        q = p
    pts.append(np.asarray(tx, float))
    return ImagePath(tuple(surfaces), np.array(pts[::-1]), images[-1], valid)


def surface_sequences(max_order: int):
    """Every surface sequence up to ``max_order`` without immediate repeats."""
    yield ()
    for order in range(1, max_order + 1):
        for seq in itertools.product(SURFACES, repeat=order):
            if all(a != b for a, b in zip(seq, seq[1:])):
                yield seq


def enumerate_images(tx, rx, room: Room, max_order: int, validate: bool = True) -> list[ImagePath]:
    """Image tree of ``tx`` seen from ``rx``.

    With ``validate`` off, the raw tree is returned (1 + 6 + 30 candidates at
    order 2).  With it on, only candidates whose reflection points lie on the
    named faces in the stated order survive; for perpendicular pairs only one
    of the two orderings is geometrically realisable.
    """
    paths = [_trace(tx, rx, room, seq) for seq in surface_sequences(max_order)]
    return [p for p in paths if p.valid] if validate else paths


def _xpol_matrix(rho: float, leakage: float) -> np.ndarray:
    k = np.sqrt(leakage)
    return np.sqrt(rho) / np.sqrt(1.0 + leakage) * np.array([[1.0, k], [k, 1.0]])


def _direction(a, b):
    v = np.asarray(b, float) - np.asarray(a, float)
    return v / np.linalg.norm(v)


def _angles(u):
    return float(np.arctan2(u[1], u[0])), float(np.arcsin(np.clip(u[2], -1.0, 1.0)))


def _blockage_amplitude(points: np.ndarray, blocker: Blocker, frequency: float) -> float:
    """Product of double-knife-edge field magnitudes over segments crossing the blocker."""
    if not blocker.present:
        return 1.0
    c = np.asarray(blocker.center)
    seg = np.diff(points, axis=0)
    seg_len = np.linalg.norm(seg, axis=1)
    total = float(seg_len.sum())
    travelled = 0.0
    amp = 1.0
    for start, vec, length in zip(points[:-1], seg, seg_len):
        v2 = vec[:2]
        l2 = float(v2 @ v2)
        if l2 > 0.0:
            t = float((c - start[:2]) @ v2 / l2)
            if 0.0 < t < 1.0:
                lateral = float(np.linalg.norm(start[:2] + t * v2 - c))
                if lateral < blocker.diameter / 2:
                    d_tx = travelled + t * length
                    d_rx = total - d_tx
                    if d_tx > 0.0 and d_rx > 0.0:
                        e = gtd_blockage_field(d_tx, d_rx, blocker.diameter, frequency, lateral)
                        amp *= min(1.0, abs(e))
        travelled += float(length)
    return amp


def generate_mpcs(scenario: Scenario, max_reflection_order: int = 2,
                  blocker: Blocker = NO_BLOCKER) -> list[Mpc]:
    """Specular paths between the AP and the HMD centre.

    Amplitudes follow free-space spreading ``lambda / (4 pi d)`` times the
    surface reflection amplitudes; paths through the blocker footprint are
    scaled by the knife-edge field magnitude.  Doppler is zero: mobility is
    handled by regenerating the paths for every snapshot.
    """
    if max_reflection_order not in (0, 1, 2):
        raise ConfigurationError("max_reflection_order must be 0, 1 or 2")
    tx = np.asarray(scenario.ap_position)
    rx = np.asarray(scenario.hmd_position)
    if np.linalg.norm(rx - tx) < 1e-9:
        raise ConfigurationError("AP and HMD positions coincide")
    lam = scenario.wavelength
    leakage = 10.0 ** (scenario.xpol_db / 10.0)
    mpcs = []
    for path in enumerate_images(tx, rx, scenario.room, max_reflection_order):
        gamma = np.eye(2, dtype=complex)
        for s in path.surfaces:
            gamma = _xpol_matrix(scenario.reflectivity[s], leakage) @ gamma
        if not np.any(gamma):
            continue
        d = path.length
        amp = lam / (4.0 * np.pi * d) * _blockage_amplitude(path.points, blocker, scenario.carrier_frequency)
        aod = _angles(_direction(path.points[0], path.points[1]))
        aoa = _angles(_direction(path.points[-1], path.points[-2]))
        mpcs.append(Mpc(amp * gamma, aod[0], aod[1], aoa[0], aoa[1], d / SPEED_OF_LIGHT, 0.0,
                        order=path.order, surfaces=path.surfaces))
    return mpcs


# ---------------------------------------------------------------------------
# Knife-edge blockage
# ---------------------------------------------------------------------------


def knife_edge_field(v):
    """Complex field behind a half-plane whose edge has Fresnel parameter ``v``.

    Normalised so that two half-planes retreating to infinity give a field of
    1 together; each open half contributes ``(1+j)/2 * int_v^inf exp(-j pi t^2 / 2) dt``.
    """
    s, c = fresnel(np.asarray(v, dtype=float))
    return 0.5 * (1.0 + 1.0j) * ((0.5 - c) - 1.0j * (0.5 - s))


def fresnel_parameter(clearance, d_tx, d_rx, frequency):
    lam = SPEED_OF_LIGHT / frequency
    return clearance * np.sqrt(2.0 * (d_tx + d_rx) / (lam * d_tx * d_rx))


def gtd_blockage_field(d_tx: float, d_rx: float, width: float, frequency: float,
                       lateral_offset: float = 0.0) -> complex:
    """Field relative to free space behind an absorbing strip of ``width``.

    The strip stands ``d_tx`` from the transmitter and ``d_rx`` from the
    receiver with its centre ``lateral_offset`` off the direct ray; its two
    edges diffract independently and the contributions add coherently.
    """
    if d_tx <= 0 or d_rx <= 0:
        raise ConfigurationError("blocker distances must be positive")
    if width < 0:
        raise ConfigurationError("blocker width must be non-negative")
    if frequency <= 0:
        raise ConfigurationError("frequency must be positive")
    half = 0.5 * width
    v1 = fresnel_parameter(half - lateral_offset, d_tx, d_rx, frequency)
    v2 = fresnel_parameter(half + lateral_offset, d_tx, d_rx, frequency)
    return complex(knife_edge_field(v1) + knife_edge_field(v2))


def gtd_blockage_attenuation(d_tx: float, d_rx: float, width: float, frequency: float,
                             lateral_offset: float = 0.0) -> float:
    """Blockage loss in dB of a cylinder modelled as two absorbing knife edges."""
    e = gtd_blockage_field(d_tx, d_rx, width, frequency, lateral_offset)
    return float(-20.0 * np.log10(abs(e)))


# ---------------------------------------------------------------------------
# Path loss
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathLossModel:
    exponent: float = 2.0
    reference_loss_db: float = 0.0
    reference_distance: float = 1.0
    shadow_fading_db: float = 0.0

    def __post_init__(self):
        if self.reference_distance <= 0:
            raise ConfigurationError("reference distance must be positive")
        if self.exponent <= 0:
            raise ConfigurationError("path loss exponent must be positive")
        if self.shadow_fading_db < 0:
            raise ConfigurationError("shadow fading must be >= 0 dB")


def path_loss(model: PathLossModel, d, shadow_fading_db=None):
    """Log-distance path loss in dB; ``shadow_fading_db`` overrides the model's offset."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ConfigurationError("distance must be positive")
    x = model.shadow_fading_db if shadow_fading_db is None else shadow_fading_db
    pl = model.reference_loss_db + 10.0 * model.exponent * np.log10(d / model.reference_distance) + x
    return pl if np.ndim(pl) else float(pl)


def fit_ple(distances, gains, reference_distance: float = 1.0) -> tuple[float, float]:
    """Least-squares path loss exponent from ``(distance, linear gain)`` samples.

    Returns ``(n, PL0)`` with ``PL0`` the fitted loss in dB at
    ``reference_distance``.
    """
    d = np.asarray(distances, dtype=float)
    g = np.asarray(gains, dtype=float)
    if d.shape != g.shape or d.size < 2:
        raise ConfigurationError("need at least two (distance, gain) samples")
    if np.any(d <= 0) or np.any(g <= 0):
        raise ConfigurationError("distances and gains must be positive")
    x = np.log10(d / reference_distance)
    if np.ptp(x) == 0:
        raise DegenerateError("all distances are equal; the fit is singular")
    y = 10.0 * np.log10(g)
    xm, ym = x.mean(), y.mean()
    slope = float(np.sum((x - xm) * (y - ym)) / np.sum((x - xm) ** 2))
    intercept = float(ym - slope * xm)
    return -slope / 10.0, -intercept
