"""Antenna patterns, HMD array ring, array configurations and head mobility.

Frames
------
World: x along the room width, y along the room length, z up.  Azimuth is
measured counter-clockwise from +x, elevation up from the horizontal plane.

HMD: x points forward (boresight of array VII), y to the user's left, z up.
Arrays I..VIII sit on a ring at 45 degree azimuth steps, array ``a`` at
``(a - 7) * 45`` degrees, so I is on the left, V on the right and III at the
back.  Positive yaw turns the HMD to the left (right-hand rule about +z);
positive pitch tilts it up, so the downward tilt of the mobility pattern is a
negative pitch.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, OutOfRangeError

SPEED_OF_LIGHT = 299_792_458.0
NUM_HMD_ARRAYS = 8
FORWARD_ARRAY = 7
ROMAN = ("I", "II", "III", "IV", "V", "VI", "VII", "VIII")


def wrap_angle(angle):
    """Wrap angles to the half-open interval (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return wrapped if wrapped.ndim else float(wrapped)


def patch_gain(offset, fov_halfwidth: float = np.pi / 2):
    """Ideal patch power gain for an angular offset from boresight.

    ``cos^2`` law stretched so that the zero falls at ``fov_halfwidth``;
    zero outside.  Offsets are wrapped before clipping.
    """
    x = np.abs(wrap_angle(offset))
    g = np.cos(0.5 * np.pi * x / fov_halfwidth) ** 2
    g = np.where(x <= fov_halfwidth, g, 0.0)
    return g if np.ndim(g) else float(g)


@dataclass(frozen=True)
class PatchElementPattern:
    boresight_azimuth: float = 0.0
    boresight_elevation: float = 0.0
    fov_halfwidth: float = np.pi / 2

    def gain(self, azimuth, elevation=0.0):
        """Separable azimuth x elevation power gain."""
        return (patch_gain(np.asarray(azimuth) - self.boresight_azimuth, self.fov_halfwidth)
                * patch_gain(np.asarray(elevation) - self.boresight_elevation, self.fov_halfwidth))


def patch_element_gain(pattern: PatchElementPattern, azimuth_offset: float) -> float:
    """Linear power gain of ``pattern`` at ``azimuth_offset`` from boresight."""
    return patch_gain(azimuth_offset, pattern.fov_halfwidth)


def compound_gain_analytical(mpc_gain, mpc_azimuth, num_arrays: int,
                             antennas_per_array: int = 1, ap_antennas: int = 1):
    """Coupling-free compound gain of ``num_arrays`` equally spaced arrays.

    Parameters
    ----------
    mpc_gain : float
        Power gain ``|alpha|^2`` of the impinging component.
    mpc_azimuth : float or ndarray
        Arrival azimuth relative to the boresight of array ``q = 0``.
    num_arrays : int
        Number of arrays ``Q`` spread uniformly over 360 degrees, 1 to 8.
    antennas_per_array, ap_antennas : int
        Array gain factors ``M_Q`` and ``N``.

    Returns
    -------
    float or ndarray
        ``N M_Q sum_q |alpha|^2 cos^2(phi - 2 pi q / Q)`` restricted to the
        +-90 degree field of view of each array.
    """
    if not 1 <= int(num_arrays) <= NUM_HMD_ARRAYS:
        raise ConfigurationError(f"num_arrays must be in 1..{NUM_HMD_ARRAYS}, got {num_arrays}")
    phi = np.asarray(mpc_azimuth, dtype=float)
    q = np.arange(num_arrays) * (2.0 * np.pi / num_arrays)
    per_array = patch_gain(phi[..., None] - q)
    total = ap_antennas * antennas_per_array * mpc_gain * np.sum(per_array, axis=-1)
    return total if np.ndim(total) else float(total)


# ---------------------------------------------------------------------------
# Array layouts and port sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArrayLayout:
    """A planar patch array; elements on a ``rows x cols`` grid."""

    rows: int = 4
    cols: int = 4
    element_spacing: float = 0.5 * SPEED_OF_LIGHT / 28e9
    array_azimuth: float = 0.0
    dual_polarized: bool = True

    @property
    def num_pols(self) -> int:
        return 2 if self.dual_polarized else 1

    @property
    def num_ports(self) -> int:
        return self.rows * self.cols * self.num_pols

    def element_offsets(self) -> np.ndarray:
        """``(rows*cols, 2)`` in-plane offsets (tangential, vertical), row-major."""
        d = self.element_spacing
        r, c = np.meshgrid(np.arange(self.rows), np.arange(self.cols), indexing="ij")
        tang = (c.ravel() - (self.cols - 1) / 2.0) * d
        vert = ((self.rows - 1) / 2.0 - r.ravel()) * d
        return np.stack([tang, vert], axis=1)


@dataclass(frozen=True)
class PortSet:
    """Antenna ports of one device, expressed in the device frame.

    ``normal``/``tangent`` give each port's array boresight and horizontal
    in-plane axis.  ``pol`` is 0 for H and 1 for V.  With ``isotropic`` set,
    the pattern amplitude is 1 in every direction.
    """

    positions: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    pol: np.ndarray
    array_index: np.ndarray
    fov_halfwidth: float = np.pi / 2
    isotropic: bool = False

    def __len__(self) -> int:
        return len(self.pol)

    def subset(self, rows: Sequence[int]) -> "PortSet":
        rows = np.asarray(rows, dtype=int)
        return dataclasses.replace(
            self,
            positions=self.positions[rows],
            normal=self.normal[rows],
            tangent=self.tangent[rows],
            pol=self.pol[rows],
            array_index=self.array_index[rows],
        )

    def response(self, directions: np.ndarray):
        """Pattern amplitudes and plane-wave delay offsets.

        Parameters
        ----------
        directions : ndarray, shape (L, 3)
            Unit vectors in the device frame pointing from the device towards
            the far end of each path.

        Returns
        -------
        amp : ndarray, shape (M, L)
            Field amplitude ``sqrt(G)`` of each port.
        delay : ndarray, shape (M, L)
            Time advance ``-(r_m . u_l) / c`` of each element.
        """
        u = np.atleast_2d(directions)
        delay = -(self.positions @ u.T) / SPEED_OF_LIGHT
        if self.isotropic:
            return np.ones_like(delay), delay
        x = self.normal @ u.T
        y = self.tangent @ u.T
        z = np.clip(np.broadcast_to(u[:, 2], x.shape), -1.0, 1.0)
        az = np.arctan2(y, x)
        el = np.arcsin(z)
        up = np.array([0.0, 0.0, 1.0])
        # array tilt: elevation of the array boresight in the device frame
        tilt = np.arcsin(np.clip(self.normal @ up, -1.0, 1.0))[:, None]
        gain = patch_gain(az, self.fov_halfwidth) * patch_gain(el - tilt, self.fov_halfwidth)
        return np.sqrt(gain), delay


def _port_set_from_arrays(centers, normals, layout: ArrayLayout, array_ids,
                          fov_halfwidth=np.pi / 2, isotropic=False) -> PortSet:
    offsets = layout.element_offsets()
    up = np.array([0.0, 0.0, 1.0])
    pos, nrm, tan, pol, aid = [], [], [], [], []
    for center, normal, a in zip(centers, normals, array_ids):
        normal = np.asarray(normal, float)
        tangent = np.cross(up, normal)
        tangent /= np.linalg.norm(tangent)
        vertical = np.cross(normal, tangent)
        for t_off, v_off in offsets:
            p = np.asarray(center, float) + t_off * tangent + v_off * vertical
            for pl in range(layout.num_pols):
                pos.append(p)
                nrm.append(normal)
                tan.append(tangent)
                pol.append(pl if layout.dual_polarized else 1)
                aid.append(a)
    return PortSet(np.array(pos), np.array(nrm), np.array(tan), np.array(pol, dtype=int),
                   np.array(aid, dtype=int), fov_halfwidth, isotropic)


def array_azimuth(array: int) -> float:
    """Boresight azimuth of HMD array ``array`` (1..8) in the HMD frame."""
    if not 1 <= array <= NUM_HMD_ARRAYS:
        raise ConfigurationError(f"array index must be in 1..8, got {array}")
    return float(wrap_angle((array - FORWARD_ARRAY) * np.pi / 4))


def hmd_ring(layout: ArrayLayout = ArrayLayout(), ring_radius: float = 0.09) -> PortSet:
    """All ports of the 8-array HMD in global port order (array-major)."""
    az = np.array([array_azimuth(a) for a in range(1, NUM_HMD_ARRAYS + 1)])
    normals = np.stack([np.cos(az), np.sin(az), np.zeros_like(az)], axis=1)
    return _port_set_from_arrays(ring_radius * normals, normals, layout, range(1, 9))


def ap_array(layout: ArrayLayout = ArrayLayout(rows=4, cols=16),
             boresight_azimuth: float = 0.0, boresight_elevation: float = 0.0) -> PortSet:
    """A single planar AP array centred on the AP origin."""
    ca, sa = np.cos(boresight_azimuth), np.sin(boresight_azimuth)
    ce, se = np.cos(boresight_elevation), np.sin(boresight_elevation)
    normal = np.array([ca * ce, sa * ce, se])
    return _port_set_from_arrays([np.zeros(3)], [normal], layout, [0])


def isotropic_ports(num: int = 1, pol: int = 1) -> PortSet:
    """``num`` co-located isotropic ports of a single polarisation."""
    z = np.zeros((num, 3))
    n = np.tile([1.0, 0.0, 0.0], (num, 1))
    t = np.tile([0.0, 1.0, 0.0], (num, 1))
    return PortSet(z, n, t, np.full(num, pol, dtype=int), np.zeros(num, dtype=int), isotropic=True)


# ---------------------------------------------------------------------------
# Configurations
# ---------------------------------------------------------------------------

FORWARD_CONFIGS = {1: (7,), 2: (1, 5), 3: (7, 2, 4), 4: (7, 1, 3, 5)}
BACKWARD_CONFIGS = {1: (3,), 2: (7, 3), 3: (3, 8, 6), 4: (8, 2, 4, 6)}


def full_mask(rows: int = 4, cols: int = 4) -> np.ndarray:
    return np.ones((rows, cols), dtype=bool)


@dataclass(frozen=True)
class HmdConfiguration:
    """Active arrays plus the sub-array mask applied identically to each."""

    active_arrays: frozenset = frozenset(range(1, 9))
    facing: str = "forward"
    antenna_mask: tuple = tuple(map(tuple, full_mask()))

    def __post_init__(self):
        arrays = frozenset(int(a) for a in self.active_arrays)
        if not arrays:
            raise ConfigurationError("a configuration needs at least one active array")
        if not arrays <= set(range(1, 9)):
            raise ConfigurationError(f"array indices must be in 1..8, got {sorted(arrays)}")
        if self.facing not in ("forward", "backward"):
            raise ConfigurationError(f"facing must be 'forward' or 'backward', got {self.facing!r}")
        mask = np.asarray(self.antenna_mask, dtype=bool)
        if mask.ndim != 2:
            raise ConfigurationError("antenna_mask must be a 2-D boolean grid")
        if not mask.any():
            raise ConfigurationError("antenna_mask selects no antennas")
        object.__setattr__(self, "active_arrays", arrays)
        object.__setattr__(self, "antenna_mask", tuple(map(tuple, mask.tolist())))

    @property
    def mask(self) -> np.ndarray:
        return np.array(self.antenna_mask, dtype=bool)

    @property
    def num_arrays(self) -> int:
        return len(self.active_arrays)

    @property
    def active_antennas(self) -> int:
        return int(self.mask.sum())

    @property
    def label(self) -> str:
        arrays = "+".join(ROMAN[a - 1] for a in sorted(self.active_arrays))
        mask = self.mask
        if mask.all():
            return arrays
        r, c = np.nonzero(mask)
        return f"{arrays}@{r.max() - r.min() + 1}x{c.max() - c.min() + 1}({r.min()},{c.min()})"

    def with_mask(self, mask) -> "HmdConfiguration":
        return HmdConfiguration(self.active_arrays, self.facing, tuple(map(tuple, np.asarray(mask, bool))))


def standard_configuration(num_arrays: int, facing: str = "forward", mask=None) -> HmdConfiguration:
    """The studied 1-4 array layouts, or all eight arrays for ``num_arrays=8``."""
    if num_arrays == 8:
        arrays = range(1, 9)
    else:
        table = FORWARD_CONFIGS if facing == "forward" else BACKWARD_CONFIGS
        if num_arrays not in table:
            raise ConfigurationError(f"no standard {num_arrays}-array configuration")
        arrays = table[num_arrays]
    m = full_mask() if mask is None else mask
    return HmdConfiguration(frozenset(arrays), facing, tuple(map(tuple, np.asarray(m, bool))))


def rectangular_masks(rows: int = 4, cols: int = 4):
    """Every axis-aligned rectangular sub-array: yields ``(height, width, mask)``."""
    for h in range(1, rows + 1):
        for w in range(1, cols + 1):
            for r0 in range(rows - h + 1):
                for c0 in range(cols - w + 1):
                    m = np.zeros((rows, cols), dtype=bool)
                    m[r0:r0 + h, c0:c0 + w] = True
                    yield h, w, m


def port_index_map(config: HmdConfiguration, layout: ArrayLayout = ArrayLayout()) -> np.ndarray:
    """Zero-based global HMD port rows selected by ``config``.

    Array ``a`` owns rows ``(a-1)*P .. a*P-1`` with ``P = layout.num_ports``;
    inside an array ports run row-major over the element grid with the
    polarisation (H, then V) varying fastest.  Output is sorted ascending.
    """
    mask = config.mask
    if mask.shape != (layout.rows, layout.cols):
        raise ConfigurationError(
            f"mask shape {mask.shape} does not match {layout.rows}x{layout.cols} array")
    elems = np.flatnonzero(mask.ravel())
    pols = np.arange(layout.num_pols)
    within = (elems[:, None] * layout.num_pols + pols[None, :]).ravel()
    blocks = [(a - 1) * layout.num_ports + within for a in sorted(config.active_arrays)]
    return np.concatenate(blocks)


# ---------------------------------------------------------------------------
# Orientation and mobility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Orientation:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        if self.roll != 0.0:
            raise ConfigurationError("roll is not modelled; it must be 0")

    def matrix(self) -> np.ndarray:
        """HMD-to-world rotation: pitch about the HMD y axis, then yaw about world z."""
        cy, sy = np.cos(self.yaw), np.sin(self.yaw)
        cp, sp = np.cos(self.pitch), np.sin(self.pitch)
        rz = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
        # nose-up for positive pitch: x -> (cos p, 0, sin p)
        ry = np.array([[cp, 0.0, -sp], [0.0, 1.0, 0.0], [sp, 0.0, cp]])
        return rz @ ry


@dataclass(frozen=True)
class MobilityPattern:
    """Yaw, pitch-down, yaw sequence executed on a tripod."""

    pivot_offset: float = 0.25
    snapshot_rate: float = 1.0
    segment_durations: tuple = (3.0, 15.0, 15.0)
    yaw_step: float = np.deg2rad(30.0)
    pitch_step: float = -np.deg2rad(30.0)

    @property
    def duration(self) -> float:
        return float(sum(self.segment_durations))

    @property
    def num_snapshots(self) -> int:
        return int(np.floor(self.duration * self.snapshot_rate + 1e-9)) + 1

    def snapshot_times(self) -> np.ndarray:
        return np.arange(self.num_snapshots) / self.snapshot_rate


def mobility_orientation(pattern: MobilityPattern, t: float) -> Orientation:
    """Piecewise-linear head orientation at time ``t`` of the sequence."""
    t1, t2, t3 = pattern.segment_durations
    if not 0.0 <= t <= pattern.duration + 1e-12:
        raise OutOfRangeError(f"t={t} outside [0, {pattern.duration}]")
    if t <= t1:
        return Orientation(pattern.yaw_step * t / t1, 0.0)
    if t <= t1 + t2:
        return Orientation(pattern.yaw_step, pattern.pitch_step * (t - t1) / t2)
    frac = min((t - t1 - t2) / t3, 1.0)
    return Orientation(pattern.yaw_step * (1.0 + frac), pattern.pitch_step)


def mobility_offset(pattern: MobilityPattern, t: float) -> np.ndarray:
    """Displacement of the HMD centre from its upright position.

    The pitch axis sits ``pivot_offset`` below the HMD centre and the yaw
    axis passes through it, so pitching swings the head forward and down and
    the final yaw sweeps it along a circle.
    """
    o = mobility_orientation(pattern, t)
    lever = np.array([0.0, 0.0, pattern.pivot_offset])
    return o.matrix() @ lever - lever


@dataclass(frozen=True)
class Pose:
    orientation: Orientation
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))


def mobility_poses(pattern: MobilityPattern, origin: Iterable[float], heading: float = 0.0):
    """World poses of every snapshot for an HMD starting at ``origin``/``heading``."""
    origin = np.asarray(origin, dtype=float)
    rot = Orientation(heading).matrix()
    poses = []
    for t in pattern.snapshot_times():
        o = mobility_orientation(pattern, float(t))
        poses.append(Pose(Orientation(o.yaw + heading, o.pitch),
                          origin + rot @ mobility_offset(pattern, float(t))))
    return poses
