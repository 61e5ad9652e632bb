"""Scenario files, run configuration and the synth -> metrics -> report pipeline."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .channel import (ChannelSnapshot, SounderModel, cir, read_container, synthesize_ctf,
                      write_container)
from .errors import ConfigurationError, DataError, DegenerateError
from .geometry import (ArrayLayout, MobilityPattern, ap_array,
                       hmd_ring, mobility_poses, port_index_map, standard_configuration)
from .metrics import (CapacityConfig, azimuth_spread, blockage_ratio, capacity_from_eigs,
                      eigenmodes, gain_autocorrelation, gain_correlation, gain_std_db,
                      minimal_service)
from .propagation import (NO_BLOCKER, Room, Scenario, blocker_on_los, fit_ple, generate_mpcs)

log = logging.getLogger(__name__)

SCENARIOS = ("los", "olos")
HMD_LAYOUT = ArrayLayout()


# ---------------------------------------------------------------------------
# Site description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ApSite:
    name: str
    position: tuple
    azimuth: float
    elevation: float = 0.0


# HMD spots on a rough grid over the room floor (x, y in metres)
DEFAULT_POSITIONS = {
    1: (1.5, 1.8), 2: (3.0, 1.8), 3: (4.5, 1.8),
    4: (1.5, 3.8), 5: (3.0, 3.8), 6: (4.5, 3.8),
    7: (1.5, 5.8), 8: (3.0, 5.8), 9: (4.5, 5.8),
    10: (2.0, 7.8), 11: (4.0, 7.8),
}


def _default_aps():
    return {
        "AP0": ApSite("AP0", (0.3, 0.3, 1.9), float(np.arctan2(9.15, 6.0))),
        "AP1": ApSite("AP1", (3.0, 0.15, 1.9), float(np.pi / 2)),
    }


@dataclass(frozen=True)
class Site:
    """Room, AP deployments and HMD positions of one measurement site."""

    room: Room = Room()
    reflectivity: dict = field(default_factory=dict)
    xpol_db: float = -15.0
    carrier_frequency: float = 28e9
    bandwidth: float = 768e6
    num_tones: int = 128
    max_reflection_order: int = 2
    hmd_height: float = 1.6
    ap_layout: ArrayLayout = ArrayLayout(rows=2, cols=2)
    aps: dict = field(default_factory=_default_aps)
    positions: dict = field(default_factory=lambda: dict(DEFAULT_POSITIONS))
    headings: dict = field(default_factory=dict)
    blocker_diameter: float = 0.15
    blocker_fraction: tuple = (0.3, 0.7)
    mobility: MobilityPattern = MobilityPattern()

    def scenario(self, ap: str, hmd_xy) -> Scenario:
        a = self.aps[ap]
        return Scenario(self.room, a.position, a.azimuth, a.elevation,
                        (hmd_xy[0], hmd_xy[1], self.hmd_height), self.reflectivity,
                        self.carrier_frequency, self.bandwidth, self.num_tones, self.xpol_db)

    def sounder(self) -> SounderModel:
        return SounderModel(self.carrier_frequency, self.bandwidth, self.num_tones)

    def ap_ports(self, ap: str):
        a = self.aps[ap]
        return ap_array(self.ap_layout, a.azimuth, a.elevation)


def _as_mapping(obj, what):
    if obj is None:
        return {}
    if not isinstance(obj, dict):
        raise ConfigurationError(f"{what} must be a mapping")
    return obj


def site_from_dict(d: dict) -> Site:
    """Build a :class:`Site` from a parsed scenario document (see README for keys)."""
    d = _as_mapping(d, "scenario")
    kw = {}
    try:
        if "room" in d:
            kw["room"] = Room(**_as_mapping(d["room"], "room"))
        if "reflectivity" in d:
            kw["reflectivity"] = {str(k): float(v) for k, v in _as_mapping(d["reflectivity"], "reflectivity").items()}
        for key, name, conv in (("xpol_db", "xpol_db", float),
                                ("carrier_frequency_hz", "carrier_frequency", float),
                                ("bandwidth_hz", "bandwidth", float),
                                ("num_tones", "num_tones", int),
                                ("max_reflection_order", "max_reflection_order", int),
                                ("hmd_height", "hmd_height", float)):
            if key in d:
                kw[name] = conv(d[key])
        if "ap_layout" in d:
            lay = _as_mapping(d["ap_layout"], "ap_layout")
            kw["ap_layout"] = ArrayLayout(rows=int(lay.get("rows", 2)), cols=int(lay.get("cols", 2)),
                                          dual_polarized=bool(lay.get("dual_polarized", True)))
        if "aps" in d:
            aps = {}
            for name, a in _as_mapping(d["aps"], "aps").items():
                a = _as_mapping(a, f"aps.{name}")
                aps[str(name)] = ApSite(str(name), tuple(float(v) for v in a["position"]),
                                        float(np.deg2rad(a.get("azimuth_deg", 0.0))),
                                        float(np.deg2rad(a.get("elevation_deg", 0.0))))
            kw["aps"] = aps
        if "positions" in d:
            kw["positions"] = {int(k): tuple(float(v) for v in xy[:2])
                               for k, xy in _as_mapping(d["positions"], "positions").items()}
        if "headings_deg" in d:
            kw["headings"] = {int(k): float(np.deg2rad(v))
                              for k, v in _as_mapping(d["headings_deg"], "headings_deg").items()}
        if "blocker" in d:
            b = _as_mapping(d["blocker"], "blocker")
            kw["blocker_diameter"] = float(b.get("diameter", 0.15))
            frac = b.get("fraction", (0.3, 0.7))
            frac = (float(frac), float(frac)) if np.isscalar(frac) else tuple(float(v) for v in frac)
            kw["blocker_fraction"] = frac
        if "mobility" in d:
            m = _as_mapping(d["mobility"], "mobility")
            kw["mobility"] = MobilityPattern(
                pivot_offset=float(m.get("pivot_offset", 0.25)),
                snapshot_rate=float(m.get("snapshot_rate", 1.0)),
                segment_durations=tuple(float(v) for v in m.get("segment_durations", (3, 15, 15))),
                yaw_step=float(np.deg2rad(m.get("yaw_step_deg", 30.0))),
                pitch_step=float(np.deg2rad(m.get("pitch_step_deg", -30.0))))
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"malformed scenario: {exc}") from exc
    site = Site(**kw)
    if not site.aps or not site.positions:
        raise ConfigurationError("scenario needs at least one AP and one position")
    # fail early on placements outside the room
    for ap in site.aps:
        for xy in site.positions.values():
            site.scenario(ap, xy)
    return site


def load_document(path) -> dict:
    """Parse a YAML or JSON file into a dict."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read {p}: {exc}") from exc
    try:
        doc = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (ValueError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot parse {p}: {exc}") from exc
    return doc or {}


# ---------------------------------------------------------------------------
# Run configuration
# ---------------------------------------------------------------------------

MODES = ("default", "literal", "conventional")


@dataclass
class RunConfig:
    """Everything a pipeline run depends on; ``seed`` fixes all random choices."""

    scenario: dict = field(default_factory=dict)
    aps: list = field(default_factory=lambda: ["AP0"])
    positions: list = field(default_factory=lambda: [4])
    scenarios: list = field(default_factory=lambda: list(SCENARIOS))
    num_arrays: list = field(default_factory=lambda: [1, 2, 3, 4])
    facings: list = field(default_factory=lambda: ["forward", "backward"])
    mask_arrays: int = 3
    masks: list = field(default_factory=lambda: ["1x1", "1x2", "2x2", "2x4", "4x4"])
    snr_db: list = field(default_factory=lambda: [0.0, 10.0, 20.0])
    stream_limits: list = field(default_factory=lambda: [1, 2, 4])
    percentile: float = 3.0
    seed: int = 0
    out: str = "out"
    mode: str = "default"
    per_tone: bool = False
    snapshot_stride: int = 1

    def validate(self) -> "RunConfig":
        for name in ("aps", "positions", "scenarios", "num_arrays", "facings", "snr_db", "stream_limits"):
            if not getattr(self, name):
                raise ConfigurationError(f"sweep axis {name!r} is empty")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        bad = set(self.scenarios) - set(SCENARIOS)
        if bad:
            raise ConfigurationError(f"unknown scenarios {sorted(bad)}")
        if any(int(r) < 1 for r in self.stream_limits):
            raise ConfigurationError("stream limits must be >= 1")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")
        for m in self.masks:
            parse_mask(m)
        return self

    def site(self) -> Site:
        return site_from_dict(self.scenario)

    def digest(self) -> str:
        payload = {k: v for k, v in asdict(self).items() if k != "out"}
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_mask(text: str, rows: int = 4, cols: int = 4) -> np.ndarray:
    """``"HxW"`` -> boolean mask of an ``H x W`` block in the top-left corner."""
    try:
        h, w = (int(v) for v in str(text).lower().split("x"))
    except ValueError as exc:
        raise ConfigurationError(f"mask must look like '2x3', got {text!r}") from exc
    if not (1 <= h <= rows and 1 <= w <= cols):
        raise ConfigurationError(f"mask {text!r} does not fit a {rows}x{cols} array")
    m = np.zeros((rows, cols), dtype=bool)
    m[:h, :w] = True
    return m


def load_run_config(path=None, **overrides) -> RunConfig:
    """Read a run config file; keyword overrides (e.g. from CLI flags) win.

    The ``scenario`` key may be an inline mapping or a path relative to the
    config file.
    """
    doc = load_document(path) if path else {}
    doc = _as_mapping(doc, "config")
    scen = doc.get("scenario", {})
    if isinstance(scen, str):
        base = Path(path).parent if path else Path(".")
        doc["scenario"] = load_document(base / scen)
    known = set(RunConfig.__dataclass_fields__)
    unknown = set(doc) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    try:
        cfg = RunConfig(**doc)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc
    return cfg.validate()


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------


def _rng(seed, *keys):
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def heading_for(site: Site, position: int, seed: int) -> float:
    if position in site.headings:
        return site.headings[position]
    return float(_rng(seed, position, 0).uniform(-np.pi, np.pi))


def blocker_for(site: Site, ap: str, position: int, scenario: str, seed: int):
    if scenario == "los":
        return NO_BLOCKER
    ap_idx = sorted(site.aps).index(ap)
    lo, hi = site.blocker_fraction
    frac = float(_rng(seed, position, 1, ap_idx).uniform(lo, hi))
    return blocker_on_los(site.scenario(ap, site.positions[position]), frac, site.blocker_diameter)


def simulate(site: Site, ap: str, position: int, scenario: str, seed: int,
             stride: int = 1, hmd_ports=None):
    """Yield ``(snapshot, pose, mpcs, H)`` for every mobility snapshot of one cell.

    ``H`` is the full 8-array channel, shape ``(256, N, K)``.
    """
    if position not in site.positions:
        raise ConfigurationError(f"unknown position {position}")
    if ap not in site.aps:
        raise ConfigurationError(f"unknown AP {ap!r}")
    xy = site.positions[position]
    base = site.scenario(ap, xy)
    blocker = blocker_for(site, ap, position, scenario, seed)
    hmd_ports = hmd_ring(HMD_LAYOUT) if hmd_ports is None else hmd_ports
    ap_ports = site.ap_ports(ap)
    sounder = site.sounder()
    origin = (xy[0], xy[1], site.hmd_height)
    poses = mobility_poses(site.mobility, origin, heading_for(site, position, seed))
    for i in range(0, len(poses), stride):
        pose = poses[i]
        scen = base.with_hmd(pose.position)
        mpcs = generate_mpcs(scen, site.max_reflection_order, blocker)
        h = synthesize_ctf(mpcs, hmd_ports, ap_ports, sounder, pose.orientation)
        yield i, pose, mpcs, h


def container_name(ap: str, position: int, scenario: str, snapshot: int) -> str:
    return f"{ap}/p{position:02d}_{scenario}_i{snapshot:02d}.ctf"


def run_synth(cfg: RunConfig) -> list[Path]:
    """Write one channel container per (AP, position, scenario, snapshot)."""
    site = cfg.site()
    out = Path(cfg.out) / "channels"
    sounder = site.sounder()
    written = []
    for ap in cfg.aps:
        try:
            (out / ap).mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create {out / ap}: {exc}") from exc
        for p in cfg.positions:
            for s in cfg.scenarios:
                counts = []
                for i, pose, mpcs, h in simulate(site, ap, p, s, cfg.seed, cfg.snapshot_stride):
                    counts.append(len(mpcs))
                    meta = {"ap": ap, "position": p, "scenario": s, "snapshot": i,
                            "num_mpcs": len(mpcs), "yaw_rad": pose.orientation.yaw,
                            "pitch_rad": pose.orientation.pitch,
                            "hmd_position_m": [float(v) for v in pose.position],
                            "seed": cfg.seed}
                    path = out / container_name(ap, p, s, i)
                    write_container(path, ChannelSnapshot(h, sounder.first_tone,
                                                          sounder.tone_spacing, meta=meta))
                    written.append(path)
                log.info("%s p%02d %s: %d snapshots, MPCs per snapshot %s",
                         ap, p, s, len(counts), sorted(set(counts)))
    return written


def load_channels(directory, ap: str, position: int, scenario: str):
    """Snapshots of one cell from a container directory, ordered by index."""
    files = sorted((Path(directory) / ap).glob(f"p{position:02d}_{scenario}_i*.ctf"))
    for f in files:
        snap = read_container(f)
        yield int(snap.meta.get("snapshot", 0)), snap.data


# ---------------------------------------------------------------------------
# Per-cell reduction
# ---------------------------------------------------------------------------


def sweep_configurations(cfg: RunConfig):
    """(kind, config) pairs: facing x Q layouts, the full HMD, and the mask sweep."""
    out = []
    for facing in cfg.facings:
        for q in cfg.num_arrays:
            out.append(("array", standard_configuration(int(q), facing)))
    out.append(("array", standard_configuration(8)))
    for m in cfg.masks:
        out.append(("mask", standard_configuration(cfg.mask_arrays, "forward", parse_mask(m))))
    # deduplicate while keeping order
    seen, uniq = set(), []
    for kind, c in out:
        key = (kind, c)
        if key not in seen:
            seen.add(key)
            uniq.append((kind, c))
    return uniq


@dataclass
class CellStats:
    """Scale-free per-snapshot reductions of one (AP, position, scenario) cell."""

    snapshots: list = field(default_factory=list)
    full_power: list = field(default_factory=list)  # sum |H|^2 of the 8-array channel
    tone_gain: dict = field(default_factory=dict)   # config -> list of (K,)
    eigs: dict = field(default_factory=dict)        # config -> list of (K, R)
    pdp: dict = field(default_factory=dict)         # config -> list of (K,)
    corr: dict = field(default_factory=dict)        # config -> list of (literal, pearson)
    azimuth_spread: float = float("nan")
    distance: float = float("nan")
    num_rx: dict = field(default_factory=dict)
    num_tx: int = 0
    num_tones: int = 0
    bandwidth: float = 0.0


def reduce_cell(snapshots, configs, bandwidth: float, want_corr=None,
                spectra: bool = True) -> CellStats:
    """Collapse ``(index, H)`` pairs into the quantities the metrics need.

    Eigenvalues and gains are kept unnormalised; the normalisation factor only
    scales them, so it is applied afterwards.  ``spectra=False`` skips the
    eigenvalues and delay profiles.
    """
    st = CellStats(bandwidth=bandwidth)
    rows = {c: port_index_map(c, HMD_LAYOUT) for _, c in configs}
    configs = [(None, c) for c in rows]  # one entry per distinct configuration
    want_corr = set(rows) if want_corr is None else set(want_corr)
    for i, h in snapshots:
        if h.shape[0] != 8 * HMD_LAYOUT.num_ports:
            raise DataError(f"snapshot {i}: expected 256 HMD rows, got {h.shape[0]}")
        st.snapshots.append(i)
        st.num_tx, st.num_tones = h.shape[1], h.shape[2]
        p = h.real ** 2 + h.imag ** 2
        st.full_power.append(float(p.sum()))
        ht = np.moveaxis(h, -1, 0)  # (K, M, N)
        for _, c in configs:
            r = rows[c]
            st.num_rx[c] = r.size
            st.tone_gain.setdefault(c, []).append(p[r].sum(axis=(0, 1)))
            if spectra:
                st.eigs.setdefault(c, []).append(eigenmodes(ht[:, r, :]))
                hq = cir(h[r])
                st.pdp.setdefault(c, []).append(np.sum(hq.real ** 2 + hq.imag ** 2, axis=(0, 1)))
            if c in want_corr:
                try:
                    pair = (gain_correlation(h[r], "literal"), gain_correlation(h[r], "pearson"))
                except DegenerateError:
                    pair = (float("nan"), float("nan"))
                st.corr.setdefault(c, []).append(pair)
    if not st.snapshots:
        raise DataError("no snapshots in cell")
    return st


def normalization_power(st: CellStats) -> float:
    """Power factor ``f^2`` of the literal normalisation of the full channel."""
    total = float(np.sum(st.full_power))
    if total <= 0:
        raise DegenerateError("all-zero channel cannot be normalised")
    count = len(st.snapshots) * 8 * HMD_LAYOUT.num_ports * st.num_tx * st.num_tones
    return count / total


def _moments(pdp, bandwidth):
    t = np.arange(pdp.size) / bandwidth
    w = pdp / pdp.sum()
    mu = float(w @ t)
    return float(np.sqrt(max(w @ (t - mu) ** 2, 0.0))), mu


def _xi(g, per_tone):
    m = g.mean()
    xi = float(np.sum((g - m) ** 2) / m ** 2)
    return xi / g.size if per_tone else xi


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

SNAPSHOT_COLUMNS = ["ap", "position", "scenario", "snapshot", "config", "kind", "facing",
                    "num_arrays", "active_antennas", "gain_db", "raw_gain_db", "gain_ratio_db",
                    "rms_delay_ns", "mean_excess_ns", "fading", "correlation", "seed", "config_hash"]
CAPACITY_COLUMNS = ["ap", "position", "scenario", "snapshot", "config", "snr_db", "max_streams",
                    "capacity_band", "capacity_tone_mean", "capacity_tone_p", "seed", "config_hash"]
SUMMARY_COLUMNS = ["ap", "position", "scenario", "config", "kind", "facing", "num_arrays",
                   "active_antennas", "mean_gain_ratio_db", "gain_std_db", "gain_std_db_literal",
                   "gain_std_db_conventional", "r1", "r2", "r3", "r4", "r5", "blockage_first_db",
                   "blockage_all_db", "median_rms_delay_ns", "median_fading", "mean_correlation",
                   "azimuth_spread", "seed", "config_hash"]
SERVICE_COLUMNS = ["ap", "config", "snr_db", "max_streams", "samples", "mean_capacity",
                   "minimal_service_band", "minimal_service_tone", "minimal_service",
                   "seed", "config_hash"]
FACING_COLUMNS = ["ap", "position", "scenario", "num_arrays", "backward_vs_forward_db",
                  "seed", "config_hash"]
PLE_COLUMNS = ["ap", "scenario", "config", "num_positions", "exponent", "reference_loss_db",
               "seed", "config_hash"]
AP_COLUMNS = ["position", "scenario", "config", "metric", "ap_a", "value_a", "ap_b", "value_b",
              "difference", "seed", "config_hash"]


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if np.isnan(v) else repr(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


def _stats_modes(mode):
    # (gain_std mode, autocorr mode, fading per-tone, correlation index)
    if mode == "literal":
        return "literal", "literal", False, 0
    if mode == "conventional":
        return "conventional", "standard", True, 1
    return "literal", "standard", False, 0


@dataclass
class ReportBundle:
    tables: dict = field(default_factory=dict)   # file name -> CSV text
    summary: dict = field(default_factory=dict)

    def write(self, directory) -> list[Path]:
        d = Path(directory)
        try:
            d.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigurationError(f"cannot create {d}: {exc}") from exc
        paths = []
        for name, text in sorted(self.tables.items()):
            (d / name).write_text(text)
            paths.append(d / name)
        (d / "summary.json").write_text(json.dumps(self.summary, indent=2, sort_keys=True) + "\n")
        paths.append(d / "summary.json")
        return paths


def build_report(cfg: RunConfig, cells: dict) -> ReportBundle:
    """Turn reduced cells ``{(ap, position, scenario): CellStats}`` into CSV tables."""
    std_mode, ac_mode, xi_tone, corr_idx = _stats_modes(cfg.mode)
    prov = {"seed": cfg.seed, "config_hash": cfg.digest()}
    configs = sweep_configurations(cfg)
    full = standard_configuration(8)
    snap_rows, cap_rows, sum_rows, facing_rows, ple_rows, ap_rows = [], [], [], [], [], []
    pooled = {}  # (ap, config, snr, rlim) -> (band samples, tone samples)
    summary_cells = {}
    caps = [(float(s), int(r)) for s in cfg.snr_db for r in cfg.stream_limits]

    for key in sorted(cells):
        ap, p, s = key
        st = cells[key]
        f2 = normalization_power(st)
        g_full = np.array([g.mean() for g in st.tone_gain[full]])
        for kind, c in configs:
            label = c.label
            tg = np.array(st.tone_gain[c])
            gains = tg.mean(axis=1)
            ratio_db = 10 * np.log10(gains / g_full)
            eig = np.array(st.eigs[c]) * f2
            pdps = st.pdp[c]
            corr = st.corr.get(c, [])
            base = {"ap": ap, "position": p, "scenario": s, "config": label, "kind": kind,
                    "facing": c.facing, "num_arrays": c.num_arrays,
                    "active_antennas": c.active_antennas, **prov}
            delays = []
            xis = []
            for j, i in enumerate(st.snapshots):
                sd, me = _moments(pdps[j], st.bandwidth)
                xi = _xi(tg[j], xi_tone)
                delays.append(sd)
                xis.append(xi)
                snap_rows.append({**base, "snapshot": i, "gain_db": 10 * np.log10(gains[j] * f2),
                                  "raw_gain_db": 10 * np.log10(gains[j]), "gain_ratio_db": ratio_db[j],
                                  "rms_delay_ns": sd * 1e9, "mean_excess_ns": me * 1e9, "fading": xi,
                                  "correlation": corr[j][corr_idx] if corr else float("nan")})
            for snr, rl in caps:
                band = capacity_from_eigs(eig, CapacityConfig.from_db(snr, max_streams=rl),
                                          st.num_rx[c], st.num_tx)
                tone = capacity_from_eigs(eig, CapacityConfig.from_db(snr, max_streams=rl, per_tone=True),
                                          st.num_rx[c], st.num_tx)
                b, t = pooled.setdefault((ap, label, snr, rl), ([], []))
                b.extend(band.tolist())
                t.extend(tone.ravel().tolist())
                for j, i in enumerate(st.snapshots):
                    cap_rows.append({"ap": ap, "position": p, "scenario": s, "snapshot": i,
                                     "config": label, "snr_db": snr, "max_streams": rl,
                                     "capacity_band": band[j], "capacity_tone_mean": tone[j].mean(),
                                     "capacity_tone_p": minimal_service(tone[j], cfg.percentile),
                                     **prov})
            row = dict(base)
            row["mean_gain_ratio_db"] = float(10 * np.log10(gains.mean() / g_full.mean()))
            if len(gains) >= 2 and np.all(gains > 0):
                row["gain_std_db_literal"] = gain_std_db(gains, "literal")
                row["gain_std_db_conventional"] = gain_std_db(gains, "conventional")
                row["gain_std_db"] = row[f"gain_std_db_{std_mode}"]
                lags = [j for j in range(1, 6) if j < len(gains)]
                try:
                    r = gain_autocorrelation(gains, lags, ac_mode) if lags else []
                except DegenerateError:
                    r = [float("nan")] * len(lags)
                for j, v in zip(lags, r):
                    row[f"r{j}"] = v
            other = cells.get((ap, p, "olos")) if s == "los" else None
            if other is not None:
                g_b = np.array(other.tone_gain[c]).mean(axis=1)
                row["blockage_first_db"] = blockage_ratio(gains, g_b, first_only=True)
                row["blockage_all_db"] = blockage_ratio(gains, g_b, first_only=False)
            row["median_rms_delay_ns"] = float(np.median(delays)) * 1e9
            row["median_fading"] = float(np.median(xis))
            if corr:
                row["mean_correlation"] = float(np.nanmean([v[corr_idx] for v in corr]))
            row["azimuth_spread"] = st.azimuth_spread
            sum_rows.append(row)
            summary_cells.setdefault(f"{ap}/p{p:02d}/{s}", {})[label] = {
                "mean_gain_ratio_db": row["mean_gain_ratio_db"],
                "gain_std_db": row.get("gain_std_db", float("nan")),
                "median_rms_delay_ns": row["median_rms_delay_ns"]}

        # backward vs forward facing gain of each Q
        for q in cfg.num_arrays:
            if q == 8 or not {"forward", "backward"} <= set(cfg.facings):
                continue
            fw = np.mean(st.tone_gain[standard_configuration(q, "forward")])
            bw = np.mean(st.tone_gain[standard_configuration(q, "backward")])
            facing_rows.append({"ap": ap, "position": p, "scenario": s, "num_arrays": q,
                                "backward_vs_forward_db": 10 * np.log10(bw / fw), **prov})

    # path loss exponent from the first snapshot's raw gain versus distance
    for ap in cfg.aps:
        for s in cfg.scenarios:
            ks = [k for k in sorted(cells) if k[0] == ap and k[2] == s]
            if len(ks) < 2:
                continue
            d = np.array([cells[k].distance for k in ks])
            for kind, c in configs:
                if kind != "array":
                    continue
                g = np.array([cells[k].tone_gain[c][0].mean() for k in ks])
                try:
                    n, pl0 = fit_ple(d, g)
                except (DegenerateError, ConfigurationError):
                    n, pl0 = float("nan"), float("nan")
                ple_rows.append({"ap": ap, "scenario": s, "config": c.label,
                                 "num_positions": len(ks), "exponent": n,
                                 "reference_loss_db": pl0, **prov})

    # AP comparison, pairwise against the first listed AP
    by_key = {(r["ap"], r["position"], r["scenario"], r["config"]): r for r in sum_rows}
    ref = cfg.aps[0]
    for other_ap in cfg.aps[1:]:
        for (ap, p, s, label), r in sorted(by_key.items(), key=lambda kv: tuple(map(str, kv[0]))):
            if ap != ref or (other_ap, p, s, label) not in by_key:
                continue
            o = by_key[(other_ap, p, s, label)]
            for metric in ("mean_gain_ratio_db", "gain_std_db", "median_rms_delay_ns"):
                a, b = r.get(metric, float("nan")), o.get(metric, float("nan"))
                ap_rows.append({"position": p, "scenario": s, "config": label, "metric": metric,
                                "ap_a": ref, "value_a": a, "ap_b": other_ap, "value_b": b,
                                "difference": b - a, **prov})

    service_rows = []
    for (ap, label, snr, rl) in sorted(pooled, key=lambda k: (k[0], k[1], k[2], k[3])):
        b, t = pooled[(ap, label, snr, rl)]
        pb, pt = minimal_service(b, cfg.percentile), minimal_service(t, cfg.percentile)
        service_rows.append({"ap": ap, "config": label, "snr_db": snr, "max_streams": rl,
                             "samples": len(b), "mean_capacity": float(np.mean(b)),
                             "minimal_service_band": pb, "minimal_service_tone": pt,
                             "minimal_service": pt if cfg.per_tone else pb, **prov})

    tables = {
        "snapshots.csv": _csv_text(SNAPSHOT_COLUMNS, snap_rows),
        "capacity.csv": _csv_text(CAPACITY_COLUMNS, cap_rows),
        "summary.csv": _csv_text(SUMMARY_COLUMNS, sum_rows),
        "minimal_service.csv": _csv_text(SERVICE_COLUMNS, service_rows),
        "facing.csv": _csv_text(FACING_COLUMNS, facing_rows),
        "path_loss.csv": _csv_text(PLE_COLUMNS, ple_rows),
        "ap_comparison.csv": _csv_text(AP_COLUMNS, ap_rows),
    }
    summary = {
        "provenance": {"version": __version__, "mode": cfg.mode, "per_tone": cfg.per_tone, **prov},
        "percentile": cfg.percentile,
        "minimal_service": {f"{r['ap']}/{r['config']}/snr{r['snr_db']:g}/R{r['max_streams']}":
                            r["minimal_service"] for r in service_rows},
        "cells": summary_cells,
    }
    return ReportBundle(tables, json.loads(json.dumps(summary, default=float)))


def _cell_from_sim(site, cfg, ap, p, s, configs):
    it = simulate(site, ap, p, s, cfg.seed, cfg.snapshot_stride)
    first_mpcs = []

    def snaps():
        for i, pose, mpcs, h in it:
            if not first_mpcs:
                first_mpcs.append(mpcs)
            yield i, h

    st = reduce_cell(snaps(), configs, site.bandwidth)
    st.azimuth_spread = azimuth_spread(first_mpcs[0])[0]
    a = np.asarray(site.aps[ap].position)
    st.distance = float(np.linalg.norm(np.array([*site.positions[p], site.hmd_height]) - a))
    return st


def run_sweep(cfg: RunConfig) -> ReportBundle:
    """Synthesize and analyse every (AP, position, scenario) cell in memory."""
    site = cfg.site()
    configs = sweep_configurations(cfg)
    cells = {}
    for ap in cfg.aps:
        for p in cfg.positions:
            for s in cfg.scenarios:
                cells[(ap, p, s)] = _cell_from_sim(site, cfg, ap, p, s, configs)
                log.info("analysed %s p%02d %s", ap, p, s)
    return build_report(cfg, cells)


def run_metrics(cfg: RunConfig, channels=None) -> ReportBundle:
    """Metrics from containers written by :func:`run_synth` (or in memory if absent)."""
    if channels is None:
        return run_sweep(cfg)
    site = cfg.site()
    configs = sweep_configurations(cfg)
    cells = {}
    for ap in cfg.aps:
        for p in cfg.positions:
            for s in cfg.scenarios:
                snaps = list(load_channels(channels, ap, p, s))
                if not snaps:
                    if s == "olos":
                        log.warning("no OLoS containers for %s p%02d; blockage columns left empty", ap, p)
                        continue
                    raise DataError(f"no containers for {ap} p{p:02d} {s} in {channels}")
                st = reduce_cell(snaps, configs, site.bandwidth)
                scen = site.scenario(ap, site.positions[p])
                blk = blocker_for(site, ap, p, s, cfg.seed)
                st.azimuth_spread = azimuth_spread(generate_mpcs(scen, site.max_reflection_order, blk))[0]
                st.distance = float(np.linalg.norm(np.subtract(scen.hmd_position, scen.ap_position)))
                cells[(ap, p, s)] = st
    return build_report(cfg, cells)


# ---------------------------------------------------------------------------
# Randomised ensemble
# ---------------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Per-scenario statistics of a randomised single-room ensemble."""

    gain_ratio: dict          # Q -> (scenarios, snapshots) dB
    gain_std: dict            # Q -> (scenarios,) dB, literal estimator
    p3_band: dict             # Q -> (scenarios,)
    p3_tone: dict             # Q -> (scenarios,)
    correlation: dict         # active antennas -> (scenarios,)
    rms_delay: np.ndarray     # (scenarios,) median over snapshots, seconds


def run_ensemble(num_scenarios: int = 50, seed: int = 0, site: Site | None = None,
                 snr_db: float = 10.0, percentile: float = 3.0, corr_stride: int = 4,
                 margin: float = 0.5) -> EnsembleResult:
    """Random HMD placements and headings in one room, AP fixed in the corner.

    Every scenario runs the full mobility sequence; the forward Q = 1..4
    layouts are evaluated for gain ratio, gain spread and minimal service, and
    the 3-array layout is swept over top-left ``k x l`` masks for correlation.
    """
    site = site or Site()
    ap = sorted(site.aps)[0]
    rng = _rng(seed, 9001)
    qs = (1, 2, 3, 4)
    full = standard_configuration(8)
    arr_cfgs = [standard_configuration(q) for q in qs]
    masks = {}
    for h in range(1, 5):
        for w in range(1, 5):
            masks.setdefault(h * w, []).append(standard_configuration(3, "forward", parse_mask(f"{h}x{w}")))
    mask_cfgs = [c for cs in masks.values() for c in cs]
    configs = [("array", c) for c in arr_cfgs + [full]]
    hmd_ports = hmd_ring(HMD_LAYOUT)
    res = EnsembleResult({q: [] for q in qs}, {q: [] for q in qs}, {q: [] for q in qs},
                         {q: [] for q in qs}, {k: [] for k in sorted(masks)}, np.zeros(num_scenarios))
    lo = np.array([margin, margin])
    hi = np.array([site.room.width - margin, site.room.length - margin])
    for n in range(num_scenarios):
        xy = tuple(rng.uniform(lo, hi))
        heading = float(rng.uniform(-np.pi, np.pi))
        s = replace(site, positions={1: xy}, headings={1: heading})
        sim = list(simulate(s, ap, 1, "los", seed, hmd_ports=hmd_ports))
        snaps = [(i, h) for i, _, _, h in sim]
        corr_set = {c for c in mask_cfgs}
        st = reduce_cell(snaps, configs, s.bandwidth, want_corr=())
        # correlation on a subset of snapshots
        cst = reduce_cell(snaps[::corr_stride], [("mask", c) for c in mask_cfgs], s.bandwidth,
                          want_corr=corr_set, spectra=False)
        f2 = normalization_power(st)
        g_full = np.array(st.tone_gain[full]).mean(axis=1)
        for q, c in zip(qs, arr_cfgs):
            g = np.array(st.tone_gain[c]).mean(axis=1)
            res.gain_ratio[q].append(10 * np.log10(g / g_full))
            res.gain_std[q].append(gain_std_db(g, "literal"))
            eig = np.array(st.eigs[c]) * f2
            cc = CapacityConfig.from_db(snr_db)
            band = capacity_from_eigs(eig, cc, st.num_rx[c], st.num_tx)
            tone = capacity_from_eigs(eig, replace(cc, per_tone=True), st.num_rx[c], st.num_tx)
            res.p3_band[q].append(minimal_service(band, percentile))
            res.p3_tone[q].append(minimal_service(tone, percentile))
        for k, cs in masks.items():
            vals = [v[0] for c in cs for v in cst.corr[c]]
            res.correlation[k].append(float(np.nanmean(vals)))
        res.rms_delay[n] = np.median([_moments(pd, s.bandwidth)[0] for pd in st.pdp[full]])
    for d in (res.gain_ratio, res.gain_std, res.p3_band, res.p3_tone, res.correlation):
        for k in d:
            d[k] = np.array(d[k])
    return res
