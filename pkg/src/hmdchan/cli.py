"""Command line entry point: ``hmdchan {synth,metrics,capacity,gtd,sweep,report}``."""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, DataError, HmdChanError
from .pipeline import load_run_config, run_ensemble, run_metrics, run_sweep, run_synth


def _floats(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _strs(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _add_run_flags(p):
    p.add_argument("--config", "-c", help="run config (YAML or JSON)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", "-o", help="output directory")
    p.add_argument("--aps", type=_strs, help="AP names, e.g. AP0,AP1")
    p.add_argument("--positions", type=_ints, help="HMD positions, e.g. 1,4,9")
    p.add_argument("--scenarios", type=_strs, help="los,olos")
    p.add_argument("--stride", dest="snapshot_stride", type=int, help="keep every n-th snapshot")


def _add_metric_flags(p):
    p.add_argument("--mode", choices=("default", "literal", "conventional"),
                   help="estimator variants for gain spread, autocorrelation, fading and correlation")
    p.add_argument("--per-tone", action="store_true", default=None,
                   help="report minimal service from per-tone capacities")
    p.add_argument("--snr-db", type=_floats)
    p.add_argument("--max-streams", dest="stream_limits", type=_ints)


def _run_config(args):
    keys = ("seed", "out", "aps", "positions", "scenarios", "snapshot_stride", "mode",
            "per_tone", "snr_db", "stream_limits")
    return load_run_config(args.config, **{k: getattr(args, k, None) for k in keys})


def cmd_synth(args):
    cfg = _run_config(args)
    paths = run_synth(cfg)
    print(f"wrote {len(paths)} containers under {Path(cfg.out) / 'channels'}")
    return 0


def cmd_metrics(args):
    cfg = _run_config(args)
    channels = Path(args.channels or Path(cfg.out) / "channels")
    if not channels.is_dir():
        raise DataError(f"channel directory {channels} not found; run 'synth' first")
    paths = run_metrics(cfg, channels).write(cfg.out)
    print(f"wrote {len(paths)} report files to {cfg.out}")
    return 0


def cmd_sweep(args):
    cfg = _run_config(args)
    paths = run_sweep(cfg).write(cfg.out)
    if args.ensemble:
        site = cfg.site()
        res = run_ensemble(args.ensemble, cfg.seed, site, snr_db=cfg.snr_db[0],
                           percentile=cfg.percentile)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario", "num_arrays", "median_gain_ratio_db", "gain_std_db",
                    "p_band", "p_tone", "seed"])
        for n in range(args.ensemble):
            for q in sorted(res.gain_ratio):
                w.writerow([n, q, repr(float(np.median(res.gain_ratio[q][n]))),
                            repr(float(res.gain_std[q][n])), repr(float(res.p3_band[q][n])),
                            repr(float(res.p3_tone[q][n])), cfg.seed])
        (Path(cfg.out) / "ensemble.csv").write_text(buf.getvalue())
        paths.append(Path(cfg.out) / "ensemble.csv")
    print(f"wrote {len(paths)} report files to {cfg.out}")
    return 0


def cmd_capacity(args):
    from .channel import normalize_channel, read_container
    from .geometry import port_index_map, standard_configuration
    from .metrics import CapacityConfig, capacity_from_eigs, eigenmodes, waterfilling_capacity

    snrs = args.snr_db or [10.0]
    limits = args.max_streams or [None]
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.eigenvalues is not None:
        if args.ports is None:
            raise ConfigurationError("--ports is required with --eigenvalues")
        w.writerow(["snr_db", "max_streams", "capacity", "power"])
        for snr in snrs:
            for r in limits:
                c, rho = waterfilling_capacity(args.eigenvalues, CapacityConfig.from_db(snr, max_streams=r),
                                               args.ports)
                w.writerow([snr, r or "", repr(c), " ".join(repr(float(v)) for v in rho)])
        return 0
    if not args.files:
        raise ConfigurationError("give container files or --eigenvalues")
    cfg = standard_configuration(args.arrays, args.facing)
    rows = port_index_map(cfg)
    w.writerow(["file", "config", "snr_db", "max_streams", "per_tone", "capacity_mean", "capacity_min"])
    for f in args.files:
        h = read_container(f).data
        if not args.raw:
            h = normalize_channel(h)[0]
        lam = eigenmodes(np.moveaxis(h[rows], -1, 0))
        for snr in snrs:
            for r in limits:
                cc = CapacityConfig.from_db(snr, max_streams=r, per_tone=args.per_tone)
                c = np.atleast_1d(capacity_from_eigs(lam, cc, rows.size, h.shape[1]))
                w.writerow([f, cfg.label, snr, r or "", int(args.per_tone), repr(float(c.mean())),
                            repr(float(c.min()))])
    return 0


def cmd_gtd(args):
    from .propagation import gtd_blockage_attenuation

    if args.sweep:
        totals = np.linspace(args.d_tx + args.d_rx, args.total_max, args.sweep)
        geometry = [(t / 2, t / 2) for t in totals]
    else:
        geometry = [(args.d_tx, args.d_rx)]
    rows = [(dt, dr, gtd_blockage_attenuation(dt, dr, args.width, args.frequency)) for dt, dr in geometry]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["d_tx_m", "d_rx_m", "width_m", "frequency_hz", "attenuation_db"])
    for dt, dr, a in rows:
        w.writerow([repr(float(dt)), repr(float(dr)), repr(args.width), repr(args.frequency), repr(a)])
    return 0


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _group(rows, keys):
    out = {}
    for r in rows:
        out.setdefault(tuple(r[k] for k in keys), []).append(r)
    return sorted(out.items())


def cmd_report(args):
    from .pipeline import _csv_text

    out = Path(args.out)
    for name in ("snapshots.csv", "minimal_service.csv", "capacity.csv"):
        if not (out / name).is_file():
            raise DataError(f"{out / name} missing; run 'sweep' or 'metrics' first")
    snaps = _read_csv(out / "snapshots.csv")
    service = _read_csv(out / "minimal_service.csv")
    caps = _read_csv(out / "capacity.csv")
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)

    # empirical CDFs per configuration
    arrays = [r for r in snaps if r["kind"] == "array"]
    for col, name in (("gain_ratio_db", "gain_ratio_cdf.csv"), ("rms_delay_ns", "delay_spread_cdf.csv")):
        rows = []
        for (ap, label), g in _group(arrays, ("ap", "config")):
            x = np.sort([float(r[col]) for r in g])
            rows += [{"ap": ap, "config": label, col: v, "cdf": (j + 1) / x.size} for j, v in enumerate(x)]
        (plots / name).write_text(_csv_text(["ap", "config", col, "cdf"], rows))

    rows = []
    for (ap, label, snr, r), g in _group(caps, ("ap", "config", "snr_db", "max_streams")):
        rows.append({"ap": ap, "config": label, "snr_db": snr, "max_streams": r,
                     "mean_capacity": float(np.mean([float(v["capacity_band"]) for v in g]))})
    (plots / "capacity_vs_snr.csv").write_text(
        _csv_text(["ap", "config", "snr_db", "max_streams", "mean_capacity"], rows))

    rows = []
    masks = [r for r in snaps if r["kind"] == "mask"]
    for (ap, k), g in _group(masks, ("ap", "active_antennas")):
        rows.append({"ap": ap, "active_antennas": int(k),
                     "mean_gain_db": float(np.mean([float(v["gain_db"]) for v in g])),
                     "mean_correlation": float(np.nanmean([float(v["correlation"]) for v in g]))})
    rows.sort(key=lambda r: (r["ap"], r["active_antennas"]))
    (plots / "mask_sweep.csv").write_text(
        _csv_text(["ap", "active_antennas", "mean_gain_db", "mean_correlation"], rows))

    cols = ["ap", "config", "snr_db", "max_streams", "mean_capacity", "minimal_service"]
    print(" ".join(f"{c:>16}" for c in cols))
    for r in service:
        vals = [r[c] if c in ("ap", "config") else f"{float(r[c]):.4g}" for c in cols]
        print(" ".join(f"{v:>16}" for v in vals))
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="hmdchan", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS)

    s = sub.add_parser("synth", parents=[common], help="write channel containers for every snapshot")
    _add_run_flags(s)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("metrics", parents=[common], help="metric report from channel containers")
    _add_run_flags(s)
    _add_metric_flags(s)
    s.add_argument("--channels", help="container directory (default OUT/channels)")
    s.set_defaults(func=cmd_metrics)

    s = sub.add_parser("sweep", parents=[common], help="synthesize and analyse in memory, write the report bundle")
    _add_run_flags(s)
    _add_metric_flags(s)
    s.add_argument("--ensemble", type=int, default=0, help="also run an N-scenario random ensemble")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("capacity", parents=[common], help="waterfilling capacity of eigenvalues or containers")
    s.add_argument("files", nargs="*")
    s.add_argument("--eigenvalues", type=_floats)
    s.add_argument("--ports", type=int, help="number of HMD ports M_Q (with --eigenvalues)")
    s.add_argument("--arrays", type=int, default=1, help="standard Q-array layout for containers")
    s.add_argument("--facing", choices=("forward", "backward"), default="forward")
    s.add_argument("--snr-db", type=_floats)
    s.add_argument("--max-streams", type=_ints)
    s.add_argument("--per-tone", action="store_true")
    s.add_argument("--raw", action="store_true",
                   help="skip normalising each container to unit mean entry power")
    s.set_defaults(func=cmd_capacity)

    s = sub.add_parser("gtd", parents=[common], help="knife-edge blockage attenuation table")
    s.add_argument("--d-tx", type=float, default=1.5)
    s.add_argument("--d-rx", type=float, default=1.5)
    s.add_argument("--width", type=float, default=0.15)
    s.add_argument("--frequency", type=float, default=28e9)
    s.add_argument("--sweep", type=int, default=0, help="number of centred-blocker link lengths")
    s.add_argument("--total-max", type=float, default=9.0, help="longest link in the sweep (m)")
    s.set_defaults(func=cmd_gtd)

    s = sub.add_parser("report", parents=[common], help="plot-data CSVs and a text summary from a report directory")
    s.add_argument("--out", "-o", default="out")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HmdChanError as exc:
        print(f"error[{exc.exit_code}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
