"""Time the numba and numpy backends of the hot kernels on the same inputs.

    python benchmarks/bench_kernels.py --rx 256 --tx 8 --tones 128 --paths 25
    python benchmarks/bench_kernels.py --json bench.json
"""

import argparse
import json
import timeit

import numpy as np

from hmdchan import _kernels


def ctf_inputs(rng, M, N, K, L):
    return dict(
        rx_amp=rng.uniform(0, 1, (M, L)) + 0j,
        rx_pol=rng.integers(0, 2, M),
        rx_delay=rng.normal(0, 1e-10, (M, L)),
        tx_amp=rng.uniform(0, 1, (N, L)) + 0j,
        tx_pol=rng.integers(0, 2, N),
        tx_delay=rng.normal(0, 1e-10, (N, L)),
        gamma=rng.normal(size=(L, 2, 2)) + 1j * rng.normal(size=(L, 2, 2)),
        tau=rng.uniform(5e-9, 60e-9, L),
        doppler=np.zeros(L),
        t_mn=np.zeros((M, N)),
        f0=27.616e9,
        df=6e6,
        num_tones=K,
    )


def best_of(fn, repeat, number=1):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rx", type=int, default=256)
    ap.add_argument("--tx", type=int, default=8)
    ap.add_argument("--tones", type=int, default=128)
    ap.add_argument("--paths", type=int, default=25)
    ap.add_argument("--batch", type=int, default=20000, help="waterfilling rows")
    ap.add_argument("--streams", type=int, default=8)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also dump the timings here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    kw = ctf_inputs(rng, args.rx, args.tx, args.tones, args.paths)
    gains = -np.sort(-rng.exponential(size=(args.batch, args.streams)), axis=1)

    results = {}
    ref = {}
    for backend in ("numba", "numpy"):
        if backend == "numba" and _kernels.numba is None:
            continue
        # first call compiles (or loads the on-disk cache)
        ref[backend] = (_kernels.ctf_accumulate(**kw, backend=backend),
                        _kernels.waterfill(gains, args.streams, backend=backend))
        t_ctf = best_of(lambda: _kernels.ctf_accumulate(**kw, backend=backend), args.repeat)
        t_wf = best_of(lambda: _kernels.waterfill(gains, args.streams, backend=backend), args.repeat)
        results[backend] = {"ctf_s": t_ctf, "waterfill_s": t_wf}

    print(f"ctf: M={args.rx} N={args.tx} K={args.tones} L={args.paths}; "
          f"waterfill: {args.batch} x {args.streams}")
    print(f"{'backend':<8} {'ctf [ms]':>10} {'waterfill [ms]':>15}")
    for b, r in results.items():
        print(f"{b:<8} {1e3 * r['ctf_s']:>10.2f} {1e3 * r['waterfill_s']:>15.2f}")
    if len(ref) == 2:
        c = np.max(np.abs(ref["numba"][0] - ref["numpy"][0])) / np.max(np.abs(ref["numpy"][0]))
        w = np.max(np.abs(ref["numba"][1] - ref["numpy"][1]))
        print(f"max relative CTF difference {c:.2e}, max power difference {w:.2e}")
        print(f"speed-up ctf x{results['numpy']['ctf_s'] / results['numba']['ctf_s']:.1f}, "
              f"waterfill x{results['numpy']['waterfill_s'] / results['numba']['waterfill_s']:.1f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"args": vars(args), "results": results}, fh, indent=2)


if __name__ == "__main__":
    main()
