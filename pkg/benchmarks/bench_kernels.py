"""Compare the numba and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Times batched OMP and the greedy-placement candidate scan on both backends,
checks they agree, and reports how OMP time grows with the atom count at
fixed sparsity and signal length (it should be roughly linear).
"""

import argparse
import json
import time

import numpy as np

from leakloc import kernels


def _best_of(fn, repeat):
    fn()  # warm-up (triggers JIT compilation on the numba path)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def _dictionary(rng, n_ts, n_atom):
    D = rng.standard_normal((n_ts, n_atom))
    return D / np.linalg.norm(D, axis=0)


def bench_omp(rng, repeat, n_ts=48, n_atom=100, n_samp=2000, s=8):
    D = _dictionary(rng, n_ts, n_atom)
    Y = rng.standard_normal((n_ts, n_samp))
    out = {}
    codes = {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        out[backend] = _best_of(lambda: kernels.omp_batch(D, Y, s), repeat)
        codes[backend] = kernels.omp_batch(D, Y, s)
    same_support = bool(np.array_equal(codes["numpy"] != 0, codes["numba"] != 0))
    return {"kernel": "omp_batch", "shape": [n_ts, n_atom, n_samp, s], **out,
            "speedup": out["numpy"] / out["numba"], "max_abs_diff": float(np.abs(codes["numpy"] - codes["numba"]).max()),
            "same_support": same_support}


def bench_scan(rng, repeat, n=1500, n_cand=1500):
    pts = rng.random((n, 2))
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    current = dist[:, :3].min(axis=1)
    cand = np.arange(n_cand, dtype=np.int64)
    out, vals = {}, {}
    for backend in ("numpy", "numba"):
        kernels.set_backend(backend)
        out[backend] = _best_of(lambda: kernels.candidate_scan(dist, current, cand), repeat)
        vals[backend] = kernels.candidate_scan(dist, current, cand)
    return {"kernel": "candidate_scan", "shape": [n, n_cand], **out,
            "speedup": out["numpy"] / out["numba"],
            "max_abs_diff": float(np.abs(vals["numpy"] - vals["numba"]).max())}


def omp_scaling(rng, repeat, atoms=(50, 100, 200, 400), n_ts=48, n_samp=1000, s=8, backend="numba"):
    """OMP time per atom count; the ratio time/n_atom should stay within ~2x."""
    kernels.set_backend(backend)
    Y = rng.standard_normal((n_ts, n_samp))
    rows = []
    for n_atom in atoms:
        D = _dictionary(rng, n_ts, n_atom)
        rows.append({"n_atom": n_atom, "seconds": _best_of(lambda: kernels.omp_batch(D, Y, s), repeat)})
    per_atom = [r["seconds"] / r["n_atom"] for r in rows]
    return {"backend": backend, "rows": rows, "per_atom_spread": max(per_atom) / min(per_atom)}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="write results to this file")
    args = ap.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    rng = np.random.default_rng(args.seed)
    initial = kernels.BACKEND
    try:
        results = {"omp": bench_omp(rng, args.repeat), "scan": bench_scan(rng, args.repeat),
                   "omp_scaling": omp_scaling(rng, args.repeat)}
    finally:
        kernels.set_backend(initial)
    for key in ("omp", "scan"):
        r = results[key]
        print(f"{r['kernel']:15s} numpy {r['numpy'] * 1e3:9.2f} ms  numba {r['numba'] * 1e3:9.2f} ms"
              f"  speedup {r['speedup']:6.1f}x  max|diff| {r['max_abs_diff']:.1e}")
    sc = results["omp_scaling"]
    for row in sc["rows"]:
        print(f"omp n_atom={row['n_atom']:4d}  {row['seconds'] * 1e3:8.2f} ms")
    print(f"omp time/n_atom spread {sc['per_atom_spread']:.2f} (linear growth keeps this under 2)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=1)
    return results


if __name__ == "__main__":
    main()
