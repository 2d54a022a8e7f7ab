"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Each kernel is called once first so JIT compilation is not timed.  Outputs of
the two variants are compared before timing.
"""
import argparse
import json
import timeit

import numpy as np

from couette_echo import _accel


def cases(rng):
    bw, n = 12, 2048
    a = rng.standard_normal(2 * bw + 1) + 1j * rng.standard_normal(2 * bw + 1)
    b = rng.standard_normal(2 * bw + 1) + 1j * rng.standard_normal(2 * bw + 1)
    zeta = np.arange(-n // 2, n // 2) * 0.25
    coef = rng.standard_normal(512) + 1j * rng.standard_normal(512)
    nv = np.arange(-200, 200)
    xi = rng.uniform(-500, 500, 20000)
    logw = rng.uniform(0, 3000, 200000)
    amp = rng.uniform(0, 1, 200000)
    return {
        "band_matrix": ((a, b, zeta, 9.0, bw), _accel.band_matrix_np, _accel.band_matrix_nb),
        "toeplitz": ((coef, nv), _accel.toeplitz_np, _accel.toeplitz_nb),
        "a_star": ((3.0, xi, 2.0, 16), _accel.a_star_np, _accel.a_star_nb),
        "resonance_h": ((40.0, xi[:4000], np.arange(90, 111), 0.05, 823.0, 60),
                        _accel.resonance_h_np, _accel.resonance_h_nb),
        "log_weighted_sum": ((logw, amp), _accel.log_weighted_sum_np, _accel.log_weighted_sum_nb),
    }


def agree(x, y):
    if isinstance(x, tuple):
        return all(agree(a, b) for a, b in zip(x, y))
    return np.allclose(x, y, rtol=1e-12, atol=0)


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    if _accel.numba is None:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    rows = []
    print(f"{'kernel':<18}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, (arg, f_np, f_nb) in cases(rng).items():
        if not agree(f_np(*arg), f_nb(*arg)):
            raise SystemExit(f"{name}: numba and numpy results differ")
        t_np = min(timeit.repeat(lambda: f_np(*arg), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(timeit.repeat(lambda: f_nb(*arg), number=1, repeat=args.repeat)) * 1e3
        rows.append(dict(kernel=name, numpy_ms=t_np, numba_ms=t_nb, speedup=t_np / t_nb))
        print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>10.2f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
