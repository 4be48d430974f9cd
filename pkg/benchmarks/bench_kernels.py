"""Compare the compiled and numpy kernels on the two hot paths.

Usage: python benchmarks/bench_kernels.py [--n 20000] [--repeat 5]

Workloads mirror the coverage and plug-in studies: one collision-probability
integral per simulated encounter-plane point, and one closed-form pivot set
per point at a fixed psi.
"""

import argparse
import timeit

import numpy as np

from missdistance import kernels

XI = np.array([11.84, -1.36])
VAR = (630.01, 134.7921)


def workloads(n, seed=0):
    z = np.random.default_rng(seed).standard_normal((n, 2))
    x = XI + z * np.sqrt(VAR)
    return {
        "pc_disk_batch": lambda k: k.pc_disk_batch(x[:, 0], x[:, 1], VAR[0], VAR[1], 5.0),
        "planar_pivots_batch": lambda k: k.planar_pivots_batch(x[:, 0], x[:, 1], VAR[0], VAR[1], 11.92, 1e-6),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    print(f"n = {args.n}, best of {args.repeat}; backends: {', '.join(backends)}")
    for name, fn in workloads(args.n).items():
        times = {}
        for b in backends:
            impl = kernels.get_backend(b)
            fn(impl)  # warm up
            times[b] = min(timeit.repeat(lambda: fn(impl), number=1, repeat=args.repeat))
        line = "  ".join(f"{b} {1e3 * t:9.2f} ms" for b, t in times.items())
        if len(times) == 2:
            line += f"  speed-up {times['python'] / times['cython']:6.1f}x"
        print(f"{name:<22}{line}")
        if len(times) == 2:
            ref = np.asarray(fn(kernels.get_backend("python")), float)
            got = np.asarray(fn(kernels.get_backend("cython")), float)
            diff = np.nanmax(np.abs(ref - got))
            print(f"{'':<22}max backend difference {diff:.2e}")


if __name__ == "__main__":
    main()
