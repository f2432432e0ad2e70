"""Time each hot kernel under the Numba and pure-NumPy backends.

    python benchmarks/bench_kernels.py [--repeat 5] [--quick]

Numba timings exclude the first (compiling) call. The last column is the
max absolute difference between the two backends' outputs.
"""

import argparse
import time

import numpy as np

from amdn import _kernels
from amdn.ocsvm import _initial_alpha, kernel_matrix


def _cases(quick):
    rng = np.random.default_rng(0)
    n_eig = 32 if quick else 64
    A = rng.standard_normal((n_eig, 200))
    M = A @ A.T

    n_svm = 300 if quick else 1000
    X = rng.standard_normal((n_svm, 2))
    K = kernel_matrix(X, X, 1.0)
    C = 1.0 / (0.1 * n_svm)
    a0 = _initial_alpha(n_svm, C)

    side = 60 if quick else 120
    Ix, Iy, It = (rng.standard_normal((side, side)) for _ in range(3))

    img = rng.random((158, 238)) * 255
    xs, ys = np.meshgrid(np.arange(0, 238 - 20, 5), np.arange(0, 158 - 20, 5))

    return [
        (f"jacobi_eigh {n_eig}x{n_eig}", "jacobi_eigh", (M, 1e-14, 100), lambda r: r[0]),
        (f"smo_one_class N={n_svm}", "smo_one_class", (K, a0, C, 1e-6, 200 * n_svm, False), lambda r: r[0]),
        (f"hs_solve {side}x{side}x200", "hs_solve", (Ix, Iy, It, 100.0, 200, False, False), lambda r: r[0]),
        (f"warp_patches {xs.size}x(20->15)", "warp_patches", (img, xs.ravel(), ys.ravel(), 20, 15, 15), lambda r: r),
    ]


def _time(fn, args, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="smaller problem sizes")
    args = ap.parse_args(argv)
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")
    print(f"{'kernel':34s} {'numpy [ms]':>11s} {'numba [ms]':>11s} {'speedup':>8s} {'max |diff|':>11s}")
    for label, name, case_args, pick in _cases(args.quick):
        nb = _kernels.numba_impl(name)
        npy = _kernels.numpy_impl(name)
        nb(*case_args)  # compile
        t_np, r_np = _time(npy, case_args, args.repeat)
        t_nb, r_nb = _time(nb, case_args, args.repeat)
        a, b = np.asarray(pick(r_np)), np.asarray(pick(r_nb))
        # eigenpairs come unsorted; compare the spectra
        diff = np.max(np.abs(np.sort(a) - np.sort(b))) if name == "jacobi_eigh" else np.max(np.abs(a - b))
        print(f"{label:34s} {1e3 * t_np:11.2f} {1e3 * t_nb:11.2f} {t_np / t_nb:7.1f}x {diff:11.2e}")


if __name__ == "__main__":
    main()
