"""Numba and NumPy kernel paths must agree; the env flag must select NumPy."""

import os
import subprocess
import sys

import numpy as np
import pytest

from amdn import _kernels
from amdn.ocsvm import _initial_alpha, kernel_matrix

needs_numba = pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba not importable")


@needs_numba
def test_jacobi_backends_agree(rng):
    A = rng.standard_normal((20, 20))
    M = A @ A.T
    w_np, V_np, _, ok_np = _kernels.numpy_impl("jacobi_eigh")(M, 1e-14, 100)
    w_nb, V_nb, _, ok_nb = _kernels.numba_impl("jacobi_eigh")(M, 1e-14, 100)
    assert ok_np and ok_nb
    assert np.allclose(np.sort(w_np), np.sort(w_nb), rtol=1e-10, atol=1e-10)
    for w, V in ((w_np, V_np), (w_nb, V_nb)):
        assert np.allclose(M @ V, V * w, atol=1e-9)


def test_jacobi_numpy_converges_tight(rng):
    A = rng.standard_normal((40, 60))
    M = A @ A.T
    w, V, sweeps, ok = _kernels.numpy_impl("jacobi_eigh")(M, 1e-14, 100)
    assert ok and sweeps < 20
    assert np.allclose(np.sort(w), np.linalg.eigvalsh(M), rtol=1e-10, atol=1e-9)


@needs_numba
def test_smo_backends_agree(rng):
    X = rng.standard_normal((80, 2))
    K = kernel_matrix(X, X, 1.0)
    C = 1.0 / (0.2 * 80)
    a0 = _initial_alpha(80, C)
    a_np, G_np, _, ok_np, _ = _kernels.numpy_impl("smo_one_class")(K, a0, C, 1e-8, 100_000, False)
    a_nb, G_nb, _, ok_nb, _ = _kernels.numba_impl("smo_one_class")(K, a0, C, 1e-8, 100_000, False)
    assert ok_np and ok_nb
    assert abs(0.5 * a_np @ K @ a_np - 0.5 * a_nb @ K @ a_nb) <= 1e-10
    assert np.allclose(a_np, a_nb, atol=1e-6)


@needs_numba
@pytest.mark.parametrize("wrap", [False, True])
def test_hs_backends_bit_identical(rng, wrap):
    Ix, Iy, It = (rng.standard_normal((17, 23)) for _ in range(3))
    u1, v1, e1 = _kernels.numpy_impl("hs_solve")(Ix, Iy, It, 4.0, 30, wrap, True)
    u2, v2, e2 = _kernels.numba_impl("hs_solve")(Ix, Iy, It, 4.0, 30, wrap, True)
    assert np.array_equal(u1, u2) and np.array_equal(v1, v2)
    assert np.allclose(e1, e2, rtol=1e-12)


@needs_numba
def test_warp_backends_bit_identical(rng):
    img = rng.random((40, 50)) * 255
    xs = np.array([0, 5, 30], dtype=np.int64)
    ys = np.array([0, 12, 20], dtype=np.int64)
    for s, t in ((20, 15), (15, 15), (10, 15)):
        a = _kernels.numpy_impl("warp_patches")(img, xs, ys, s, t, t)
        b = _kernels.numba_impl("warp_patches")(img, xs, ys, s, t, t)
        assert np.array_equal(a, b)


def test_env_flag_selects_numpy():
    code = "from amdn import _kernels; print(_kernels.backend())"
    env = dict(os.environ, AMDN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    env["AMDN_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == ("numba" if _kernels.HAVE_NUMBA else "numpy")


def test_numpy_backend_end_to_end_math():
    """A few public operations under the fallback path, in a subprocess."""
    code = """
import numpy as np
from amdn import _kernels
from amdn.linalg import sym_eig
from amdn.ocsvm import OcsvmConfig, train
from amdn.optflow import horn_schunck
assert _kernels.backend() == "numpy"
w, V = sym_eig([[2.0, 1.0], [1.0, 2.0]], 2)
assert np.allclose(w, [3, 1])
X = np.random.default_rng(0).standard_normal((60, 2))
m = train(X, OcsvmConfig(nu=0.2, rbf_sigma=1.0))
assert abs(m.dual_coeffs.sum() - 1) < 1e-9
f = horn_schunck(np.zeros((8, 8)), np.zeros((8, 8)), 1.0, 5)
assert np.abs(f.u).max() == 0
print("ok")
"""
    env = dict(os.environ, AMDN_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "ok"
