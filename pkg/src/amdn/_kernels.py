"""
Hot numeric kernels
===================

Each kernel exists twice: a Numba ``@njit`` loop version and a vectorized
pure-NumPy version. The Numba path is used when Numba imports and the
environment variable ``AMDN_DISABLE_NUMBA`` is unset (or ``0``). Both paths
implement the same algorithm; results agree to rounding (``hs_solve`` and
``warp_patches`` happen to match bit-for-bit).

Kernels
-------
jacobi_eigh      all eigenpairs of a symmetric matrix by Jacobi rotations
smo_one_class    pairwise coordinate descent for the one-class SVM dual
hs_solve         Horn-Schunck block-Jacobi iterations (+ optional energy trace)
warp_patches     crop-and-bilinear-resize of square windows
"""

import os

import numpy as np

_DISABLED = os.environ.get("AMDN_DISABLE_NUMBA", "0").strip().lower() in ("1", "true", "yes")

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED


def backend():
    return "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# Symmetric eigendecomposition
# ---------------------------------------------------------------------------


def _offdiag_norm(A):
    # summed directly: sum(A^2) - sum(diag^2) cancels catastrophically
    B = A.copy()
    np.fill_diagonal(B, 0.0)
    return float(np.sqrt(np.sum(B * B)))


def _jacobi_eigh_numpy(a, tol, max_sweeps):
    # Round-robin ordering: each round rotates n/2 disjoint (p, q) pairs at
    # once, which lets the whole round be applied with fancy indexing.
    A = np.array(a, dtype=np.float64, copy=True)
    n = A.shape[0]
    V = np.eye(n)
    fro = np.sqrt(np.sum(A * A))
    if n == 1 or fro == 0.0:
        return np.diag(A).copy(), V, 0, True
    m = n + (n % 2)
    players = np.arange(m)
    for sweep in range(max_sweeps):
        off = _offdiag_norm(A)
        if off <= tol * fro:
            return np.diag(A).copy(), V, sweep, True
        for _ in range(m - 1):
            top = players[: m // 2]
            bot = players[m // 2 :][::-1]
            P = np.minimum(top, bot)
            Q = np.maximum(top, bot)
            keep = Q < n
            P, Q = P[keep], Q[keep]
            apq = A[P, Q]
            nz = apq != 0.0
            if np.any(nz):
                P, Q, apq = P[nz], Q[nz], apq[nz]
                # a subnormal apq overflows theta to inf, giving t = 0 (no-op)
                with np.errstate(over="ignore"):
                    theta = (A[Q, Q] - A[P, P]) / (2.0 * apq)
                    sgn = np.where(theta >= 0.0, 1.0, -1.0)
                    t = sgn / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                Ap = A[:, P].copy()
                Aq = A[:, Q].copy()
                A[:, P] = Ap * c - Aq * s
                A[:, Q] = Ap * s + Aq * c
                Ap = A[P, :].copy()
                Aq = A[Q, :].copy()
                A[P, :] = c[:, None] * Ap - s[:, None] * Aq
                A[Q, :] = s[:, None] * Ap + c[:, None] * Aq
                Vp = V[:, P].copy()
                Vq = V[:, Q].copy()
                V[:, P] = Vp * c - Vq * s
                V[:, Q] = Vp * s + Vq * c
            # circle-method rotation, player 0 fixed
            players = np.concatenate(([players[0]], [players[-1]], players[1:-1]))
    return np.diag(A).copy(), V, max_sweeps, bool(_offdiag_norm(A) <= tol * fro)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _jacobi_eigh_numba(a, tol, max_sweeps):
        n = a.shape[0]
        A = a.copy()
        V = np.eye(n)
        fro = 0.0
        for i in range(n):
            for j in range(n):
                fro += A[i, j] * A[i, j]
        fro = np.sqrt(fro)
        if n == 1 or fro == 0.0:
            return np.diag(A).copy(), V, 0, True
        for sweep in range(max_sweeps):
            off = 0.0
            for i in range(n):
                for j in range(n):
                    if i != j:
                        off += A[i, j] * A[i, j]
            if np.sqrt(off) <= tol * fro:
                return np.diag(A).copy(), V, sweep, True
            for p in range(n - 1):
                for q in range(p + 1, n):
                    apq = A[p, q]
                    if apq == 0.0:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    sgn = 1.0 if theta >= 0.0 else -1.0
                    t = sgn / (abs(theta) + np.sqrt(theta * theta + 1.0))
                    c = 1.0 / np.sqrt(t * t + 1.0)
                    s = t * c
                    for k in range(n):
                        akp = A[k, p]
                        akq = A[k, q]
                        A[k, p] = c * akp - s * akq
                        A[k, q] = s * akp + c * akq
                    for k in range(n):
                        apk = A[p, k]
                        aqk = A[q, k]
                        A[p, k] = c * apk - s * aqk
                        A[q, k] = s * apk + c * aqk
                    for k in range(n):
                        vkp = V[k, p]
                        vkq = V[k, q]
                        V[k, p] = c * vkp - s * vkq
                        V[k, q] = s * vkp + c * vkq
        off = 0.0
        for i in range(n):
            for j in range(n):
                if i != j:
                    off += A[i, j] * A[i, j]
        return np.diag(A).copy(), V, max_sweeps, np.sqrt(off) <= tol * fro


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    """Return ``(eigenvalues, eigenvector_columns, sweeps, converged)``, unsorted."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if USE_NUMBA:
        return _jacobi_eigh_numba(a, float(tol), int(max_sweeps))
    return _jacobi_eigh_numpy(a, float(tol), int(max_sweeps))


# ---------------------------------------------------------------------------
# One-class SVM dual: min 1/2 a'Ka  s.t. 0 <= a <= C, sum(a) = 1
# ---------------------------------------------------------------------------


def _smo_numpy(K, alpha, C, tol, max_iter, record):
    alpha = alpha.copy()
    n = alpha.shape[0]
    G = K @ alpha
    obj = 0.5 * float(alpha @ G)
    trace = [obj] if record else []
    it = 0
    converged = False
    inf = np.inf
    while it < max_iter:
        gi = np.where(alpha < C, G, inf)
        gj = np.where(alpha > 0.0, G, -inf)
        i = int(np.argmin(gi))
        j = int(np.argmax(gj))
        gmin = gi[i]
        gmax = gj[j]
        if gmax - gmin <= tol:
            converged = True
            break
        quad_true = K[i, i] + K[j, j] - 2.0 * K[i, j]
        quad = quad_true if quad_true > 1e-12 else 1e-12
        delta = (gmax - gmin) / quad
        cap_i = C - alpha[i]
        cap_j = alpha[j]
        if delta >= cap_i and cap_i <= cap_j:
            delta = cap_i
            alpha[i] = C
            alpha[j] -= delta
        elif delta >= cap_j:
            delta = cap_j
            alpha[i] += delta
            alpha[j] = 0.0
        else:
            alpha[i] += delta
            alpha[j] -= delta
        G += delta * (K[:, i] - K[:, j])
        obj += delta * (gmin - gmax) + 0.5 * delta * delta * quad_true
        if record:
            trace.append(obj)
        it += 1
    if not converged:
        gi = np.where(alpha < C, G, inf)
        gj = np.where(alpha > 0.0, G, -inf)
        converged = bool(gj.max() - gi.min() <= tol) if n else True
    return alpha, G, it, converged, np.asarray(trace, dtype=np.float64)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _smo_numba(K, alpha0, C, tol, max_iter, record):
        alpha = alpha0.copy()
        n = alpha.shape[0]
        G = np.zeros(n)
        for k in range(n):
            if alpha[k] != 0.0:
                for m in range(n):
                    G[m] += K[m, k] * alpha[k]
        obj = 0.0
        for k in range(n):
            obj += alpha[k] * G[k]
        obj *= 0.5
        trace = np.empty(max_iter + 1 if record else 1)
        trace[0] = obj
        it = 0
        converged = False
        while it < max_iter:
            gmin = np.inf
            gmax = -np.inf
            i = -1
            j = -1
            for k in range(n):
                if alpha[k] < C and G[k] < gmin:
                    gmin = G[k]
                    i = k
                if alpha[k] > 0.0 and G[k] > gmax:
                    gmax = G[k]
                    j = k
            if i < 0 or j < 0 or gmax - gmin <= tol:
                converged = True
                break
            quad_true = K[i, i] + K[j, j] - 2.0 * K[i, j]
            quad = quad_true if quad_true > 1e-12 else 1e-12
            delta = (gmax - gmin) / quad
            cap_i = C - alpha[i]
            cap_j = alpha[j]
            if delta >= cap_i and cap_i <= cap_j:
                delta = cap_i
                alpha[i] = C
                alpha[j] -= delta
            elif delta >= cap_j:
                delta = cap_j
                alpha[i] += delta
                alpha[j] = 0.0
            else:
                alpha[i] += delta
                alpha[j] -= delta
            for m in range(n):
                G[m] += delta * (K[m, i] - K[m, j])
            obj += delta * (gmin - gmax) + 0.5 * delta * delta * quad_true
            it += 1
            if record:
                trace[it] = obj
        if not converged:
            gmin = np.inf
            gmax = -np.inf
            for k in range(n):
                if alpha[k] < C and G[k] < gmin:
                    gmin = G[k]
                if alpha[k] > 0.0 and G[k] > gmax:
                    gmax = G[k]
            converged = gmax - gmin <= tol
        return alpha, G, it, converged, trace[: it + 1] if record else trace[:0]


def smo_one_class(K, alpha0, C, tol, max_iter, record=False):
    """Maximal-violating-pair SMO on a dense kernel matrix.

    Returns ``(alpha, gradient, iterations, converged, objective_trace)``.
    The gradient ``K @ alpha`` is maintained incrementally.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    alpha0 = np.ascontiguousarray(alpha0, dtype=np.float64)
    if USE_NUMBA:
        return _smo_numba(K, alpha0, float(C), float(tol), int(max_iter), bool(record))
    return _smo_numpy(K, alpha0, float(C), float(tol), int(max_iter), bool(record))


# ---------------------------------------------------------------------------
# Horn-Schunck
# ---------------------------------------------------------------------------
# Smoothness graph: 4-neighbours weight 1/6, diagonal neighbours 1/12. With
# wrap=False, out-of-frame neighbours are dropped and the local average is
# renormalized; the pairwise weights stay symmetric, so each block-Jacobi
# sweep cannot raise the energy
#   E = sum (Ix u + Iy v + It)^2 + alpha^2 sum_{p~q} w_pq |f_p - f_q|^2.

_OFFSETS = np.array(
    [(-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)], dtype=np.int64
)
_WEIGHTS = np.array([1 / 6, 1 / 6, 1 / 6, 1 / 6, 1 / 12, 1 / 12, 1 / 12, 1 / 12])


def _neighbour_sum_numpy(f, wrap):
    h, w = f.shape
    if wrap:
        out = np.zeros_like(f)
        for (dy, dx), wt in zip(_OFFSETS, _WEIGHTS):
            out += wt * np.roll(f, (-dy, -dx), axis=(0, 1))
        return out
    p = np.pad(f, 1, mode="constant")
    out = np.zeros_like(f)
    for (dy, dx), wt in zip(_OFFSETS, _WEIGHTS):
        out += wt * p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    return out


def _weight_total(h, w, wrap):
    if wrap:
        return np.ones((h, w))
    return _neighbour_sum_numpy(np.ones((h, w)), False)


def _hs_energy_numpy(Ix, Iy, It, u, v, alpha2, wrap):
    data = Ix * u + Iy * v + It
    e = float(np.sum(data * data))
    smooth = 0.0
    h, w = u.shape
    # each unordered pair once: use the 4 "forward" offsets
    for (dy, dx), wt in zip(_OFFSETS[[1, 3, 6, 7]], _WEIGHTS[[1, 3, 6, 7]]):
        if wrap:
            du = u - np.roll(u, (-dy, -dx), axis=(0, 1))
            dv = v - np.roll(v, (-dy, -dx), axis=(0, 1))
        else:
            y0, y1 = max(0, -dy), h - max(0, dy)
            x0, x1 = max(0, -dx), w - max(0, dx)
            du = u[y0:y1, x0:x1] - u[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
            dv = v[y0:y1, x0:x1] - v[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        smooth += wt * float(np.sum(du * du) + np.sum(dv * dv))
    return e + alpha2 * smooth


def _hs_numpy(Ix, Iy, It, alpha2, iters, wrap, record):
    h, w = Ix.shape
    u = np.zeros((h, w))
    v = np.zeros((h, w))
    Wt = _weight_total(h, w, wrap)
    denom = alpha2 * Wt + Ix * Ix + Iy * Iy
    energies = []
    if record:
        energies.append(_hs_energy_numpy(Ix, Iy, It, u, v, alpha2, wrap))
    for _ in range(iters):
        ubar = _neighbour_sum_numpy(u, wrap) / Wt
        vbar = _neighbour_sum_numpy(v, wrap) / Wt
        r = (Ix * ubar + Iy * vbar + It) / denom
        u = ubar - Ix * r
        v = vbar - Iy * r
        if record:
            energies.append(_hs_energy_numpy(Ix, Iy, It, u, v, alpha2, wrap))
    return u, v, np.asarray(energies, dtype=np.float64)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _hs_energy_numba(Ix, Iy, It, u, v, alpha2, wrap, offs, wts):
        h, w = u.shape
        e = 0.0
        smooth = 0.0
        for y in range(h):
            for x in range(w):
                d = Ix[y, x] * u[y, x] + Iy[y, x] * v[y, x] + It[y, x]
                e += d * d
                for k in (1, 3, 6, 7):
                    yy = y + offs[k, 0]
                    xx = x + offs[k, 1]
                    if wrap:
                        yy %= h
                        xx %= w
                    elif yy < 0 or yy >= h or xx < 0 or xx >= w:
                        continue
                    du = u[y, x] - u[yy, xx]
                    dv = v[y, x] - v[yy, xx]
                    smooth += wts[k] * (du * du + dv * dv)
        return e + alpha2 * smooth

    @numba.njit(cache=True)
    def _refresh_halo(P):
        # periodic halo around the (h, w) interior of P
        h = P.shape[0] - 2
        w = P.shape[1] - 2
        for x in range(1, w + 1):
            P[0, x] = P[h, x]
            P[h + 1, x] = P[1, x]
        for y in range(h + 2):
            P[y, 0] = P[y, w]
            P[y, w + 1] = P[y, 1]

    @numba.njit(cache=True)
    def _hs_numba(Ix, Iy, It, alpha2, iters, wrap, record, offs, wts, Wt, denom):
        # u, v live in zero-padded buffers: with wrap=False the halo stays 0,
        # which drops out-of-frame neighbours; with wrap=True it is refreshed
        h, w = Ix.shape
        U = np.zeros((h + 2, w + 2))
        V = np.zeros((h + 2, w + 2))
        Un = np.zeros((h + 2, w + 2))
        Vn = np.zeros((h + 2, w + 2))
        a4 = wts[0]
        a8 = wts[4]
        energies = np.empty(iters + 1 if record else 0)
        if record:
            energies[0] = _hs_energy_numba(Ix, Iy, It, U[1:-1, 1:-1], V[1:-1, 1:-1], alpha2, wrap, offs, wts)
        for it in range(iters):
            if wrap:
                _refresh_halo(U)
                _refresh_halo(V)
            for y in range(1, h + 1):
                for x in range(1, w + 1):
                    # same accumulation order as the numpy path (_OFFSETS)
                    su = a4 * U[y - 1, x]
                    su += a4 * U[y + 1, x]
                    su += a4 * U[y, x - 1]
                    su += a4 * U[y, x + 1]
                    su += a8 * U[y - 1, x - 1]
                    su += a8 * U[y - 1, x + 1]
                    su += a8 * U[y + 1, x - 1]
                    su += a8 * U[y + 1, x + 1]
                    sv = a4 * V[y - 1, x]
                    sv += a4 * V[y + 1, x]
                    sv += a4 * V[y, x - 1]
                    sv += a4 * V[y, x + 1]
                    sv += a8 * V[y - 1, x - 1]
                    sv += a8 * V[y - 1, x + 1]
                    sv += a8 * V[y + 1, x - 1]
                    sv += a8 * V[y + 1, x + 1]
                    t = Wt[y - 1, x - 1]
                    ubar = su / t
                    vbar = sv / t
                    ix = Ix[y - 1, x - 1]
                    iy = Iy[y - 1, x - 1]
                    r = (ix * ubar + iy * vbar + It[y - 1, x - 1]) / denom[y - 1, x - 1]
                    Un[y, x] = ubar - ix * r
                    Vn[y, x] = vbar - iy * r
            U, Un = Un, U
            V, Vn = Vn, V
            if record:
                energies[it + 1] = _hs_energy_numba(
                    Ix, Iy, It, U[1:-1, 1:-1], V[1:-1, 1:-1], alpha2, wrap, offs, wts
                )
        return U[1:-1, 1:-1].copy(), V[1:-1, 1:-1].copy(), energies


def _hs_numba_entry(Ix, Iy, It, alpha2, iters, wrap, record):
    Wt = _weight_total(*Ix.shape, wrap)
    denom = alpha2 * Wt + Ix * Ix + Iy * Iy
    return _hs_numba(Ix, Iy, It, alpha2, iters, wrap, record, _OFFSETS, _WEIGHTS, Wt, denom)


def hs_solve(Ix, Iy, It, alpha, iters, wrap=False, record=False):
    """Run ``iters`` Horn-Schunck sweeps from zero flow.

    Returns ``(u, v, energies)``; ``energies`` is empty unless ``record``.
    """
    Ix = np.ascontiguousarray(Ix, dtype=np.float64)
    Iy = np.ascontiguousarray(Iy, dtype=np.float64)
    It = np.ascontiguousarray(It, dtype=np.float64)
    alpha2 = float(alpha) ** 2
    if USE_NUMBA:
        return _hs_numba_entry(Ix, Iy, It, alpha2, int(iters), bool(wrap), bool(record))
    return _hs_numpy(Ix, Iy, It, alpha2, int(iters), bool(wrap), bool(record))


def hs_energy(Ix, Iy, It, u, v, alpha, wrap=False):
    return _hs_energy_numpy(
        np.asarray(Ix, float), np.asarray(Iy, float), np.asarray(It, float),
        np.asarray(u, float), np.asarray(v, float), float(alpha) ** 2, bool(wrap),
    )


# ---------------------------------------------------------------------------
# Patch warping
# ---------------------------------------------------------------------------
# Pixel-centre aligned bilinear resize of the s x s window at (x0, y0):
#   src = x0 + (j + 0.5) * s / tw - 0.5, clamped to the window.
# When s == tw the sample points land exactly on pixel centres.


def _axis_coords(origin, s, t):
    j = np.arange(t, dtype=np.float64)
    src = (j + 0.5) * (s / t) - 0.5
    src = np.clip(src, 0.0, s - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, s - 1)
    frac = src - i0
    return origin[:, None] + i0[None, :], origin[:, None] + i1[None, :], frac


def _warp_numpy(img, xs, ys, s, tw, th):
    img = np.asarray(img, dtype=np.float64)
    x0, x1, fx = _axis_coords(np.asarray(xs, np.int64), s, tw)
    y0, y1, fy = _axis_coords(np.asarray(ys, np.int64), s, th)
    # (n, th, tw) gathers
    a = img[y0[:, :, None], x0[:, None, :]]
    b = img[y0[:, :, None], x1[:, None, :]]
    c = img[y1[:, :, None], x0[:, None, :]]
    d = img[y1[:, :, None], x1[:, None, :]]
    wx = fx[None, None, :]
    wy = fy[None, :, None]
    top = (1.0 - wx) * a + wx * b
    bottom = (1.0 - wx) * c + wx * d
    out = (1.0 - wy) * top + wy * bottom
    return out.reshape(len(xs), th * tw)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _warp_numba(img, xs, ys, s, tw, th):
        n = xs.shape[0]
        out = np.empty((n, th * tw))
        sx = s / tw
        sy = s / th
        for k in range(n):
            for r in range(th):
                fy = (r + 0.5) * sy - 0.5
                if fy < 0.0:
                    fy = 0.0
                if fy > s - 1.0:
                    fy = s - 1.0
                iy0 = int(np.floor(fy))
                iy1 = min(iy0 + 1, s - 1)
                wy = fy - iy0
                for c in range(tw):
                    fx = (c + 0.5) * sx - 0.5
                    if fx < 0.0:
                        fx = 0.0
                    if fx > s - 1.0:
                        fx = s - 1.0
                    ix0 = int(np.floor(fx))
                    ix1 = min(ix0 + 1, s - 1)
                    wx = fx - ix0
                    a = img[ys[k] + iy0, xs[k] + ix0]
                    b = img[ys[k] + iy0, xs[k] + ix1]
                    cc = img[ys[k] + iy1, xs[k] + ix0]
                    d = img[ys[k] + iy1, xs[k] + ix1]
                    top = (1.0 - wx) * a + wx * b
                    bottom = (1.0 - wx) * cc + wx * d
                    out[k, r * tw + c] = (1.0 - wy) * top + wy * bottom
        return out


def warp_patches(img, xs, ys, s, tw, th):
    """Crop ``s x s`` windows with top-left corners ``(xs[k], ys[k])`` and
    resize each to ``th x tw``. Returns an ``(n, th*tw)`` row-major array."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    if len(xs) == 0:
        return np.empty((0, th * tw))
    if USE_NUMBA:
        return _warp_numba(img, xs, ys, int(s), int(tw), int(th))
    return _warp_numpy(img, xs, ys, int(s), int(tw), int(th))


def numpy_impl(name):
    """The pure-NumPy implementation of kernel ``name`` (for cross-checks)."""
    return {
        "jacobi_eigh": _jacobi_eigh_numpy,
        "smo_one_class": _smo_numpy,
        "hs_solve": _hs_numpy,
        "warp_patches": _warp_numpy,
    }[name]


def numba_impl(name):
    """The Numba implementation of kernel ``name``, or None without Numba."""
    if not HAVE_NUMBA:
        return None
    return {
        "jacobi_eigh": _jacobi_eigh_numba,
        "smo_one_class": _smo_numba,
        "hs_solve": _hs_numba_entry,
        "warp_patches": _warp_numba,
    }[name]
