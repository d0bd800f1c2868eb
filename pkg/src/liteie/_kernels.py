"""Compiled kernels.

Two families live here:

* float32 inference: row-blocked 3x3 convolution and one fused pass over the
  enhancement/restoration iterations. Rows are independent, so the serial and
  row-parallel variants produce bit-identical output.
* float64 training: convolution forward/backward and the forward and
  reverse passes of the per-pixel iteration loop.

Nothing here imports from the rest of the package.
"""

from __future__ import annotations

import numba as nb
import numpy as np

_f32 = np.float32


@nb.njit(fastmath=True, error_model="numpy", inline="always")
def _ftanh(x):
    # float32 rational minimax approximation, |err| < 3e-7
    x = min(max(x, _f32(-7.90531110763549805)), _f32(7.90531110763549805))
    x2 = x * x
    p = _f32(-2.76076847742355e-16)
    p = p * x2 + _f32(2.00018790482477e-13)
    p = p * x2 + _f32(-8.60467152213735e-11)
    p = p * x2 + _f32(5.12229709037114e-08)
    p = p * x2 + _f32(1.48572235717979e-05)
    p = p * x2 + _f32(6.37261928875436e-04)
    p = p * x2 + _f32(4.89352455891786e-03)
    p = p * x
    q = _f32(1.19825839466702e-06)
    q = q * x2 + _f32(1.18534705686654e-04)
    q = q * x2 + _f32(2.26843463243900e-03)
    q = q * x2 + _f32(4.89352518554385e-03)
    return p / q


@nb.njit(fastmath=True, error_model="numpy", inline="always")
def _conv_row(x, k, b, out, act, y):
    n_out, n_in = k.shape[0], k.shape[1]
    h, w = x.shape[1], x.shape[2]
    for o in range(n_out):
        row = out[o, y]
        bo = b[o]
        for xx in range(w):
            row[xx] = bo
        for i in range(n_in):
            for ky in range(3):
                yy = y + ky - 1
                if yy < 0 or yy >= h:
                    continue
                src = x[i, yy]
                w0 = k[o, i, ky, 0]
                w1 = k[o, i, ky, 1]
                w2 = k[o, i, ky, 2]
                if w == 1:
                    row[0] += w1 * src[0]
                    continue
                row[0] += w1 * src[0] + w2 * src[1]
                for xx in range(1, w - 1):
                    row[xx] += w0 * src[xx - 1] + w1 * src[xx] + w2 * src[xx + 1]
                row[w - 1] += w0 * src[w - 2] + w1 * src[w - 1]
        if act == 1:
            for xx in range(w):
                row[xx] = max(row[xx], _f32(0.0))
        elif act == 2:
            for xx in range(w):
                row[xx] = _ftanh(row[xx])


@nb.njit(fastmath=True, error_model="numpy")
def _conv_serial(x, k, b, out, act):
    for y in range(x.shape[1]):
        _conv_row(x, k, b, out, act, y)


@nb.njit(fastmath=True, error_model="numpy", parallel=True)
def _conv_parallel(x, k, b, out, act):
    for y in nb.prange(x.shape[1]):
        _conv_row(x, k, b, out, act, y)


@nb.njit(fastmath=True, error_model="numpy", inline="always")
def _iterate_row(x0, p1, p2, p3, out, sx, a1, a2, a3, iters, irm, clamp):
    # T sweeps over one row; the row stays in L1 and the inner loops vectorise
    w = x0.shape[0]
    for xx in range(w):
        out[xx] = x0[xx]
        sx[xx] = (a1 * _ftanh(p1[xx]) + a2 * _ftanh(p2[xx]) + a3 * _ftanh(p3[xx])) * x0[xx]
    for _ in range(iters):
        if irm and clamp:
            for xx in range(w):
                v = out[xx]
                e = v + p3[xx] * (v * v - v)
                v = e + sx[xx] * (e * e - e)
                out[xx] = min(max(v, _f32(0.0)), _f32(1.0))
        elif irm:
            for xx in range(w):
                v = out[xx]
                e = v + p3[xx] * (v * v - v)
                out[xx] = e + sx[xx] * (e * e - e)
        else:
            for xx in range(w):
                v = out[xx]
                out[xx] = v + p3[xx] * (v * v - v)


@nb.njit(fastmath=True, error_model="numpy")
def _iterate_serial(x0, p1, p2, p3, out, a1, a2, a3, iters, irm, clamp):
    c, h, w = x0.shape
    sx = np.empty(w, dtype=np.float32)
    for ch in range(c):
        for y in range(h):
            _iterate_row(x0[ch, y], p1[ch, y], p2[ch, y], p3[ch, y], out[ch, y], sx,
                         a1, a2, a3, iters, irm, clamp)


@nb.njit(fastmath=True, error_model="numpy", parallel=True)
def _iterate_parallel(x0, p1, p2, p3, out, a1, a2, a3, iters, irm, clamp):
    c, h, w = x0.shape
    for r in nb.prange(c * h):
        ch = r // h
        y = r % h
        sx = np.empty(w, dtype=np.float32)
        _iterate_row(x0[ch, y], p1[ch, y], p2[ch, y], p3[ch, y], out[ch, y], sx,
                     a1, a2, a3, iters, irm, clamp)


# -- float64 training kernels --------------------------------------------------------

@nb.njit(cache=True)
def conv3x3(x, k, b):
    """Zero-padded 3x3 cross-correlation ``(I, H, W) -> (O, H, W)``."""
    out = np.empty((k.shape[0], x.shape[1], x.shape[2]), dtype=x.dtype)
    for y in range(x.shape[1]):
        _conv_row(x, k, b, out, 0, y)
    return out


@nb.njit(cache=True)
def conv3x3_kernel_grad(x, g):
    """``gk[o, i, ky, kx] = sum_{y,x} g[o, y, x] * xpad[i, y+ky-1, x+kx-1]``."""
    n_in, h, w = x.shape
    n_out = g.shape[0]
    gk = np.zeros((n_out, n_in, 3, 3))
    for o in range(n_out):
        for i in range(n_in):
            for ky in range(3):
                dy = ky - 1
                for kx in range(3):
                    dx = kx - 1
                    x0 = max(0, -dx)
                    x1 = min(w, w - dx)
                    s = 0.0
                    for y in range(max(0, -dy), min(h, h - dy)):
                        s += np.dot(g[o, y, x0:x1], x[i, y + dy, x0 + dx:x1 + dx])
                    gk[o, i, ky, kx] = s
    return gk


@nb.njit(cache=True)
def iter_forward(x0, p3, gain, iters, irm, clamp):
    """Image after ``iters`` rounds of curve step + restoration.

    Inputs are 2-D ``(rows, width)`` float64 arrays; each row is swept
    ``iters`` times so the inner loops vectorise.
    """
    rows, w = x0.shape
    out = np.empty_like(x0)
    sx = np.empty(w)
    for r in range(rows):
        v = out[r]
        for j in range(w):
            v[j] = x0[r, j]
            sx[j] = gain[r, j] * x0[r, j]
        p = p3[r]
        for _ in range(iters):
            if irm and clamp:
                for j in range(w):
                    e = v[j] + p[j] * (v[j] * v[j] - v[j])
                    v[j] = min(max(e + sx[j] * (e * e - e), 0.0), 1.0)
            elif irm:
                for j in range(w):
                    e = v[j] + p[j] * (v[j] * v[j] - v[j])
                    v[j] = e + sx[j] * (e * e - e)
            else:
                for j in range(w):
                    v[j] = v[j] + p[j] * (v[j] * v[j] - v[j])
    return out


@nb.njit(cache=True)
def iter_backward(x0, p3, gain, iters, irm, clamp, grad_out):
    """Reverse pass of :func:`iter_forward`.

    Returns gradients with respect to ``p3`` and ``gain``; ``x0`` is a
    constant. Each row's forward trajectory is recomputed into a ``(T, W)``
    buffer and then walked backwards.
    """
    rows, w = x0.shape
    g_p3 = np.zeros_like(x0)
    g_gain = np.zeros_like(x0)
    hist_v = np.empty((max(iters, 1), w))
    hist_e = np.empty((max(iters, 1), w))
    v = np.empty(w)
    sx = np.empty(w)
    g = np.empty(w)
    for r in range(rows):
        p = p3[r]
        xr = x0[r]
        for j in range(w):
            v[j] = xr[j]
            sx[j] = gain[r, j] * xr[j]
        for t in range(iters):
            hv = hist_v[t]
            he = hist_e[t]
            for j in range(w):
                hv[j] = v[j]
                he[j] = v[j] + p[j] * (v[j] * v[j] - v[j])
            if irm and clamp:
                for j in range(w):
                    e = he[j]
                    v[j] = min(max(e + sx[j] * (e * e - e), 0.0), 1.0)
            elif irm:
                for j in range(w):
                    e = he[j]
                    v[j] = e + sx[j] * (e * e - e)
            else:
                for j in range(w):
                    v[j] = he[j]
        gp = g_p3[r]
        gs = g_gain[r]
        for j in range(w):
            g[j] = grad_out[r, j]
        for t in range(iters - 1, -1, -1):
            he = hist_e[t]
            hv = hist_v[t]
            if irm:
                for j in range(w):
                    e = he[j]
                    gj = g[j]
                    if clamp:
                        pre = e + sx[j] * (e * e - e)
                        gj = gj if (pre >= 0.0 and pre <= 1.0) else 0.0
                    gs[j] += gj * xr[j] * (e * e - e)
                    g[j] = gj * (1.0 + sx[j] * (2.0 * e - 1.0))
            for j in range(w):
                vt = hv[j]
                gp[j] += g[j] * (vt * vt - vt)
                g[j] = g[j] * (1.0 + p[j] * (2.0 * vt - 1.0))
    return g_p3, g_gain
