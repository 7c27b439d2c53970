"""JIT-compiled hot kernels (direct convolution/pooling loops).

Semantics match _kernels_numpy exactly, including the max-pool tie rule
(first maximum in row-major window order wins). Padding is applied with
numpy outside the jitted code so the loops stay branch-free.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _conv2d_fwd(xp, w, b, stride, out):
    # innermost loop runs over contiguous output/input columns so it
    # vectorizes; weights are scalar-hoisted per (o, i, a, bb)
    n, ic, _, _ = xp.shape
    oc, _, kh, kw = w.shape
    ho, wo = out.shape[2], out.shape[3]
    for ni in range(n):
        for o in range(oc):
            bo = b[o]
            for r in range(ho):
                for c in range(wo):
                    out[ni, o, r, c] = bo
            for i in range(ic):
                for a in range(kh):
                    for bb in range(kw):
                        wv = w[o, i, a, bb]
                        for r in range(ho):
                            xr = r * stride + a
                            for c in range(wo):
                                out[ni, o, r, c] += wv * xp[ni, i, xr, c * stride + bb]


@njit(cache=True)
def _conv2d_bwd(xp, w, gy, stride, gxp, gw, gb):
    n, ic, _, _ = xp.shape
    oc, _, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    for ni in range(n):
        for o in range(oc):
            s = gb[o]
            for r in range(ho):
                for c in range(wo):
                    s += gy[ni, o, r, c]
            gb[o] = s
            for i in range(ic):
                for a in range(kh):
                    for bb in range(kw):
                        wv = w[o, i, a, bb]
                        acc = gw[o, i, a, bb]
                        for r in range(ho):
                            xr = r * stride + a
                            for c in range(wo):
                                g = gy[ni, o, r, c]
                                acc += g * xp[ni, i, xr, c * stride + bb]
                                gxp[ni, i, xr, c * stride + bb] += g * wv
                        gw[o, i, a, bb] = acc


@njit(cache=True)
def _maxpool_fwd(x, size, stride, y, idx):
    n, c, _, w = x.shape
    ho, wo = y.shape[2], y.shape[3]
    for ni in range(n):
        for ci in range(c):
            for r in range(ho):
                for cc in range(wo):
                    r0 = r * stride
                    c0 = cc * stride
                    best = x[ni, ci, r0, c0]
                    bi = r0 * w + c0
                    for a in range(size):
                        for b in range(size):
                            v = x[ni, ci, r0 + a, c0 + b]
                            if v > best:
                                best = v
                                bi = (r0 + a) * w + (c0 + b)
                    y[ni, ci, r, cc] = best
                    idx[ni, ci, r, cc] = bi


@njit(cache=True)
def _maxpool_bwd(idx, gy, gx_flat):
    n, c, ho, wo = gy.shape
    for ni in range(n):
        for ci in range(c):
            for r in range(ho):
                for cc in range(wo):
                    gx_flat[ni, ci, idx[ni, ci, r, cc]] += gy[ni, ci, r, cc]


@njit(cache=True)
def _avgpool_fwd(x, size, stride, y):
    n, c = x.shape[0], x.shape[1]
    ho, wo = y.shape[2], y.shape[3]
    inv = 1.0 / (size * size)
    for ni in range(n):
        for ci in range(c):
            for r in range(ho):
                for cc in range(wo):
                    s = 0.0
                    for a in range(size):
                        for b in range(size):
                            s += x[ni, ci, r * stride + a, cc * stride + b]
                    y[ni, ci, r, cc] = s * inv


@njit(cache=True)
def _avgpool_bwd(gy, size, stride, gx):
    n, c, ho, wo = gy.shape
    inv = 1.0 / (size * size)
    for ni in range(n):
        for ci in range(c):
            for r in range(ho):
                for cc in range(wo):
                    g = gy[ni, ci, r, cc] * inv
                    for a in range(size):
                        for b in range(size):
                            gx[ni, ci, r * stride + a, cc * stride + b] += g


def conv2d_forward(x, w, b, stride, padding):
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    oc, _, kh, kw = w.shape
    ho = (xp.shape[2] - kh) // stride + 1
    wo = (xp.shape[3] - kw) // stride + 1
    out = np.empty((x.shape[0], oc, ho, wo), dtype=x.dtype)
    _conv2d_fwd(xp, w, b, stride, out)
    return out


def conv2d_backward(x, w, gy, stride, padding):
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    gb = np.zeros(w.shape[0], dtype=w.dtype)
    _conv2d_bwd(xp, w, gy, stride, gxp, gw, gb)
    if padding:
        gxp = np.ascontiguousarray(gxp[:, :, padding:-padding, padding:-padding])
    return gxp, gw, gb


def maxpool_forward(x, size, stride):
    n, c, h, w = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    idx = np.empty((n, c, ho, wo), dtype=np.int64)
    _maxpool_fwd(x, size, stride, y, idx)
    return y, idx


def maxpool_backward(idx, gy, h, w, overlapping=False):
    n, c = gy.shape[0], gy.shape[1]
    gx = np.zeros((n, c, h * w), dtype=gy.dtype)
    _maxpool_bwd(idx, gy, gx)
    return gx.reshape(n, c, h, w)


def avgpool_forward(x, size, stride):
    n, c, h, w = x.shape
    ho = (h - size) // stride + 1
    wo = (w - size) // stride + 1
    y = np.empty((n, c, ho, wo), dtype=x.dtype)
    _avgpool_fwd(x, size, stride, y)
    return y


def avgpool_backward(gy, size, stride, h, w):
    gx = np.zeros((gy.shape[0], gy.shape[1], h, w), dtype=gy.dtype)
    _avgpool_bwd(gy, size, stride, gx)
    return gx
