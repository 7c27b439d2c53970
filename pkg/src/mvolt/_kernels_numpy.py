"""Pure-numpy reference kernels (im2col convolutions, windowed pooling).

All kernels are batched NCHW and dtype-generic; the float64 path is used
by the finite-difference oracle. Selected as the active backend when
MVOLT_BACKEND=numpy or numba is unavailable.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(xp, kh, kw, stride):
    # xp: padded input (N, C, Hp, Wp) -> (N, Ho*Wo, C*kh*kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # (N,C,Ho',Wo',kh,kw)
    win = win[:, :, ::stride, ::stride]
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, ho * wo, c * kh * kw)
    return np.ascontiguousarray(cols), ho, wo


def conv2d_forward(x, w, b, stride, padding):
    n = x.shape[0]
    oc, ic, kh, kw = w.shape
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    y = cols @ w.reshape(oc, -1).T  # (N, Ho*Wo, O)
    y += b
    return y.transpose(0, 2, 1).reshape(n, oc, ho, wo)


def conv2d_backward(x, w, gy, stride, padding):
    n = x.shape[0]
    oc, ic, kh, kw = w.shape
    ho, wo = gy.shape[2], gy.shape[3]
    xp = x
    if padding:
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols, _, _ = _im2col(xp, kh, kw, stride)
    gy_flat = gy.reshape(n, oc, ho * wo)

    gw = np.einsum("nop,npk->ok", gy_flat, cols).reshape(w.shape)
    gb = gy.sum(axis=(0, 2, 3))

    # scatter column gradients back into the (padded) input plane
    dcols = (gy_flat.transpose(0, 2, 1) @ w.reshape(oc, -1)).reshape(
        n, ho, wo, ic, kh, kw
    )
    gxp = np.zeros_like(xp)
    for a in range(kh):
        for bcol in range(kw):
            gxp[:, :, a : a + ho * stride : stride, bcol : bcol + wo * stride : stride] += (
                dcols[:, :, :, :, a, bcol].transpose(0, 3, 1, 2)
            )
    if padding:
        gxp = gxp[:, :, padding:-padding, padding:-padding]
    return np.ascontiguousarray(gxp), gw, gb


def maxpool_forward(x, size, stride):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, size * size)
    # argmax keeps the first (lowest flat index) maximum: the tie rule
    local = flat.argmax(axis=4)
    y = np.take_along_axis(flat, local[..., None], axis=4)[..., 0]
    rows = (np.arange(ho) * stride)[:, None] + local // size
    cols = (np.arange(wo) * stride)[None, :] + local % size
    idx = (rows * w + cols).astype(np.int64)
    return np.ascontiguousarray(y), idx


def maxpool_backward(idx, gy, h, w, overlapping=False):
    n, c = gy.shape[0], gy.shape[1]
    gx = np.zeros(n * c * h * w, dtype=gy.dtype)
    base = (np.arange(n * c) * (h * w))[:, None]
    flat = (idx.reshape(n * c, -1) + base).ravel()
    if overlapping:
        # duplicate winners possible when windows overlap
        np.add.at(gx, flat, gy.ravel())
    else:
        gx[flat] += gy.ravel()
    return gx.reshape(n, c, h, w)


def avgpool_forward(x, size, stride):
    win = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.ascontiguousarray(win.mean(axis=(4, 5), dtype=x.dtype))


def avgpool_backward(gy, size, stride, h, w):
    n, c, ho, wo = gy.shape
    gx = np.zeros((n, c, h, w), dtype=gy.dtype)
    share = gy / gy.dtype.type(size * size)
    for a in range(size):
        for b in range(size):
            gx[:, :, a : a + ho * stride : stride, b : b + wo * stride : stride] += share
    return gx
