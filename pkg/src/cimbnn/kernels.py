"""Hot inner loops: patch extraction, patch scatter-add and bit max-pooling.

Every kernel exists twice, a numba ``@njit`` version and a pure-numpy version.
Both accumulate in the same order, so they agree bit for bit. The numba path is
used when numba imports cleanly and ``CIMBNN_DISABLE_JIT`` is unset (or "0").

Layout conventions (row-major everywhere):
  images   (N, C, H, W)
  columns  (N, L, K) with L = H_out * W_out in (oy, ox) order and
           K = C * k * k in (c, ky, kx) order
"""
import os

import numpy as np

try:
    import numba
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    _HAVE_NUMBA = False

_DISABLED = os.environ.get("CIMBNN_DISABLE_JIT", "0").strip().lower() not in ("", "0", "false", "no")

USE_JIT = _HAVE_NUMBA and not _DISABLED
BACKEND = "numba" if USE_JIT else "numpy"


def _njit(fn):
    if not _HAVE_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def out_extent(size, kernel, stride, pad):
    return (size + 2 * pad - kernel) // stride + 1


# ---------------------------------------------------------------- numpy path

def im2col_numpy(x, kernel, stride, pad):
    n, c, h, w = x.shape
    oh = out_extent(h, kernel, stride, pad)
    ow = out_extent(w, kernel, stride, pad)
    img = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    col = np.empty((n, c, kernel, kernel, oh, ow), dtype=np.float64)
    for ky in range(kernel):
        y_end = ky + stride * oh
        for kx in range(kernel):
            x_end = kx + stride * ow
            col[:, :, ky, kx] = img[:, :, ky:y_end:stride, kx:x_end:stride]
    return np.ascontiguousarray(col.transpose(0, 4, 5, 1, 2, 3).reshape(n, oh * ow, c * kernel * kernel))


def col2im_numpy(cols, x_shape, kernel, stride, pad):
    n, c, h, w = x_shape
    oh = out_extent(h, kernel, stride, pad)
    ow = out_extent(w, kernel, stride, pad)
    col = cols.reshape(n, oh, ow, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for ky in range(kernel):
        y_end = ky + stride * oh
        for kx in range(kernel):
            x_end = kx + stride * ow
            img[:, :, ky:y_end:stride, kx:x_end:stride] += col[:, :, ky, kx]
    return img[:, :, pad:pad + h, pad:pad + w].copy()


def maxpool_numpy(x, size):
    n, c, h, w = x.shape
    oh, ow = h // size, w // size
    win = x.reshape(n, c, oh, size, ow, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh, ow, size * size)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg.astype(np.int64)


def maxpool_backward_numpy(grad, arg, size, x_shape):
    n, c, oh, ow = grad.shape
    win = np.zeros((n, c, oh, ow, size * size), dtype=np.float64)
    np.put_along_axis(win, arg[..., None], grad[..., None], axis=-1)
    gx = win.reshape(n, c, oh, ow, size, size).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, oh * size, ow * size)
    return gx


# ---------------------------------------------------------------- numba path

@_njit
def _im2col_loops(x, kernel, stride, pad, oh, ow):
    n, c, h, w = x.shape
    kk = kernel * kernel
    cols = np.zeros((n, oh * ow, c * kk))
    for b in range(n):
        for oy in range(oh):
            for ox in range(ow):
                row = oy * ow + ox
                for ci in range(c):
                    for ky in range(kernel):
                        iy = oy * stride + ky - pad
                        if iy < 0 or iy >= h:
                            continue
                        base = ci * kk + ky * kernel
                        for kx in range(kernel):
                            ix = ox * stride + kx - pad
                            if ix >= 0 and ix < w:
                                cols[b, row, base + kx] = x[b, ci, iy, ix]
    return cols


@_njit
def _col2im_loops(cols, n, c, h, w, kernel, stride, pad, oh, ow):
    kk = kernel * kernel
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    # (ky, kx) outermost per channel: same addition order as the numpy path
    for b in range(n):
        for ci in range(c):
            for ky in range(kernel):
                for kx in range(kernel):
                    k_idx = ci * kk + ky * kernel + kx
                    for oy in range(oh):
                        iy = oy * stride + ky
                        for ox in range(ow):
                            img[b, ci, iy, ox * stride + kx] += cols[b, oy * ow + ox, k_idx]
    return img[:, :, pad:pad + h, pad:pad + w].copy()


@_njit
def _maxpool_loops(x, size):
    n, c, h, w = x.shape
    oh = h // size
    ow = w // size
    out = np.empty((n, c, oh, ow))
    arg = np.empty((n, c, oh, ow), dtype=np.int64)
    for b in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    best = x[b, ci, oy * size, ox * size]
                    best_i = 0
                    for dy in range(size):
                        for dx in range(size):
                            v = x[b, ci, oy * size + dy, ox * size + dx]
                            if v > best:
                                best = v
                                best_i = dy * size + dx
                    out[b, ci, oy, ox] = best
                    arg[b, ci, oy, ox] = best_i
    return out, arg


@_njit
def _maxpool_backward_loops(grad, arg, size):
    n, c, oh, ow = grad.shape
    gx = np.zeros((n, c, oh * size, ow * size))
    for b in range(n):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    i = arg[b, ci, oy, ox]
                    gx[b, ci, oy * size + i // size, ox * size + i % size] = grad[b, ci, oy, ox]
    return gx


def im2col_jit(x, kernel, stride, pad):
    n, c, h, w = x.shape
    oh = out_extent(h, kernel, stride, pad)
    ow = out_extent(w, kernel, stride, pad)
    return _im2col_loops(np.ascontiguousarray(x, dtype=np.float64), kernel, stride, pad, oh, ow)


def col2im_jit(cols, x_shape, kernel, stride, pad):
    n, c, h, w = x_shape
    oh = out_extent(h, kernel, stride, pad)
    ow = out_extent(w, kernel, stride, pad)
    return _col2im_loops(np.ascontiguousarray(cols, dtype=np.float64), n, c, h, w, kernel, stride, pad, oh, ow)


def maxpool_jit(x, size):
    return _maxpool_loops(np.ascontiguousarray(x, dtype=np.float64), size)


def maxpool_backward_jit(grad, arg, size, x_shape):
    return _maxpool_backward_loops(np.ascontiguousarray(grad, dtype=np.float64), arg, size)


# ---------------------------------------------------------------- dispatch

if USE_JIT:
    im2col, col2im = im2col_jit, col2im_jit
    maxpool, maxpool_backward = maxpool_jit, maxpool_backward_jit
else:
    im2col, col2im = im2col_numpy, col2im_numpy
    maxpool, maxpool_backward = maxpool_numpy, maxpool_backward_numpy

IMPLEMENTATIONS = {
    "numpy": dict(im2col=im2col_numpy, col2im=col2im_numpy,
                  maxpool=maxpool_numpy, maxpool_backward=maxpool_backward_numpy),
    "numba": dict(im2col=im2col_jit, col2im=col2im_jit,
                  maxpool=maxpool_jit, maxpool_backward=maxpool_backward_jit),
}
