"""Hot loops, each in two flavours: a numba-compiled kernel and a pure-numpy
equivalent. The module-level names dispatch to whichever backend
``STOCHASTICNET_NUMBA`` selected at import; ``BACKENDS`` exposes both so the
benchmark can time them side by side.

Every kernel returns plain arrays; the sparse ones also return the number of
multiply-accumulates they actually performed.
"""
import numpy as np

from ._accel import USE_NUMBA, njit


# -- 2x2 max pooling ---------------------------------------------------------

@njit(cache=True, nogil=True)
def _maxpool_fwd_nb(x):
    n, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int8)
    for a in range(n):
        for b in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = x[a, b, 2 * i, 2 * j]
                    pos = 0
                    # scan order: (0,0) (0,1) (1,0) (1,1); strict > keeps the first max
                    for p in range(1, 4):
                        v = x[a, b, 2 * i + p // 2, 2 * j + p % 2]
                        if v > best:
                            best = v
                            pos = p
                    out[a, b, i, j] = best
                    arg[a, b, i, j] = pos
    return out, arg


@njit(cache=True, nogil=True)
def _maxpool_bwd_nb(dout, arg):
    n, c, ho, wo = dout.shape
    dx = np.zeros((n, c, 2 * ho, 2 * wo), dtype=dout.dtype)
    for a in range(n):
        for b in range(c):
            for i in range(ho):
                for j in range(wo):
                    p = arg[a, b, i, j]
                    dx[a, b, 2 * i + p // 2, 2 * j + p % 2] = dout[a, b, i, j]
    return dx


def _windows(x):
    n, c, h, w = x.shape
    return x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)


def _maxpool_fwd_np(x):
    win = _windows(x)
    arg = np.argmax(win, axis=-1).astype(np.int8)  # argmax returns the first max
    out = np.take_along_axis(win, arg[..., None].astype(np.intp), axis=-1)[..., 0]
    return out, arg


def _maxpool_bwd_np(dout, arg):
    n, c, ho, wo = dout.shape
    onehot = arg[..., None] == np.arange(4, dtype=np.int8)
    win = np.where(onehot, dout[..., None], 0.0)
    return win.reshape(n, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * ho, 2 * wo)


# -- col2im: scatter-add of patch gradients ---------------------------------

@njit(cache=True, nogil=True)
def _col2im_nb(d, hp, wp, stride):
    n, c, k, _, ho, wo = d.shape
    dx = np.zeros((n, c, hp, wp), dtype=d.dtype)
    for a in range(n):
        for b in range(c):
            for ky in range(k):
                for kx in range(k):
                    for i in range(ho):
                        for j in range(wo):
                            dx[a, b, i * stride + ky, j * stride + kx] += d[a, b, ky, kx, i, j]
    return dx


def _col2im_np(d, hp, wp, stride):
    n, c, k, _, ho, wo = d.shape
    dx = np.zeros((n, c, hp, wp), dtype=d.dtype)
    for ky in range(k):
        for kx in range(k):
            dx[:, :, ky:ky + stride * (ho - 1) + 1:stride, kx:kx + stride * (wo - 1) + 1:stride] += d[:, :, ky, kx]
    return dx


# -- sparse convolution: coordinate list gather-multiply-accumulate -----------
#
# Entries are sorted by tap (channel, dy, dx); ``group_ptr`` delimits runs of
# equal taps. Each entry contributes weight * shifted input to one filter.

@njit(cache=True, nogil=True)
def _sparse_conv_nb(xpad, out, filt, chan, dy, dx, weight, group_ptr, stride):
    n = xpad.shape[0]
    ho, wo = out.shape[2], out.shape[3]
    macs = 0
    for a in range(n):
        for e in range(filt.shape[0]):
            o = filt[e]
            c = chan[e]
            oy = dy[e]
            ox = dx[e]
            w = weight[e]
            for i in range(ho):
                r = i * stride + oy
                for j in range(wo):
                    out[a, o, i, j] += w * xpad[a, c, r, j * stride + ox]
            macs += ho * wo
    return macs


def _sparse_conv_np(xpad, out, filt, chan, dy, dx, weight, group_ptr, stride):
    ho, wo = out.shape[2], out.shape[3]
    macs = 0
    for g in range(len(group_ptr) - 1):
        s, e = group_ptr[g], group_ptr[g + 1]
        c, oy, ox = chan[s], dy[s], dx[s]
        patch = xpad[:, c, oy:oy + stride * (ho - 1) + 1:stride, ox:ox + stride * (wo - 1) + 1:stride]
        idx = filt[s:e]
        out[:, idx] += weight[s:e][None, :, None, None] * patch[:, None]
        macs += (e - s) * ho * wo * xpad.shape[0]
    return macs


# -- sparse affine: compressed rows, one row per output unit ----------------

@njit(cache=True, nogil=True)
def _sparse_affine_nb(x, out, indptr, indices, values):
    n = x.shape[0]
    macs = 0
    for a in range(n):
        for r in range(indptr.shape[0] - 1):
            acc = out[a, r]
            for q in range(indptr[r], indptr[r + 1]):
                acc += values[q] * x[a, indices[q]]
            out[a, r] = acc
        macs += indptr[indptr.shape[0] - 1]
    return macs


def _sparse_affine_np(x, out, indptr, indices, values):
    if indices.size == 0:
        return 0
    prod = x[:, indices] * values
    starts = indptr[:-1]
    nonempty = indptr[1:] > starts
    out[:, nonempty] += np.add.reduceat(prod, starts[nonempty], axis=1)
    return int(indices.size) * x.shape[0]


BACKENDS = {
    "numba": {
        "maxpool_fwd": _maxpool_fwd_nb,
        "maxpool_bwd": _maxpool_bwd_nb,
        "col2im": _col2im_nb,
        "sparse_conv": _sparse_conv_nb,
        "sparse_affine": _sparse_affine_nb,
    },
    "numpy": {
        "maxpool_fwd": _maxpool_fwd_np,
        "maxpool_bwd": _maxpool_bwd_np,
        "col2im": _col2im_np,
        "sparse_conv": _sparse_conv_np,
        "sparse_affine": _sparse_affine_np,
    },
}

_active = BACKENDS["numba" if USE_NUMBA else "numpy"]
maxpool_fwd = _active["maxpool_fwd"]
maxpool_bwd = _active["maxpool_bwd"]
col2im = _active["col2im"]
sparse_conv = _active["sparse_conv"]
sparse_affine = _active["sparse_affine"]
