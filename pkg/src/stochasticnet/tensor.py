"""Layer primitives with exact gradients, all float64 NCHW.

Masked layers compute with effective weights ``weights * mask``; the
returned weight gradient is already zero wherever the mask is zero.
Forward functions return ``(output, cache)`` and the matching backward
takes ``(upstream, cache)``.
"""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import kernels


def _as_bits(mask, shape):
    bits = getattr(mask, "bits", mask)
    bits = np.asarray(bits, dtype=bool)
    if bits.shape != tuple(shape):
        raise ValueError(f"mask shape {bits.shape} does not match weights {tuple(shape)}")
    return bits


def conv_output_size(size, k, stride, padding):
    return (size + 2 * padding - k) // stride + 1


@dataclass
class ConvCache:
    cols: np.ndarray
    x_shape: tuple
    w_eff: np.ndarray
    bits: np.ndarray
    stride: int
    padding: int
    out_hw: tuple


def im2col(x, k, stride, padding):
    """(N, C, H, W) -> (N, C * k * k, Ho * Wo) patch tensor."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo), (ho, wo)


def col2im(dcols, x_shape, k, stride, padding, out_hw):
    """Scatter-add a patch gradient (N, C * k * k, Ho * Wo) onto the input grid."""
    n, c, h, w = x_shape
    ho, wo = out_hw
    d = np.ascontiguousarray(dcols.reshape(n, c, k, k, ho, wo))
    dxp = kernels.col2im(d, h + 2 * padding, w + 2 * padding, stride)
    if padding:
        dxp = dxp[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(dxp)


def _input_grad_stride1(dout, w_eff, padding):
    # full correlation of the upstream gradient with the flipped kernel
    k = w_eff.shape[2]
    flipped = np.ascontiguousarray(w_eff[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    cols, (h, w) = im2col(dout, k, 1, k - 1 - padding)
    return (flipped.reshape(flipped.shape[0], -1) @ cols).reshape(dout.shape[0], -1, h, w)


def masked_conv2d_forward(x, weights, bias, mask, stride=1, padding=0):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or weights.ndim != 4:
        raise ValueError("conv expects NCHW input and (O, C, k, k) weights")
    o, c, k, k2 = weights.shape
    if k != k2:
        raise ValueError("only square kernels are supported")
    if x.shape[1] != c:
        raise ValueError(f"input has {x.shape[1]} channels, weights expect {c}")
    if bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} != ({o},)")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    ho = conv_output_size(x.shape[2], k, stride, padding)
    wo = conv_output_size(x.shape[3], k, stride, padding)
    if ho < 1 or wo < 1:
        raise ValueError(f"stride/padding give empty output ({ho}x{wo})")
    bits = _as_bits(mask, weights.shape)
    w_eff = weights * bits
    cols, (ho, wo) = im2col(x, k, stride, padding)
    out = w_eff.reshape(o, -1) @ cols
    out += bias[:, None]
    return out.reshape(x.shape[0], o, ho, wo), ConvCache(cols, x.shape, w_eff, bits, stride, padding, (ho, wo))


def masked_conv2d_backward(dout, cache, need_dx=True):
    """Returns (dx, dweights, dbias); dx is None when not requested."""
    o = cache.w_eff.shape[0]
    n = cache.x_shape[0]
    if dout.shape != (n, o) + tuple(cache.out_hw):
        raise ValueError(f"upstream gradient shape {dout.shape} does not match forward output")
    d3 = dout.reshape(n, o, -1)
    dw = np.matmul(d3, cache.cols.transpose(0, 2, 1)).sum(axis=0).reshape(cache.w_eff.shape)
    dw *= cache.bits
    db = d3.sum(axis=(0, 2))
    if not need_dx:
        return None, dw, db
    k = cache.w_eff.shape[2]
    if cache.stride == 1 and cache.padding <= k - 1:
        return _input_grad_stride1(dout, cache.w_eff, cache.padding), dw, db
    dcols = cache.w_eff.reshape(o, -1).T @ d3
    dx = col2im(dcols, cache.x_shape, k, cache.stride, cache.padding, cache.out_hw)
    return dx, dw, db


@dataclass
class AffineCache:
    x: np.ndarray
    w_eff: np.ndarray
    bits: np.ndarray


def masked_affine_forward(x, weights, bias, mask=None):
    """``x @ (weights * mask) + bias`` with weights shaped (in, out)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != weights.shape[0]:
        raise ValueError(f"input shape {x.shape} incompatible with weights {weights.shape}")
    if bias.shape != (weights.shape[1],):
        raise ValueError(f"bias shape {bias.shape} != ({weights.shape[1]},)")
    if mask is None:
        bits = None
        w_eff = weights
    else:
        bits = _as_bits(mask, weights.shape)
        w_eff = weights * bits
    return x @ w_eff + bias, AffineCache(x, w_eff, bits)


def masked_affine_backward(dout, cache):
    if dout.shape != (cache.x.shape[0], cache.w_eff.shape[1]):
        raise ValueError(f"upstream gradient shape {dout.shape} does not match forward output")
    dw = cache.x.T @ dout
    if cache.bits is not None:
        dw *= cache.bits
    return dout @ cache.w_eff.T, dw, dout.sum(axis=0)


def maxpool2x2_forward(x):
    if x.ndim != 4 or x.shape[2] % 2 or x.shape[3] % 2:
        raise ValueError(f"2x2 pooling needs even spatial dims, got {x.shape}")
    out, arg = kernels.maxpool_fwd(np.ascontiguousarray(x))
    return out, arg


def maxpool2x2_backward(dout, arg):
    """Each window's gradient goes to its first maximal element in scan order."""
    if dout.shape != arg.shape:
        raise ValueError("upstream gradient does not match pooled shape")
    return kernels.maxpool_bwd(np.ascontiguousarray(dout), arg)


def relu_forward(x):
    return np.maximum(x, 0.0), x > 0.0


def relu_backward(dout, positive):
    return dout * positive


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[0] == 0:
        raise ValueError("need a non-empty (batch, classes) logit array")
    n, classes = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} != ({n},)")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    loss = -log_p[rows, labels].mean()
    dlogits = np.exp(log_p)
    dlogits[rows, labels] -= 1.0
    dlogits /= n
    return float(loss), dlogits
