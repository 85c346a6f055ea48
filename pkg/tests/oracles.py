"""Independent reference computations used by the tests.

Nothing here imports the library's numerics; each oracle is written from
the definition so it can disagree with the implementation.
"""
import math

import numpy as np


def gaussian_cell(x, y, k):
    c = (k - 1) / 2
    s = k / 3
    return math.exp(-((x - c) ** 2 + (y - c) ** 2) / (2 * s * s))


def expected_inclusion(grid, in_channels):
    """Per-(channel, y, x) inclusion probability of a realized filter,
    including the empty-filter repair that sets the most probable tap of
    channel 0."""
    grid = np.asarray(grid, dtype=float)
    k = grid.shape[0]
    out = np.broadcast_to(grid, (in_channels, k, k)).copy()
    p_empty = float(np.prod((1.0 - grid) ** in_channels))
    y, x = np.unravel_index(int(np.argmax(grid)), grid.shape)
    out[0, y, x] += p_empty
    return out


def conv2d_direct(x, w, b, padding=0, stride=1):
    """Cross-correlation by explicit loops over output positions."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    out = np.empty((n, o, ho, wo))
    for i in range(ho):
        for j in range(wo):
            patch = xp[:, :, i * stride:i * stride + k, j * stride:j * stride + k]
            out[:, :, i, j] = np.einsum("nckl,ockl->no", patch, w) + b
    return out


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` with respect to array ``x`` (in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    """Norm-wise relative error, safe when both are zero."""
    num = np.linalg.norm(a - b)
    den = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return num / den
