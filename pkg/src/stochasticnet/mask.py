"""Stochastic connectivity masks.

A receptive-field mask fixes, for every output filter, which (input channel,
row, column) taps of its k x k kernel exist. A dense mask does the same for
a fully connected layer. Masks are realized once from a seed and never
change afterwards.
"""
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import rng

UNIFORM = "uniform"
GAUSSIAN = "gaussian"
KINDS = (UNIFORM, GAUSSIAN)


@dataclass(frozen=True, eq=False)
class ProbabilityField:
    kind: str
    k: int
    target_density: float
    grid: np.ndarray  # (k, k) inclusion probability per kernel position

    @property
    def mean(self):
        return float(self.grid.mean())


def _gaussian_shape(k):
    c = (k - 1) / 2.0
    sigma = k / 3.0
    y, x = np.mgrid[0:k, 0:k].astype(float)
    return np.exp(-((x - c) ** 2 + (y - c) ** 2) / (2.0 * sigma ** 2))


def _calibrate(shape, target_density):
    """Scale ``shape`` so its mean is ``target_density``, capping cells at 1.

    Mass cut off by the cap is handed to the uncapped cells in proportion to
    their shape values until no cell exceeds 1.
    """
    total = target_density * shape.size
    clamped = np.zeros(shape.shape, dtype=bool)
    grid = shape * (total / shape.sum())
    while np.any(grid[~clamped] > 1.0):
        clamped |= grid >= 1.0
        free = ~clamped
        remaining = total - clamped.sum()
        grid = np.where(clamped, 1.0, 0.0)
        if free.any():
            grid[free] = shape[free] * (remaining / shape[free].sum())
    return grid


def build_probability_field(kind, k, target_density):
    """Per-position inclusion probabilities for a k x k receptive field.

    ``uniform`` puts ``target_density`` in every cell. ``gaussian`` is
    centered on the kernel with standard deviation k / 3, scaled so the mean
    probability equals ``target_density``.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}, got {kind!r}")
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    k = int(k)
    if not 0.0 < target_density <= 1.0:
        raise ValueError(f"target density must lie in (0, 1], got {target_density}")
    if kind == UNIFORM:
        grid = np.full((k, k), float(target_density))
    else:
        grid = _calibrate(_gaussian_shape(k), float(target_density))
    assert np.all(grid <= 1.0) and abs(grid.mean() - target_density) <= 1e-12, "calibration failed"
    grid.setflags(write=False)
    return ProbabilityField(kind, k, float(target_density), grid)


@dataclass(frozen=True, eq=False)
class ReceptiveFieldMask:
    bits: np.ndarray  # bool (out_channels, in_channels, k, k)

    @property
    def out_channels(self):
        return self.bits.shape[0]

    @property
    def in_channels(self):
        return self.bits.shape[1]

    @property
    def k(self):
        return self.bits.shape[2]

    @property
    def shape(self):
        return self.bits.shape

    def __eq__(self, other):
        return isinstance(other, ReceptiveFieldMask) and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True, eq=False)
class DenseMask:
    bits: np.ndarray  # bool (in_units, out_units)

    @property
    def in_units(self):
        return self.bits.shape[0]

    @property
    def out_units(self):
        return self.bits.shape[1]

    @property
    def shape(self):
        return self.bits.shape

    def __eq__(self, other):
        return isinstance(other, DenseMask) and np.array_equal(self.bits, other.bits)


def _freeze(bits):
    bits = np.ascontiguousarray(bits, dtype=bool)
    bits.setflags(write=False)
    return bits


def realize_rf_mask(field, out_channels, in_channels, seed, share_channels=False):
    """Draw a receptive-field mask from a probability field.

    Bit (o, c, y, x) is present with probability ``field.grid[y, x]``. With
    ``share_channels`` one spatial pattern per filter is drawn and reused
    for every input channel. A filter that comes out empty gets the single
    most probable tap (first in flat order on ties).
    """
    if out_channels < 1 or in_channels < 1:
        raise ValueError("channel counts must be >= 1")
    k = field.k
    if share_channels:
        u = rng.uniforms(seed, rng.RF_MASK, out_channels * k * k, substream=1)
        spatial = u.reshape(out_channels, 1, k, k) < field.grid
        bits = np.repeat(spatial, in_channels, axis=1)
    else:
        u = rng.uniforms(seed, rng.RF_MASK, out_channels * in_channels * k * k)
        bits = u.reshape(out_channels, in_channels, k, k) < field.grid
    empty = ~bits.reshape(out_channels, -1).any(axis=1)
    if empty.any():
        prob = np.broadcast_to(field.grid, (in_channels, k, k)).ravel()
        best = np.unravel_index(int(np.argmax(prob)), (in_channels, k, k))
        if share_channels:
            bits[empty, :, best[1], best[2]] = True
        else:
            bits[empty, best[0], best[1], best[2]] = True
    return ReceptiveFieldMask(_freeze(bits))


def realize_dense_mask(in_units, out_units, density, seed):
    """Bernoulli(density) connections from each input unit to each output unit.

    An output unit left with no inputs is wired to input 0.
    """
    if in_units < 1 or out_units < 1:
        raise ValueError("unit counts must be >= 1")
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    u = rng.uniforms(seed, rng.DENSE_MASK, in_units * out_units)
    bits = u.reshape(in_units, out_units) < density
    empty = ~bits.any(axis=0)
    bits[0, empty] = True
    return DenseMask(_freeze(bits))


def full_rf_mask(out_channels, in_channels, k):
    return ReceptiveFieldMask(_freeze(np.ones((out_channels, in_channels, k, k), dtype=bool)))


def full_dense_mask(in_units, out_units):
    return DenseMask(_freeze(np.ones((in_units, out_units), dtype=bool)))


def measured_density(mask):
    bits = mask.bits if hasattr(mask, "bits") else np.asarray(mask)
    return float(np.count_nonzero(bits)) / bits.size


# -- file format -------------------------------------------------------------
#
#   b"SNMK" | version u8 | kind u8 (0 dense, 1 receptive field)
#   dims as little-endian u32: dense (in, out); receptive field (out, in, k)
#   bit-packed payload, MSB first, row-major
#   crc32 of everything above, little-endian u32

MAGIC = b"SNMK"
VERSION = 1
KIND_DENSE = 0
KIND_RF = 1


class MaskFileError(ValueError):
    pass


class MaskHeaderError(MaskFileError):
    pass


class MaskTruncatedError(MaskFileError):
    pass


class MaskChecksumError(MaskFileError):
    pass


def serialize_mask(mask):
    if isinstance(mask, DenseMask):
        kind, dims = KIND_DENSE, mask.bits.shape
    elif isinstance(mask, ReceptiveFieldMask):
        kind, dims = KIND_RF, mask.bits.shape[:3]
    else:
        raise TypeError(f"not a mask: {type(mask).__name__}")
    body = MAGIC + struct.pack("<BB", VERSION, kind)
    body += struct.pack(f"<{len(dims)}I", *dims)
    body += np.packbits(mask.bits.ravel()).tobytes()
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_mask(data):
    data = bytes(data)
    if len(data) < 6:
        if MAGIC.startswith(data[:4]):
            raise MaskTruncatedError(f"stream too short for a header ({len(data)} bytes)")
        raise MaskHeaderError("bad magic")
    if data[:4] != MAGIC:
        raise MaskHeaderError(f"bad magic {data[:4]!r}")
    version, kind = struct.unpack_from("<BB", data, 4)
    if version != VERSION:
        raise MaskHeaderError(f"unsupported mask version {version}")
    if kind == KIND_DENSE:
        ndims = 2
    elif kind == KIND_RF:
        ndims = 3
    else:
        raise MaskHeaderError(f"unknown mask kind byte {kind}")
    header_end = 6 + 4 * ndims
    if len(data) < header_end:
        raise MaskTruncatedError("stream ends inside the dimension header")
    dims = struct.unpack_from(f"<{ndims}I", data, 6)
    if any(d < 1 for d in dims):
        raise MaskHeaderError(f"invalid dimensions {dims}")
    shape = dims if kind == KIND_DENSE else (dims[0], dims[1], dims[2], dims[2])
    nbits = int(np.prod(shape))
    payload_end = header_end + (nbits + 7) // 8
    if len(data) < payload_end + 4:
        raise MaskTruncatedError(f"expected {payload_end + 4} bytes, got {len(data)}")
    if len(data) > payload_end + 4:
        raise MaskHeaderError(f"{len(data) - payload_end - 4} trailing bytes")
    (stored,) = struct.unpack_from("<I", data, payload_end)
    if zlib.crc32(data[:payload_end]) != stored:
        raise MaskChecksumError("checksum mismatch")
    packed = np.frombuffer(data, dtype=np.uint8, count=payload_end - header_end, offset=header_end)
    bits = np.unpackbits(packed, count=nbits).astype(bool).reshape(shape)
    if kind == KIND_DENSE:
        return DenseMask(_freeze(bits))
    return ReceptiveFieldMask(_freeze(bits))


def save_mask(mask, path):
    from .io import atomic_write_bytes
    atomic_write_bytes(path, serialize_mask(mask))


def load_mask(path):
    with open(path, "rb") as f:
        return deserialize_mask(f.read())
