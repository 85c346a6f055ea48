"""StochasticNet assembly: configuration, parameters, training step, checkpoints.

Topology, per conv stage: masked conv (same padding) -> ReLU -> 2x2 max pool.
After the last stage: flatten -> masked affine (hidden) -> ReLU -> dense
affine (classes). The classifier head is never masked.
"""
import json
import struct
import zlib
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import mask as masks
from . import rng
from . import tensor as T


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class ConvStage:
    filters: int
    k: int = 5
    kind: str = masks.GAUSSIAN
    density: float = 1.0


@dataclass(frozen=True)
class HiddenLayer:
    units: int = 64
    density: float = 1.0


@dataclass(frozen=True)
class NetConfig:
    input_shape: tuple = (1, 32, 32)
    conv_stages: tuple = (ConvStage(32), ConvStage(32), ConvStage(64))
    hidden: HiddenLayer = HiddenLayer()
    classes: int = 10
    init_seed: int = 0
    mask_seed: int = 0
    share_channels: bool = False

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        stages = tuple(s if isinstance(s, ConvStage) else ConvStage(**s) for s in self.conv_stages)
        object.__setattr__(self, "conv_stages", stages)
        if not isinstance(self.hidden, HiddenLayer):
            object.__setattr__(self, "hidden", HiddenLayer(**self.hidden))
        self.validate()

    def validate(self):
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be (channels, height, width), got {self.input_shape}")
        if self.classes < 2:
            raise ValueError("classes must be >= 2")
        h, w = self.input_shape[1:]
        for s in self.conv_stages:
            if s.kind not in masks.KINDS:
                raise ValueError(f"unknown connectivity kind {s.kind!r}")
            if not 0.0 < s.density <= 1.0:
                raise ValueError(f"conv density must lie in (0, 1], got {s.density}")
            if s.filters < 1 or s.k < 1 or s.k % 2 == 0:
                raise ValueError("conv stages need filters >= 1 and an odd kernel size")
            if h % 2 or w % 2:
                raise ValueError(f"spatial size {h}x{w} cannot be pooled 2x2")
            h, w = h // 2, w // 2
        if not 0.0 < self.hidden.density <= 1.0:
            raise ValueError(f"hidden density must lie in (0, 1], got {self.hidden.density}")
        if self.hidden.units < 1:
            raise ValueError("hidden units must be >= 1")

    @property
    def flat_size(self):
        c, h, w = self.input_shape
        for s in self.conv_stages:
            c, h, w = s.filters, h // 2, w // 2
        return c * h * w

    def with_density(self, density, kind=None):
        """Same architecture with one density applied to every masked layer."""
        stages = tuple(replace(s, density=density, kind=kind or s.kind) for s in self.conv_stages)
        return replace(self, conv_stages=stages, hidden=replace(self.hidden, density=density))

    def dense(self):
        """The ConvNet baseline: every connection formed."""
        return self.with_density(1.0)

    def weight_counts(self):
        """(masked-layer weight count, head weight count)."""
        c = self.input_shape[0]
        masked = 0
        for s in self.conv_stages:
            masked += s.filters * c * s.k * s.k
            c = s.filters
        masked += self.flat_size * self.hidden.units
        return masked, self.hidden.units * self.classes

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["conv_stages"] = tuple(ConvStage(**s) for s in d["conv_stages"])
        d["hidden"] = HiddenLayer(**d["hidden"])
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


def reference_config(in_channels=1, density=1.0, kind=masks.GAUSSIAN, **kw):
    """32/32/64 filters of 5x5 and a 64-unit hidden layer on 32x32 inputs.

    ``kind`` shapes the conv receptive fields; the hidden layer is uniform.
    """
    stages = tuple(ConvStage(f, 5, kind, density) for f in (32, 32, 64))
    return NetConfig(input_shape=(in_channels, 32, 32), conv_stages=stages,
                     hidden=HiddenLayer(64, density), **kw)


def solve_density(config, target):
    """Per-layer density giving an expected overall connectivity of ``target``.

    Overall connectivity counts the dense head in both numerator and
    denominator.
    """
    masked, head = config.weight_counts()
    d = (target * (masked + head) - head) / masked
    if not 0.0 < d <= 1.0:
        raise ValueError(f"connectivity {target} is not reachable with a dense head")
    return d


@dataclass
class Layer:
    kind: str  # "conv" | "affine"
    weight: np.ndarray
    bias: np.ndarray
    mask: object = None  # ReceptiveFieldMask | DenseMask | None (dense head)
    padding: int = 0
    v_weight: np.ndarray = None
    v_bias: np.ndarray = None

    def __post_init__(self):
        if self.v_weight is None:
            self.v_weight = np.zeros_like(self.weight)
        if self.v_bias is None:
            self.v_bias = np.zeros_like(self.bias)

    @property
    def bits(self):
        return None if self.mask is None else self.mask.bits

    @property
    def formed(self):
        return self.weight.size if self.mask is None else int(np.count_nonzero(self.mask.bits))


@dataclass
class Network:
    config: NetConfig
    layers: list
    steps: int = 0
    _caches: list = field(default=None, repr=False)

    @property
    def conv_layers(self):
        return [l for l in self.layers if l.kind == "conv"]

    @property
    def parameter_count(self):
        return sum(l.weight.size + l.bias.size for l in self.layers)

    @property
    def formed_connections(self):
        return sum(l.formed for l in self.layers)

    @property
    def dense_connections(self):
        return sum(l.weight.size for l in self.layers)

    @property
    def connectivity(self):
        """Formed / dense-equivalent weight count, dense head included."""
        return self.formed_connections / self.dense_connections

    @property
    def masked_connectivity(self):
        """Formed / dense-equivalent over the masked layers only."""
        ls = [l for l in self.layers if l.mask is not None]
        return sum(l.formed for l in ls) / sum(l.weight.size for l in ls)


def _glorot_bound(bits, kind):
    total = float(np.count_nonzero(bits))
    if kind == "conv":
        fan_in = total / bits.shape[0]
        fan_out = total / bits.shape[1]
    else:
        fan_in = total / bits.shape[1]
        fan_out = total / bits.shape[0]
    return np.sqrt(6.0 / (fan_in + fan_out))


def build_network(config):
    """Realize every mask from ``mask_seed`` and initialize from ``init_seed``.

    Weights get Glorot-uniform values with fan-in and fan-out counted over
    formed connections only; positions without a connection hold exactly 0.
    """
    config.validate()
    layers = []
    c = config.input_shape[0]
    for idx, s in enumerate(config.conv_stages):
        field_ = masks.build_probability_field(s.kind, s.k, s.density)
        m = masks.realize_rf_mask(field_, s.filters, c, rng.derive_seed(config.mask_seed, idx),
                                  share_channels=config.share_channels)
        layers.append(_init_layer("conv", (s.filters, c, s.k, s.k), m, config.init_seed, idx, s.k // 2))
        c = s.filters
    idx = len(config.conv_stages)
    hm = masks.realize_dense_mask(config.flat_size, config.hidden.units, config.hidden.density,
                                  rng.derive_seed(config.mask_seed, idx))
    layers.append(_init_layer("affine", (config.flat_size, config.hidden.units), hm, config.init_seed, idx))
    layers.append(_init_layer("affine", (config.hidden.units, config.classes), None, config.init_seed, idx + 1))
    return Network(config, layers)


def build_convnet(config):
    """The dense baseline for ``config``: same seeds, all connections formed."""
    return build_network(config.dense())


def _init_layer(kind, shape, mask, init_seed, idx, padding=0):
    bits = np.ones(shape, dtype=bool) if mask is None else mask.bits
    bound = _glorot_bound(bits, kind)
    g = rng.generator(init_seed, rng.INIT, substream=idx)
    weight = g.uniform(-bound, bound, size=shape) * bits
    bias = np.zeros(shape[0] if kind == "conv" else shape[1])
    return Layer(kind, weight, bias, mask, padding)


def forward(net, x, train=False):
    """Logits for a batch. With ``train=True`` activations are cached for
    :func:`backward`."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != net.config.input_shape:
        raise ValueError(f"batch shape {x.shape[1:]} != configured input {net.config.input_shape}")
    caches = []
    h = x
    for layer in net.layers:
        if layer.kind == "conv":
            h, cc = T.masked_conv2d_forward(h, layer.weight, layer.bias, layer.bits, 1, layer.padding)
            h, rc = T.relu_forward(h)
            h, pc = T.maxpool2x2_forward(h)
            caches.append((cc, rc, pc))
        else:
            if h.ndim == 4:
                h = h.reshape(h.shape[0], -1)
            h, ac = T.masked_affine_forward(h, layer.weight, layer.bias, layer.bits)
            rc = None
            if layer is not net.layers[-1]:
                h, rc = T.relu_forward(h)
            caches.append((ac, rc))
    net._caches = caches if train else None
    return h


def backward(net, dlogits):
    """Gradients ``[(dweight, dbias), ...]`` in layer order."""
    if net._caches is None:
        raise RuntimeError("backward() needs a preceding forward(..., train=True)")
    grads = [None] * len(net.layers)
    d = dlogits
    for i in range(len(net.layers) - 1, -1, -1):
        layer, cache = net.layers[i], net._caches[i]
        if layer.kind == "conv":
            cc, rc, pc = cache
            if d.ndim == 2:
                d = d.reshape(pc.shape[0], pc.shape[1], pc.shape[2], pc.shape[3])
            d = T.maxpool2x2_backward(d, pc)
            d = T.relu_backward(d, rc)
            d, dw, db = T.masked_conv2d_backward(d, cc, need_dx=i > 0)
        else:
            ac, rc = cache
            if rc is not None:
                d = T.relu_backward(d, rc)
            d, dw, db = T.masked_affine_backward(d, ac)
        grads[i] = (dw, db)
    net._caches = None
    return grads


def loss(net, x, labels):
    """Mean cross-entropy on a batch and the parameter gradients."""
    logits = forward(net, x, train=True)
    value, dlogits = T.softmax_cross_entropy(logits, labels)
    if not np.isfinite(value):
        net._caches = None
        raise DivergenceError(f"non-finite loss {value} after {net.steps} steps")
    return value, backward(net, dlogits)


def apply_update(net, grads, lr, momentum=0.9):
    """One SGD-with-momentum step, in place. Unformed connections stay 0."""
    for layer, (dw, db) in zip(net.layers, grads):
        if layer.mask is not None:
            dw = dw * layer.mask.bits
        layer.v_weight *= momentum
        layer.v_weight -= lr * dw
        layer.weight += layer.v_weight
        layer.v_bias *= momentum
        layer.v_bias -= lr * db
        layer.bias += layer.v_bias
    net.steps += 1
    return net


def predict(net, images, batch_size=128):
    out = [np.argmax(forward(net, images[i:i + batch_size]), axis=1)
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def error_rate(net, images, labels, batch_size=128):
    """Misclassified / total."""
    if len(labels) == 0:
        raise ValueError("cannot score an empty set")
    return float(np.count_nonzero(predict(net, images, batch_size) != np.asarray(labels))) / len(labels)


def mask_digest(net):
    """SHA-256 over every mask bit tensor, for permanence checks."""
    import hashlib
    h = hashlib.sha256()
    for layer in net.layers:
        if layer.mask is not None:
            h.update(masks.serialize_mask(layer.mask))
    return h.hexdigest()


# -- checkpoints -------------------------------------------------------------
#
#   b"SNCK" | version u8 | u32 length + NetConfig JSON | u64 steps | u32 layer count
#   per layer: u8 kind (0 conv, 1 affine) | u32 padding | u32 length + mask bytes (0 = none)
#              | u8 ndim | u32 dims | float64 LE weight, bias, weight velocity, bias velocity
#   crc32 of everything above, u32 LE

CK_MAGIC = b"SNCK"
CK_VERSION = 1


class CheckpointError(ValueError):
    pass


class CheckpointFormatError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


def _f64(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def checkpoint_bytes(net):
    cfg = json.dumps(net.config.to_dict(), sort_keys=True).encode()
    out = [CK_MAGIC, struct.pack("<B", CK_VERSION), struct.pack("<I", len(cfg)), cfg,
           struct.pack("<QI", net.steps, len(net.layers))]
    for layer in net.layers:
        mb = b"" if layer.mask is None else masks.serialize_mask(layer.mask)
        out.append(struct.pack("<BII", 0 if layer.kind == "conv" else 1, layer.padding, len(mb)))
        out.append(mb)
        out.append(struct.pack("<B", layer.weight.ndim))
        out.append(struct.pack(f"<{layer.weight.ndim}I", *layer.weight.shape))
        out += [_f64(layer.weight), _f64(layer.bias), _f64(layer.v_weight), _f64(layer.v_bias)]
    body = b"".join(out)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(net, path):
    from .io import atomic_write_bytes
    atomic_write_bytes(path, checkpoint_bytes(net))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointCorruptError("checkpoint truncated")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count):
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def network_from_bytes(data):
    data = bytes(data)
    if data[:4] != CK_MAGIC:
        raise CheckpointFormatError(f"not a checkpoint (magic {data[:4]!r})")
    if len(data) < 9:
        raise CheckpointCorruptError("checkpoint truncated")
    (version,) = struct.unpack_from("<B", data, 4)
    if version != CK_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version}, expected {CK_VERSION}")
    (stored,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) != stored:
        raise CheckpointCorruptError("checkpoint checksum mismatch")
    r = _Reader(data[:-4])
    r.take(5)
    (n_cfg,) = r.unpack("<I")
    config = NetConfig.from_dict(json.loads(r.take(n_cfg)))
    steps, n_layers = r.unpack("<QI")
    layers = []
    for _ in range(n_layers):
        kind, padding, n_mask = r.unpack("<BII")
        m = masks.deserialize_mask(r.take(n_mask)) if n_mask else None
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape))
        nb = shape[0] if kind == 0 else shape[1]
        w = r.floats(size).reshape(shape)
        b = r.floats(nb)
        vw = r.floats(size).reshape(shape)
        vb = r.floats(nb)
        layers.append(Layer("conv" if kind == 0 else "affine", w, b, m, padding, vw, vb))
    if r.pos != len(r.data):
        raise CheckpointCorruptError("trailing bytes in checkpoint")
    return Network(config, layers, steps)


def load_checkpoint(path):
    with open(path, "rb") as f:
        return network_from_bytes(f.read())
