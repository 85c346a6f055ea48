"""Sparse inference engine and latency benchmarks.

:func:`compile_sparse` turns a trained :class:`~stochasticnet.net.Network`
into a :class:`SparseExecutor` that stores only formed connections: per conv
layer a coordinate list of (filter, channel, dy, dx, weight), per affine
layer compressed rows. Work done at inference is therefore proportional to
the number of formed connections.
"""
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import net as N
from ._accel import backend_name


@dataclass(frozen=True, eq=False)
class ConvPlan:
    filt: np.ndarray
    chan: np.ndarray
    dy: np.ndarray
    dx: np.ndarray
    weight: np.ndarray
    group_ptr: np.ndarray
    bias: np.ndarray
    out_channels: int
    k: int
    padding: int

    @property
    def entries(self):
        return int(self.filt.size)


@dataclass(frozen=True, eq=False)
class AffinePlan:
    indptr: np.ndarray
    indices: np.ndarray
    values: np.ndarray
    bias: np.ndarray
    relu: bool

    @property
    def entries(self):
        return int(self.indices.size)


def _conv_plan(layer):
    w = layer.weight if layer.mask is None else layer.weight * layer.mask.bits
    bits = np.ones(w.shape, dtype=bool) if layer.mask is None else layer.mask.bits
    o, c, y, x = np.nonzero(bits)
    order = np.lexsort((o, x, y, c))  # group by tap (c, y, x)
    o, c, y, x = o[order], c[order], y[order], x[order]
    tap = (c * w.shape[2] + y) * w.shape[3] + x
    starts = np.flatnonzero(np.diff(tap)) + 1 if tap.size else np.empty(0, dtype=np.int64)
    group_ptr = np.concatenate([[0], starts, [tap.size]]).astype(np.int64)
    return ConvPlan(o.astype(np.int64), c.astype(np.int64), y.astype(np.int64), x.astype(np.int64),
                    np.ascontiguousarray(w[o, c, y, x]), group_ptr, layer.bias.copy(),
                    w.shape[0], w.shape[2], layer.padding)


def _affine_plan(layer, relu):
    w = layer.weight if layer.mask is None else layer.weight * layer.mask.bits
    bits = np.ones(w.shape, dtype=bool) if layer.mask is None else layer.mask.bits
    rows = bits.T  # (out, in)
    indptr = np.concatenate([[0], np.cumsum(rows.sum(axis=1))]).astype(np.int64)
    r, c = np.nonzero(rows)
    return AffinePlan(indptr, c.astype(np.int64), np.ascontiguousarray(w.T[r, c]), layer.bias.copy(), relu)


@dataclass(eq=False)
class SparseExecutor:
    plans: list
    input_shape: tuple
    backend: str = field(default_factory=backend_name)
    last_macs: int = 0

    @property
    def entries(self):
        return sum(p.entries for p in self.plans)

    def layer_entries(self):
        return [p.entries for p in self.plans]

    def expected_macs(self, batch):
        """Multiply-accumulates a batch must cost: formed connections times
        output positions for conv layers, formed connections for affine."""
        total = 0
        h, w = self.input_shape[1:]
        for p in self.plans:
            if isinstance(p, ConvPlan):
                total += p.entries * h * w
                h, w = h // 2, w // 2
            else:
                total += p.entries
        return total * batch

    def _run_chunk(self, x):
        k = kernels.BACKENDS[self.backend]
        macs = 0
        h = x
        for p in self.plans:
            if isinstance(p, ConvPlan):
                pad = p.padding
                xpad = np.pad(h, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else np.ascontiguousarray(h)
                ho = xpad.shape[2] - p.k + 1
                wo = xpad.shape[3] - p.k + 1
                out = np.empty((h.shape[0], p.out_channels, ho, wo))
                out[:] = p.bias[None, :, None, None]
                macs += k["sparse_conv"](xpad, out, p.filt, p.chan, p.dy, p.dx, p.weight, p.group_ptr, 1)
                np.maximum(out, 0.0, out=out)
                h, _ = k["maxpool_fwd"](out)
            else:
                if h.ndim == 4:
                    h = np.ascontiguousarray(h.reshape(h.shape[0], -1))
                out = np.empty((h.shape[0], p.bias.size))
                out[:] = p.bias
                macs += k["sparse_affine"](h, out, p.indptr, p.indices, p.values)
                if p.relu:
                    np.maximum(out, 0.0, out=out)
                h = out
        return h, int(macs)

    def run(self, x, threads=1):
        """Logits for a batch. ``threads > 1`` splits the batch across threads
        (numba kernels release the GIL); results do not depend on the split."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape[1:] != tuple(self.input_shape):
            raise ValueError(f"batch shape {x.shape[1:]} != {tuple(self.input_shape)}")
        if threads <= 1 or len(x) < 2:
            out, self.last_macs = self._run_chunk(x)
            return out
        chunks = np.array_split(x, min(threads, len(x)))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(self._run_chunk, chunks))
        self.last_macs = sum(m for _, m in results)
        return np.concatenate([o for o, _ in results])


def compile_sparse(net, backend=None):
    """Executor holding only the formed connections of ``net``."""
    plans = []
    for i, layer in enumerate(net.layers):
        if layer.kind == "conv":
            plans.append(_conv_plan(layer))
        else:
            plans.append(_affine_plan(layer, relu=i < len(net.layers) - 1))
    backend = backend or backend_name()
    if backend not in kernels.BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    return SparseExecutor(plans, net.config.input_shape, backend)


# -- timing --------------------------------------------------------------------

@dataclass
class LatencyStats:
    samples: list  # seconds per batch
    batch_size: int
    threads: int = 1

    @property
    def median(self):
        return float(np.median(self.samples))

    @property
    def q1(self):
        return float(np.percentile(self.samples, 25))

    @property
    def q3(self):
        return float(np.percentile(self.samples, 75))

    @property
    def iqr(self):
        return self.q3 - self.q1

    @property
    def per_image(self):
        return self.median / self.batch_size

    @property
    def repetitions(self):
        return len(self.samples)


def bench_inference(executor, batch_size=64, repetitions=20, warmup=2, threads=1, seed=0):
    """Time ``repetitions`` forward passes on a fixed random batch after
    ``warmup`` untimed ones."""
    if repetitions < 10:
        raise ValueError("repetitions must be >= 10")
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    x = np.random.default_rng(seed).standard_normal((batch_size,) + tuple(executor.input_shape))
    for _ in range(warmup):
        executor.run(x, threads)
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        executor.run(x, threads)
        samples.append(time.perf_counter() - t0)
    return LatencyStats(samples, batch_size, threads)


@dataclass
class BenchRow:
    density: float
    percentage: float
    stats: LatencyStats
    relative_time: float
    macs: int


@dataclass
class BenchReport:
    rows: list
    backend: str
    threads: int

    def csv(self):
        lines = ["percentage,median_latency_us,iqr_us,relative_time,batch,reps,threads"]
        for r in self.rows:
            lines.append(f"{r.percentage:.4f},{r.stats.median * 1e6:.3f},{r.stats.iqr * 1e6:.3f},"
                         f"{r.relative_time:.6f},{r.stats.batch_size},{r.stats.repetitions},{r.stats.threads}")
        return "\n".join(lines) + "\n"


def sweep_relative_time(net_config, densities, batch_size=64, repetitions=20, warmup=2,
                        backend=None, threads=1, kind=None):
    """Latency of the sparse executor at each density, relative to density 1.0."""
    densities = sorted(set(float(d) for d in densities))
    if not densities:
        raise ValueError("no densities given")
    if 1.0 not in densities:
        raise ValueError("densities must include 1.0 (the ConvNet baseline)")
    for d in densities:
        if not 0.0 < d <= 1.0:
            raise ValueError(f"density {d} outside (0, 1]")
    if repetitions < 10:
        raise ValueError("repetitions must be >= 10")
    if warmup < 1:
        raise ValueError("warmup must be >= 1")
    nets = [N.build_network(net_config.with_density(d, kind)) for d in densities]
    execs = [compile_sparse(net, backend) for net in nets]
    x = np.random.default_rng(0).standard_normal((batch_size,) + tuple(execs[0].input_shape))
    for ex in execs:
        for _ in range(warmup):
            ex.run(x, threads)
    # round-robin so slow drift in machine load hits every density alike
    samples = [[] for _ in execs]
    for _ in range(repetitions):
        for ex, acc in zip(execs, samples):
            t0 = time.perf_counter()
            ex.run(x, threads)
            acc.append(time.perf_counter() - t0)
    measured = [(d, 100.0 * net.connectivity, LatencyStats(s, batch_size, threads), ex.expected_macs(batch_size))
                for d, net, ex, s in zip(densities, nets, execs, samples)]
    base = next(m[2].median for m in measured if m[0] == 1.0)
    rows = [BenchRow(d, pct, st, 1.0 if d == 1.0 else st.median / base, macs)
            for d, pct, st, macs in measured]
    return BenchReport(rows, backend or backend_name(), threads)


def compare_backends(net, batch_size=64, repetitions=20, warmup=2):
    """Median latency of the same executor on each kernel backend."""
    out = {}
    for name in kernels.BACKENDS:
        out[name] = bench_inference(compile_sparse(net, name), batch_size, repetitions, warmup)
    return out


def machine_descriptor():
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "cpu_count": os.cpu_count(),
        "numpy": np.__version__,
        "backend": backend_name(),
    }
