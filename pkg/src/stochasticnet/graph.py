"""Random graph realization.

Undirected graphs follow the Gilbert model (one probability for every pair)
or its generalization (one probability per pair). Layered feed-forward
graphs are directed and only ever connect layer ``i`` to layer ``i + 1``.

All layer and neuron indices are 0-based.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng


@dataclass(frozen=True)
class EdgeSet:
    n_vertices: int
    edges: tuple  # sorted (i, j) pairs with i < j

    def __post_init__(self):
        if self.n_vertices < 1:
            raise ValueError("n_vertices must be >= 1")
        seen = set()
        for i, j in self.edges:
            if i == j:
                raise ValueError(f"self-loop at vertex {i}")
            if not (0 <= i < self.n_vertices and 0 <= j < self.n_vertices):
                raise ValueError(f"edge ({i}, {j}) out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge {key}")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))

    def __len__(self):
        return len(self.edges)

    def __contains__(self, pair):
        i, j = pair
        return (min(i, j), max(i, j)) in set(self.edges)


def _pair_indices(n):
    """Upper-triangle (i, j) arrays in the canonical candidate order."""
    i, j = np.triu_indices(n, k=1)
    return i, j


def _check_n(n):
    if int(n) != n or n < 1:
        raise ValueError(f"vertex count must be a positive integer, got {n!r}")
    return int(n)


def realize_gilbert(n, p, seed):
    """Sample G(n, p): each of the n(n-1)/2 pairs joins with probability p."""
    n = _check_n(n)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    i, j = _pair_indices(n)
    u = rng.uniforms(seed, rng.GRAPH, i.size)
    keep = u < p
    return EdgeSet(n, tuple(zip(i[keep].tolist(), j[keep].tolist())))


def realize_generalized(n, prob, seed):
    """Sample G(V, p_ij) from an n x n probability table.

    Pair {i, j} with i < j uses ``prob[i][j]``; the diagonal and the lower
    triangle are not read. Candidate pairs are numbered exactly as in
    :func:`realize_gilbert`, so a constant table reproduces it for the same
    seed.
    """
    n = _check_n(n)
    table = np.asarray(prob, dtype=float)
    if table.shape != (n, n):
        raise ValueError(f"probability table must be {n}x{n}, got shape {table.shape}")
    i, j = _pair_indices(n)
    p = table[i, j]
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probability table entries must lie in [0, 1]")
    u = rng.uniforms(seed, rng.GRAPH, i.size)
    keep = u < p
    return EdgeSet(n, tuple(zip(i[keep].tolist(), j[keep].tolist())))


@dataclass(frozen=True)
class LayeredGraphSpec:
    """Layer sizes plus the connection probability p(i, k, j, h).

    ``pair_probability(i, k, j, h)`` is the probability that neuron ``k`` of
    layer ``i`` connects to neuron ``h`` of layer ``j``.
    """
    layer_sizes: tuple
    pair_probability: Callable[[int, int, int, int], float]

    def __post_init__(self):
        sizes = tuple(int(m) for m in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("a layered graph needs at least 2 layers")
        if any(m < 1 for m in sizes):
            raise ValueError("every layer needs at least one neuron")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def uniform(cls, layer_sizes, p):
        """Probability ``p`` between adjacent layers, zero everywhere else."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {p}")

        def prob(i, k, j, h):
            return p if abs(i - j) == 1 else 0.0
        return cls(tuple(layer_sizes), prob)

    @property
    def n_layers(self):
        return len(self.layer_sizes)


@dataclass(frozen=True)
class LayeredGraph:
    spec: LayeredGraphSpec
    edges: tuple  # (src_layer, src_neuron, dst_layer, dst_neuron)

    def __len__(self):
        return len(self.edges)

    @property
    def layer_sizes(self):
        return self.spec.layer_sizes


def _check_feedforward_zero(spec):
    sizes = spec.layer_sizes
    for i, mi in enumerate(sizes):
        for j, mj in enumerate(sizes):
            if abs(i - j) == 1:
                continue
            for k in range(mi):
                for h in range(mj):
                    p = spec.pair_probability(i, k, j, h)
                    if p != 0.0:
                        raise ValueError(
                            f"pair_probability({i}, {k}, {j}, {h}) = {p}; "
                            "must be 0 for intra-layer and non-adjacent pairs")


def realize_layered(spec, seed):
    """Realize a feed-forward graph: edges (i, k) -> (i + 1, h) only.

    Candidates are numbered layer by layer, then by source neuron, then by
    destination neuron; candidate ``c`` is kept when its deviate falls below
    its probability.
    """
    _check_feedforward_zero(spec)
    sizes = spec.layer_sizes
    probs = []
    coords = []
    for i in range(len(sizes) - 1):
        for k in range(sizes[i]):
            for h in range(sizes[i + 1]):
                p = float(spec.pair_probability(i, k, i + 1, h))
                if not 0.0 <= p <= 1.0:
                    raise ValueError(f"pair_probability({i}, {k}, {i + 1}, {h}) = {p} outside [0, 1]")
                probs.append(p)
                coords.append((i, k, i + 1, h))
    u = rng.uniforms(seed, rng.GRAPH, len(probs))
    keep = u < np.asarray(probs)
    edges = tuple(c for c, kept in zip(coords, keep) if kept)
    return LayeredGraph(spec, edges)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_feedforward(graph):
    """List every edge that stays within a layer, skips a layer, or points
    at a neuron that does not exist. Never raises."""
    report = ValidationReport()
    try:
        sizes = graph.layer_sizes
    except Exception:
        sizes = None
    for edge in graph.edges:
        try:
            i, k, j, h = (int(v) for v in edge)
        except Exception:
            report.violations.append((edge, "malformed edge"))
            continue
        if i == j:
            report.violations.append((edge, "intra-layer"))
        elif j != i + 1:
            report.violations.append((edge, "non-adjacent layers"))
        elif sizes is not None and not (
                0 <= i < len(sizes) and 0 <= j < len(sizes)
                and 0 <= k < sizes[i] and 0 <= h < sizes[j]):
            report.violations.append((edge, "index out of range"))
    return report


# -- text format -------------------------------------------------------------

def format_layered(graph):
    lines = ["layers: " + " ".join(str(m) for m in graph.layer_sizes)]
    lines += [f"{i} {k} {j} {h}" for i, k, j, h in graph.edges]
    return "\n".join(lines) + "\n"


def parse_layered(text):
    """Inverse of :func:`format_layered`.

    The returned graph carries a spec whose probability function is unknown;
    it reports 0 for every pair and exists so the graph can be validated.
    """
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("layers:"):
        raise ValueError("missing 'layers:' header")
    sizes = tuple(int(v) for v in lines[0][len("layers:"):].split())
    edges = []
    for n, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 4:
            raise ValueError(f"line {n}: expected 'i k j h', got {ln!r}")
        edges.append(tuple(int(v) for v in parts))
    return LayeredGraph(LayeredGraphSpec(sizes, lambda i, k, j, h: 0.0), tuple(edges))


def format_edges(edge_set):
    lines = [f"vertices: {edge_set.n_vertices}"]
    lines += [f"{i} {j}" for i, j in edge_set.edges]
    return "\n".join(lines) + "\n"


def parse_edges(text):
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or not lines[0].startswith("vertices:"):
        raise ValueError("missing 'vertices:' header")
    n = int(lines[0][len("vertices:"):])
    edges = []
    for n_line, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != 2:
            raise ValueError(f"line {n_line}: expected 'i j', got {ln!r}")
        edges.append((int(parts[0]), int(parts[1])))
    return EdgeSet(n, tuple(edges))
