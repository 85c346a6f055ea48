"""Counter-based random streams.

Every stochastic decision in the library is addressed by ``(seed, stream,
index)``: the uniform deviate for candidate ``index`` depends on nothing
else, so realizations do not depend on iteration order.
"""
import numpy as np

# stream tags keep independent uses of one seed apart
GRAPH = 1
RF_MASK = 2
DENSE_MASK = 3
INIT = 4
SHUFFLE = 5
SUBSET = 6


def _generator(seed, stream, substream=0):
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), int(substream)])
    return np.random.Generator(np.random.Philox(ss))


def uniforms(seed, stream, count, substream=0):
    """The first ``count`` deviates of the stream, one per candidate index."""
    return _generator(seed, stream, substream).random(int(count))


def uniforms_at(seed, stream, indices, substream=0):
    """Deviates for an arbitrary set of candidate indices.

    Same value as ``uniforms(...)[indices]`` without materializing the prefix
    beyond the largest index requested.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return np.empty(0)
    return uniforms(seed, stream, int(indices.max()) + 1, substream)[indices]


def generator(seed, stream, substream=0):
    """A numpy Generator for draws that are not per-candidate (init, shuffles)."""
    return _generator(seed, stream, substream)


def derive_seed(base_seed, *keys):
    """Deterministic child seed from a base seed and integer keys."""
    ss = np.random.SeedSequence([int(base_seed) & 0xFFFFFFFFFFFFFFFF, *[int(k) for k in keys]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))
