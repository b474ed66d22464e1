"""Counter-based random streams.

Every random quantity is a pure function of (seed, stream, position), so
results do not depend on evaluation order or on how work is split up.
Stream 0 of a seed feeds the environment sampler (one uniform per edge);
stream 1 + k drives Monte Carlo replica k.
"""

import numpy as np

MASK64 = (1 << 64) - 1
ENV_STREAM = 0


def _key(seed, stream):
    return np.array([int(seed) & MASK64, int(stream) & MASK64], dtype=np.uint64)


def generator(seed, stream):
    """Fresh Philox generator for (seed, stream)."""
    return np.random.Generator(np.random.Philox(key=_key(seed, stream)))


def replica_generator(seed, replica):
    return generator(seed, 1 + int(replica))


def uniforms(seed, stream, start, count):
    """Draws start .. start+count-1 of the stream's [0, 1) sequence."""
    bitgen = np.random.Philox(key=_key(seed, stream))
    # each Philox counter step yields four 64-bit outputs, one double each
    bitgen.advance(start // 4)
    gen = np.random.Generator(bitgen)
    skip = start % 4
    if skip:
        gen.random(skip)
    return gen.random(count)
