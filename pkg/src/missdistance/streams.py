"""Counter-based random substreams.

Every random draw is addressed by ``(seed, stream, *counters)`` so results do not
depend on how work is split across processes.
"""

import numpy as np

BLOCK_SIZE = 4096

# stream tags keep independent experiments from sharing draws
BIAS_STUDY = 1
PLANAR_COVERAGE = 2
SIX_DIM_COVERAGE = 3
RESTARTS = 4


def substream(seed, stream, *counters):
    """Generator for one addressed substream (Philox, keyed by a SeedSequence)."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(stream), *(int(c) for c in counters)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def block_ranges(n, block_size=BLOCK_SIZE):
    """Half-open index ranges covering ``range(n)`` in fixed-size blocks."""
    return [(start, min(start + block_size, n)) for start in range(0, n, block_size)]


def normal_block(seed, stream, block, size, dim):
    """Standard normal draws of shape ``(size, dim)`` for one block."""
    return substream(seed, stream, block).standard_normal((size, dim))


def normal_draws(seed, stream, n, dim, block_size=BLOCK_SIZE):
    """Concatenation of the blocks covering ``n`` draws."""
    parts = [
        normal_block(seed, stream, i, stop - start, dim)
        for i, (start, stop) in enumerate(block_ranges(n, block_size))
    ]
    return np.concatenate(parts) if parts else np.empty((0, dim))
