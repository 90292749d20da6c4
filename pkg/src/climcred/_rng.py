"""Counter-based random-number substreams.

Paths are generated in fixed-size chunks; chunk c draws from a Philox
generator whose 256-bit counter starts at c * 2^192. Chunk boundaries do not
depend on the worker count or on the total path count, so a given seed yields
the same trajectories serially and in parallel, and the first paths of a
large run coincide with those of a small one.
"""

import numpy as np

CHUNK_SIZE = 1024


def chunk_generator(seed: int, chunk_index: int) -> np.random.Generator:
    """Independent generator for one chunk of paths."""
    bitgen = np.random.Philox(key=seed, counter=[0, 0, 0, chunk_index])
    return np.random.Generator(bitgen)


def chunk_bounds(n_paths: int):
    """Yield (chunk_index, start, stop) covering range(n_paths)."""
    for c, start in enumerate(range(0, n_paths, CHUNK_SIZE)):
        yield c, start, min(start + CHUNK_SIZE, n_paths)
