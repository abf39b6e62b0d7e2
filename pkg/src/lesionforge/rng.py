"""Counter-based random streams.

Every random draw in the package comes from a :class:`numpy.random.Generator`
backed by Philox (a counter-based 64-bit generator). Streams are keyed by
``(seed, *keys)`` through :class:`numpy.random.SeedSequence`, so a child
stream depends only on its key path and never on how many values a sibling
consumed. String keys are folded to 32-bit integers with CRC32, which is
stable across processes and Python versions (unlike ``hash``).
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key(k):
    if isinstance(k, str):
        return zlib.crc32(k.encode("utf-8"))
    k = int(k)
    if k < 0:
        raise ValueError("stream keys must be non-negative")
    return k


def make_rng(seed, *keys):
    """Return a Philox generator for the stream ``(seed, *keys)``."""
    entropy = [int(seed) & _MASK64, *(_key(k) for k in keys)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def child_seed(seed, *keys):
    """Derive a 64-bit seed from a parent seed and a key path.

    This is the ``hash64(master_seed, item_index, stage_tag)`` used to hand
    each pipeline item its own reproducible seed.
    """
    entropy = [int(seed) & _MASK64, *(_key(k) for k in keys)]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def spawn(rng, n):
    """Split ``n`` independent child generators off ``rng``."""
    return rng.spawn(n)


def as_rng(rng):
    if rng is None:
        return make_rng(0)
    if isinstance(rng, np.random.Generator):
        return rng
    return make_rng(int(rng))
