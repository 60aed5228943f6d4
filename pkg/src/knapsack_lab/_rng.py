"""Counter-based random substreams.

Every consumer draws from a Philox-4x64 generator whose 128-bit key packs
``(seed, index)`` and whose counter's top word carries a purpose tag. Path
``k`` therefore sees the same numbers no matter how paths are batched or
which worker thread produces them.
"""
import numpy as np

MASK64 = (1 << 64) - 1

# purpose tags, stored in the top word of the Philox counter
POLICY = 1
SDE = 2
BOOTSTRAP = 3
DITHER = 4
INSTANCES = 5


def substream(seed, index, purpose):
    key = (int(seed) & MASK64) | ((int(index) & MASK64) << 64)
    counter = np.array([0, 0, 0, purpose], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def uniforms(seed, start, stop, n, purpose=POLICY):
    """Rows ``start..stop-1`` of ``n`` uniforms each, one substream per row."""
    out = np.empty((stop - start, n))
    for row, k in enumerate(range(start, stop)):
        out[row] = substream(seed, k, purpose).random(n)
    return out


def normals(seed, start, stop, shape, purpose=SDE):
    out = np.empty((stop - start,) + tuple(shape))
    for row, k in enumerate(range(start, stop)):
        out[row] = substream(seed, k, purpose).standard_normal(shape)
    return out
