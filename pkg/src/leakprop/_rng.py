"""Counter-based random streams shared by the compiled and pure-Python kernels.

Every simulated quantity is a pure function of a 64-bit key and a counter, so
episodes can be regenerated in isolation and both backends agree bit for bit.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
N_ANGLES = 360


def mix64(z):
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def substream(seed, *path):
    """Derive an independent stream key from a seed and a path of integers."""
    h = mix64((int(seed) & MASK64) + GOLDEN)
    for p in path:
        h = mix64(h ^ mix64((int(p) & MASK64) + GOLDEN))
    return h


def stream_u64(key, start, count):
    """Outputs ``start .. start+count-1`` of the SplitMix64 sequence seeded by ``key``."""
    with np.errstate(over="ignore"):
        t = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        z = np.uint64(key) + t * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))


def stream_uniform(key, start, count):
    """Doubles in [0, 1) with 53 random bits each."""
    return (stream_u64(key, start, count) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def actions(key, count):
    """Angle indices (degrees) for the first ``count`` steps of an episode."""
    return (stream_u64(key, 0, count) % np.uint64(N_ANGLES)).astype(np.int64)
