"""Seedable counter-based random numbers (SplitMix64).

The i-th 64-bit output of a stream with key ``seed`` is
``mix(seed + i * 0x9E3779B97F4A7C15)`` for i = 1, 2, ... (mod 2**64), where
``mix`` is the SplitMix64 finalizer. Uniforms take the top 53 bits; normals
come from Box-Muller on consecutive uniform pairs (u1, u2):

    z0 = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)
    z1 = sqrt(-2 ln(1 - u1)) * sin(2 pi u2)

emitted in the order z0, z1. This is small enough to reimplement anywhere, so
synthetic data can be regenerated bit-for-bit outside Python.
"""
import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def derive_seed(seed, index):
    """Per-item stream key, ``seed XOR index``; serial and parallel runs agree."""
    return (int(seed) ^ int(index)) & MASK64


class SplitMix64:
    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self, n):
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + idx * GAMMA)

    def uniform(self, shape=None):
        n = 1 if shape is None else int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return u[0] if shape is None else u.reshape(shape)

    def normal(self, shape):
        n = int(np.prod(shape))
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[0::2]))
        theta = 2.0 * np.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def permutation(self, n):
        return np.argsort(self.uniform(n), kind="stable")

    def integers(self, low, high, size):
        """Integers in [low, high)."""
        u = self.uniform(size)
        return np.minimum(low + np.floor(u * (high - low)).astype(np.int64), high - 1)
