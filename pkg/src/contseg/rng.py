"""Deterministic random numbers from a 64-bit splitmix generator.

Every random draw in the package flows through :class:`SplitMix64` so that
a (seed, key) pair reproduces bit-identical streams on any platform and in
any implementation language that follows the same constants:

    state   <- state + 0x9E3779B97F4A7C15          (per draw)
    z       <- state
    z       <- (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z       <- (z ^ (z >> 27)) * 0x94D049BB133111EB
    output  <- z ^ (z >> 31)

Uniform doubles take the top 53 bits: u = (output >> 11) * 2**-53.
Normals use the Box-Muller transform on pairs of uniforms.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """The splitmix64 finalizer; a bijection on 64-bit integers."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return z ^ (z >> 31)


def derive_seed(seed: int, key: int) -> int:
    """Child seed for stream `key`, a pure function of (seed, key).

    Used to give every dataset sample, class, or subsystem its own
    independent stream so generation order never matters.
    """
    return mix64((seed + (key + 1) * _GOLDEN) & _MASK)


def fold_name(name: str) -> int:
    """FNV-1a hash of a UTF-8 string, for seeding streams by name."""
    h = 0xCBF29CE484222325
    for byte in name.encode("utf-8"):
        h = ((h ^ byte) * 0x100000001B3) & _MASK
    return h


class SplitMix64:
    """Stateful splitmix64 stream with vectorized numpy output."""

    def __init__(self, seed: int):
        self.state = seed & _MASK

    def next_uint64(self, n: int) -> np.ndarray:
        counters = (self.state + (np.arange(1, n + 1, dtype=np.uint64)
                                  * np.uint64(_GOLDEN)))
        self.state = (self.state + n * _GOLDEN) & _MASK
        with np.errstate(over="ignore"):
            z = counters
            z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
            return z ^ (z >> np.uint64(31))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        bits = self.next_uint64(n)
        u = (bits >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        out = low + (high - low) * u
        return out.reshape(shape) if shape else float(out[0])

    def normal(self, shape=()) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        bits = self.next_uint64(2 * pairs)
        # u1 in (0, 1] keeps the log finite
        u1 = ((bits[:pairs] >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
        u2 = (bits[pairs:] >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else float(z[0])

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high] inclusive, by rejection-free modulo.

        The modulo bias is < 2**-40 for the span sizes used here.
        """
        n = int(np.prod(shape)) if shape else 1
        span = np.uint64(high - low + 1)
        bits = self.next_uint64(n)
        vals = (bits % span).astype(np.int64) + low
        return vals.reshape(shape) if shape else int(vals[0])

    def shuffle(self, n: int) -> np.ndarray:
        """A permutation of range(n) by Fisher-Yates on splitmix draws."""
        perm = np.arange(n)
        if n > 1:
            draws = self.next_uint64(n - 1)
            for i in range(n - 1, 0, -1):
                j = int(draws[n - 1 - i] % np.uint64(i + 1))
                perm[i], perm[j] = perm[j], perm[i]
        return perm

    def fork(self, key: int) -> "SplitMix64":
        """Independent child stream; does not consume from this stream."""
        return SplitMix64(mix64(self.state ^ mix64(key)))


def fan_in_uniform(rng: SplitMix64, shape: tuple[int, ...], fan_in: int,
                   scale: float = 1.0, dtype=np.float32) -> np.ndarray:
    """Weight init: uniform in +-scale * sqrt(6 / fan_in).

    The bound keeps activation variance roughly constant through layers of
    the relu-family nonlinearity used everywhere in the package.
    """
    bound = scale * np.sqrt(6.0 / float(fan_in))
    return rng.uniform(shape, -bound, bound).astype(dtype)
