"""Deterministic pseudo-random generator for reproducible experiments.

The experiment harness needs random streams that any implementation can
reproduce bit-for-bit, so instead of a library generator we use SplitMix64,
a published 64-bit-state generator with a one-line update rule:

    state   <- (state + 0x9E3779B97F4A7C15) mod 2^64
    z       <- state
    z       <- (z XOR (z >> 30)) * 0xBF58476D1CE4E5B9   mod 2^64
    z       <- (z XOR (z >> 27)) * 0x94D049BB133111EB   mod 2^64
    output  <- z XOR (z >> 31)

Doubles in [0, 1) take the top 53 bits: (output >> 11) * 2^-53.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX_1 = 0xBF58476D1CE4E5B9
MIX_2 = 0x94D049BB133111EB

_TO_DOUBLE = float(2.0**-53)


def _mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX_1) & MASK64
    z = ((z ^ (z >> 27)) * MIX_2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    """SplitMix64 stream seeded by a 64-bit integer.

    The output sequence is a pure function of the seed; ``uniform_block``
    produces exactly the same values as repeated ``uniform`` calls.
    """

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return _mix(self.state)

    def uniform(self, low: float = 0.0, high: float = 1.0) -> float:
        u = (self.next_u64() >> 11) * _TO_DOUBLE
        return low + (high - low) * u

    def uniform_block(self, n: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        """Vectorized batch of draws, identical to n sequential uniform() calls."""
        if n == 0:
            return np.empty(0)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        states = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
        z = states
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX_1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX_2)
        z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        u = (z >> np.uint64(11)).astype(np.float64) * _TO_DOUBLE
        return low + (high - low) * u

    def normal_block(self, n: int) -> np.ndarray:
        """Standard normal draws via Box-Muller on uniform pairs."""
        m = (n + 1) // 2
        u1 = self.uniform_block(m)
        u2 = self.uniform_block(m)
        # Guard the log against an exact zero draw.
        r = np.sqrt(-2.0 * np.log(np.maximum(u1, _TO_DOUBLE)))
        theta = 2.0 * np.pi * u2
        out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return out[:n]

    def unit_vector(self, dim: int) -> np.ndarray:
        """Uniform direction on the unit sphere in R^dim."""
        while True:
            v = self.normal_block(dim)
            norm = float(np.linalg.norm(v))
            if norm > 1e-12:
                return v / norm

    def spawn(self) -> "SplitMix64":
        """Child stream seeded from the next output of this stream."""
        return SplitMix64(self.next_u64())
