"""Portable random streams.

Every random draw in the package goes through :class:`Stream`. It reads raw
64-bit words from PCG64 and converts them with fixed formulas (53-bit
uniforms, Box-Muller normals, Floyd sampling), so a given seed produces the
same numbers on every platform and numpy release.
"""

from __future__ import annotations

import math

import numpy as np

_TWO_NEG_53 = 1.0 / (1 << 53)


def derive_seed(*keys: int | str) -> int:
    """Mix an ordered tuple of ints/strings into a 63-bit seed."""
    words: list[int] = []
    for key in keys:
        if isinstance(key, str):
            words.extend(key.encode("utf-8"))
            words.append(0xFFFF)
        else:
            if key < 0:
                raise ValueError("seed keys must be non-negative")
            words.append(int(key))
    state = np.random.SeedSequence(words).generate_state(2, dtype=np.uint32)
    return (int(state[0]) << 31) ^ int(state[1])


class Stream:
    """Seeded stream of uniforms, normals and integers."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError("seed must be non-negative")
        self.seed = int(seed)
        self._bits = np.random.PCG64(self.seed)

    def uniform(self) -> float:
        """One double in [0, 1)."""
        return (int(self._bits.random_raw()) >> 11) * _TWO_NEG_53

    def uniforms(self, n: int) -> np.ndarray:
        raw = self._bits.random_raw(n)
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def normal(self, mean: float = 0.0, std: float = 1.0) -> float:
        # Box-Muller, cosine branch only; two uniforms per draw.
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        z = math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)
        return mean + std * z

    def integer(self, n: int) -> int:
        """Uniform integer in {0, ..., n-1}."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.uniform() * n), n - 1)

    def sample_without_replacement(self, population: int, k: int) -> list[int]:
        """k distinct indices from range(population), Floyd's algorithm."""
        if not 0 <= k <= population:
            raise ValueError("k must lie in [0, population]")
        chosen: list[int] = []
        seen: set[int] = set()
        for j in range(population - k, population):
            t = self.integer(j + 1)
            pick = j if t in seen else t
            seen.add(pick)
            chosen.append(pick)
        return chosen

    def spawn(self, *keys: int | str) -> "Stream":
        """Independent child stream keyed by this stream's seed plus ``keys``."""
        return Stream(derive_seed(self.seed, *keys))
