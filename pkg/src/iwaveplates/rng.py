"""Reproducible Poisson variates from a counter-based 64-bit stream.

numpy's ``Generator.poisson`` algorithm may change between numpy releases;
only the raw bit-generator output is guaranteed stable. Poisson variates are
therefore drawn here from Philox-4x64 raw words with a fixed algorithm:

* mean < 30: sequential inverse transform;
* mean >= 30: Hormann's transformed rejection with squeeze (PTRS).
"""

from __future__ import annotations

import math

import numpy as np

INVERSION_LIMIT = 30.0
_TWO_M53 = 2.0**-53


class PoissonStream:
    """Deterministic Poisson sampler keyed by an integer seed.

    ``PoissonStream(seed, stream=k)`` gives independent streams for the same
    seed (for per-trial derived seeds).
    """

    def __init__(self, seed: int, stream: int = 0):
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self._bits = np.random.Philox(key=[seed & (2**64 - 1), stream & (2**64 - 1)])
        self._buf = np.empty(0, dtype=np.uint64)
        self._pos = 0

    def uniform(self) -> float:
        """Double in [0, 1) from the top 53 bits of one raw word."""
        if self._pos >= len(self._buf):
            self._buf = self._bits.random_raw(256)
            self._pos = 0
        word = int(self._buf[self._pos])
        self._pos += 1
        return (word >> 11) * _TWO_M53

    random = uniform

    def poisson(self, mean: float) -> int:
        if not mean >= 0 or not math.isfinite(mean):
            raise ValueError(f"Poisson mean must be finite and >= 0, got {mean!r}")
        if mean == 0:
            return 0
        if mean < INVERSION_LIMIT:
            return self._inversion(mean)
        return self._ptrs(mean)

    def poisson_array(self, means) -> np.ndarray:
        means = np.asarray(means, dtype=float)
        flat = [self.poisson(float(m)) for m in means.ravel()]
        return np.array(flat, dtype=np.int64).reshape(means.shape)

    def _inversion(self, mean: float) -> int:
        u = self.uniform()
        k = 0
        p = math.exp(-mean)
        cdf = p
        while u > cdf:
            k += 1
            p *= mean / k
            cdf += p
            if p < 1e-300 and cdf >= 1.0 - 1e-15:
                break
        return k

    def _ptrs(self, mean: float) -> int:
        slam = math.sqrt(mean)
        loglam = math.log(mean)
        b = 0.931 + 2.53 * slam
        a = -0.059 + 0.02483 * b
        inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2)
        while True:
            u = self.uniform() - 0.5
            v = self.uniform()
            us = 0.5 - abs(u)
            if us == 0.0:
                continue
            k = math.floor((2 * a / us + b) * u + mean + 0.43)
            if us >= 0.07 and v <= vr:
                return k
            if k < 0 or (us < 0.013 and v > us):
                continue
            if (math.log(v) + math.log(inv_alpha) - math.log(a / (us * us) + b)
                    <= -mean + k * loglam - math.lgamma(k + 1)):
                return k
