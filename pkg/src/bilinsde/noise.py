"""Reproducible Brownian increments.

Each path owns a Philox counter-based stream keyed by ``(seed, stream_id)``.
Increments for a path depend only on that key and the step index, never on
how many other paths are simulated alongside it or in which order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1


def philox_generator(seed: int, stream_id: int) -> np.random.Generator:
    key = np.array([int(seed) & _MASK64, int(stream_id) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class NoisePath:
    dt: float
    steps: int
    increments: np.ndarray  # (steps, d), variance dt per entry
    seed: int
    stream_id: int

    @classmethod
    def generate(cls, seed, stream_id, steps, dt, d) -> "NoisePath":
        gen = philox_generator(seed, stream_id)
        inc = gen.standard_normal((int(steps), int(d))) * np.sqrt(dt)
        inc.setflags(write=False)
        return cls(float(dt), int(steps), inc, int(seed), int(stream_id))

    @property
    def noise_dim(self) -> int:
        return self.increments.shape[1]


class StreamBank:
    """Block-wise increments for a batch of streams.

    Drawing ``(a, d)`` then ``(b, d)`` normals from one generator gives the
    same numbers as drawing ``(a + b, d)``, so block size has no effect on
    the values.
    """

    def __init__(self, seed, stream_ids, dt, d):
        self.seed = int(seed)
        self.stream_ids = [int(s) for s in stream_ids]
        self.sqrt_dt = np.sqrt(dt)
        self.d = int(d)
        self._gens = [philox_generator(seed, s) for s in self.stream_ids]

    def block(self, nsteps) -> np.ndarray:
        """Next ``nsteps`` increments for every stream, shape (P, nsteps, d)."""
        out = np.empty((len(self._gens), nsteps, self.d))
        for p, g in enumerate(self._gens):
            out[p] = g.standard_normal((nsteps, self.d))
        out *= self.sqrt_dt
        return out
