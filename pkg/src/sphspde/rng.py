"""Counter-based random streams keyed by logical indices.

Every normal variate used by a simulation is identified by
``(seed, purpose, realization, extra..., ell, m_signed)``. The key selects a
Philox stream, the degree selects a disjoint counter block, and the
position inside the block is the order ``m_signed = -ell..ell``. Draws
therefore do not depend on band limit, worker count or evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["CoefficientStream", "StreamFactory", "PURPOSES"]

PURPOSES = {
    "init": 1,
    "noise": 2,
    "step": 3,
    "increment": 4,
    "generic": 99,
}


@dataclass(frozen=True)
class StreamFactory:
    """Derives reproducible streams from one 64-bit seed."""

    seed: int = 0

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def key(self, purpose: str, realization: int, *extra: int) -> np.ndarray:
        spawn = (PURPOSES[purpose], int(realization), *map(int, extra))
        return np.random.SeedSequence(int(self.seed), spawn_key=spawn).generate_state(2, np.uint64)

    def stream(self, purpose: str, realization: int = 0, *extra: int) -> "CoefficientStream":
        return CoefficientStream(self, purpose, int(realization), tuple(int(e) for e in extra))

    def generator(self, purpose: str, realization: int = 0, *extra: int, block: int = 0) -> np.random.Generator:
        return _philox(self.key(purpose, realization, *extra), block)


def _philox(key: np.ndarray, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, int(block), 0]))


@dataclass(frozen=True)
class CoefficientStream:
    """Standard normals for one (purpose, realization, extra) key."""

    factory: StreamFactory
    purpose: str
    realization: int
    extra: tuple = ()
    _key: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "_key", self.factory.key(self.purpose, self.realization, *self.extra))

    def degree_normals(self, ell: int) -> np.ndarray:
        """``2 ell + 1`` normals for degree ``ell``, ordered by ``m_signed``."""
        # block 0 is left to `generator`; degree ell uses counter block ell + 1
        return _philox(self._key, ell + 1).standard_normal(2 * ell + 1)

    def standard_normal(self, L: int) -> np.ndarray:
        """Flat array of ``(L + 1)**2`` normals in coefficient order."""
        return np.concatenate([self.degree_normals(ell) for ell in range(L + 1)])


def draw_coefficient_normals(rng, L: int) -> np.ndarray:
    """Flat normals from a :class:`CoefficientStream` or a numpy Generator."""
    if isinstance(rng, CoefficientStream):
        return rng.standard_normal(L)
    if isinstance(rng, np.random.Generator):
        return rng.standard_normal((L + 1) ** 2)
    raise TypeError("rng must be a CoefficientStream or numpy Generator")
