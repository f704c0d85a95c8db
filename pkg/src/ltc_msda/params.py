"""Named parameter containers shared by the encoder, the GCN and the optimizer."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, fields

import numpy as np

_tokens = itertools.count(1)


@dataclass
class ParamSet:
    """A fixed, ordered group of float64 arrays.

    Each instance carries a pass token; forward traces record it so that a
    backward pass against different or updated parameters is detected.
    Treat instances as values: build a new one instead of mutating arrays.
    """

    def __post_init__(self):
        for f in fields(self):
            setattr(self, f.name, np.asarray(getattr(self, f.name), dtype=np.float64))
        self.token = next(_tokens)

    @classmethod
    def names(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names()]

    def replace(self, arrays):
        return type(self)(*arrays)

    def zeros_like(self):
        return self.replace([np.zeros_like(a) for a in self.arrays()])

    def copy(self):
        return self.replace([a.copy() for a in self.arrays()])

    @property
    def size(self) -> int:
        return sum(a.size for a in self.arrays())

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def uniform_init(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))
