"""Adam with bias correction, written as a pure function over ParamSets."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError, ShapeError
from .params import ParamSet

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class Moments:
    first: ParamSet
    second: ParamSet

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "Moments":
        return cls(params.zeros_like(), params.zeros_like())


def optimizer_update(params: ParamSet, grads: ParamSet, moments: Moments, learning_rate: float, step: int):
    """One Adam step; ``step`` is the 1-based count used for bias correction."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params.arrays(), grads.arrays(), moments.first.arrays(), moments.second.arrays()):
        if p.shape != g.shape or p.shape != m.shape or p.shape != v.shape:
            raise ShapeError(f"parameter {p.shape}, gradient {g.shape}, moments {m.shape}/{v.shape}")
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient")
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        m_hat = m / (1.0 - BETA1**step)
        v_hat = v / (1.0 - BETA2**step)
        new_p.append(p - learning_rate * m_hat / (np.sqrt(v_hat) + EPS))
        new_m.append(m)
        new_v.append(v)
    return params.replace(new_p), Moments(moments.first.replace(new_m), moments.second.replace(new_v))
