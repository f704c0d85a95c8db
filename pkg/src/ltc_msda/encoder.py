"""Feature extractor: a two-layer rectified dense stack with a hand-written backward pass."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TraceError
from .params import ParamSet, uniform_init


@dataclass
class EncoderParams(ParamSet):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        super().__post_init__()
        in_dim, hidden = self.W1.shape
        if self.b1.shape != (hidden,) or self.W2.shape[0] != hidden or self.b2.shape != (self.W2.shape[1],):
            raise ShapeError(
                f"inconsistent encoder shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def input_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def init(cls, rng, input_dim: int, feature_dim: int = 32, hidden_dim: int = 64) -> "EncoderParams":
        return cls(
            uniform_init(rng, input_dim, hidden_dim),
            np.zeros(hidden_dim),
            uniform_init(rng, hidden_dim, feature_dim),
            np.zeros(feature_dim),
        )


@dataclass
class EncodeTrace:
    token: int
    inputs: np.ndarray
    pre1: np.ndarray
    act1: np.ndarray
    pre2: np.ndarray


def encode(params: EncoderParams, inputs) -> tuple[np.ndarray, EncodeTrace]:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.input_dim:
        raise ShapeError(f"inputs {x.shape} do not match encoder input ({params.input_dim},)")
    pre1 = x @ params.W1 + params.b1
    act1 = np.maximum(pre1, 0.0)
    pre2 = act1 @ params.W2 + params.b2
    features = np.maximum(pre2, 0.0)
    return features, EncodeTrace(params.token, x, pre1, act1, pre2)


def encode_backward(params: EncoderParams, trace: EncodeTrace, grad_features):
    """Gradients of <grad_features, features> w.r.t. params and inputs."""
    if trace.token != params.token:
        raise TraceError("encode trace does not belong to these parameters")
    g = np.asarray(grad_features, dtype=np.float64)
    if g.shape != trace.pre2.shape:
        raise ShapeError(f"grad_features {g.shape} vs features {trace.pre2.shape}")
    g2 = g * (trace.pre2 > 0)
    gW2 = trace.act1.T @ g2
    gb2 = g2.sum(axis=0)
    g1 = (g2 @ params.W2.T) * (trace.pre1 > 0)
    gW1 = trace.inputs.T @ g1
    gb1 = g1.sum(axis=0)
    grad_inputs = g1 @ params.W1.T
    return EncoderParams(gW1, gb1, gW2, gb2), grad_inputs
