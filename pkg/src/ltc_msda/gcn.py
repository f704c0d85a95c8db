"""Two-layer graph convolution d -> d -> K with softmax output.

Both layers propagate with the same symmetrically normalized adjacency
D^-1/2 A D^-1/2. The forward pass broadcasts over leading batch axes so that
many small graphs can be evaluated at once; the backward pass is 2-D only.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGraphError, ShapeError, TraceError
from .params import ParamSet, uniform_init


@dataclass
class GcnParams(ParamSet):
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    def __post_init__(self):
        super().__post_init__()
        d = self.W1.shape[0]
        if self.W1.shape != (d, d) or self.b1.shape != (d,) or self.W2.shape[0] != d or self.b2.shape != (self.W2.shape[1],):
            raise ShapeError(
                f"inconsistent GCN shapes W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}"
            )

    @property
    def dim(self) -> int:
        return self.W1.shape[0]

    @property
    def num_classes(self) -> int:
        return self.W2.shape[1]

    @classmethod
    def init(cls, rng, dim: int, num_classes: int) -> "GcnParams":
        # Output layer starts at zero: an untrained model predicts uniformly.
        return cls(uniform_init(rng, dim, dim), np.zeros(dim), np.zeros((dim, num_classes)), np.zeros(num_classes))


@dataclass
class PredictionMatrix:
    P: np.ndarray
    proto_rows: range
    query_rows: range

    @property
    def queries(self) -> np.ndarray:
        return self.P[self.query_rows.start:self.query_rows.stop]

    @property
    def prototypes(self) -> np.ndarray:
        return self.P[self.proto_rows.start:self.proto_rows.stop]


@dataclass
class GcnTrace:
    token: int
    A_bar: np.ndarray
    A_hat: np.ndarray
    inv_sqrt_deg: np.ndarray
    F_bar: np.ndarray
    X1: np.ndarray
    U1: np.ndarray
    H1: np.ndarray
    X2: np.ndarray
    P: np.ndarray


def normalize_adjacency(A_bar, return_scale: bool = False):
    A_bar = np.asarray(A_bar, dtype=np.float64)
    deg = A_bar.sum(axis=-1)
    if (deg <= 0).any():
        raise DegenerateGraphError("adjacency has a row with non-positive degree")
    r = 1.0 / np.sqrt(deg)
    A_hat = A_bar * (r[..., :, None] * r[..., None, :])
    return (A_hat, r) if return_scale else A_hat


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def gcn_forward(params: GcnParams, F_bar, A_bar, proto_rows: range | None = None):
    F_bar = np.asarray(F_bar, dtype=np.float64)
    A_bar = np.asarray(A_bar, dtype=np.float64)
    n = F_bar.shape[-2]
    if F_bar.shape[-1] != params.dim:
        raise ShapeError(f"feature width {F_bar.shape[-1]} vs GCN width {params.dim}")
    if A_bar.shape[-2:] != (n, n) or A_bar.shape[:-2] != F_bar.shape[:-2]:
        raise ShapeError(f"adjacency {A_bar.shape} does not match features {F_bar.shape}")
    A_hat, r = normalize_adjacency(A_bar, return_scale=True)
    X1 = A_hat @ F_bar
    U1 = X1 @ params.W1 + params.b1
    H1 = np.maximum(U1, 0.0)
    X2 = A_hat @ H1
    P = softmax(X2 @ params.W2 + params.b2)
    if proto_rows is None:
        proto_rows = range(0, 0)
    pred = PredictionMatrix(P, proto_rows, range(proto_rows.stop, n))
    return pred, GcnTrace(params.token, A_bar, A_hat, r, F_bar, X1, U1, H1, X2, P)


def normalize_adjacency_backward(A_bar, inv_sqrt_deg, grad_A_hat):
    """Chain dL/dA_hat back to the raw (unnormalized) adjacency entries."""
    r = inv_sqrt_deg
    grad = grad_A_hat * r[:, None] * r[None, :]
    T = grad_A_hat * A_bar
    grad_r = T @ r + T.T @ r
    grad_deg = -0.5 * grad_r * r**3
    return grad + grad_deg[:, None]


def gcn_backward(params: GcnParams, trace: GcnTrace, grad_P):
    """Gradients of <grad_P, P> w.r.t. params, node features and raw adjacency."""
    if trace.token != params.token:
        raise TraceError("GCN trace does not belong to these parameters")
    if trace.P.ndim != 2:
        raise ShapeError("gcn_backward supports a single graph only")
    gP = np.asarray(grad_P, dtype=np.float64)
    if gP.shape != trace.P.shape:
        raise ShapeError(f"grad_P {gP.shape} vs P {trace.P.shape}")
    P = trace.P
    g_logits = P * (gP - (gP * P).sum(axis=1, keepdims=True))
    gW2 = trace.X2.T @ g_logits
    gb2 = g_logits.sum(axis=0)
    gX2 = g_logits @ params.W2.T
    g_A_hat = gX2 @ trace.H1.T
    gU1 = (trace.A_hat.T @ gX2) * (trace.U1 > 0)
    gW1 = trace.X1.T @ gU1
    gb1 = gU1.sum(axis=0)
    gX1 = gU1 @ params.W1.T
    g_A_hat += gX1 @ trace.F_bar.T
    grad_F_bar = trace.A_hat.T @ gX1
    grad_A_bar = normalize_adjacency_backward(trace.A_bar, trace.inv_sqrt_deg, g_A_hat)
    return GcnParams(gW1, gb1, gW2, gb2), grad_F_bar, grad_A_bar
