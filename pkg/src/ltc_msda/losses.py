"""Relation alignment and classification losses with their gradients.

Classification losses return gradients with respect to the probability
matrix P (same shape as P); chaining through the softmax happens in
``gcn_backward``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ColdStartError, ConfigError, LabelError, PartitionError, ProbabilityError, ShapeError
from .gcn import PredictionMatrix

LAMBDA1 = 20.0
LAMBDA2 = 0.001
PROB_FLOOR = 1e-12
NORM_FLOOR = 1e-12

TERMS = ("ral_global", "ral_local", "cls_proto", "cls_src", "cls_tgt")


@dataclass(frozen=True)
class LossReport:
    ral_global: float
    ral_local: float
    cls_proto: float
    cls_src: float
    cls_tgt: float
    lambda1: float
    lambda2: float
    ral_total: float
    cls_total: float

    def parts(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in TERMS}


def assemble_report(parts: dict, lambda1: float = LAMBDA1, lambda2: float = LAMBDA2) -> LossReport:
    for name, lam in (("lambda1", lambda1), ("lambda2", lambda2)):
        if not lam >= 0:
            raise ConfigError(name, f"must be >= 0, got {lam}")
    values = {name: float(parts[name]) for name in TERMS}
    return LossReport(
        **values,
        lambda1=float(lambda1),
        lambda2=float(lambda2),
        ral_total=lambda1 * values["ral_global"] + lambda2 * values["ral_local"],
        cls_total=values["cls_proto"] + values["cls_src"] + values["cls_tgt"],
    )


def _blocks(A, M: int, K: int) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    n = (M + 1) * K
    if A.shape != (n, n):
        raise PartitionError(f"adjacency {A.shape} cannot be split into {(M + 1)}x{(M + 1)} blocks of {K}x{K}")
    D = M + 1
    # blocks[i, j] = A[iK:(i+1)K, jK:(j+1)K]
    return A.reshape(D, K, D, K).transpose(0, 2, 1, 3)


def global_relation_loss(A, M: int, K: int):
    """Mean Frobenius distance over all ordered pairs of K x K blocks of A.

    The sum runs over (M+1)^4 index quadruples, identical pairs included, and
    is divided by (M+1)^4.
    """
    D = M + 1
    blocks = _blocks(A, M, K).reshape(D * D, K, K)
    diff = blocks[:, None] - blocks[None, :]
    norms = np.sqrt(np.einsum("abij,abij->ab", diff, diff))
    value = norms.sum() / D**4
    unit = diff / np.maximum(norms, NORM_FLOOR)[:, :, None, None]
    # each block appears as the first and (negated) as the second member of a pair
    g_blocks = 2.0 * unit.sum(axis=1) / D**4
    grad_A = g_blocks.reshape(D, D, K, K).transpose(0, 2, 1, 3).reshape(D * K, D * K)
    return float(value), grad_A


def local_relation_loss(features, labels, domains, mask, prototypes, initialized, batch_size: int):
    """Squared distance of each masked row to its (domain, class) prototype, over |B|."""
    z = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    dom = np.asarray(domains, dtype=np.int64)
    keep = np.asarray(mask, dtype=bool)
    if y.shape != (z.shape[0],) or dom.shape != y.shape or keep.shape != y.shape:
        raise ShapeError("features, labels, domains and mask must share their row count")
    num_classes = prototypes.shape[1]
    if keep.any() and (y[keep].min() < 0 or y[keep].max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    used = set(zip(dom[keep].tolist(), y[keep].tolist()))
    missing = sorted((m, k) for m, k in used if not initialized[m, k])
    if missing:
        raise ColdStartError(missing)
    grad = np.zeros_like(z)
    if not keep.any():
        return 0.0, grad
    diff = z[keep] - prototypes[dom[keep], y[keep]]
    value = np.einsum("ij,ij->", diff, diff) / batch_size
    grad[keep] = 2.0 * diff / batch_size
    return float(value), grad


def _check_simplex(P: np.ndarray, rows) -> None:
    sub = P[rows]
    bad = np.flatnonzero(np.abs(sub.sum(axis=1) - 1.0) > 1e-6)
    if bad.size:
        raise ProbabilityError(int(np.asarray(rows)[bad[0]]), "row does not sum to 1")


def _cross_entropy(P: np.ndarray, rows: np.ndarray, targets: np.ndarray, weight: float, grad: np.ndarray) -> float:
    p = P[rows, targets]
    clamped = np.maximum(p, PROB_FLOOR)
    grad[rows, targets] -= weight * np.where(p > PROB_FLOOR, 1.0 / clamped, 0.0)
    return float(-weight * np.log(clamped).sum())


def prototype_cls_loss(pred: PredictionMatrix, M: int, K: int):
    n = (M + 1) * K
    if len(pred.proto_rows) != n:
        raise LabelError(f"expected {n} prototype rows, got {len(pred.proto_rows)}")
    P = pred.P
    rows = np.arange(pred.proto_rows.start, pred.proto_rows.stop)
    targets = np.tile(np.arange(K), M + 1)
    grad = np.zeros_like(P)
    value = _cross_entropy(P, rows, targets, 1.0 / n, grad)
    return value, grad


def source_cls_loss(pred: PredictionMatrix, source_rows, source_labels):
    """Mean over sources of the per-source mean cross-entropy."""
    P = pred.P
    K = P.shape[1]
    M = len(source_rows)
    grad = np.zeros_like(P)
    value = 0.0
    for rows, labels in zip(source_rows, source_labels):
        rows = np.asarray(rows, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != rows.shape:
            raise ShapeError("each source needs one label per row")
        if labels.size and (labels.min() < 0 or labels.max() >= K):
            raise LabelError(f"labels must lie in [0, {K})")
        value += _cross_entropy(P, rows, labels, 1.0 / (M * len(rows)), grad)
    return value, grad


def target_entropy_loss(pred: PredictionMatrix, target_rows):
    P = pred.P
    rows = np.asarray(target_rows, dtype=np.int64)
    if rows.size == 0:
        raise ShapeError("target entropy needs at least one row")
    _check_simplex(P, rows)
    p = P[rows]
    logp = np.log(np.maximum(p, PROB_FLOOR))
    value = -(p * logp).sum() / len(rows)
    grad = np.zeros_like(P)
    grad[rows] = -(logp + np.where(p > PROB_FLOOR, 1.0, 0.0)) / len(rows)
    return float(value), grad
