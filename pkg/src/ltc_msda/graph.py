"""Prototype knowledge graph and its extension with query vertices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .prototypes import PrototypeBank

AFFINITY_FLOOR = 1e-300


def _check_sigma(sigma: float) -> None:
    if not sigma > 0 or not np.isfinite(sigma):
        raise ConfigError("sigma", f"must be a positive finite number, got {sigma}")


def gaussian_affinity(x, y, sigma: float) -> float:
    _check_sigma(sigma)
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(max(np.exp(-np.dot(diff, diff) / (2.0 * sigma**2)), AFFINITY_FLOOR))


def pairwise_affinity(X, Y, sigma: float) -> np.ndarray:
    """Gaussian kernel between every row of X and every row of Y."""
    _check_sigma(sigma)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    diff = X[:, None, :] - Y[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return np.maximum(np.exp(-sq / (2.0 * sigma**2)), AFFINITY_FLOOR)


def pairwise_affinity_backward(X, Y, K, grad_K, sigma: float):
    """Chain dL/dK through K_ij = exp(-|x_i - y_j|^2 / 2 sigma^2) to X and Y.

    Floored entries carry no gradient.
    """
    w = np.where(K > AFFINITY_FLOOR, grad_K * K, 0.0) / sigma**2
    # dK_ij/dx_i = K_ij (y_j - x_i) / sigma^2
    grad_X = w @ Y - w.sum(axis=1)[:, None] * X
    grad_Y = w.T @ X - w.sum(axis=0)[:, None] * Y
    return grad_X, grad_Y


@dataclass
class KnowledgeGraph:
    F: np.ndarray
    A: np.ndarray
    sigma: float
    M: int
    K: int

    @property
    def num_vertices(self) -> int:
        return self.F.shape[0]

    @property
    def dim(self) -> int:
        return self.F.shape[1]


@dataclass
class ExtendedGraph:
    F_bar: np.ndarray
    A_bar: np.ndarray
    S: np.ndarray
    proto_rows: range
    query_rows: range


def build_graph(bank: PrototypeBank, sigma: float) -> KnowledgeGraph:
    """Stack prototypes domain-major, class-minor and connect them by kernel affinity."""
    _check_sigma(sigma)
    bank.require_complete()
    F = bank.prototypes.reshape(-1, bank.dim).copy()
    A = pairwise_affinity(F, F, sigma)
    np.fill_diagonal(A, 1.0)
    return KnowledgeGraph(F, A, sigma, bank.num_domains - 1, bank.num_classes)


def extend_graph(graph: KnowledgeGraph, query_features) -> ExtendedGraph:
    q = np.asarray(query_features, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != graph.dim:
        raise ShapeError(f"query features {q.shape} vs graph feature width {graph.dim}")
    n_p, n_q = graph.num_vertices, q.shape[0]
    S = pairwise_affinity(graph.F, q, graph.sigma)
    A_bar = np.zeros((n_p + n_q, n_p + n_q))
    A_bar[:n_p, :n_p] = graph.A
    A_bar[:n_p, n_p:] = S
    A_bar[n_p:, :n_p] = S.T
    A_bar[n_p:, n_p:] = np.eye(n_q)
    F_bar = np.vstack([graph.F, q])
    return ExtendedGraph(F_bar, A_bar, S, range(0, n_p), range(n_p, n_p + n_q))


def isolated_extensions(graph: KnowledgeGraph, query_features):
    """One extended graph per query, stacked along a leading axis.

    Returns ``(F_bar, A_bar)`` of shapes (n, V+1, d) and (n, V+1, V+1) where
    the last vertex of slice i is query i. Queries never see each other, not
    even through shared prototype vertices.
    """
    q = np.asarray(query_features, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != graph.dim:
        raise ShapeError(f"query features {q.shape} vs graph feature width {graph.dim}")
    n, v = q.shape[0], graph.num_vertices
    S = pairwise_affinity(graph.F, q, graph.sigma)
    A_bar = np.empty((n, v + 1, v + 1))
    A_bar[:, :v, :v] = graph.A
    A_bar[:, :v, v] = S.T
    A_bar[:, v, :v] = S.T
    A_bar[:, v, v] = 1.0
    F_bar = np.empty((n, v + 1, graph.dim))
    F_bar[:, :v] = graph.F
    F_bar[:, v] = q
    return F_bar, A_bar


def save_matrix_csv(matrix, path) -> None:
    np.savetxt(path, np.atleast_2d(matrix), delimiter=",", fmt="%.17g")
