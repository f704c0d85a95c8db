import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import TOL, clear_of_kinks, numeric_grad, rel_error
from ltc_msda.errors import DegenerateGraphError, ShapeError, TraceError
from ltc_msda.gcn import GcnParams, gcn_backward, gcn_forward, normalize_adjacency, softmax


def _params(seed, d=4, K=3):
    rng = np.random.default_rng(seed)
    return GcnParams(rng.normal(0, 0.7, (d, d)), rng.normal(0, 0.3, d), rng.normal(0, 0.7, (d, K)), rng.normal(0, 0.3, K))


def _sym_adj(rng, n):
    B = rng.random((n, n))
    A = (B + B.T) / 2
    np.fill_diagonal(A, 1.0)
    return A


def test_identity_normalizes_to_identity():
    np.testing.assert_array_equal(normalize_adjacency(np.eye(5)), np.eye(5))


def test_all_ones_normalizes_to_uniform():
    np.testing.assert_allclose(normalize_adjacency(np.ones((4, 4))), np.full((4, 4), 0.25), atol=1e-15)


def test_normalization_matches_elementwise_loop():
    A = _sym_adj(np.random.default_rng(0), 6)
    got = normalize_adjacency(A)
    deg = [sum(row) for row in A]
    for i in range(6):
        for j in range(6):
            assert abs(got[i, j] - A[i, j] / np.sqrt(deg[i] * deg[j])) <= 1e-12
    assert (got == got.T).all()


def test_zero_degree_row():
    A = np.eye(3)
    A[1, 1] = 0
    with pytest.raises(DegenerateGraphError):
        normalize_adjacency(A)


def test_zero_output_layer_is_uniform():
    p = GcnParams.init(np.random.default_rng(0), 4, 5)
    pred, _ = gcn_forward(p, np.random.default_rng(1).normal(size=(6, 4)), _sym_adj(np.random.default_rng(2), 6))
    assert (pred.P == 0.2).all()


def test_single_node_is_dense_classifier():
    p = _params(1)
    f = np.random.default_rng(3).normal(size=(1, 4))
    pred, _ = gcn_forward(p, f, np.array([[1.0]]))
    h = np.maximum(f @ p.W1 + p.b1, 0)
    logits = h @ p.W2 + p.b2
    dense = np.exp(logits - logits.max()) / np.exp(logits - logits.max()).sum()
    np.testing.assert_allclose(pred.P, dense, atol=1e-12, rtol=0)


def test_batched_forward_matches_individual_graphs():
    rng = np.random.default_rng(4)
    p = _params(4)
    F = rng.normal(size=(3, 5, 4))
    A = np.stack([_sym_adj(rng, 5) for _ in range(3)])
    pred, _ = gcn_forward(p, F, A)
    for i in range(3):
        np.testing.assert_allclose(pred.P[i], gcn_forward(p, F[i], A[i])[0].P, atol=1e-15)


def test_row_ranges():
    pred, _ = gcn_forward(_params(0), np.zeros((5, 4)), np.eye(5), range(0, 3))
    assert pred.queries.shape == (2, 3) and pred.prototypes.shape == (3, 3)


def test_shape_errors():
    with pytest.raises(ShapeError):
        gcn_forward(_params(0), np.zeros((5, 3)), np.eye(5))
    with pytest.raises(ShapeError):
        gcn_forward(_params(0), np.zeros((5, 4)), np.eye(4))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 9), shift=st.floats(-50, 50))
def test_forward_properties(seed, n, shift):
    rng = np.random.default_rng(seed)
    p = _params(seed)
    F = rng.normal(0, 3, size=(n, 4))
    A = _sym_adj(rng, n)
    P = gcn_forward(p, F, A)[0].P
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-9, rtol=0)
    assert (P >= 0).all() and (P <= 1).all()
    shifted = p.replace([p.W1, p.b1, p.W2, p.b2 + shift])
    np.testing.assert_allclose(gcn_forward(shifted, F, A)[0].P, P, atol=1e-12, rtol=0)
    perm = rng.permutation(n)
    Pp = gcn_forward(p, F[perm], A[np.ix_(perm, perm)])[0].P
    np.testing.assert_allclose(Pp, P[perm], atol=1e-12, rtol=0)


def test_zero_upstream_gradient():
    p = _params(0)
    _, tr = gcn_forward(p, np.ones((3, 4)), np.ones((3, 3)))
    g, gF, gA = gcn_backward(p, tr, np.zeros((3, 3)))
    assert not any(a.any() for a in g.arrays()) and not gF.any() and not gA.any()


def test_output_bias_gradient_accumulates_over_nodes():
    # n identical nodes on a complete graph each contribute the single-node logit gradient
    p = _params(5)
    f = np.random.default_rng(5).normal(size=(1, 4))
    w = np.array([[0.3, -1.0, 2.0]])
    _, tr1 = gcn_forward(p, f, np.ones((1, 1)))
    single = gcn_backward(p, tr1, w)[0].b2
    for n in (2, 7):
        _, tr = gcn_forward(p, np.repeat(f, n, axis=0), np.ones((n, n)))
        np.testing.assert_allclose(gcn_backward(p, tr, np.repeat(w, n, axis=0))[0].b2, n * single, atol=1e-12)


def test_stale_trace():
    _, tr = gcn_forward(_params(0), np.ones((2, 4)), np.eye(2))
    with pytest.raises(TraceError):
        gcn_backward(_params(1), tr, np.ones((2, 3)))


def _draw(seed, n=7):
    rng = np.random.default_rng(seed)
    while True:
        p = _params(int(rng.integers(1 << 30)))
        F = rng.normal(size=(n, 4))
        A = _sym_adj(rng, n)
        _, tr = gcn_forward(p, F, A)
        if clear_of_kinks(tr.U1):
            return p, F, A, rng.normal(size=(n, 3))


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    p, F, A, w = _draw(seed)
    _, tr = gcn_forward(p, F, A)
    g, gF, gA = gcn_backward(p, tr, w)
    f = lambda: float((gcn_forward(p, F, A)[0].P * w).sum())  # noqa: E731
    for name, arr, ga in zip(p.names(), p.arrays(), g.arrays()):
        assert rel_error(ga, numeric_grad(f, arr)) <= TOL, name
    assert rel_error(gF, numeric_grad(f, F)) <= TOL
    assert rel_error(gA, numeric_grad(f, A)) <= TOL


def test_softmax_is_stable():
    P = softmax(np.array([[1000.0, 0.0], [-1000.0, -1000.0]]))
    np.testing.assert_allclose(P, [[1, 0], [0.5, 0.5]])
