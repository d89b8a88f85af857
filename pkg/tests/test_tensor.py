"""Tests for the autodiff tensor engine: gradients, masked softmax, sparse kernel, loss."""

import math

import numpy as np
import pytest

from uecct import tensor as T
from uecct.errors import DataError
from uecct.maskgen import NEG_INF, build_extended, build_mask
from uecct.registry import builtin_code
from uecct.tensor import ActiveIndex, Tensor, grad_check


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def weighted(out: Tensor, W: np.ndarray) -> Tensor:
    """Contract ``out`` against fixed weights so every entry matters."""
    return T.tsum(T.mul(out, Tensor(W)))


def check(f, shape, rng, **kwargs):
    report = grad_check(f, Tensor(rng.standard_normal(shape)), **kwargs)
    assert report.status == "pass", f"max relative error {report.max_rel_error:.3e}"
    return report


def hamming_mask_stack(batch: int) -> np.ndarray:
    mask = build_mask(build_extended(builtin_code("hamming74").H)).values
    return np.broadcast_to(mask, (batch,) + mask.shape).copy()


# =============================================================================
# Gradients of individual ops
# =============================================================================


def test_grad_add_and_mul_with_broadcasting(rng):
    b = Tensor(rng.standard_normal((1, 4)))
    c = Tensor(rng.standard_normal((3, 1)))
    W = rng.standard_normal((3, 4))
    check(lambda x: T.tsum(T.mul(T.mul(T.add(x, b), c), Tensor(W))), (3, 4), rng)
    x_fixed = Tensor(rng.standard_normal((3, 4)))
    check(lambda v: T.tsum(T.mul(T.add(x_fixed, v), Tensor(W))), (1, 4), rng)


def test_grad_batched_matmul(rng):
    w = Tensor(rng.standard_normal((5, 2)))
    C = rng.standard_normal((2, 3, 4, 2))
    check(lambda x: T.tsum(T.mul(T.matmul(x, w), Tensor(C))), (2, 3, 4, 5), rng)
    x = Tensor(rng.standard_normal((2, 3, 4, 5)))
    check(lambda v: T.tsum(T.mul(T.matmul(x, v), Tensor(C))), (5, 2), rng)


def test_grad_shape_ops(rng):
    W = rng.standard_normal((4, 3, 2))
    check(lambda x: T.tsum(T.mul(T.transpose(x.reshape(2, 3, 4), (2, 1, 0)), Tensor(W))), (6, 4), rng)
    V = rng.standard_normal((3, 5))
    other = Tensor(rng.standard_normal((3, 2)))
    check(lambda x: T.tsum(T.mul(T.concat([x, other], axis=1), Tensor(V))), (3, 3), rng)
    U = rng.standard_normal((3, 4))
    check(lambda x: T.tsum(T.mul(x[np.array([0, 2, 2])], Tensor(U))), (3, 4), rng)


def test_grad_mean_and_sum_axes(rng):
    W = rng.standard_normal(3)
    check(lambda x: T.tsum(T.mul(T.mean(x, axis=1), Tensor(W))), (3, 5), rng)


def test_grad_relu_sigmoid(rng):
    W = rng.standard_normal((4, 6))
    check(lambda x: T.tsum(T.mul(T.sigmoid(x), Tensor(W))), (4, 6), rng)
    check(lambda x: T.tsum(T.mul(T.relu(x), Tensor(W))), (4, 6), rng)


def test_grad_masked_softmax(rng):
    masks = hamming_mask_stack(2)[:, None]  # (2, 1, 10, 3)
    W = rng.standard_normal((2, 1, 10, 3))
    check(lambda x: T.tsum(T.mul(T.softmax(x, mask=masks), Tensor(W))), (1, 1, 10, 3), rng)


def test_grad_layer_norm(rng):
    gamma = Tensor(rng.standard_normal(6))
    beta = Tensor(rng.standard_normal(6))
    W = rng.standard_normal((2, 3, 6))
    check(lambda x: T.tsum(T.mul(T.layer_norm(x, gamma, beta), Tensor(W))), (2, 3, 6), rng)
    x = Tensor(rng.standard_normal((2, 3, 6)))
    check(lambda g: T.tsum(T.mul(T.layer_norm(x, g, beta), Tensor(W))), (6,), rng)


def test_grad_sparse_attend(rng):
    masks = hamming_mask_stack(3)
    active = ActiveIndex.from_masks(masks)
    logits = Tensor(rng.standard_normal((1, 1, 10, 3)))
    memory = Tensor(rng.standard_normal((3, 2, 3, 4)))
    W = rng.standard_normal((3, 2, 10, 4))
    check(lambda m: weighted(T.sparse_attend(T.softmax(logits, mask=masks[:, None]), m, active), W), (3, 2, 3, 4), rng)
    check(lambda a: weighted(T.sparse_attend(T.softmax(a, mask=masks[:, None]), memory, active), W), (1, 1, 10, 3), rng)


def test_grad_bce_loss(rng):
    target = (rng.random((4, 5)) < 0.3).astype(float)
    active = np.ones((4, 5), dtype=bool)
    active[:, 4] = False
    report = grad_check(
        lambda p: T.bce_loss(p, target, active), Tensor(rng.uniform(0.1, 0.9, (4, 5)))
    )
    assert report.passed
    assert np.all(report.analytic[:, 4] == 0.0)


# =============================================================================
# Forward semantics
# =============================================================================


def test_masked_softmax_zeros_and_normalization(rng):
    mask = np.array([[0.0, NEG_INF, 0.0], [NEG_INF, NEG_INF, NEG_INF], [0.0, 0.0, 0.0]])
    out = T.softmax(Tensor(rng.standard_normal((3, 3)) * 50), mask=mask).data
    assert out[0, 1] == 0.0
    assert out[0].sum() == pytest.approx(1.0)
    assert np.all(out[1] == 0.0)
    assert out[2].sum() == pytest.approx(1.0)


def test_all_zero_mask_is_plain_softmax(rng):
    x = Tensor(rng.standard_normal((2, 4, 10, 3)) * 20)
    plain = T.softmax(x).data
    assert np.array_equal(T.softmax(x, mask=np.zeros((10, 3))).data, plain)
    assert np.array_equal(T.softmax(x, mask=np.zeros((2, 1, 10, 3))).data, plain)


def test_softmax_mask_shape_mismatch():
    with pytest.raises(DataError, match="mask shape"):
        T.softmax(Tensor(np.zeros((2, 3))), mask=np.zeros((4, 5)))


def test_sparse_kernel_matches_dense_reference(rng):
    masks = hamming_mask_stack(4)
    probs = T.softmax(Tensor(rng.standard_normal((1, 1, 10, 3))), mask=masks[:, None])
    memory = Tensor(rng.standard_normal((4, 3, 3, 5)))
    sparse = T.sparse_attend(probs, memory, ActiveIndex.from_masks(masks)).data
    dense = np.matmul(probs.data, memory.data)
    assert sparse.shape == (4, 3, 10, 5)
    assert np.max(np.abs(sparse - dense)) <= 1e-12


def test_active_index_counts_unmasked_entries():
    assert len(ActiveIndex.from_masks(hamming_mask_stack(2))) == 30


def test_bce_of_half_predictor_is_active_bits_ln2():
    pred = Tensor(np.full((3, 8), 0.5))
    active = np.zeros((3, 8), dtype=bool)
    active[:, :7] = True
    loss = T.bce_loss(pred, np.zeros((3, 8)), active)
    assert loss.item() == pytest.approx(21 * math.log(2))


def test_bce_shape_mismatch():
    with pytest.raises(DataError, match="must match"):
        T.bce_loss(Tensor(np.zeros((2, 3))), np.zeros((2, 3)), np.ones((3, 2), dtype=bool))


def test_layer_norm_output_statistics(rng):
    x = Tensor(rng.standard_normal((5, 16)) * 3 + 2)
    out = T.layer_norm(x, T.ones((16,)), T.zeros((16,))).data
    assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(out.var(axis=-1), 1.0, atol=1e-3)


# =============================================================================
# Graph mechanics
# =============================================================================


def test_backward_requires_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(DataError, match="scalar"):
        T.backward(T.mul(x, 2.0))


def test_backward_twice_on_same_graph_fails():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = T.tsum(T.mul(x, x))
    T.backward(loss)
    assert np.allclose(x.grad, 2.0)
    with pytest.raises(RuntimeError, match="already ran"):
        T.backward(loss)


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    y = T.mul(x, x)
    T.backward(T.tsum(T.add(y, y)))
    assert x.grad.tolist() == [12.0]


def test_no_grad_builds_no_graph():
    x = Tensor(np.ones(2), requires_grad=True)
    with T.no_grad():
        y = T.mul(x, 3.0)
    assert not y.requires_grad
    assert T.mul(x, 3.0).requires_grad


def test_parameter_init_bounds(rng):
    p = T.parameter((64, 16), rng, fan_in=16)
    assert p.requires_grad
    assert np.all(np.abs(p.data) <= 0.25)


def test_grad_check_flags_relu_kink():
    report = grad_check(lambda x: T.tsum(T.relu(x)), Tensor(np.array([0.0, 1.0, -1.0])))
    assert report.status == "kink"
    assert not report.passed
