"""Unit tests for the autodiff engine.

Hand-derived oracle values are written out as literals; randomized
property checks use fixed seeds so failures replay exactly.
"""

import numpy as np
import pytest
import scipy.sparse as sp

from edgegcn import tensor as T
from edgegcn.optim import Adam, grad_check
from edgegcn.tensor import (
    ShapeError,
    Tensor,
    binary_cross_entropy_with_logits,
    concat_last,
    dropout,
    expand_pair_source,
    expand_pair_target,
    gather_rows,
    hadamard,
    matmul,
    reduce,
    segment_reduce,
    softmax_cross_entropy,
    spmm,
    sum_squares,
)


def test_tensor_is_float64():
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64


def test_matmul_identity():
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    out = matmul(a, Tensor(np.eye(2)))
    np.testing.assert_array_equal(out.data, a.data)


def test_matmul_hand_value():
    out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_bilinear_gradient():
    a = Tensor([[2.0]], requires_grad=True)
    b = Tensor([[3.0]], requires_grad=True)
    matmul(a, b).sum().backward()
    np.testing.assert_array_equal(a.grad, [[3.0]])
    np.testing.assert_array_equal(b.grad, [[2.0]])


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_hadamard_hand_value():
    out = hadamard(Tensor([2.0, 3.0]), Tensor([4.0, 5.0]))
    np.testing.assert_array_equal(out.data, [8.0, 15.0])


def test_hadamard_rejects_general_broadcast():
    with pytest.raises(ShapeError):
        hadamard(Tensor(np.ones((3, 2))), Tensor(np.ones(2)))


def test_hadamard_pair_mask_both_axes():
    rng = np.random.default_rng(0)
    pairs = Tensor(rng.normal(size=(3, 3, 2)), requires_grad=True)
    mask = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

    by_source = hadamard(pairs, mask, mask_axis=0)
    expected = pairs.data * mask.data[:, None, :]
    np.testing.assert_array_equal(by_source.data, expected)

    by_target = hadamard(pairs, mask, mask_axis=1)
    expected = pairs.data * mask.data[None, :, :]
    np.testing.assert_array_equal(by_target.data, expected)


def test_hadamard_pair_mask_gradients():
    rng = np.random.default_rng(1)
    for axis in (0, 1):
        pairs = Tensor(rng.normal(size=(3, 3, 2)), requires_grad=True)
        mask = Tensor(rng.normal(size=(3, 2)), requires_grad=True)
        err = grad_check(
            lambda p, q, axis=axis: hadamard(p, q, mask_axis=axis).sum(),
            [pairs, mask],
        )
        assert err < 1e-8


def test_relu_values():
    out = T.relu(Tensor([-1.0, 2.0]))
    np.testing.assert_array_equal(out.data, [0.0, 2.0])


def test_relu_dead_unit_gradient():
    x = Tensor(np.float64(1.0), requires_grad=True)
    T.relu(-x).backward()
    assert x.grad == 0.0


def test_sigmoid_center_and_gradient():
    x = Tensor(np.float64(0.0), requires_grad=True)
    out = T.sigmoid(x)
    assert out.data == 0.5
    out.backward()
    assert x.grad == 0.25


def test_sigmoid_saturated_tails_are_finite():
    out = T.sigmoid(Tensor([1e4, -1e4]))
    assert np.all(np.isfinite(out.data))
    assert out.data[0] == pytest.approx(1.0)
    assert out.data[1] == pytest.approx(0.0)


def test_product_rule_backward():
    x = Tensor(np.float64(2.0), requires_grad=True)
    y = Tensor(np.float64(3.0), requires_grad=True)
    (x * y).backward()
    assert x.grad == 3.0
    assert y.grad == 2.0


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        x.backward()


def test_backward_accumulates_until_zeroed():
    x = Tensor(np.float64(2.0), requires_grad=True)
    y = x * 3.0
    y.backward()
    y.backward()
    assert x.grad == 6.0
    T.zero_grad([x])
    assert x.grad is None


def test_bias_add_gradient_sums_rows():
    a = Tensor(np.ones((4, 3)), requires_grad=True)
    b = Tensor(np.zeros(3), requires_grad=True)
    (a + b).sum().backward()
    np.testing.assert_array_equal(b.grad, [4.0, 4.0, 4.0])


def test_add_shape_error():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))


def test_concat_last_hand_values():
    out = concat_last(Tensor([1.0, 2.0]), Tensor([3.0]))
    np.testing.assert_array_equal(out.data, [1.0, 2.0, 3.0])


def test_concat_last_empty_is_identity():
    x = Tensor([1.0, 2.0])
    out = concat_last(x, Tensor(np.zeros(0)))
    np.testing.assert_array_equal(out.data, x.data)


def test_concat_last_backward_splits():
    a = Tensor([1.0], requires_grad=True)
    b = Tensor([2.0], requires_grad=True)
    concat_last(a, b).sum().backward()
    np.testing.assert_array_equal(a.grad, [1.0])
    np.testing.assert_array_equal(b.grad, [1.0])


def test_concat_last_leading_dim_error():
    with pytest.raises(ShapeError):
        concat_last(Tensor(np.ones((2, 3))), Tensor(np.ones((3, 3))))


def test_reduce_mean_hand_value():
    assert reduce(Tensor([1.0, 2.0, 3.0]), "mean").data == 2.0


def test_reduce_max_first_argmax_gradient():
    x = Tensor([1.0, 5.0, 2.0], requires_grad=True)
    out = reduce(x, "max")
    assert out.data == 5.0
    out.backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0])


def test_reduce_max_tie_break_is_lowest_index():
    x = Tensor([3.0, 7.0, 7.0, 1.0], requires_grad=True)
    reduce(x, "max").backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0, 0.0, 0.0])

    y = Tensor([[7.0, 2.0], [7.0, 9.0], [5.0, 9.0]], requires_grad=True)
    reduce(y, "max", axis=0).sum().backward()
    np.testing.assert_array_equal(y.grad, [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]])


def test_reduce_sum_empty_axis_is_zero():
    out = reduce(Tensor(np.zeros((0, 3))), "sum", axis=0)
    np.testing.assert_array_equal(out.data, [0.0, 0.0, 0.0])


def test_reduce_mean_empty_axis_errors():
    with pytest.raises(ValueError):
        reduce(Tensor(np.zeros((0, 3))), "mean", axis=0)
    with pytest.raises(ValueError):
        reduce(Tensor(np.zeros((0, 3))), "max", axis=0)


def test_softmax_cross_entropy_uniform():
    loss = softmax_cross_entropy(Tensor([[0.0, 0.0]]), [0])
    assert loss.data == pytest.approx(np.log(2.0), abs=1e-12)


def test_softmax_cross_entropy_saturated_no_overflow():
    loss = softmax_cross_entropy(Tensor([[1000.0, -1000.0]]), [0])
    assert loss.data == pytest.approx(0.0, abs=1e-12)


def test_softmax_cross_entropy_ignore_label():
    logits = Tensor([[1.0, 2.0, 0.5], [0.2, 0.1, 0.3]])
    full = softmax_cross_entropy(Tensor(logits.data[:1]), [1])
    masked = softmax_cross_entropy(logits, [1, -1], ignore_label=-1)
    assert masked.data == pytest.approx(full.data, abs=1e-15)


def test_softmax_cross_entropy_ignored_rows_get_zero_grad():
    logits = Tensor(np.random.default_rng(3).normal(size=(3, 4)),
                    requires_grad=True)
    loss = softmax_cross_entropy(logits, [2, -1, 1], ignore_label=-1)
    loss.backward()
    np.testing.assert_array_equal(logits.grad[1], np.zeros(4))


def test_softmax_cross_entropy_all_ignored_errors():
    with pytest.raises(ValueError):
        softmax_cross_entropy(Tensor(np.zeros((2, 2))), [-1, -1], ignore_label=-1)


def test_softmax_cross_entropy_shift_invariance():
    rng = np.random.default_rng(7)
    for _ in range(20):
        logits = rng.normal(size=(5, 6)) * 10
        labels = rng.integers(0, 6, size=5)
        shift = rng.normal(size=(5, 1)) * 100
        a = softmax_cross_entropy(Tensor(logits), labels)
        b = softmax_cross_entropy(Tensor(logits + shift), labels)
        assert abs(a.data - b.data) <= 1e-10


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(11)
    logits = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    labels = [0, 2, 1, -1]
    err = grad_check(
        lambda z: softmax_cross_entropy(z, labels, ignore_label=-1), [logits]
    )
    assert err < 1e-8


def test_binary_cross_entropy_values_and_gradient():
    scores = Tensor([0.0, 100.0, -100.0], requires_grad=True)
    loss = binary_cross_entropy_with_logits(scores, [1.0, 1.0, 0.0])
    assert loss.data == pytest.approx(np.log(2.0) / 3.0, abs=1e-12)
    err = grad_check(
        lambda s: binary_cross_entropy_with_logits(s, [1.0, 0.0, 1.0]),
        [Tensor(np.random.default_rng(5).normal(size=3), requires_grad=True)],
    )
    assert err < 1e-8


def test_gather_rows_scatter_adds():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    gather_rows(x, [0, 0, 2]).sum().backward()
    np.testing.assert_array_equal(x.grad, [[2.0, 2.0], [0.0, 0.0], [1.0, 1.0]])


def test_expand_pair_source_and_target():
    x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
    src = expand_pair_source(x)
    tgt = expand_pair_target(x)
    np.testing.assert_array_equal(src.data[0, 1], [1.0, 2.0])
    np.testing.assert_array_equal(src.data[1, 0], [3.0, 4.0])
    np.testing.assert_array_equal(tgt.data[0, 1], [3.0, 4.0])
    src.sum().backward()
    np.testing.assert_array_equal(x.grad, np.full((2, 2), 2.0))


def test_segment_reduce_modes_and_empty_segment():
    x = Tensor([[1.0], [3.0], [5.0]], requires_grad=True)
    ids = [0, 0, 2]
    mean = segment_reduce(x, ids, 3, "mean")
    np.testing.assert_array_equal(mean.data, [[2.0], [0.0], [5.0]])
    total = segment_reduce(x, ids, 3, "sum")
    np.testing.assert_array_equal(total.data, [[4.0], [0.0], [5.0]])
    peak = segment_reduce(x, ids, 3, "max")
    np.testing.assert_array_equal(peak.data, [[3.0], [0.0], [5.0]])


def test_segment_reduce_gradients():
    rng = np.random.default_rng(13)
    ids = np.array([0, 1, 0, 2, 1, 0])
    for mode in ("sum", "mean", "max"):
        x = Tensor(rng.normal(size=(6, 3)), requires_grad=True)
        err = grad_check(
            lambda t, mode=mode: segment_reduce(t, ids, 4, mode).sum(), [x]
        )
        assert err < 1e-8, mode


def test_segment_reduce_max_tie_goes_to_first_row():
    x = Tensor([[2.0], [2.0]], requires_grad=True)
    segment_reduce(x, [0, 0], 1, "max").sum().backward()
    np.testing.assert_array_equal(x.grad, [[1.0], [0.0]])


def test_spmm_matches_dense_and_backward():
    rng = np.random.default_rng(17)
    dense = (rng.random((4, 4)) < 0.5).astype(float)
    mat = sp.csr_matrix(dense)
    x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
    out = spmm(mat, x)
    np.testing.assert_allclose(out.data, dense @ x.data, atol=1e-15)
    err = grad_check(lambda t: spmm(mat, t).sum(), [x])
    assert err < 1e-8


def test_dropout_identity_at_zero_rate_and_scaling():
    x = Tensor(np.ones((100, 4)), requires_grad=True)
    assert dropout(x, 0.0, np.random.default_rng(0)) is x
    out = dropout(x, 0.5, np.random.default_rng(0))
    kept = out.data != 0
    np.testing.assert_array_equal(out.data[kept], np.full(kept.sum(), 2.0))


def test_sum_squares_gradient():
    x = Tensor([1.0, -2.0], requires_grad=True)
    out = sum_squares(x)
    assert out.data == 5.0
    out.backward()
    np.testing.assert_array_equal(x.grad, [2.0, -4.0])


def test_reshape_roundtrip_gradient():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    x.reshape((6,)).sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((2, 3)))


def test_debug_checks_raise_on_nonfinite():
    T.set_debug_checks(True)
    try:
        with pytest.raises(FloatingPointError), np.errstate(over="ignore"):
            Tensor([1e308]) * Tensor([1e308])
    finally:
        T.set_debug_checks(False)


def test_forward_is_deterministic():
    rng = np.random.default_rng(23)
    a = rng.normal(size=(5, 5))
    b = rng.normal(size=(5, 5))

    def run():
        return (T.relu(matmul(Tensor(a), Tensor(b))).sum()).data

    assert run() == run()


def test_grad_check_polynomial():
    x = Tensor(np.float64(3.0), requires_grad=True)
    err = grad_check(lambda t: t * t, [x])
    assert err < 1e-8


def test_grad_check_constant_function():
    x = Tensor(np.float64(3.0), requires_grad=True)
    err = grad_check(lambda t: Tensor(np.float64(1.0)), [x])
    assert err == 0.0


def test_grad_check_composite_ops():
    rng = np.random.default_rng(29)
    w = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    x = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=4), requires_grad=True)

    def f(w, x, b):
        h = T.relu(matmul(x, w) + b)
        g = T.sigmoid(h * Tensor(np.full((5, 4), 0.5)))
        return concat_last(h, g).mean()

    assert grad_check(f, [w, x, b]) < 1e-6


def test_adam_first_step_closed_form():
    p = Tensor(np.float64(1.0), requires_grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.float64(2.0)
    opt.step()
    assert opt.step_count == 1
    # First step collapses to -lr * g / (|g| + eps).
    assert p.data == pytest.approx(1.0 - 0.01 * 2.0 / (2.0 + 1e-8), abs=1e-12)


def test_adam_zero_gradient_is_fixed_point():
    p = Tensor(np.float64(1.0), requires_grad=True)
    opt = Adam([p], lr=0.01)
    p.grad = np.float64(0.0)
    opt.step()
    assert p.data == 1.0


def test_adam_degenerate_betas_reduce_to_signed_sgd():
    p = Tensor(np.float64(0.0), requires_grad=True)
    opt = Adam([p], lr=0.1, beta1=0.0, beta2=0.0)
    for _ in range(2):
        p.grad = np.float64(4.0)
        opt.step()
    # Each step moves by -lr * g / (|g| + eps), i.e. sign-scaled SGD.
    assert p.data == pytest.approx(-0.2, rel=1e-7)


def test_adam_missing_gradient_errors():
    p = Tensor(np.float64(1.0), requires_grad=True)
    opt = Adam([p])
    with pytest.raises(ValueError):
        opt.step()
