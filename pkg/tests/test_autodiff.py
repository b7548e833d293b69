"""Gradient and tape-mechanics tests for the reverse-mode core.

Every differentiable primitive is compared against central finite
differences of a random weighted-sum loss. Structural behaviour of the
tape (accumulation, detach, unused leaves, scalar-loss requirement) is
checked separately with exact assertions.
"""

import numpy as np
import pytest

from tgk.autodiff import (
    GradientTape,
    Tensor,
    add,
    backward,
    clip,
    concat_rows,
    cross_entropy_rows,
    div,
    exp,
    gather_rows,
    leaky_relu,
    log,
    masked_softmax_rows,
    matmul,
    maximum,
    minimum,
    mul,
    neg,
    power,
    relu,
    reshape,
    segment_max,
    segment_mean,
    segment_sum,
    sigmoid,
    softmax_rows,
    softplus,
    sqrt,
    sub,
    take_cols,
    take_per_row,
    tile_rows,
    tmean,
    transpose,
    tsum,
)
from tgk.autodiff import sigmoid_values


def weighted_loss(out, weights):
    return tsum(mul(out, Tensor(weights)))


def numeric_grads(fn, arrays, weights, eps=1e-6):
    """Central-difference d(sum(fn(arrays) * weights))/d(arrays)."""

    def scalar(vals):
        with GradientTape():
            out = fn(*[Tensor(v) for v in vals])
        return float(np.sum(out.data * weights))

    grads = []
    for i, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = g.reshape(-1)
        for j in range(a.size):
            bumped = [v.copy() for v in arrays]
            bumped[i].reshape(-1)[j] += eps
            hi = scalar(bumped)
            bumped[i].reshape(-1)[j] -= 2 * eps
            lo = scalar(bumped)
            flat[j] = (hi - lo) / (2 * eps)
        grads.append(g)
    return grads


def check_grads(fn, arrays, rng, tol=1e-6):
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    with GradientTape() as tape:
        out = fn(*leaves)
        weights = rng.normal(size=out.shape)
        loss = weighted_loss(out, weights)
    backward(tape, loss)
    expected = numeric_grads(fn, arrays, weights)
    for leaf, exp_g in zip(leaves, expected):
        err = np.max(np.abs(leaf.grad - exp_g)) / (1.0 + np.max(np.abs(exp_g)))
        assert err < tol, f"gradient mismatch for {fn}: {err}"


# ---------------------------------------------------------------------------
# elementwise primitives against finite differences
# ---------------------------------------------------------------------------


def test_binary_elementwise_gradients():
    rng = np.random.default_rng(0)
    ops = [add, sub, mul, div, minimum, maximum]
    for op in ops:
        for _ in range(5):
            a = rng.normal(size=(4, 3))
            b = rng.normal(size=(4, 3))
            if op is div:
                b = np.sign(b) * (np.abs(b) + 0.5)
            if op in (minimum, maximum):
                # keep the two arguments apart so the winner is stable
                b = a + np.where(rng.random(a.shape) < 0.5, 0.3, -0.3)
            check_grads(op, [a, b], rng)


def test_unary_elementwise_gradients():
    rng = np.random.default_rng(1)
    cases = [
        (neg, lambda r: r.normal(size=(3, 5))),
        (exp, lambda r: r.normal(size=(3, 5))),
        (log, lambda r: r.random((3, 5)) + 0.5),
        (sqrt, lambda r: r.random((3, 5)) + 0.5),
        (sigmoid, lambda r: r.normal(size=(3, 5))),
        (softplus, lambda r: r.normal(size=(3, 5))),
        (lambda t: relu(t), lambda r: r.normal(size=(3, 5)) + 0.2),
        (lambda t: leaky_relu(t, 0.2), lambda r: r.normal(size=(3, 5)) + 0.2),
        (lambda t: power(t, 3.0), lambda r: r.normal(size=(3, 5))),
        (lambda t: clip(t, -0.5, 0.5), lambda r: r.normal(size=(3, 5))),
    ]
    for op, draw in cases:
        for _ in range(4):
            a = draw(rng)
            # keep points away from kinks so finite differences are clean
            if op in (relu,) or "relu" in repr(op):
                a = np.where(np.abs(a) < 0.05, 0.2, a)
            if "clip" in repr(op):
                a = np.where(np.abs(np.abs(a) - 0.5) < 0.05, 0.3, a)
            check_grads(op, [a], rng)


def test_broadcasting_gradients():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(4, 3))
    b = rng.normal(size=(3,))
    check_grads(add, [a, b], rng)
    check_grads(mul, [a, b], rng)
    c = rng.normal(size=(4, 1))
    d = rng.normal(size=(1, 3))
    check_grads(mul, [c, d], rng)


def test_operator_sugar_matches_functions():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3))
    x = Tensor(a, requires_grad=True)
    with GradientTape() as tape:
        y = (2.0 * x + 1.0) / 4.0 - x * x
        loss = tsum(y)
    backward(tape, loss)
    expected = 0.5 - 2.0 * a
    assert np.allclose(x.grad, expected, atol=1e-12)


# ---------------------------------------------------------------------------
# matmul, shape ops, reductions
# ---------------------------------------------------------------------------


def test_matmul_and_transpose_gradients():
    rng = np.random.default_rng(4)
    for _ in range(4):
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(3, 5))
        check_grads(matmul, [a, b], rng)
        check_grads(lambda t: transpose(t), [a], rng)


def test_reshape_gradient_roundtrip():
    rng = np.random.default_rng(5)
    a = rng.normal(size=(2, 6))
    check_grads(lambda t: reshape(t, (3, 4)), [a], rng)


def test_reduction_gradients():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(4, 5))
    check_grads(lambda t: tsum(t), [a], rng)
    check_grads(lambda t: tsum(t, axis=0), [a], rng)
    check_grads(lambda t: tsum(t, axis=1, keepdims=True), [a], rng)
    check_grads(lambda t: tmean(t), [a], rng)
    check_grads(lambda t: tmean(t, axis=0), [a], rng)
    check_grads(lambda t: tmean(t, axis=1, keepdims=True), [a], rng)


# ---------------------------------------------------------------------------
# gather / scatter style ops
# ---------------------------------------------------------------------------


def test_gather_rows_accumulates_repeated_indices():
    a = Tensor(np.arange(6, dtype=np.float64).reshape(3, 2), requires_grad=True)
    idx = np.array([0, 0, 2, 0])
    with GradientTape() as tape:
        out = gather_rows(a, idx)
        loss = tsum(out)
    backward(tape, loss)
    expected = np.array([[3.0, 3.0], [0.0, 0.0], [1.0, 1.0]])
    assert np.array_equal(a.grad, expected)


def test_gather_take_gradients_numeric():
    rng = np.random.default_rng(7)
    a = rng.normal(size=(5, 4))
    idx = np.array([4, 1, 1, 3])
    check_grads(lambda t: gather_rows(t, idx), [a], rng)
    cols = np.array([2, 0, 2])
    check_grads(lambda t: take_cols(t, cols), [a], rng)
    per_row = np.array([1, 3, 0, 2, 2])
    check_grads(lambda t: take_per_row(t, per_row), [a], rng)


def test_segment_ops_forward_and_empty_segments():
    a = Tensor(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), requires_grad=True)
    seg = np.array([0, 0, 2])
    s = segment_sum(a, seg, 4)
    m = segment_mean(a, seg, 4)
    x = segment_max(a, seg, 4)
    assert np.array_equal(s.data, [[4.0, 6.0], [0.0, 0.0], [5.0, 6.0], [0.0, 0.0]])
    assert np.array_equal(m.data, [[2.0, 3.0], [0.0, 0.0], [5.0, 6.0], [0.0, 0.0]])
    assert np.array_equal(x.data, [[3.0, 4.0], [0.0, 0.0], [5.0, 6.0], [0.0, 0.0]])


def test_segment_gradients_numeric():
    rng = np.random.default_rng(8)
    a = rng.normal(size=(6, 3))
    seg = np.array([0, 2, 0, 1, 2, 2])
    check_grads(lambda t: segment_sum(t, seg, 3), [a], rng)
    check_grads(lambda t: segment_mean(t, seg, 3), [a], rng)
    # spread values so the per-segment max winner is unambiguous
    a2 = a + 10.0 * np.arange(6).reshape(-1, 1)
    check_grads(lambda t: segment_max(t, seg, 3), [a2], rng)


def test_segment_max_tie_routes_to_first_row():
    a = Tensor(np.array([[2.0], [2.0], [1.0]]), requires_grad=True)
    seg = np.array([0, 0, 0])
    with GradientTape() as tape:
        out = segment_max(a, seg, 1)
        loss = tsum(out)
    backward(tape, loss)
    assert np.array_equal(a.grad, [[1.0], [0.0], [0.0]])


def test_concat_rows_splits_gradient():
    rng = np.random.default_rng(9)
    a = rng.normal(size=(2, 3))
    b = rng.normal(size=(4, 3))
    check_grads(lambda x, y: concat_rows([x, y]), [a, b], rng)


def test_tile_rows_sums_gradient_and_validates_shape():
    a = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    with GradientTape() as tape:
        out = tile_rows(a, 5)
        loss = tsum(out)
    backward(tape, loss)
    assert out.shape == (5, 2)
    assert np.array_equal(a.grad, [[5.0, 5.0]])
    with pytest.raises(ValueError):
        tile_rows(Tensor(np.zeros((2, 2))), 3)


# ---------------------------------------------------------------------------
# softmax family
# ---------------------------------------------------------------------------


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(10)
    for _ in range(5):
        logits = rng.normal(size=(4, 7)) * 5.0
        p = softmax_rows(Tensor(logits)).data
        assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)
        q = softmax_rows(Tensor(logits + 100.0)).data
        assert np.allclose(p, q, atol=1e-12)


def test_softmax_rows_gradient_numeric():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(3, 5))
    check_grads(softmax_rows, [logits], rng)


def test_masked_softmax_masked_weight_exactly_zero():
    rng = np.random.default_rng(12)
    logits = rng.normal(size=(3, 6))
    mask = rng.random((3, 6)) < 0.5
    mask[:, 0] = True
    p = masked_softmax_rows(Tensor(logits), mask).data
    assert np.all(p[~mask] == 0.0)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12)


def test_masked_softmax_masked_logit_has_no_influence():
    rng = np.random.default_rng(13)
    logits = rng.normal(size=(2, 5))
    mask = np.array([[True, True, False, True, False],
                     [False, True, True, True, True]])
    base = masked_softmax_rows(Tensor(logits), mask).data
    bumped = logits.copy()
    bumped[0, 2] += 1000.0
    bumped[1, 0] -= 1000.0
    moved = masked_softmax_rows(Tensor(bumped), mask).data
    assert np.array_equal(base, moved)

    x = Tensor(logits, requires_grad=True)
    with GradientTape() as tape:
        loss = tsum(masked_softmax_rows(x, mask) * Tensor(rng.normal(size=(2, 5))))
    backward(tape, loss)
    assert np.all(x.grad[~mask] == 0.0)


def test_masked_softmax_rejects_fully_masked_row():
    mask = np.array([[True, False], [False, False]])
    with pytest.raises(ValueError):
        masked_softmax_rows(Tensor(np.zeros((2, 2))), mask)


def test_cross_entropy_matches_logsumexp_oracle():
    rng = np.random.default_rng(14)
    for _ in range(5):
        logits = rng.normal(size=(6, 4)) * 3.0
        labels = rng.integers(0, 4, size=6)
        got = cross_entropy_rows(Tensor(logits), labels).item()
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1))
        expected = float(np.mean(lse - shifted[np.arange(6), labels]))
        assert abs(got - expected) < 1e-12


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    rng = np.random.default_rng(15)
    logits = rng.normal(size=(5, 3))
    labels = np.array([2, 0, 1, 1, 0])
    x = Tensor(logits, requires_grad=True)
    with GradientTape() as tape:
        loss = cross_entropy_rows(x, labels)
    backward(tape, loss)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
    onehot = np.zeros_like(p)
    onehot[np.arange(5), labels] = 1.0
    assert np.allclose(x.grad, (p - onehot) / 5.0, atol=1e-10)


def test_cross_entropy_rejects_bad_labels():
    logits = Tensor(np.zeros((3, 4)))
    with pytest.raises(ValueError):
        cross_entropy_rows(logits, np.array([0, 1]))
    with pytest.raises(ValueError):
        cross_entropy_rows(logits, np.array([0, 1, 4]))
    with pytest.raises(ValueError):
        cross_entropy_rows(logits, np.array([0, -1, 2]))


# ---------------------------------------------------------------------------
# numeric stability of the logistic helper
# ---------------------------------------------------------------------------


def test_sigmoid_values_stable_at_extremes():
    with np.errstate(over="raise"):
        vals = sigmoid_values(np.array([-1000.0, -20.0, 0.0, 20.0, 1000.0]))
    assert vals[0] == 0.0
    assert vals[-1] == 1.0
    assert vals[2] == 0.5
    x = np.linspace(-15, 15, 41)
    assert np.allclose(sigmoid_values(x), 1.0 / (1.0 + np.exp(-x)), atol=1e-15)


# ---------------------------------------------------------------------------
# tape mechanics
# ---------------------------------------------------------------------------


def test_backward_requires_scalar_loss():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with GradientTape() as tape:
        y = mul(x, x)
    with pytest.raises(ValueError):
        backward(tape, y)


def test_leaf_used_twice_accumulates():
    x = Tensor(np.array([3.0]), requires_grad=True)
    with GradientTape() as tape:
        loss = tsum(add(mul(x, x), x))
    backward(tape, loss)
    assert np.allclose(x.grad, [7.0], atol=1e-12)


def test_detach_blocks_gradient():
    x = Tensor(np.array([2.0]), requires_grad=True)
    with GradientTape() as tape:
        frozen = x.detach()
        loss = tsum(mul(x, frozen))
    grads = backward(tape, loss)
    assert np.allclose(x.grad, [2.0], atol=1e-12)
    assert frozen.requires_grad is False
    assert frozen not in grads


def test_unused_watched_leaf_gets_zero_grad():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    unused = Tensor(np.array([5.0]), requires_grad=True)
    with GradientTape() as tape:
        tape.watch(unused)
        loss = tsum(mul(x, x))
    grads = backward(tape, loss)
    assert np.array_equal(grads[unused], [0.0])
    assert np.array_equal(unused.grad, [0.0])


def test_explicit_leaves_argument_reports_zeros():
    x = Tensor(np.array([1.0]), requires_grad=True)
    extra = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    with GradientTape() as tape:
        loss = tsum(mul(x, x))
    grads = backward(tape, loss)
    assert extra not in grads
    with GradientTape() as tape:
        loss = tsum(mul(x, x))
    grads = backward(tape, loss, leaves=[extra])
    assert np.array_equal(grads[extra], np.zeros((1, 2)))


def test_constant_subgraph_not_recorded():
    a = Tensor(np.ones((2, 2)))
    with GradientTape() as tape:
        out = mul(a, a)
    assert out.requires_grad is False
    assert tape.records == []


def test_gradients_match_across_two_separate_tapes():
    rng = np.random.default_rng(16)
    a = rng.normal(size=(3, 3))
    x = Tensor(a, requires_grad=True)
    results = []
    for _ in range(2):
        with GradientTape() as tape:
            loss = tsum(mul(sigmoid(x), x))
        backward(tape, loss)
        results.append(x.grad.copy())
    assert np.array_equal(results[0], results[1])
