"""Test the tensor engine and its gradient tape."""

import numpy as np
import pytest

from catsd.distill.cases import faulty_case
from catsd.exceptions import DomainError, GradientError, NonFiniteError, ShapeError
from catsd.tensor import GradTape, Tensor, active_tape, custom_op, grad_check
from catsd.tensor import ops


def test_tensor_data_is_read_only_copy():
    source = np.arange(4.0)
    t = Tensor(source)
    source[0] = 99.0
    assert t.data[0] == 0.0
    with pytest.raises(ValueError):
        t.data[1] = 5.0


def test_non_finite_input_rejected():
    with pytest.raises(NonFiniteError):
        Tensor([1.0, np.nan])
    with pytest.raises(NonFiniteError):
        ops.exp(Tensor([1000.0]))


def test_log_domain():
    with pytest.raises(DomainError):
        ops.log(Tensor([1.0, 0.0]))


def test_broadcast_shape():
    assert ops.broadcast_shape((3, 1, 4), (2, 1)) == (3, 2, 4)
    with pytest.raises(ShapeError):
        ops.broadcast_shape((3, 2), (4,))


def test_tape_records_in_order():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        assert active_tape() is tape
        y = ops.sum_(ops.mul(ops.relu(x), x))
    assert active_tape() is None
    assert tape.ops == ["relu", "mul", "sum"]
    tape.backward(y)
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_nothing_recorded_without_tape_or_tracked_inputs():
    x = Tensor([1.0, 2.0])
    with GradTape() as tape:
        ops.sum_(x * x)
    assert len(tape) == 0
    y = custom_op("noop", np.ones(2), (Tensor([1.0, 1.0], requires_grad=True),), lambda g: (g,))
    assert y.requires_grad


def test_shared_input_gradients_accumulate():
    x = Tensor(3.0, requires_grad=True)
    with GradTape() as tape:
        y = x * x + x
    tape.backward(y)
    assert x.grad == pytest.approx(7.0)


def test_backward_errors():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = x * 2.0
    with pytest.raises(GradientError):
        tape.backward(y)
    with pytest.raises(GradientError):
        GradTape().backward(Tensor(1.0))
    with pytest.raises(GradientError):
        Tensor([1.0, 2.0]).item()


def test_bad_backward_shape_rejected():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with GradTape() as tape:
        y = ops.sum_(custom_op("broken", x.data, (x,), lambda g: (np.ones(3),)))
    with pytest.raises(GradientError):
        tape.backward(y)


@pytest.mark.parametrize(
    "shape_a, shape_b",
    [((3, 4), (3, 4)), ((2, 3, 4), (4,)), ((2, 1, 4), (3, 1))],
)
def test_elementwise_gradients(rng, shape_a, shape_b):
    def loss(t):
        return ops.sum_(ops.mul(ops.add(t[0], t[1]), ops.sub(t[0], ops.exp(t[1]))))

    report = grad_check(loss, [rng.normal(size=shape_a), rng.normal(size=shape_b)])
    assert report.passed, report


@pytest.mark.parametrize("k, padding", [(3, 1), (3, 0), (1, 0)])
def test_conv2d_gradients(rng, k, padding):
    def loss(t):
        out = ops.conv2d(t[0], t[1], t[2], padding=padding)
        return ops.sum_(ops.mul(out, out))

    inputs = [rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(3, 2, k, k)), rng.normal(size=(3,))]
    assert grad_check(loss, inputs).passed


def test_conv2d_matches_direct_correlation(rng):
    x, w, b = rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3,))
    out = ops.conv2d(x, w, b, padding=1).data
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    expected = np.zeros((3, 4, 4))
    for o in range(3):
        for i in range(4):
            for j in range(4):
                expected[o, i, j] = np.sum(w[o] * xp[:, i : i + 3, j : j + 3]) + b[o]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_pointwise_conv_rows_are_independent(rng):
    x = rng.normal(size=(1, 4, 3, 3))
    w = rng.normal(size=(2, 4, 1, 1))
    b = rng.normal(size=(2,))
    before = ops.conv2d(x, w, b).data
    w2 = np.concatenate([w, rng.normal(size=(3, 4, 1, 1))])
    after = ops.conv2d(x, w2, np.concatenate([b, np.zeros(3)])).data
    assert np.array_equal(before, after[:, :2])


def test_identity_pointwise_conv_is_exact(rng):
    x = rng.normal(size=(3, 5, 4))
    kernel = np.eye(3)[:, :, None, None]
    assert np.array_equal(ops.conv2d(x, kernel, np.zeros(3)).data, x)


def test_pointwise_conv_by_hand():
    out = ops.conv2d(np.array([[[1.0, 2.0], [3.0, 4.0]]]), np.full((1, 1, 1, 1), 2.0), np.ones(1)).data
    np.testing.assert_array_equal(out, [[[3.0, 5.0], [7.0, 9.0]]])
    zero = ops.conv2d(np.ones((1, 2, 2)), np.zeros((1, 1, 1, 1)), np.zeros(1)).data
    np.testing.assert_array_equal(zero, np.zeros((1, 2, 2)))


def test_conv2d_shape_errors(rng):
    with pytest.raises(ShapeError):
        ops.conv2d(rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 2, 2, 2)), np.zeros(3))
    with pytest.raises(ShapeError):
        ops.conv2d(rng.normal(size=(2, 4, 4)), rng.normal(size=(3, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        ops.conv2d(rng.normal(size=(2, 2, 2)), rng.normal(size=(3, 2, 3, 3)), np.zeros(3))


@pytest.mark.parametrize("mode", ["mean", "max"])
def test_pool2d_gradients(rng, mode):
    def loss(t):
        return ops.sum_(ops.mul(ops.pool2d(t[0], 2, mode), ops.pool2d(t[0], 2, mode)))

    assert grad_check(loss, [rng.normal(size=(2, 4, 6))]).passed


def test_pool2d_needs_tiling_window():
    with pytest.raises(ShapeError):
        ops.pool2d(np.zeros((3, 5, 4)), 2)


def test_upsample_bilinear(rng):
    x = rng.normal(size=(2, 3, 2))
    up = ops.upsample_bilinear(x, 4)
    assert up.shape == (2, 12, 8)
    constant = ops.upsample_bilinear(np.full((1, 2, 2), 3.5), 8).data
    np.testing.assert_allclose(constant, 3.5)

    def loss(t):
        u = ops.upsample_bilinear(t[0], 2)
        return ops.sum_(ops.mul(u, u))

    assert grad_check(loss, [x]).passed


def test_softmax_with_per_class_temperature(rng):
    logits = rng.normal(size=(3, 2, 2))
    t = np.array([1.0, 2.0, 4.0])
    s = ops.softmax(logits, t, axis=-3).data
    np.testing.assert_allclose(s.sum(axis=0), 1.0)
    expected = np.exp(logits / t[:, None, None])
    np.testing.assert_allclose(s, expected / expected.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(
        ops.log_softmax(logits, t, axis=-3).data, np.log(s), atol=1e-12
    )

    def loss(v):
        return ops.sum_(ops.mul(ops.softmax(v[0], t, axis=-3), ops.log_softmax(v[0], t, axis=-3)))

    assert grad_check(loss, [logits]).passed


def test_softmax_closed_forms():
    np.testing.assert_allclose(ops.softmax(np.zeros(2), [1.0, 1.0]).data, [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(ops.softmax(np.array([0.0, np.log(2.0)]), [1.0, 1.0]).data, [1 / 3, 2 / 3], atol=1e-12)
    hot = ops.softmax(np.array([10.0, -10.0]), [1000.0, 1000.0]).data
    np.testing.assert_allclose(hot, [0.5, 0.5], atol=1e-4)


@pytest.mark.parametrize("temperature", [None, 2.5, [0.5, 1.0, 3.0, 7.0]])
def test_softmax_sums_to_one_and_ignores_shifts(rng, temperature):
    logits = rng.normal(scale=20.0, size=(6, 4))
    s = ops.softmax(logits, temperature).data
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, rtol=0, atol=1e-12)
    t = np.ones(4) if temperature is None else np.broadcast_to(np.asarray(temperature, dtype=float), (4,))
    # a constant added to every temperature-scaled logit of a row
    shift = rng.normal(scale=50.0, size=(6, 1))
    np.testing.assert_allclose(ops.softmax(logits + shift * t, temperature).data, s, rtol=0, atol=1e-12)


def test_softmax_temperature_errors():
    with pytest.raises(DomainError):
        ops.softmax(np.zeros((3, 1, 1)), 0.0, axis=-3)
    with pytest.raises(DomainError):
        ops.softmax(np.zeros((3, 1, 1)), [1.0, -1.0, 1.0], axis=-3)
    with pytest.raises(ShapeError):
        ops.softmax(np.zeros((3, 1, 1)), [1.0, 2.0], axis=-3)


def test_cross_entropy():
    logits = np.zeros((4, 2, 2))
    assert ops.cross_entropy(logits, np.zeros((2, 2), dtype=int)).item() == pytest.approx(np.log(4))
    with pytest.raises(ShapeError):
        ops.cross_entropy(logits, np.full((2, 2), 4))
    with pytest.raises(ShapeError):
        ops.cross_entropy(logits, np.zeros((3, 2), dtype=int))


def test_l2_norm_is_differentiable_at_zero():
    x = Tensor(np.zeros(3), requires_grad=True)
    with GradTape() as tape:
        y = ops.l2_norm(x)
    tape.backward(y)
    assert y.item() == 0.0
    np.testing.assert_array_equal(x.grad, np.zeros(3))


def test_concat_and_getitem_gradients(rng):
    def loss(t):
        joined = ops.concat([t[0], t[1]], axis=-1)
        return ops.sum_(ops.mul(joined[..., 1:4], joined[..., 1:4]))

    assert grad_check(loss, [rng.normal(size=(2, 3)), rng.normal(size=(2, 2))]).passed


def test_grad_check_flags_wrong_gradient(rng):
    loss, inputs = faulty_case(rng)
    report = grad_check(loss, inputs)
    assert not report.passed
    assert report.max_rel_error > 0.1
