import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rdeepsc.engine import (
    Adam,
    AdamState,
    DomainError,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    calibrated_softmax,
    elementwise,
    embedding_lookup,
    finite_diff_check,
    layer_norm,
    matmul,
    ops,
    record,
    softmax,
)


def naive_matmul(a, b):
    n, k = a.shape
    _, m = b.shape
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for t in range(k):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


class TestMatmul:
    def test_identity(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(matmul(a, Tensor(np.eye(2))).data, a.data)

    def test_hand_product(self):
        out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0, 6.0], [7.0, 8.0]]))
        np.testing.assert_array_equal(out.data, [[19.0, 22.0], [43.0, 50.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_against_triple_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
            np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, naive_matmul(a, b), atol=1e-12)

    def test_batched_gradient_reduces_over_batch(self):
        rng = np.random.default_rng(0)
        w = Tensor(rng.normal(size=(4, 3)))
        x = Tensor(rng.normal(size=(2, 5, 4)))
        c = rng.normal(size=(2, 5, 3))
        assert finite_diff_check(lambda t: (matmul(x, t) * c).sum(), w) < 1e-6
        assert finite_diff_check(lambda t: (matmul(t, w) * c).sum(), x) < 1e-6


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax(Tensor([0.0, 0.0])).data, [0.5, 0.5])

    def test_large_logits_no_overflow(self):
        out = softmax(Tensor([1000.0, 0.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(1.0) and out[1] == pytest.approx(0.0, abs=1e-300)

    def test_invalid_axis(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.zeros((2, 2))), axis=2)

    @settings(max_examples=50, deadline=None)
    # spreads beyond ~30 round the largest entry to exactly 1.0
    @given(arrays(np.float64, (3, 7), elements=st.floats(-15, 15)))
    def test_rows_normalized(self, x):
        out = softmax(Tensor(x), axis=-1).data
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(out > 0) and np.all(out < 1)

    def test_calibrated_with_unit_weights_is_bitwise_softmax(self):
        x = np.random.default_rng(1).normal(size=(2, 3, 5, 5))
        plain = softmax(Tensor(x)).data
        cal = calibrated_softmax(Tensor(x), Tensor(np.ones((2, 1, 1, 5)))).data
        assert np.array_equal(plain, cal)


class TestElementwise:
    def test_add_zero(self):
        x = Tensor([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(elementwise("+", x, 0.0).data, x.data)

    def test_sigmoid_zero(self):
        assert elementwise("sigmoid", Tensor(0.0)).data == 0.5

    def test_exp_log_inverse(self):
        out = elementwise("exp", elementwise("log", Tensor(2.5)))
        assert abs(float(out.data) - 2.5) < 1e-12

    def test_log_domain(self):
        with pytest.raises(DomainError):
            elementwise("log", Tensor([1.0, 0.0]))

    def test_div_by_zero(self):
        with pytest.raises(DomainError):
            elementwise("/", Tensor([1.0]), Tensor([0.0]))

    def test_non_broadcastable(self):
        with pytest.raises(ShapeError):
            elementwise("*", Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))

    def test_sigmoid_extremes_finite(self):
        out = elementwise("sigmoid", Tensor([-800.0, 800.0])).data
        assert np.all(np.isfinite(out))


class TestLayerNorm:
    def test_constant_row(self):
        out = layer_norm(Tensor(np.full((1, 4), 3.0)), Tensor(np.ones(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, np.zeros((1, 4)))

    def test_moments(self):
        out = layer_norm(Tensor([1.0, 2.0, 3.0]), Tensor(np.ones(3)), Tensor(np.zeros(3))).data
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            layer_norm(Tensor(np.zeros((2, 3))), Tensor(np.ones(4)), Tensor(np.zeros(3)))

    def test_gradients(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.normal(size=(3, 6)))
        gain, bias = Tensor(rng.normal(size=6)), Tensor(rng.normal(size=6))
        c = rng.normal(size=(3, 6))
        assert finite_diff_check(lambda t: (layer_norm(t, gain, bias) * c).sum(), x) < 1e-4
        assert finite_diff_check(lambda t: (layer_norm(x, t, bias) * c).sum(), gain) < 1e-4
        assert finite_diff_check(lambda t: (layer_norm(x, gain, t) * c).sum(), bias) < 1e-4


class TestEmbedding:
    table = np.array([[1.0, 2.0], [3.0, 4.0]])

    def test_lookup(self):
        np.testing.assert_array_equal(embedding_lookup(Tensor(self.table), [0]).data, [[1.0, 2.0]])

    def test_repeated_index_accumulates(self):
        t = Tensor(self.table.copy(), requires_grad=True)
        with record():
            loss = embedding_lookup(t, [1, 1]).sum()
            backward(loss)
        np.testing.assert_array_equal(t.grad, [[0.0, 0.0], [2.0, 2.0]])

    def test_matches_dense_one_hot(self):
        table = np.random.default_rng(2).normal(size=(5, 3))
        for i in range(5):
            dense = ops.one_hot([i], 5) @ table
            np.testing.assert_array_equal(embedding_lookup(Tensor(table), [i]).data, dense)

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            embedding_lookup(Tensor(self.table), [2])


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        with record():
            backward(x * x)
        assert x.grad == 6.0

    def test_unreachable_parameter(self):
        x = Tensor(2.0, requires_grad=True)
        p = Tensor(5.0, requires_grad=True)
        with record():
            backward(x * x)
        assert p.grad is None or p.grad == 0.0

    def test_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with record():
            with pytest.raises(ShapeError):
                backward(x * 2.0)

    def test_no_tape_outside_record(self):
        x = Tensor(1.0, requires_grad=True)
        assert (x * 2.0).tape_id is None

    def test_composite_mlp(self):
        rng = np.random.default_rng(11)
        x = rng.normal(size=(4, 5))
        w1 = Tensor(rng.normal(size=(5, 8)) * 0.5)
        b1 = Tensor(rng.normal(size=8) * 0.1)
        w2 = Tensor(rng.normal(size=(8, 3)) * 0.5)
        target = rng.integers(0, 3, size=4)
        hot = ops.one_hot(target, 3)

        def loss_for(w1_, b1_, w2_):
            h = ops.tanh(matmul(Tensor(x), w1_) + b1_)
            return -(ops.log_softmax(matmul(h, w2_)) * hot).sum() / 4.0

        assert finite_diff_check(lambda t: loss_for(t, b1, w2), w1) < 1e-4
        assert finite_diff_check(lambda t: loss_for(w1, t, w2), b1) < 1e-4
        assert finite_diff_check(lambda t: loss_for(w1, b1, t), w2) < 1e-4

    def test_deterministic_forward(self):
        rng = np.random.default_rng(0)
        a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
        first = softmax(matmul(Tensor(a), Tensor(b))).data
        second = softmax(matmul(Tensor(a), Tensor(b))).data
        assert np.array_equal(first, second)


class TestFiniteDiff:
    def test_sum_is_exact(self):
        x = Tensor(np.random.default_rng(0).normal(size=6))
        assert finite_diff_check(lambda t: t.sum(), x) < 1e-9

    def test_sum_of_squares(self):
        x = Tensor(np.random.default_rng(1).normal(size=6))
        assert finite_diff_check(lambda t: (t * t).sum(), x, h=1e-5) < 1e-6

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(2)
        logits = Tensor(rng.normal(size=(3, 7)))
        hot = ops.one_hot([1, 4, 6], 7)
        assert finite_diff_check(lambda t: -(ops.log_softmax(t) * hot).sum(), logits) < 1e-4

    def test_symmetric_zero_gradient(self):
        # a shift shared by every logit leaves softmax unchanged
        rng = np.random.default_rng(3)
        scores, w = rng.normal(size=(4, 6)) * 20, rng.normal(size=(4, 6))
        shift = Tensor(rng.normal(size=1))
        assert finite_diff_check(lambda t: (softmax(t + scores) * w).sum(), shift) == 0.0

    def test_catches_missing_gradient(self):
        x = Tensor(np.array([0.5, -1.5, 2.0]))
        # the square is computed off the tape, so its gradient is absent
        assert finite_diff_check(lambda t: Tensor(t.data**2).sum() + t.sum(), x) > 0.3


# every differentiable op, 10 random points each
def _weights(shape, seed):
    return np.random.default_rng(seed).normal(size=shape)


OP_CASES = {
    "add": (lambda t, c: (t + c["other"]) * c["w"], (3, 4)),
    "sub": (lambda t, c: (c["other"] - t) * c["w"], (3, 4)),
    "mul": (lambda t, c: t * c["other"] * c["w"], (3, 4)),
    "div": (lambda t, c: c["other"] / (t * t + 1.0) * c["w"], (3, 4)),
    "exp": (lambda t, c: ops.exp(t) * c["w"], (3, 4)),
    "log": (lambda t, c: ops.log(t * t + 0.5) * c["w"], (3, 4)),
    "tanh": (lambda t, c: ops.tanh(t) * c["w"], (3, 4)),
    "sigmoid": (lambda t, c: ops.sigmoid(t) * c["w"], (3, 4)),
    "power": (lambda t, c: ops.power(t * t + 1.0, 1.5) * c["w"], (3, 4)),
    "softmax": (lambda t, c: ops.softmax(t, axis=-1) * c["w"], (3, 4)),
    "log_softmax": (lambda t, c: ops.log_softmax(t, axis=0) * c["w"], (3, 4)),
    "logsumexp": (lambda t, c: ops.logsumexp(t, axis=-1) * c["w"][:, 0], (3, 4)),
    "calibrated_softmax": (
        lambda t, c: ops.calibrated_softmax(t, ops.sigmoid(t[:1])) * c["w"],
        (3, 4),
    ),
    "matmul": (lambda t, c: matmul(t, c["other"].T) * c["w"][:, :3], (3, 4)),
    "transpose": (lambda t, c: t.transpose() * c["w"].T, (3, 4)),
    "reshape": (lambda t, c: t.reshape(4, 3) * c["w"].reshape(4, 3), (3, 4)),
    "getitem": (lambda t, c: t[1:, ::2] * c["w"][1:, ::2], (3, 4)),
    "concat": (lambda t, c: ops.concat([t, t * t], axis=0) * np.vstack([c["w"], c["w"]]), (3, 4)),
    "stack": (lambda t, c: ops.stack([t, ops.tanh(t)], axis=1)[:, 1] * c["w"], (3, 4)),
    "mean": (lambda t, c: t.mean(axis=0) * c["w"][0], (3, 4)),
    "layer_norm": (lambda t, c: layer_norm(t, c["gain"], c["bias"]) * c["w"], (3, 4)),
    "embedding": (lambda t, c: embedding_lookup(t, [2, 0, 2]) * c["w"], (3, 4)),
}


@pytest.mark.parametrize("name", sorted(OP_CASES))
def test_op_gradients_at_ten_points(name):
    fn, shape = OP_CASES[name]
    for point in range(10):
        consts = {
            "other": Tensor(_weights(shape, 100 + point)),
            "w": _weights(shape, 200 + point),
            "gain": Tensor(_weights(shape[-1], 300 + point)),
            "bias": Tensor(_weights(shape[-1], 400 + point)),
        }
        x = Tensor(_weights(shape, point))
        err = finite_diff_check(lambda t: fn(t, consts).sum(), x)
        assert err < 1e-4, f"{name} point {point}: {err}"


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = np.array([1.0, -2.0])
        state = AdamState.zeros_like([p])
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p, [1.0, -2.0])
        assert state.step == 1

    def test_first_step_magnitude_is_lr(self):
        p = np.array([0.0, 0.0])
        state = AdamState.zeros_like([p], lr=0.01)
        adam_step([p], [np.array([3.0, -0.2])], state)
        # bias-corrected moments give m/sqrt(v) = sign(g)
        np.testing.assert_allclose(p, [-0.01, 0.01], rtol=1e-6)

    def test_converges_on_square(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        opt = Adam([x], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            with record():
                backward((x * x).sum())
            opt.step()
        assert abs(x.data[0]) < 1e-3

    def test_shape_mismatch(self):
        p = np.zeros(3)
        with pytest.raises(ShapeError):
            adam_step([p], [np.zeros(2)], AdamState.zeros_like([p]))

    def test_step_counter_increases(self):
        p = np.zeros(1)
        state = AdamState.zeros_like([p])
        for i in range(1, 4):
            adam_step([p], [np.ones(1)], state)
            assert state.step == i
