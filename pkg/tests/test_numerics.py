import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import check_op, numerical_grad, relative_error
from mptsnet import numerics as nx
from mptsnet.errors import ConfigError, DataError, ShapeError, UsageError

TOL = 1e-4


def uniform(rng, *shape):
    return rng.uniform(-1, 1, size=shape)


class TestElementwise:
    def test_add_values(self):
        out = nx.Tensor([1.0, 2.0]) + nx.Tensor([3.0, 4.0])
        np.testing.assert_array_equal(out.data, [4.0, 6.0])

    def test_add_zeros_is_identity(self, rng):
        x = nx.Tensor(uniform(rng, 3, 4))
        np.testing.assert_array_equal((x + nx.zeros_like(x)).data, x.data)

    def test_grad_of_sum_product_is_other_operand(self, rng):
        a_np, b_np = uniform(rng, 3, 4), uniform(rng, 3, 4)

        def objective(a, b):
            return float((a * b).sum())

        with nx.precision(np.float64):
            a = nx.Tensor(a_np, requires_grad=True)
            nx.backward(nx.sum(a * nx.Tensor(b_np)))
        numeric = numerical_grad(objective, [a_np, b_np], 0)
        assert relative_error(a.grad, numeric) < TOL
        np.testing.assert_allclose(a.grad, b_np)

    @pytest.mark.parametrize("op", [nx.add, nx.sub, nx.mul])
    def test_broadcast_gradients(self, op, rng):
        assert check_op(op, uniform(rng, 2, 3, 4), uniform(rng, 3, 1)) < TOL
        assert check_op(op, uniform(rng, 4), uniform(rng, 2, 4)) < TOL

    def test_mutual_broadcast_rejected(self):
        with pytest.raises(ShapeError):
            nx.Tensor(np.ones((3, 1))) + nx.Tensor(np.ones((1, 4)))

    def test_incompatible_shapes_rejected(self):
        with pytest.raises(ShapeError):
            nx.Tensor(np.ones(3)) * nx.Tensor(np.ones(4))


class TestMatmul:
    def test_identity(self, rng):
        a = uniform(rng, 3, 3)
        out = nx.Tensor(a) @ nx.Tensor(np.eye(3))
        np.testing.assert_allclose(out.data, a.astype(np.float32))

    def test_small_product(self):
        out = nx.Tensor([[1.0, 2.0], [3.0, 4.0]]) @ nx.Tensor([[5.0], [6.0]])
        np.testing.assert_array_equal(out.data, [[17.0], [39.0]])

    def test_gradient(self, rng):
        assert check_op(nx.matmul, uniform(rng, 4, 3), uniform(rng, 3, 2)) < TOL

    def test_batched_broadcast_gradient(self, rng):
        assert check_op(nx.matmul, uniform(rng, 2, 4, 3), uniform(rng, 3, 2)) < TOL
        assert check_op(nx.matmul, uniform(rng, 4, 3), uniform(rng, 2, 2, 3, 5)) < TOL

    def test_inner_mismatch(self):
        with pytest.raises(ShapeError):
            nx.Tensor(np.ones((2, 3))) @ nx.Tensor(np.ones((2, 3)))


class TestConv1d:
    def test_unit_kernel_is_identity(self, rng):
        x = uniform(rng, 1, 7)
        out = nx.conv1d(nx.Tensor(x), nx.Tensor(np.ones((1, 1, 1))), nx.Tensor([0.0]))
        np.testing.assert_allclose(out.data, x.astype(np.float32))

    def test_zero_padding(self):
        x = nx.Tensor([[1.0, 2.0, 3.0]])
        out = nx.conv1d(x, nx.Tensor(np.ones((1, 1, 3))), nx.Tensor([0.0]))
        np.testing.assert_array_equal(out.data, [[3.0, 6.0, 5.0]])

    def test_no_kernel_flip(self):
        x = nx.Tensor([[1.0, 2.0, 3.0]])
        w = nx.Tensor([[[1.0, 0.0, 0.0]]])
        # cross-correlation: out[t] = x[t-1]
        np.testing.assert_array_equal(nx.conv1d(x, w).data, [[0.0, 1.0, 2.0]])

    def test_gradient(self, rng):
        err = check_op(nx.conv1d, uniform(rng, 2, 8), uniform(rng, 3, 2, 5), uniform(rng, 3))
        assert err < TOL

    def test_batched_gradient(self, rng):
        err = check_op(nx.conv1d, uniform(rng, 3, 2, 4), uniform(rng, 3, 2, 7), uniform(rng, 3))
        assert err < TOL

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            nx.conv1d(nx.Tensor(np.ones((1, 4))), nx.Tensor(np.ones((1, 1, 2))))

    @given(arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 9)),
                  elements=st.floats(-1e3, 1e3)))
    def test_unit_kernel_identity_property(self, x):
        c = x.shape[0]
        w = np.eye(c)[:, :, None]
        with nx.precision(np.float64):
            out = nx.conv1d(nx.Tensor(x), nx.Tensor(w), nx.Tensor(np.zeros(c)))
        np.testing.assert_array_equal(out.data, x)


class TestSoftmax:
    def test_equal_logits(self):
        out = nx.softmax(nx.Tensor([2.5, 2.5, 2.5]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, rtol=1e-6)

    def test_shift_invariance(self, rng):
        x = uniform(rng, 5)
        a = nx.softmax(nx.Tensor(x)).data
        b = nx.softmax(nx.Tensor(x + 100.0)).data
        np.testing.assert_allclose(a, b, atol=1e-6)

    def test_gradient(self, rng):
        assert check_op(nx.softmax, uniform(rng, 6)) < TOL
        assert check_op(lambda t: nx.softmax(t, axis=0), uniform(rng, 3, 4)) < TOL

    @settings(max_examples=50)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                  elements=st.floats(-50, 50)))
    def test_rows_sum_to_one(self, x):
        with nx.precision(np.float64):
            y = nx.softmax(nx.Tensor(x), axis=-1).data
        assert np.all(y >= 0) and np.all(y <= 1)
        np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-6)

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            nx.softmax(nx.Tensor(np.ones((2, 2))), axis=2)


class TestShapingOps:
    def test_mean(self):
        assert nx.mean(nx.Tensor([2.0, 4.0, 6.0])).item() == 4.0

    def test_reshape_round_trip(self, rng):
        x = uniform(rng, 2, 3, 4)
        y = nx.reshape(nx.reshape(nx.Tensor(x), (6, 4)), (2, 3, 4))
        np.testing.assert_array_equal(y.data, nx.Tensor(x).data)

    def test_gelu_gradient(self):
        assert check_op(nx.gelu, np.array([-2.0, 0.0, 2.0])) < TOL

    def test_gelu_values(self):
        out = nx.gelu(nx.Tensor([0.0, 1.0], dtype=np.float64)).data
        np.testing.assert_allclose(out, [0.0, 0.5 * (1 + math.erf(1 / math.sqrt(2)))])

    @pytest.mark.parametrize(
        "op, shape",
        [
            (lambda t: nx.mean(t, axis=1), (3, 4)),
            (lambda t: nx.mean(t, axis=0, keepdims=True), (3, 4)),
            (lambda t: nx.sum(t), (3, 4)),
            (lambda t: nx.reshape(t, (4, 3)), (3, 4)),
            (lambda t: nx.transpose(t, (2, 0, 1)), (2, 3, 4)),
            (lambda t: nx.pad(t, axis=1, after=3), (2, 3)),
            (lambda t: nx.narrow(t, axis=1, start=1, length=2), (2, 4)),
            (lambda t: nx.expand(nx.reshape(t, (2, 3, 1)), (2, 3, 5)), (2, 3)),
        ],
    )
    def test_gradients(self, op, shape, rng):
        assert check_op(op, uniform(rng, *shape)) < TOL

    def test_concat_values_and_gradient(self, rng):
        a, b = uniform(rng, 2, 3), uniform(rng, 2, 1)
        out = nx.concat([nx.Tensor(a), nx.Tensor(b)], axis=1)
        assert out.shape == (2, 4)
        assert check_op(lambda x, y: nx.concat([x, y], axis=1), a, b) < TOL

    def test_axis_errors(self):
        x = nx.Tensor(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            nx.mean(x, axis=3)
        with pytest.raises(ShapeError):
            nx.concat([x], axis=-3)
        with pytest.raises(ShapeError):
            nx.transpose(x, (0, 0))
        with pytest.raises(ShapeError):
            nx.reshape(x, (4,))


class TestCrossEntropy:
    def test_confident_correct_is_zero(self):
        logits = nx.Tensor([[1e6, 0.0, 0.0], [0.0, 0.0, 1e6]])
        loss = nx.cross_entropy_with_logits(logits, [0, 2])
        assert loss.item() == pytest.approx(0.0, abs=1e-6)

    def test_uniform_logits(self):
        loss = nx.cross_entropy_with_logits(nx.Tensor(np.zeros((3, 4))), [0, 1, 3])
        assert loss.item() == pytest.approx(math.log(4), rel=1e-6)

    def test_gradient_matches_softmax_minus_onehot(self, rng):
        z = uniform(rng, 3, 4)
        labels = np.array([1, 0, 3])

        def objective(zz):
            with nx.no_grad():
                return nx.cross_entropy_with_logits(nx.Tensor(zz), labels).item()

        with nx.precision(np.float64):
            t = nx.Tensor(z, requires_grad=True)
            nx.backward(nx.cross_entropy_with_logits(t, labels))
            numeric = numerical_grad(objective, [z], 0)
        assert relative_error(t.grad, numeric) < TOL
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        expected = (p - np.eye(4)[labels]) / 3
        np.testing.assert_allclose(t.grad, expected, atol=1e-12)

    def test_label_out_of_range(self):
        with pytest.raises(DataError):
            nx.cross_entropy_with_logits(nx.Tensor(np.zeros((2, 3))), [0, 3])


class TestBackward:
    def test_non_scalar_rejected(self):
        x = nx.Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(UsageError):
            nx.backward(x * 2.0)

    def test_gradients_accumulate(self):
        x = nx.Tensor([1.0, 2.0], requires_grad=True)
        nx.backward(nx.sum(x * 3.0))
        nx.backward(nx.sum(x * 3.0))
        np.testing.assert_array_equal(x.grad, [6.0, 6.0])
        x.zero_grad()
        assert x.grad is None

    def test_tape_consumed(self):
        x = nx.Tensor([1.0], requires_grad=True)
        loss = nx.sum(x * x)
        nx.backward(loss)
        with pytest.raises(UsageError):
            nx.backward(loss)

    def test_reused_node_sums_paths(self):
        x = nx.Tensor([3.0], requires_grad=True, dtype=np.float64)
        y = x * x
        nx.backward(nx.sum(y + y * x))  # d/dx (x^2 + x^3) = 2x + 3x^2
        assert x.grad[0] == pytest.approx(6.0 + 27.0)

    def test_tape_is_topological(self, rng):
        a = nx.Tensor(uniform(rng, 2, 2), requires_grad=True)
        b = nx.gelu(a @ a)
        loss = nx.sum(b * a)
        tape = nx.Tape.from_loss(loss)
        position = {id(n): i for i, n in enumerate(tape.nodes)}
        for node in tape.nodes:
            for parent in node._parents:
                if parent.requires_grad:
                    assert position[id(parent)] < position[id(node)]
        assert tape.nodes[-1] is loss

    def test_interior_grads_populated(self, rng):
        a = nx.Tensor(uniform(rng, 3), requires_grad=True)
        h = nx.gelu(a)
        nx.backward(nx.sum(h))
        assert h.grad is not None and h.grad.shape == h.shape

    def test_no_grad_records_nothing(self):
        x = nx.Tensor([1.0], requires_grad=True)
        with nx.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_determinism_across_independent_tapes(self, rng):
        x_np, w_np = uniform(rng, 2, 3, 10), uniform(rng, 4, 3, 5)
        grads = []
        for _ in range(2):
            w = nx.Tensor(w_np, requires_grad=True)
            out = nx.softmax(nx.gelu(nx.conv1d(nx.Tensor(x_np), w)), axis=-1)
            nx.backward(nx.mean(out * out))
            grads.append(w.grad.copy())
        assert np.array_equal(grads[0], grads[1])

    def test_float32_default_float64_switchable(self):
        assert nx.Tensor([1.0]).dtype == np.float32
        with nx.precision(np.float64):
            assert nx.Tensor([1.0]).dtype == np.float64
        assert nx.get_default_dtype() == np.float32
