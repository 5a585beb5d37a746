import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hyperseries.errors import (
    DegenerateMaskError,
    DeterminismError,
    NumericError,
    ShapeError,
)
from hyperseries.numerics import (
    Mlp,
    Parameter,
    Tensor,
    adam_step,
    add,
    concat,
    grad_check,
    leaky_relu,
    masked_softmax,
    matmul,
    mean_all,
    mlp_forward,
    mul,
    no_grad,
    pool,
    put_rows,
    reshape,
    scatter_pairs,
    sub,
    sum_all,
    take_rows,
    transpose,
)


class TestMatmul:
    def test_identity(self):
        a = np.array([[1.0, 2.0], [3.0, 4.0]])
        assert_array_equal(matmul(np.eye(2), a).data, a)

    def test_hand_product(self):
        out = matmul([[1.0, 2.0]], [[3.0], [4.0]])
        assert_array_equal(out.data, [[11.0]])

    def test_zero_left(self):
        out = matmul(np.zeros((2, 2)), np.arange(6.0).reshape(2, 3))
        assert_array_equal(out.data, np.zeros((2, 3)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_associativity_random_chains(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            dims = rng.integers(1, 6, size=4)
            a = rng.standard_normal((dims[0], dims[1]))
            b = rng.standard_normal((dims[1], dims[2]))
            c = rng.standard_normal((dims[2], dims[3]))
            left = matmul(matmul(a, b), c).data
            right = matmul(a, matmul(b, c)).data
            assert np.max(np.abs(left - right)) < 1e-9


class TestMaskedSoftmax:
    def test_full_mask_out(self):
        out = masked_softmax(np.zeros((1, 2)), np.array([[1.0, 0.0]]), 1e9)
        assert out.data[0, 0] > 1.0 - 1e-9
        assert out.data[0, 1] < 1e-9

    def test_symmetry(self):
        out = masked_softmax(np.zeros((1, 2)), np.ones((1, 2)), 1e9)
        assert_allclose(out.data, [[0.5, 0.5]], atol=1e-15)

    def test_hand_softmax(self):
        out = masked_softmax(np.array([[math.log(2.0), 0.0]]), np.ones((1, 2)), 1e9)
        assert_allclose(out.data, [[2.0 / 3.0, 1.0 / 3.0]], atol=1e-15)

    def test_degenerate_row(self):
        with pytest.raises(DegenerateMaskError):
            masked_softmax(np.zeros((2, 2)), np.array([[1.0, 1.0], [0.0, 0.0]]), 1e9)

    def test_rows_sum_to_one_and_masked_mass(self):
        rng = np.random.default_rng(11)
        for _ in range(25):
            m, n = rng.integers(1, 7), rng.integers(2, 7)
            logits = rng.uniform(-100.0, 100.0, size=(m, n))
            mask = (rng.random((m, n)) < 0.5).astype(float)
            mask[np.arange(m), rng.integers(0, n, size=m)] = 1.0
            out = masked_softmax(logits, mask, 1e6).data
            assert np.max(np.abs(out.sum(axis=1) - 1.0)) < 1e-12
            assert np.all(out[mask == 0.0] < 1e-9)

    def test_nonpositive_constant_rejected(self):
        with pytest.raises(NumericError):
            masked_softmax(np.zeros((1, 2)), np.ones((1, 2)), 0.0)


class TestLeakyRelu:
    def test_zero(self):
        assert leaky_relu(np.zeros((1, 1))).data[0, 0] == 0.0

    def test_hand_values(self):
        out = leaky_relu(np.array([[-1.0, 2.0]]), slope=0.01)
        assert_array_equal(out.data, [[-0.01, 2.0]])

    def test_slope_near_one_is_identity(self):
        x = np.array([[-3.0, 0.5, 2.0]])
        out = leaky_relu(x, slope=1.0 - 1e-12)
        assert_allclose(out.data, x, rtol=1e-11)


class TestMlpForward:
    def test_identity_layer(self):
        w = Parameter(np.eye(3), "w")
        b = Parameter(np.zeros((1, 3)), "b")
        x = np.arange(6.0).reshape(2, 3)
        assert_array_equal(mlp_forward(x, [(w, b)]).data, x)

    def test_affine_hand_value(self):
        w = Parameter([[2.0]], "w")
        b = Parameter([[1.0]], "b")
        assert_array_equal(mlp_forward([[3.0]], [(w, b)]).data, [[7.0]])

    def test_zero_weights(self):
        w = Parameter(np.zeros((2, 2)), "w")
        b = Parameter(np.zeros((1, 2)), "b")
        out = mlp_forward(np.ones((3, 2)), [(w, b)])
        assert_array_equal(out.data, np.zeros((3, 2)))


class TestAdam:
    def test_zero_gradient_is_identity(self):
        p = Parameter(np.array([[1.5, -2.0]]), "p")
        p.zero_grad()
        adam_step(p, lr=0.1, t=1)
        assert_array_equal(p.data, [[1.5, -2.0]])

    def test_hand_step(self):
        p = Parameter(np.zeros((1, 1)), "p")
        p.grad[...] = 1.0
        adam_step(p, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, t=1)
        expected = -1e-3 / math.sqrt(1.0 + 1e-8)
        assert abs(p.data[0, 0] - expected) < 1e-18
        assert abs(p.data[0, 0] - (-9.99999995e-4)) < 1e-12

    def test_mirrored_gradients_stay_mirrored(self):
        a = Parameter(np.array([[0.3]]), "a")
        b = Parameter(np.array([[-0.3]]), "b")
        for t in (1, 2):
            a.grad[...] = 1.0
            b.grad[...] = -1.0
            adam_step(a, lr=1e-2, t=t)
            adam_step(b, lr=1e-2, t=t)
            assert a.data[0, 0] == -b.data[0, 0]

    def test_nonfinite_gradient_rejected(self):
        p = Parameter(np.zeros((1, 1)), "p")
        p.grad[...] = np.inf
        with pytest.raises(NumericError):
            adam_step(p, lr=1e-3, t=1)

    def test_step_count_validated(self):
        p = Parameter(np.zeros((1, 1)), "p")
        p.zero_grad()
        with pytest.raises(NumericError):
            adam_step(p, lr=1e-3, t=0)


class TestGradCheck:
    def test_quadratic_loss(self):
        p = Parameter(np.array([[1.0, -2.0], [0.5, 3.0]]), "p")

        def loss_fn():
            return mul(mean_all(mul(p, p)), 2.0)

        err = grad_check(loss_fn, [p], h=1e-5)
        assert err < 1e-8

    def test_constant_loss(self):
        p = Parameter(np.ones((2, 2)), "p")

        def loss_fn():
            return Tensor(np.asarray(4.2)) + mul(sum_all(p), 0.0)

        assert grad_check(loss_fn, [p], h=1e-5) < 1e-10

    def test_nondeterminism_detected(self):
        p = Parameter(np.ones((1, 1)), "p")
        state = {"n": 0.0}

        def loss_fn():
            state["n"] += 1.0
            return mul(sum_all(p), state["n"])

        with pytest.raises(DeterminismError):
            grad_check(loss_fn, [p], h=1e-5)

    def test_step_size_validated(self):
        p = Parameter(np.ones((1, 1)), "p")
        with pytest.raises(NumericError):
            grad_check(lambda: sum_all(p), [p], h=1e-2)


def _check_op(build, arrays, seed=0, tol=1e-6):
    """grad_check a composite: params <- arrays, loss = mean(build(params))."""
    params = [Parameter(a, f"p{i}") for i, a in enumerate(arrays)]

    def loss_fn():
        return mean_all(build(*params))

    err = grad_check(loss_fn, params, h=1e-5, rng=np.random.default_rng(seed))
    assert err < tol, f"rel err {err}"


class TestOpAdjoints:
    """Finite-difference checks per op on random tensors with extents <= 5."""

    rng = np.random.default_rng(99)

    def r(self, *shape):
        return self.rng.standard_normal(shape)

    def test_add_sub_mul(self):
        _check_op(lambda a, b: add(a, b), [self.r(4, 3), self.r(4, 3)])
        _check_op(lambda a, b: sub(a, b), [self.r(4, 3), self.r(4, 3)])
        _check_op(lambda a, b: mul(a, b), [self.r(4, 3), self.r(4, 3)])

    def test_broadcast_bias(self):
        _check_op(lambda a, b: add(a, b), [self.r(5, 3), self.r(1, 3)])
        _check_op(lambda a, b: mul(a, b), [self.r(5, 3), self.r(5, 1)])

    def test_matmul(self):
        _check_op(lambda a, b: matmul(a, b), [self.r(4, 5), self.r(5, 3)])

    def test_transpose_reshape(self):
        _check_op(lambda a: transpose(a), [self.r(3, 5)])
        _check_op(lambda a: reshape(a, (5, 3)), [self.r(3, 5)])

    def test_concat(self):
        _check_op(lambda a, b: concat([a, b], axis=0), [self.r(2, 3), self.r(4, 3)])
        _check_op(lambda a, b: concat([a, b], axis=1), [self.r(3, 2), self.r(3, 4)])

    def test_take_put_scatter(self):
        idx = [0, 2, 2, 1]
        _check_op(lambda a: take_rows(a, idx), [self.r(3, 4)])
        _check_op(lambda a: put_rows(a, [3, 0], 5), [self.r(2, 3)])
        rows, cols = [0, 1, 2, 0], [1, 0, 2, 2]
        _check_op(
            lambda v: scatter_pairs(v, rows, cols, (3, 3)), [self.r(4, 1)]
        )

    def test_pool(self):
        _check_op(lambda a: pool(a, 2, "avg"), [self.r(5, 3)])
        _check_op(lambda a: pool(a, 2, "max"), [self.r(5, 3)])

    def test_leaky_relu(self):
        x = self.rng.uniform(0.2, 1.0, size=(4, 4)) * np.sign(self.r(4, 4))
        _check_op(lambda a: leaky_relu(a), [x])

    def test_masked_softmax(self):
        mask = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 1.0, 1.0]])
        _check_op(
            lambda a: masked_softmax(mul(a, a), mask, 1e9), [self.r(3, 3)]
        )

    def test_reductions(self):
        _check_op(lambda a: reshape(sum_all(a), (1, 1)), [self.r(4, 2)])

    def test_mlp(self):
        w1, b1 = self.r(3, 4), self.r(1, 4)
        w2, b2 = self.r(4, 2), self.r(1, 2)
        x = self.r(5, 3)
        _check_op(
            lambda a, b, c, d: mlp_forward(x, [(a, b), (c, d)]),
            [w1, b1, w2, b2],
        )


class TestTensorBasics:
    def test_nonfinite_rejected(self):
        with np.errstate(over="ignore"), pytest.raises(NumericError):
            mul(np.array([[1e308]]), np.array([[10.0]]))

    def test_backward_requires_scalar(self):
        t = Tensor(np.ones((2, 2)), requires_grad=True)
        with pytest.raises(ShapeError):
            add(t, t).backward()

    def test_zero_grad_exactly_zero(self):
        p = Parameter(np.ones((2, 2)), "p")
        sum_all(mul(p, p)).backward()
        assert np.any(p.grad != 0.0)
        p.zero_grad()
        assert_array_equal(p.grad, np.zeros((2, 2)))

    def test_no_grad_skips_tape(self):
        p = Parameter(np.ones((2, 2)), "p")
        with no_grad():
            out = mul(p, p)
        assert not out.requires_grad

    def test_gradients_accumulate_across_backwards(self):
        p = Parameter(np.ones((1, 1)), "p")
        p.zero_grad()
        sum_all(mul(p, 2.0)).backward()
        sum_all(mul(p, 3.0)).backward()
        assert p.grad[0, 0] == 5.0

    def test_mlp_container(self):
        rng = np.random.default_rng(0)
        net = Mlp([3, 4, 2], rng, "net")
        assert len(net.parameters()) == 4
        out = net(np.ones((2, 3)))
        assert out.data.shape == (2, 2)
