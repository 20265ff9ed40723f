"""Numeric core: forward oracles, backward vs finite differences, shape policing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narlab import tensor as T
from narlab.gradcheck import grad_check
from narlab.tensor import ShapeError, Tensor


def rand(shape, seed, scale=1.0, offset=0.0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal(shape) * scale + offset)


class TestForwardOracles:
    def test_softmax_pinned_values(self):
        # independently computed: e^k / (e^1 + e^2 + e^3)
        out = T.softmax(Tensor([1.0, 2.0, 3.0])).data
        np.testing.assert_allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=1e-5)

    def test_softmax_rows_sum_to_one(self):
        x = rand((4, 7), seed=0, scale=5.0)
        s = T.softmax(x).data.sum(axis=-1)
        np.testing.assert_allclose(s, 1.0, atol=1e-12)

    def test_softmax_shift_invariance(self):
        x = rand((3, 5), seed=1)
        a = T.softmax(x).data
        b = T.softmax(Tensor(x.data + 1000.0)).data
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_softmax_extreme_logits_no_overflow(self):
        out = T.softmax(Tensor([1e4, 0.0, -1e4])).data
        assert np.isfinite(out).all()
        np.testing.assert_allclose(out[0], 1.0, atol=1e-12)

    def test_log_softmax_matches_log_of_softmax(self):
        x = rand((2, 6), seed=2, scale=3.0)
        np.testing.assert_allclose(
            T.log_softmax(x).data, np.log(T.softmax(x).data), atol=1e-12
        )

    def test_layer_norm_moments(self):
        x = rand((5, 16), seed=3, scale=4.0, offset=2.0)
        out = T.layer_norm(x).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-8)

    def test_layer_norm_constant_row_is_finite(self):
        out = T.layer_norm(Tensor(np.full((2, 8), 3.0))).data
        assert np.isfinite(out).all()

    def test_matmul_matches_numpy(self):
        a, b = rand((3, 4), seed=4), rand((4, 5), seed=5)
        np.testing.assert_allclose(T.matmul(a, b).data, a.data @ b.data, atol=1e-12)

    def test_batched_matmul_matches_numpy(self):
        a, b = rand((2, 3, 4), seed=6), rand((2, 4, 5), seed=7)
        np.testing.assert_allclose(T.matmul(a, b).data, a.data @ b.data, atol=1e-12)

    def test_masked_fill_replaces_disallowed(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0]])
        out = T.masked_fill(x, np.array([[True, False], [False, True]]))
        np.testing.assert_array_equal(out.data, [[1.0, -1e30], [-1e30, 4.0]])

    def test_masked_fill_then_softmax_zeroes_masked(self):
        x = rand((2, 4), seed=8)
        allowed = np.array([[True, True, False, False], [True, False, True, False]])
        p = T.softmax(T.masked_fill(x, allowed)).data
        assert (p[~allowed] < 1e-200).all()
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_gather_rows(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = T.gather_rows(table, [[0, 3], [1, 1]])
        assert out.shape == (2, 2, 3)
        np.testing.assert_array_equal(out.data[0, 1], [9.0, 10.0, 11.0])

    def test_gather_rows_rejects_out_of_range(self):
        table = Tensor(np.zeros((4, 3)))
        with pytest.raises(IndexError):
            T.gather_rows(table, [4])
        with pytest.raises(IndexError):
            T.gather_rows(table, [-1])


class TestShapePolicing:
    def test_elementwise_mismatch_reports_both_shapes(self):
        with pytest.raises(ShapeError) as exc:
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((3, 2)))
        assert "(2, 3)" in str(exc.value) and "(3, 2)" in str(exc.value)

    def test_concat_rejects_mismatched_off_axis_dims(self):
        with pytest.raises(ShapeError):
            T.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)
        with pytest.raises(ValueError):
            T.concat([])

    def test_suffix_broadcast_allowed(self):
        out = Tensor(np.zeros((2, 3, 4))) + Tensor(np.ones(4))
        assert out.shape == (2, 3, 4)

    def test_leading_broadcast_rejected(self):
        # (2, 1) against (2, 3) is numpy-legal but outside the suffix rule
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 1))) + Tensor(np.zeros((2, 3)))

    def test_matmul_inner_mismatch(self):
        with pytest.raises(ShapeError) as exc:
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(exc.value) and "(4, 5)" in str(exc.value)

    def test_matmul_batch_mismatch(self):
        with pytest.raises(ShapeError):
            T.matmul(Tensor(np.zeros((2, 3, 4))), Tensor(np.zeros((3, 4, 5))))

    def test_backward_rejects_nonscalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ShapeError):
            (x * x).backward()

    def test_bad_reshape(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 3))).reshape(4, 2)


class TestBackwardAnalytic:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_grad(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, -4.0, 6.0], atol=1e-12)

    def test_grad_accumulates_over_reuse(self):
        x = Tensor([2.0], requires_grad=True)
        (x + x).sum().backward()
        np.testing.assert_allclose(x.grad, [2.0])

    def test_zero_grad_resets(self):
        x = Tensor([1.0], requires_grad=True)
        (x * x).sum().backward()
        x.zero_grad()
        assert x.grad is None

    def test_no_grad_blocks_recording(self):
        x = Tensor([1.0], requires_grad=True)
        with T.no_grad():
            y = (x * x).sum()
        assert y.node is None and not y.requires_grad

    def test_constant_inputs_get_no_grad(self):
        x = Tensor([1.0], requires_grad=True)
        c = Tensor([3.0])
        (x * c).sum().backward()
        assert c.grad is None

    def test_diamond_graph(self):
        # y = x*x + x*x: two paths must both contribute
        x = Tensor([3.0], requires_grad=True)
        s = x * x
        (s + s).sum().backward()
        np.testing.assert_allclose(x.grad, [12.0], atol=1e-12)


class TestBackwardFiniteDiff:
    """Every primitive's backward against central differences."""

    def check(self, f, shapes, seed, scale=1.0, offset=0.0):
        inputs = [rand(s, seed=seed + i, scale=scale, offset=offset) for i, s in enumerate(shapes)]
        res = grad_check(f, inputs)
        assert res.passed, f"max rel err {res.max_err:.3e}"

    def test_add(self):
        self.check(lambda a, b: (a + b).sum(), [(3, 4), (3, 4)], seed=10)

    def test_add_suffix_broadcast(self):
        self.check(lambda a, b: ((a + b) * (a + b)).sum(), [(2, 3, 4), (4,)], seed=11)

    def test_subtract(self):
        self.check(lambda a, b: ((a - b) * (a - b)).sum(), [(3, 4), (3, 4)], seed=12)

    def test_multiply(self):
        self.check(lambda a, b: (a * b).sum(), [(3, 4), (3, 4)], seed=13)

    def test_multiply_scalar_broadcast(self):
        self.check(lambda a, b: (a * b).sum(), [(3, 4), ()], seed=14)

    def test_divide(self):
        self.check(lambda a, b: (a / b).sum(), [(3, 4), (3, 4)], seed=15, offset=3.0)

    def test_exp(self):
        self.check(lambda x: T.exp(x).sum(), [(3, 4)], seed=16)

    def test_log(self):
        self.check(lambda x: T.log(x).sum(), [(3, 4)], seed=17, scale=0.3, offset=2.0)

    def test_tanh(self):
        self.check(lambda x: T.tanh(x).sum(), [(3, 4)], seed=18)

    def test_relu(self):
        # keep points away from the kink
        x = rand((3, 4), seed=19)
        x.data[np.abs(x.data) < 0.05] += 0.1
        res = grad_check(lambda t: T.relu(t).sum(), [x])
        assert res.passed, f"max rel err {res.max_err:.3e}"

    def test_matmul(self):
        self.check(lambda a, b: T.matmul(a, b).sum(), [(3, 4), (4, 2)], seed=20)

    def test_matmul_batched(self):
        self.check(lambda a, b: T.matmul(a, b).sum(), [(2, 3, 4), (2, 4, 2)], seed=21)

    def test_matmul_broadcast_rhs(self):
        self.check(lambda a, b: T.matmul(a, b).sum(), [(2, 3, 4), (4, 2)], seed=22)

    def test_softmax(self):
        self.check(lambda x: (T.softmax(x) * T.softmax(x)).sum(), [(2, 5)], seed=23)

    def test_log_softmax(self):
        w = Tensor(np.random.default_rng(24).standard_normal((2, 5)))
        self.check(lambda x: (T.log_softmax(x) * w).sum(), [(2, 5)], seed=24)

    def test_layer_norm(self):
        w = Tensor(np.random.default_rng(25).standard_normal((3, 8)))
        self.check(lambda x: (T.layer_norm(x) * w).sum(), [(3, 8)], seed=25, scale=2.0)

    def test_reshape_transpose(self):
        self.check(
            lambda x: (x.reshape(4, 3).transpose() * x.reshape(3, 4)).sum(),
            [(2, 6)],
            seed=26,
        )

    def test_transpose_axes(self):
        self.check(lambda x: (x.transpose((1, 0, 2)) * x.transpose((1, 0, 2))).sum(),
                   [(2, 3, 4)], seed=27)

    def test_sum_axis(self):
        self.check(lambda x: (x.sum(axis=1) * x.sum(axis=1)).sum(), [(3, 4)], seed=28)

    def test_mean(self):
        self.check(lambda x: (x.mean(axis=0) * x.mean(axis=0)).sum(), [(3, 4)], seed=29)

    def test_mean_all(self):
        self.check(lambda x: x.mean() * x.mean(), [(3, 4)], seed=30)

    def test_masked_fill(self):
        allowed = np.random.default_rng(31).random((3, 4)) > 0.4
        self.check(
            lambda x: T.softmax(T.masked_fill(x, allowed)).sum(axis=-1).sum(),
            [(3, 4)],
            seed=31,
        )

    def test_gather_rows(self):
        ids = np.array([[0, 2], [2, 1]])
        self.check(lambda t: (T.gather_rows(t, ids) * T.gather_rows(t, ids)).sum(),
                   [(4, 3)], seed=32)

    def test_concat_axis0(self):
        self.check(lambda a, b: (T.concat([a, b]) * T.concat([a, b])).sum(),
                   [(2, 3), (4, 3)], seed=34)

    def test_concat_axis1(self):
        self.check(lambda a, b: T.exp(T.concat([a, b], axis=1)).sum(),
                   [(2, 3), (2, 5)], seed=35)

    def test_composite_mlp(self):
        # small end-to-end chain touching most primitives at once
        def f(x, w1, w2):
            h = T.tanh(T.matmul(x, w1))
            return T.log_softmax(T.matmul(T.layer_norm(h), w2)).sum()

        self.check(f, [(2, 3), (3, 5), (5, 4)], seed=33)


class TestHypothesisInvariants:
    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
    def test_softmax_simplex(self, xs):
        p = T.softmax(Tensor(xs)).data
        assert (p >= 0).all()
        assert abs(p.sum() - 1.0) < 1e-9

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(2, 10))
    def test_layer_norm_unit_variance(self, seed, d):
        x = np.random.default_rng(seed).standard_normal(d) * 3.0 + 1.0
        out = T.layer_norm(Tensor(x)).data
        assert abs(out.mean()) < 1e-9
        assert abs(out.var() - 1.0) < 1e-8
