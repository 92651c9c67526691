"""Tensor core: forward values, backward rules, broadcast, graph contract."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmi import (
    Graph,
    GraphError,
    ShapeError,
    Tensor,
    concat,
    elementwise,
    finite_diff_check,
    gather_rows,
    huber,
    matmul,
    narrow,
    no_grad,
    parameter,
    reduce,
    softmax_axis,
)
from pmi.gradcheck import GradcheckError
from pmi.rng import Rng

from oracles import matmul_loops, softmax_list


def rnd(shape, seed=0, scale=1.0):
    return Rng(seed).normal(0.0, scale, shape)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[3.0, 4.0], [5.0, 6.0]]))
        np.testing.assert_allclose(out.data, [[3, 4], [5, 6]])

    def test_hand_1x2_2x1(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_allclose(out.data, [[11.0]])

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_matches_triple_loop_oracle(self):
        rng = Rng(11)
        for m, k, n in [(2, 3, 4), (5, 5, 5), (8, 8, 8), (1, 7, 2)]:
            a = rng.normal(size=(m, k))
            b = rng.normal(size=(k, n))
            got = matmul(Tensor(a), Tensor(b)).data
            want = np.array(matmul_loops(a.tolist(), b.tolist()))
            np.testing.assert_allclose(got, want, atol=1e-12)

    def test_gradcheck_4x5_5x3(self):
        a = parameter(rnd((4, 5), seed=1))
        b = parameter(rnd((5, 3), seed=2))
        err = finite_diff_check(lambda: matmul(a, b).sum(), {"a": a, "b": b})
        assert err < 1e-6


class TestElementwise:
    def test_sigmoid_zero(self):
        assert elementwise(Tensor([0.0]), "sigmoid").data[0] == pytest.approx(0.5)

    def test_huber_linear_region(self):
        # delta*(|x| - delta/2) at x=3, delta=1
        assert huber(Tensor([3.0]), delta=1.0).data[0] == pytest.approx(2.5)

    def test_huber_quadratic_region(self):
        assert huber(Tensor([0.5]), delta=1.0).data[0] == pytest.approx(0.125)

    def test_relu_backward(self):
        x = parameter([-1.0, 2.0])
        with Graph() as g:
            y = elementwise(x, "relu").sum()
            g.backward(y)
        np.testing.assert_allclose(x.grad, [0.0, 1.0])

    def test_log_domain_error(self):
        with pytest.raises(ValueError, match="non-positive"):
            elementwise(Tensor([1.0, 0.0]), "log")

    def test_broadcast_row_vector(self):
        a = Tensor(np.ones((3, 4)))
        b = Tensor(np.arange(4.0).reshape(1, 4))
        out = elementwise(a, "add", b)
        np.testing.assert_allclose(out.data, np.ones((3, 4)) + np.arange(4.0))

    def test_broadcast_incompatible(self):
        with pytest.raises(ShapeError, match="broadcast"):
            elementwise(Tensor(np.ones((3, 4))), "mul", Tensor(np.ones((3, 5))))

    def test_broadcast_backward_sums(self):
        a = parameter(np.ones((3, 4)))
        b = parameter(np.ones((1, 4)))
        with Graph() as g:
            out = (a * b).sum()
            g.backward(out)
        np.testing.assert_allclose(b.grad, np.full((1, 4), 3.0))

    @pytest.mark.parametrize("kind", ["relu", "sigmoid", "tanh", "exp", "leaky_relu"])
    def test_unary_gradchecks(self, kind):
        x = parameter(rnd((3, 4), seed=5) + 0.05)  # away from relu kink
        err = finite_diff_check(
            lambda: elementwise(x, kind).sum(), {"x": x})
        assert err < 1e-6

    def test_sigmoid_extreme_no_overflow(self):
        out = elementwise(Tensor([-800.0, 800.0]), "sigmoid").data
        assert np.all(np.isfinite(out))
        assert out[0] == pytest.approx(0.0, abs=1e-300)
        assert out[1] == pytest.approx(1.0)


class TestSoftmax:
    def test_uniform(self):
        out = softmax_axis(Tensor([0.0, 0.0, 0.0]), 0)
        np.testing.assert_allclose(out.data, [1 / 3] * 3)

    def test_overflow_guard(self):
        out = softmax_axis(Tensor([1000.0, 1000.0]), 0)
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_direct_evaluation(self):
        out = softmax_axis(Tensor([1.0, 2.0, 3.0]), 0)
        np.testing.assert_allclose(out.data, [0.09003, 0.24473, 0.66524], atol=1e-5)
        np.testing.assert_allclose(out.data, softmax_list([1.0, 2.0, 3.0]), atol=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 10 ** 6))
    def test_slices_sum_to_one_property(self, rank, axis_pick, seed):
        rng = Rng(seed)
        shape = tuple(rng.randint(1, 5) for _ in range(rank))
        axis = axis_pick % rank
        x = Tensor(rng.normal(0.0, 3.0, shape))
        out = softmax_axis(x, axis)
        sums = out.data.sum(axis=axis)
        assert np.all(np.abs(sums - 1.0) < 1e-9)
        assert np.all(out.data > 0.0)
        if shape[axis] > 1:
            assert np.all(out.data < 1.0)

    def test_gradcheck(self):
        x = parameter(rnd((3, 4), seed=7))
        err = finite_diff_check(
            lambda: (softmax_axis(x, 1) * Tensor(rnd((3, 4), seed=8))).sum(),
            {"x": x})
        assert err < 1e-6


class TestReduce:
    def test_mean_axis0(self):
        out = reduce(Tensor([[1.0, 3.0], [3.0, 5.0]]), "mean", 0)
        np.testing.assert_allclose(out.data, [2.0, 4.0])

    def test_sum_axis1(self):
        out = reduce(Tensor(np.ones((2, 3))), "sum", 1)
        np.testing.assert_allclose(out.data, [3.0, 3.0])

    def test_mean_gradient_is_one_over_n(self):
        x = parameter(rnd((3, 2), seed=3))
        with Graph() as g:
            g.backward(reduce(x, "mean", 0).sum())
        np.testing.assert_allclose(x.grad, np.full((3, 2), 1 / 3))


class TestConcat:
    def test_axis1_scalars(self):
        out = concat([Tensor([[1.0]]), Tensor([[2.0]])], axis=1)
        np.testing.assert_allclose(out.data, [[1.0, 2.0]])

    def test_shape_law(self):
        out = concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 5)))], axis=1)
        assert out.shape == (2, 8)

    def test_mismatch_error(self):
        with pytest.raises(ShapeError, match="side dimensions"):
            concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 3)))], axis=1)

    def test_split_round_trip(self):
        a, b = rnd((2, 3), seed=1), rnd((2, 5), seed=2)
        joined = concat([Tensor(a), Tensor(b)], axis=1)
        np.testing.assert_array_equal(narrow(joined, 1, 0, 3).data, a)
        np.testing.assert_array_equal(narrow(joined, 1, 3, 5).data, b)

    def test_backward_splits_gradient(self):
        a, b = parameter(np.ones((2, 2))), parameter(np.ones((2, 3)))
        up = rnd((2, 5), seed=9)
        with Graph() as g:
            g.backward((concat([a, b], axis=1) * Tensor(up)).sum())
        np.testing.assert_allclose(a.grad, up[:, :2])
        np.testing.assert_allclose(b.grad, up[:, 2:])


class TestGather:
    def test_rows(self):
        t = Tensor(np.arange(12.0).reshape(4, 3))
        out = gather_rows(t, [2, 0, 2])
        np.testing.assert_allclose(out.data, t.data[[2, 0, 2]])

    def test_duplicate_rows_accumulate_gradient(self):
        t = parameter(np.arange(6.0).reshape(3, 2))
        with Graph() as g:
            g.backward(gather_rows(t, [1, 1]).sum())
        np.testing.assert_allclose(t.grad, [[0, 0], [2, 2], [0, 0]])

    def test_out_of_range(self):
        with pytest.raises(ShapeError, match="out of range"):
            gather_rows(Tensor(np.zeros((2, 2))), [2])


class TestBackwardContract:
    def test_sum_gives_ones(self):
        x = parameter(rnd((2, 3), seed=4))
        with Graph() as g:
            g.backward(x.sum())
        np.testing.assert_allclose(x.grad, np.ones((2, 3)))

    def test_square_loss_analytic(self):
        x = parameter([1.0, -2.0])
        with Graph() as g:
            g.backward((x * x).sum())
        np.testing.assert_allclose(x.grad, [2.0, -4.0])

    def test_non_scalar_loss_rejected(self):
        x = parameter(rnd((2, 2), seed=6))
        with Graph() as g:
            y = x * 2.0
            with pytest.raises(GraphError, match="scalar"):
                g.backward(y)

    def test_accumulation_is_sum_of_single_uses(self):
        base = rnd((3,), seed=10)
        up1, up2 = rnd((3,), seed=11), rnd((3,), seed=12)

        def run(first, second):
            x = parameter(base)
            with Graph() as g:
                terms = []
                if first:
                    terms.append((x * Tensor(up1)).sum())
                if second:
                    terms.append((x.tanh() * Tensor(up2)).sum())
                total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
                g.backward(total)
            return x.grad.copy()

        both = run(True, True)
        np.testing.assert_array_equal(both, run(True, False) + run(False, True))

    def test_stale_nodes_on_shared_tape_are_inert(self):
        x = parameter([2.0])
        with Graph() as g:
            dead = (x * 3.0).sum()   # never backpropagated
            live = (x * x).sum()
            g.backward(live)
        np.testing.assert_allclose(x.grad, [4.0])
        assert dead.grad is None

    def test_no_grad_suppresses_recording(self):
        x = parameter([1.0])
        with Graph() as g:
            with no_grad():
                y = x * 2.0
            assert not y.requires_grad
            assert len(g.nodes) == 0

    def test_op_census(self):
        x = parameter(rnd((2, 2), seed=13))
        with Graph() as g:
            softmax_axis(x, 1).sum()
        census = g.op_census()
        assert census == {"softmax": 1, "sum": 1}


class TestFiniteDiffCheck:
    def test_sigmoid_chain(self):
        w = parameter(rnd((4, 3), seed=20, scale=0.5))
        x = Tensor(rnd((2, 4), seed=21))
        err = finite_diff_check(
            lambda: matmul(x, w).sigmoid().sum(), {"w": w})
        assert err < 1e-6

    def test_constant_function_zero_error(self):
        w = parameter(rnd((3,), seed=22))
        err = finite_diff_check(lambda: Tensor([1.5]).sum() + (w * 0.0).sum(),
                                {"w": w})
        assert err == 0.0

    def test_huber_kink_exclusion(self):
        delta = 1.0
        x = parameter([delta, -delta, 0.4])
        err = finite_diff_check(
            lambda: huber(x, delta=delta).sum(), {"x": x},
            kinks={"x": [-delta, delta]})
        assert err < 1e-8

    def test_eps_range_enforced(self):
        x = parameter([1.0])
        with pytest.raises(ValueError, match="eps"):
            finite_diff_check(lambda: x.sum(), {"x": x}, eps=1e-2)

    def test_nonfinite_reported_with_name(self):
        x = parameter([2.0])

        def f():
            return (x * Tensor([float("nan")])).sum()

        with pytest.raises(GradcheckError, match="x"):
            finite_diff_check(f, {"x": x})

    def test_every_core_op_gradchecks(self):
        rng = Rng(30)
        x = parameter(rng.normal(size=(3, 4)) + 0.1)
        y = parameter(rng.normal(size=(3, 4)) + 3.0)  # positive for log/sqrt

        def f():
            a = (x * y + x / y - y).tanh()
            b = softmax_axis(a, 1)
            c = concat([b, y.log(), y.sqrt()], axis=1)
            d = gather_rows(c, [0, 2, 1, 0])
            e = narrow(d, 1, 1, 6)
            return (e.reshape(4, 6).transpose() * 0.5).sigmoid().mean()

        err = finite_diff_check(f, {"x": x, "y": y})
        assert err < 1e-4


class TestDeterminism:
    def test_rng_streams_reproduce(self):
        a = Rng(99).normal(size=(5, 5))
        b = Rng(99).normal(size=(5, 5))
        np.testing.assert_array_equal(a, b)
        c = Rng(99, stream=1).normal(size=(5, 5))
        assert not np.array_equal(a, c)

    def test_box_muller_values_are_sane(self):
        xs = Rng(7).normal(size=10000)
        assert abs(float(np.mean(xs))) < 0.05
        assert abs(float(np.std(xs)) - 1.0) < 0.05

    def test_uniform_bounds(self):
        xs = Rng(3).uniform(2.0, 5.0, size=1000)
        assert float(np.min(xs)) >= 2.0 and float(np.max(xs)) < 5.0

    def test_shuffle_deterministic(self):
        items1 = list(range(20))
        items2 = list(range(20))
        Rng(5).shuffle(items1)
        Rng(5).shuffle(items2)
        assert items1 == items2 and items1 != list(range(20))
