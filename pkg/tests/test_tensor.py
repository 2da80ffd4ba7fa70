import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import analytic_grads, gradcheck, rel_err

from dtca import tensor as T
from dtca.exceptions import ContractError, DimensionError
from dtca.tensor import ComputationRecord, Tensor


def randt(rng, *shape, req=True):
    return Tensor(rng.standard_normal(shape), requires_grad=req, dtype=np.float64)


class TestMatmul:
    def test_identity(self, rng):
        a = Tensor(rng.standard_normal((4, 4)), dtype=np.float64)
        eye = Tensor(np.eye(4), dtype=np.float64)
        assert np.array_equal(T.matmul(eye, a).data, a.data)

    def test_hand_expansion(self):
        out = T.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_grad_vs_finite_differences(self, rng):
        a = randt(rng, 3, 4)
        b = randt(rng, 4, 5)
        gradcheck(lambda: T.tsum(T.matmul(a, b)), [a, b], tol=1e-6)

    def test_grad_of_sum_is_ones_times_bt(self, rng):
        a = randt(rng, 3, 4)
        b = randt(rng, 4, 5, req=False)
        (grad,) = analytic_grads(lambda: T.tsum(T.matmul(a, b)), [a])
        expected = np.ones((3, 5)) @ b.data.T
        assert rel_err(grad, expected) < 1e-12

    def test_batched_broadcast(self, rng):
        a = randt(rng, 2, 3, 3, 4)
        b = randt(rng, 4, 5)
        out = T.matmul(a, b)
        assert out.shape == (2, 3, 3, 5)
        gradcheck(lambda: T.tsum(T.matmul(a, b)), [a, b], tol=1e-6)


class TestSoftmax:
    def test_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0], dtype=np.float64))
        assert np.allclose(out.data, [1 / 3] * 3, atol=1e-12)

    def test_overflow_safe(self):
        out = T.softmax(Tensor([1000.0, 0.0], dtype=np.float64))
        assert np.all(np.isfinite(out.data))
        assert np.allclose(out.data, [1.0, 0.0], atol=1e-12)

    def test_closed_form(self):
        out = T.softmax(Tensor([math.log(2.0), 0.0], dtype=np.float64))
        assert np.allclose(out.data, [2 / 3, 1 / 3], atol=1e-12)

    @given(st.integers(0, 2 ** 31 - 1), st.integers(2, 5), st.integers(2, 6))
    @settings(max_examples=30, deadline=None)
    def test_rows_sum_to_one(self, seed, rows, cols):
        x = np.random.default_rng(seed).normal(0, 5, size=(rows, cols))
        out = T.softmax(Tensor(x, dtype=np.float64), axis=-1)
        assert np.allclose(out.data.sum(axis=-1), 1.0, atol=1e-6)

    def test_grad_of_sum_is_zero(self, rng):
        x = randt(rng, 3, 5)
        (grad,) = analytic_grads(lambda: T.tsum(T.softmax(x, axis=-1)), [x])
        assert np.allclose(grad, 0.0, atol=1e-12)


class TestLayerNorm:
    def test_constant_slice_zeros(self):
        x = Tensor(np.full((2, 4), 7.0), dtype=np.float64)
        out = T.layer_norm(x, axis=-1)
        assert np.allclose(out.data, 0.0)

    def test_two_point_slice(self):
        out = T.layer_norm(Tensor([[1.0, 3.0]], dtype=np.float64), eps=1e-12)
        assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_zero_mean_unit_variance(self, rng):
        x = randt(rng, 5, 8, req=False)
        out = T.layer_norm(x, axis=-1).data
        assert np.allclose(out.mean(axis=-1), 0.0, atol=1e-10)
        assert np.allclose(out.var(axis=-1), 1.0, atol=1e-4)

    def test_grad_vs_finite_differences(self, rng):
        x = randt(rng, 3, 6)
        g = randt(rng, 6)
        b = randt(rng, 6)
        gradcheck(
            lambda: T.tmean(T.mul(T.layer_norm(x, gain=g, bias=b), Tensor(
                np.arange(18, dtype=np.float64).reshape(3, 6)))),
            [x, g, b],
            tol=1e-6,
        )


class TestRearrange:
    def test_round_trip_restores_exactly(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 3, 5)), dtype=np.float64)
        pattern = "b c t n -> (b t) c n"
        y = T.rearrange(x, pattern)
        back = T.rearrange(y, T.invert_pattern(pattern), b=2)
        assert np.array_equal(back.data, x.data)

    def test_merge_preserves_row_major_order(self):
        x = Tensor(np.arange(24.0).reshape(2, 4, 3))
        out = T.rearrange(x, "a b c -> (a b) c")
        assert np.array_equal(out.data, x.data.reshape(8, 3))

    def test_split_index_arithmetic_oracle(self):
        # channel split with s=2 sends (b, c, t, n) to (b*2 + c//2, c%2, t, n)
        b_sz, c_sz, t_sz, n_sz, s = 1, 4, 2, 3, 2
        x = np.arange(b_sz * c_sz * t_sz * n_sz, dtype=np.float64).reshape(
            b_sz, c_sz, t_sz, n_sz
        )
        out = T.rearrange(Tensor(x), "b (s c) t n -> (b s) c t n", s=s).data
        for b in range(b_sz):
            for c in range(c_sz):
                for t in range(t_sz):
                    for n in range(n_sz):
                        dest = (b * s + c // (c_sz // s), c % (c_sz // s), t, n)
                        assert out[dest] == x[b, c, t, n]
        assert out[1, 1, 1, 2] == x[0, 3, 1, 2]

    def test_non_divisible_factor_errors(self):
        with pytest.raises(DimensionError, match="divisible"):
            T.rearrange(Tensor(np.zeros((2, 5))), "a (s c) -> (a s) c", s=2)

    def test_grad_is_inverse_movement(self, rng):
        x = randt(rng, 2, 3, 4)
        w = Tensor(rng.standard_normal((2, 12)), dtype=np.float64)
        gradcheck(
            lambda: T.tsum(T.mul(T.rearrange(x, "a b c -> a (b c)"), w)),
            [x],
            tol=1e-7,
        )

    @given(
        st.integers(0, 2 ** 31 - 1),
        st.integers(1, 3),
        st.sampled_from([2, 4]),
        st.integers(1, 4),
        st.integers(1, 3),
    )
    @settings(max_examples=40, deadline=None)
    def test_property_round_trip(self, seed, b, c, t, n):
        x = np.random.default_rng(seed).normal(size=(b, c, t, n))
        for pattern, sizes in [
            ("b c t n -> b (c t) n", {"c": c}),
            ("b c t n -> (b t) c n", {"b": b}),
            ("b (s c) t n -> (b s) c t n", {"s": 2, "b": b}),
        ]:
            if "s" in sizes and c % 2:
                continue
            y = T.rearrange(Tensor(x, dtype=np.float64), pattern, **sizes)
            back = T.rearrange(y, T.invert_pattern(pattern), **sizes)
            assert np.array_equal(back.data, x)


class TestBackward:
    def test_sum_grad_is_ones(self, rng):
        x = randt(rng, 3, 4)
        (grad,) = analytic_grads(lambda: T.tsum(x), [x])
        assert np.array_equal(grad, np.ones((3, 4)))

    def test_non_scalar_loss_rejected(self, rng):
        x = randt(rng, 3)
        with ComputationRecord() as record:
            y = T.mul(x, 2.0)
        with pytest.raises(ContractError, match="scalar"):
            record.backward(y)

    def test_three_layer_graph_vs_finite_differences(self, rng):
        x = randt(rng, 4, 3)
        w1 = randt(rng, 3, 6)
        w2 = randt(rng, 6, 2)
        g = randt(rng, 6)
        b = randt(rng, 6)

        def build():
            h = T.gelu(T.matmul(x, w1))
            h = T.layer_norm(h, gain=g, bias=b, axis=-1)
            out = T.matmul(h, w2)
            return T.tmean(T.mul(out, out))

        worst = gradcheck(build, [x, w1, w2, g, b], tol=1e-5)
        assert worst < 1e-5

    def test_grad_accumulates_over_reuse(self, rng):
        x = randt(rng, 3)
        (grad,) = analytic_grads(lambda: T.tsum(T.add(x, x)), [x])
        assert np.array_equal(grad, np.full(3, 2.0))

    def test_leaves_reachable_all_receive_grads(self, rng):
        leaves = [randt(rng, 2, 2) for _ in range(3)]
        with ComputationRecord() as record:
            loss = T.tsum(T.add(T.mul(leaves[0], leaves[1]), leaves[2]))
        record.backward(loss)
        assert all(leaf.grad is not None for leaf in leaves)


class TestBroadcastRules:
    def test_leading_broadcast_allowed(self, rng):
        bias = randt(rng, 5)
        x = randt(rng, 2, 3, 5)
        out = T.add(x, bias)
        assert out.shape == (2, 3, 5)
        gradcheck(lambda: T.tsum(T.mul(T.add(x, bias), T.add(x, bias))),
                  [x, bias], tol=1e-6)

    def test_middle_axis_broadcast_rejected(self):
        with pytest.raises(DimensionError, match="expand"):
            T.add(Tensor(np.zeros((2, 1, 3))), Tensor(np.zeros((2, 4, 3))))

    def test_explicit_expand(self, rng):
        x = randt(rng, 2, 1, 3)
        y = randt(rng, 2, 4, 3)
        out = T.add(T.expand(x, (2, 4, 3)), y)
        assert out.shape == (2, 4, 3)
        gradcheck(lambda: T.tsum(T.mul(T.add(T.expand(x, (2, 4, 3)), y), y)),
                  [x, y], tol=1e-6)


class TestGeluSliceConcat:
    def test_gelu_matches_reference(self):
        x = np.linspace(-3, 3, 13)
        out = T.gelu(Tensor(x, dtype=np.float64)).data
        ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
        assert np.allclose(out, ref, atol=1e-12)

    def test_slice_concat_round_trip(self, rng):
        x = Tensor(rng.standard_normal((2, 6, 3)), dtype=np.float64)
        parts = [T.slice_axis(x, 1, 0, 2), T.slice_axis(x, 1, 2, 6)]
        assert np.array_equal(T.concat(parts, axis=1).data, x.data)

    def test_gradcheck_mixed(self, rng):
        x = randt(rng, 2, 6, 3)

        def build():
            left = T.slice_axis(x, 1, 0, 3)
            right = T.slice_axis(x, 1, 3, 6)
            y = T.concat([T.gelu(left), right], axis=1)
            return T.tmean(T.mul(y, y))

        gradcheck(build, [x], tol=1e-6)


def test_composite_gradient_property(rng):
    # bounded inputs through the full op set, f64, rel err < 1e-5
    x = Tensor(rng.uniform(-3, 3, size=(3, 4)), requires_grad=True,
               dtype=np.float64)
    w = Tensor(rng.uniform(-1, 1, size=(4, 4)), requires_grad=True,
               dtype=np.float64)

    def build():
        h = T.softmax(T.matmul(x, w), axis=-1)
        h = T.rearrange(h, "a b -> b a")
        h = T.layer_norm(h, axis=-1)
        return T.tmean(T.mul(h, T.gelu(h)))

    assert gradcheck(build, [x, w], tol=1e-5) < 1e-5
