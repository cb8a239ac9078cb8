import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from medaug.tensor import (
    Adam,
    OptimizerState,
    Tensor,
    adam_step,
    causal_fill,
    cross_entropy,
    embedding,
    gelu,
    grad_check,
    grad_check_all,
    kl_divergence,
    layer_norm,
    matmul,
    mean,
    mul,
    no_grad,
    parameter,
    reshape,
    softmax_rows,
    tanh,
    total,
    transpose,
)

from oracles import central_difference


def _fd_rel_err(f_tensor, x: np.ndarray) -> float:
    """Analytic gradient of f at x vs. the independent central-difference oracle."""
    p = parameter(x.copy())
    f_tensor(p).backward()
    numeric = np.array(central_difference(lambda v: f_tensor(Tensor(np.array(v).reshape(x.shape))).item(), x.ravel().tolist()))
    a = p.grad.ravel()
    return float(np.max(np.abs(a - numeric) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(numeric)))))


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_times_column(self):
        assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        A, B = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
        assert _fd_rel_err(lambda a: total(matmul(a, Tensor(B))), A) <= 1e-6
        assert _fd_rel_err(lambda b: total(matmul(Tensor(A), b)), B) <= 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ValueError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_batched(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 4, 5))
        np.testing.assert_allclose(matmul(Tensor(a), Tensor(b)).data, a @ b)


class TestSoftmax:
    def test_symmetric(self):
        np.testing.assert_array_equal(softmax_rows(Tensor([[0.0, 0.0]])).data, [[0.5, 0.5]])

    def test_large_logit_does_not_overflow(self):
        out = softmax_rows(Tensor([[1000.0, 0.0]])).data
        assert np.all(np.isfinite(out))
        assert out[0, 0] == pytest.approx(1.0) and out[0, 1] == pytest.approx(0.0, abs=1e-300)

    def test_random_rows_sum_to_one(self):
        x = np.random.default_rng(2).normal(scale=5, size=(8, 17))
        assert np.max(np.abs(softmax_rows(Tensor(x)).data.sum(axis=1) - 1.0)) <= 1e-12

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (3, 6), elements=st.floats(-500, 500)))
    def test_rows_are_distributions(self, x):
        y = softmax_rows(Tensor(x)).data
        assert np.all((y >= 0) & (y <= 1))
        assert np.all(np.abs(y.sum(axis=1) - 1.0) <= 1e-12)


class TestCrossEntropy:
    def test_uniform_logits_give_ln2(self):
        assert cross_entropy(Tensor([[0.0, 0.0]]), [0]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_confident_correct_is_near_zero(self):
        assert cross_entropy(Tensor([[30.0, -30.0]]), [0]).item() < 1e-20

    def test_gradient_matches_finite_differences(self):
        x = np.random.default_rng(3).normal(size=(3, 7))
        assert _fd_rel_err(lambda t: cross_entropy(t, [1, 6, 0]), x) <= 1e-6

    def test_gradient_is_softmax_minus_onehot_over_m(self):
        x = np.random.default_rng(4).normal(size=(3, 4))
        p = parameter(x)
        cross_entropy(p, [0, 1, 2]).backward()
        expected = softmax_rows(Tensor(x)).data
        expected[np.arange(3), [0, 1, 2]] -= 1
        np.testing.assert_allclose(p.grad, expected / 3, atol=1e-15)

    def test_out_of_range_target(self):
        with pytest.raises(IndexError):
            cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])

    def test_ignored_rows_do_not_count(self):
        x = np.random.default_rng(5).normal(size=(3, 4))
        full = cross_entropy(Tensor(x[:2]), [1, 2]).item()
        assert cross_entropy(Tensor(x), [1, 2, -1], ignore_index=-1).item() == pytest.approx(full, abs=1e-15)

    def test_zero_weights_give_zero_gradient(self):
        p = parameter(np.random.default_rng(6).normal(size=(2, 3)))
        cross_entropy(p, [0, 1], weights=[0.0, 0.0]).backward()
        assert not p.grad.any()


class TestLayerNorm:
    def test_constant_row_maps_to_zero(self):
        out = layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_array_equal(out.data, [[0.0, 0.0, 0.0]])

    def test_unit_variance_row(self):
        out = layer_norm(Tensor([[1.0, -1.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-5)
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-5)

    def test_gradient_check(self):
        rng = np.random.default_rng(7)
        x = parameter(rng.normal(size=(4, 6)))
        g, b = parameter(rng.normal(size=6)), parameter(rng.normal(size=6))
        w = Tensor(rng.normal(size=(4, 6)))
        assert grad_check_all(lambda: total(mul(layer_norm(x, g, b), w)), [x, g, b]) <= 1e-5

    def test_rejects_nonpositive_eps(self):
        with pytest.raises(ValueError):
            layer_norm(Tensor(np.ones((1, 2))), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=0.0)


class TestKL:
    def test_identical_is_exactly_zero(self):
        assert kl_divergence([0.3, 0.7], [0.3, 0.7]).item() == 0.0

    def test_point_mass_vs_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_gibbs_inequality(self):
        rng = np.random.default_rng(8)
        p = rng.dirichlet(np.ones(4), size=1000)
        q = rng.dirichlet(np.ones(4), size=1000)
        assert kl_divergence(p, q).data.min() >= 0.0

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError):
            kl_divergence([0.5, 0.6], [0.5, 0.5])

    def test_q_is_floored(self):
        assert kl_divergence([0.5, 0.5], [1.0, 0.0]).item() == pytest.approx(0.5 * math.log(0.5 / 1e-12) + 0.5 * math.log(0.5))

    def test_differentiable_through_q_logits(self):
        rng = np.random.default_rng(9)
        p = Tensor(rng.dirichlet(np.ones(3), size=4))
        z = parameter(rng.normal(size=(4, 3)))
        assert grad_check(lambda t: total(kl_divergence(p, softmax_rows(t))), z) <= 1e-6

    def test_differentiable_through_p_logits(self):
        rng = np.random.default_rng(10)
        q = Tensor(rng.dirichlet(np.ones(3), size=4))
        z = parameter(rng.normal(size=(4, 3)))
        assert grad_check(lambda t: total(kl_divergence(softmax_rows(t), q)), z) <= 1e-6

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0, 10), min_size=3, max_size=3), st.lists(st.floats(1e-3, 10), min_size=3, max_size=3))
    def test_nonnegative(self, a, b):
        if sum(a) == 0:
            a = [1.0, 0.0, 0.0]
        p = np.array(a) / sum(a)
        q = np.array(b) / sum(b)
        assert kl_divergence(p, q).item() >= -1e-12
        assert kl_divergence(p, p).item() == 0.0


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        w = np.array([1.0, -2.0])
        state = OptimizerState(lr=0.1)
        adam_step([w], [np.zeros(2)], state)
        np.testing.assert_array_equal(w, [1.0, -2.0])

    def test_moves_against_gradient(self):
        w = np.array([0.5])
        adam_step([w], [np.array([2.0])], OptimizerState(lr=0.1))
        assert w[0] < 0.5

    def test_quadratic_converges(self):
        w = parameter([0.0])
        opt = Adam([w], lr=0.1)
        for _ in range(100):
            opt.zero_grad()
            d = w - Tensor([3.0])
            total(mul(d, d)).backward()
            opt.step()
        assert abs(w.data[0] - 3.0) < 0.1

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            adam_step([np.zeros(2)], [np.zeros(3)], OptimizerState())

    def test_step_counter_increases(self):
        state = OptimizerState()
        for k in range(1, 4):
            adam_step([np.zeros(1)], [np.ones(1)], state)
            assert state.step == k


class TestGradCheck:
    def test_linear_function(self):
        x = parameter(np.random.default_rng(11).normal(size=(3, 3)))
        assert grad_check(total, x) < 1e-9

    def test_cross_entropy_composite(self):
        rng = np.random.default_rng(12)
        W = Tensor(rng.normal(size=(5, 4)))
        x = parameter(rng.normal(size=(3, 5)))
        assert grad_check(lambda t: cross_entropy(tanh(matmul(t, W)), [0, 3, 1]), x) <= 1e-5


def _op_cases(rng):
    a = rng.normal(size=(3, 4))
    return {
        "matmul": (lambda t: total(matmul(t, Tensor(np.arange(8.0).reshape(4, 2) / 8))), a),
        "softmax": (lambda t: total(mul(softmax_rows(t), Tensor(np.arange(12.0).reshape(3, 4)))), a),
        "cross_entropy": (lambda t: cross_entropy(t, [0, 1, 3]), a),
        "layer_norm": (lambda t: total(mul(layer_norm(t, Tensor(np.full(4, 1.5)), Tensor(np.zeros(4))), Tensor(a))), a),
        "tanh": (lambda t: total(mul(tanh(t), Tensor(a))), a),
        "gelu": (lambda t: total(mul(gelu(t), Tensor(a))), a),
        "transpose_reshape": (lambda t: total(mul(reshape(transpose(t), (2, 6)), Tensor(np.arange(12.0).reshape(2, 6)))), a),
        "mean": (lambda t: mean(mul(t, t)), a),
        "causal_fill_softmax": (
            lambda t: total(mul(
                softmax_rows(causal_fill(reshape(matmul(t, Tensor(np.ones((4, 3)) / 3)), (1, 3, 3)))),
                Tensor(np.arange(9.0).reshape(1, 3, 3)),
            )),
            a,
        ),
        "embedding": (lambda t: total(mul(embedding(t, np.array([[0, 2], [2, 1]])), Tensor(np.ones((2, 2, 4))))), a),
        "kl": (lambda t: total(kl_divergence(Tensor(np.full((3, 4), 0.25)), softmax_rows(t))), a),
    }


@pytest.mark.parametrize("op", list(_op_cases(np.random.default_rng(0))))
@pytest.mark.parametrize("seed", range(10))
def test_every_op_passes_grad_check(op, seed):
    f, x = _op_cases(np.random.default_rng(seed))[op]
    assert grad_check(f, parameter(x)) <= 1e-4


def test_forward_backward_bitwise_deterministic():
    def run():
        rng = np.random.default_rng(13)
        x = parameter(rng.normal(size=(5, 6)))
        w = parameter(rng.normal(size=(6, 3)))
        loss = cross_entropy(gelu(matmul(x, w)), [0, 1, 2, 0, 1])
        loss.backward()
        return loss.data.tobytes() + x.grad.tobytes() + w.grad.tobytes()

    assert run() == run()


def test_no_grad_records_nothing():
    w = parameter(np.ones((2, 2)))
    with no_grad():
        out = matmul(w, w)
    assert not out.requires_grad and out._parents == ()


def test_add_refuses_general_broadcasting():
    with pytest.raises(ValueError):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 1)))
