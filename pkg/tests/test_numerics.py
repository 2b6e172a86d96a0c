import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqsalience.numerics import (
    AdamHyper,
    AdamState,
    adam_step,
    check_gradient,
    cross_entropy,
    softmax,
)


class TestAdam:
    def test_zero_gradient_is_noop(self):
        params = np.array([1.5, -2.0, 0.25])
        state = AdamState.zeros(3)
        new_params, new_state = adam_step(params, np.zeros(3), state)
        np.testing.assert_array_equal(new_params, params)
        assert new_state.step == 1

    def test_zero_gradient_noop_any_step_count(self):
        params = np.array([0.7])
        state = AdamState.zeros(1)
        for _ in range(10):
            params_next, state = adam_step(params, np.zeros(1), state)
            np.testing.assert_array_equal(params_next, params)
            params = params_next
        assert state.step == 10

    def test_single_step_hand_computed(self):
        # m_hat = 1, v_hat = 1 after one unit-gradient step, so the update is
        # exactly -lr / (1 + eps).
        params = np.array([0.0])
        new_params, state = adam_step(params, np.array([1.0]), AdamState.zeros(1))
        expected = -0.001 / (1.0 + 1e-8)
        assert abs(new_params[0] - expected) < 1e-12
        assert state.step == 1

    def test_elementwise_independence(self):
        grads = np.array([0.3, 0.3])
        params = np.array([1.0, 1.0])
        pair, _ = adam_step(params, grads, AdamState.zeros(2))
        single, _ = adam_step(np.array([1.0]), np.array([0.3]), AdamState.zeros(1))
        np.testing.assert_array_equal(pair, [single[0], single[0]])

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        n = 6
        params = rng.normal(size=n)
        grads = rng.normal(size=n)
        perm = rng.permutation(n)
        direct, _ = adam_step(params, grads, AdamState.zeros(n))
        permuted, _ = adam_step(params[perm], grads[perm], AdamState.zeros(n))
        inverse = np.empty(n, dtype=int)
        inverse[perm] = np.arange(n)
        np.testing.assert_array_equal(permuted[inverse], direct)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            adam_step(np.zeros(3), np.zeros(2), AdamState.zeros(3))

    def test_non_finite_gradient_reports_index(self):
        grads = np.array([0.0, np.nan, 0.0])
        with pytest.raises(ValueError, match=r"index \(1,\)"):
            adam_step(np.zeros(3), grads, AdamState.zeros(3))

    def test_default_hyperparameters(self):
        hyper = AdamHyper()
        assert hyper.lr == 0.001
        assert hyper.beta1 == 0.9
        assert hyper.beta2 == 0.999
        assert hyper.eps == 1e-8


class TestSoftmax:
    def test_uniform_for_equal_logits(self):
        np.testing.assert_allclose(softmax(np.zeros(4)), np.full(4, 0.25), atol=1e-15)

    def test_hand_computed_two_class(self):
        # e^0 = 1, e^{ln 3} = 3 -> (1/4, 3/4)
        out = softmax(np.array([0.0, np.log(3.0)]))
        np.testing.assert_allclose(out, [0.25, 0.75], atol=1e-12)

    def test_huge_logits_do_not_overflow(self):
        out = softmax(np.array([1000.0, 1000.0]))
        np.testing.assert_allclose(out, [0.5, 0.5], atol=1e-15)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            softmax(np.array([]))

    @given(
        st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=8),
        st.floats(min_value=-100, max_value=100),
    )
    @settings(max_examples=50, deadline=None)
    def test_valid_distribution_and_shift_invariance(self, logits, shift):
        logits = np.asarray(logits)
        out = softmax(logits)
        assert abs(out.sum() - 1.0) < 1e-12
        assert np.all(out > 0) and np.all(out <= 1)
        shifted = softmax(logits + shift)
        np.testing.assert_allclose(shifted, out, atol=1e-12)


class TestCrossEntropy:
    def test_uniform_four_classes(self):
        probs = np.full(4, 0.25)
        for c in range(4):
            assert abs(cross_entropy(probs, c) - np.log(4.0)) < 1e-12

    def test_certain_prediction_has_zero_loss(self):
        assert cross_entropy(np.array([0.0, 1.0, 0.0]), 1) == 0.0

    def test_hand_computed_value(self):
        probs = np.array([0.1, 0.9])
        assert abs(cross_entropy(probs, 0) - 2.3025851) < 1e-7

    def test_out_of_range_class_rejected(self):
        with pytest.raises(ValueError, match="out of range"):
            cross_entropy(np.array([0.5, 0.5]), 2)


class TestCheckGradient:
    def test_quadratic_analytic_gradient(self):
        f = lambda x: float(np.dot(x, x))
        x = np.array([1.0, 2.0])
        err = check_gradient(f, x, 2.0 * x, h=1e-5)
        assert err < 1e-8

    def test_constant_function_zero_gradient(self):
        err = check_gradient(lambda x: 3.5, np.array([0.2, -0.4]), np.zeros(2))
        assert err == 0.0

    def test_wrong_gradient_detected(self):
        # Gradient that is off by a factor of two gives relative error ~0.5.
        f = lambda x: float(np.dot(x, x))
        x = np.array([1.0, 2.0])
        err = check_gradient(f, x, 4.0 * x, h=1e-5)
        assert abs(err - 0.5) < 1e-6

    @given(st.integers(min_value=0, max_value=2**32 - 1))
    @settings(max_examples=20, deadline=None)
    def test_random_polynomial(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=4)
        b = rng.normal(size=4)
        x = rng.normal(size=4)

        def f(v):
            return float(np.sum(a * v**3 + b * v**2 + v))

        grad = 3.0 * a * x**2 + 2.0 * b * x + 1.0
        assert check_gradient(f, x, grad, h=1e-5) < 1e-6

    def test_non_finite_function_rejected(self):
        def f(v):
            return float("nan")

        with pytest.raises(ValueError, match="non-finite"):
            check_gradient(f, np.array([1.0]), np.array([0.0]))
