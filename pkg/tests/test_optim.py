import numpy as np
import pytest

from purlab import optim
from purlab.tensor import DiffTensor


def param(values):
    p = DiffTensor(values, requires_grad=True)
    return p


class TestSgd:
    def test_update_formula(self):
        p = param([1.0])
        p.grad = np.array([2.0])
        optim.sgd([p], lr=0.1).step()
        np.testing.assert_allclose(p.data, [0.8], rtol=0, atol=0)

    def test_zero_lr_keeps_params(self):
        p = param([3.0, -1.0])
        p.grad = np.array([5.0, 5.0])
        optim.sgd([p], lr=0.0).step()
        np.testing.assert_array_equal(p.data, [3.0, -1.0])

    def test_missing_grad_rejected(self):
        p = param([1.0])
        with pytest.raises(ValueError, match="no gradient"):
            optim.sgd([p], lr=0.1).step()


class TestAdam:
    def test_first_step_matches_hand_evaluation(self):
        # step 1, constant grad g: m_hat = g, v_hat = g^2,
        # so delta = lr * g / (|g| + eps)
        g = np.array([0.3, -2.0, 1e-4])
        p = param(np.zeros(3))
        p.grad = g.copy()
        state = optim.adam([p], lr=1e-2)
        state.step()
        expected = -1e-2 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p.data, expected, rtol=1e-12)
        # moves opposite to sign(g) by ~lr
        np.testing.assert_allclose(np.abs(p.data), 1e-2, rtol=1e-3)
        assert np.all(np.sign(p.data) == -np.sign(g))

    def test_two_steps_match_reference_formulas(self):
        b1, b2, eps, lr = 0.9, 0.999, 1e-8, 0.05
        grads = [np.array([1.5]), np.array([-0.5])]
        p = param([0.0])
        state = optim.adam([p], lr=lr, beta1=b1, beta2=b2, eps=eps)

        ref, m, v = 0.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            p.grad = g.copy()
            state.step()
            m = b1 * m + (1 - b1) * g[0]
            v = b2 * v + (1 - b2) * g[0] ** 2
            ref -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
        np.testing.assert_allclose(p.data, [ref], rtol=1e-12)
        assert state.step_count == 2

    def test_step_count_increments_by_one(self):
        p = param([1.0])
        state = optim.adam([p], lr=1e-3)
        for expected in (1, 2, 3):
            p.grad = np.array([1.0])
            state.step()
            assert state.step_count == expected

    def test_deterministic_for_fixed_inputs(self):
        def run():
            p = param(np.array([0.2, -0.4]))
            state = optim.adam([p], lr=1e-2)
            for k in range(5):
                p.grad = np.array([1.0 + k, -2.0])
                state.step()
            return p.data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError, match="sgd or adam"):
            optim.OptimizerState([], kind="lbfgs")
