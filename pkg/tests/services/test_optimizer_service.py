import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[2]))

from app.services.optimizer_service import AdamState, OptimizerService
from app.services.tensor_service import Tensor


def _params():
    return {
        "w": Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True, name="w"),
        "b": Tensor(np.array([0.0]), requires_grad=True, name="b"),
    }


def test_first_step_moves_by_lr_times_sign():
    params = _params()
    params["w"].grad = np.array([0.3, -4.0, 1e-3])
    params["b"].grad = np.array([2.0])
    state = AdamState.for_params(params, lr=0.01)

    OptimizerService.adam_step(params, state)

    # bias-corrected first step: m_hat = g, v_hat = g^2
    np.testing.assert_allclose(params["w"].data, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], atol=1e-7)
    np.testing.assert_allclose(params["b"].data, [-0.01], atol=1e-9)
    assert state.step == 1


def test_matches_reference_over_several_steps():
    params = _params()
    state = AdamState.for_params(params, lr=0.1)
    reference = params["w"].data.copy()
    m = np.zeros(3)
    v = np.zeros(3)
    rng = np.random.default_rng(0)
    for t in range(1, 6):
        grad = rng.normal(size=3)
        params["w"].grad = grad
        params["b"].grad = np.zeros(1)
        OptimizerService.adam_step(params, state)
        m = 0.9 * m + 0.1 * grad
        v = 0.999 * v + 0.001 * grad ** 2
        reference -= 0.1 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(params["w"].data, reference, rtol=1e-12)


def test_zero_gradient_leaves_parameter_unchanged():
    params = _params()
    for tensor in params.values():
        tensor.grad = np.zeros_like(tensor.data)
    before = params["w"].data.copy()
    OptimizerService.adam_step(params, AdamState.for_params(params, lr=1.0))
    np.testing.assert_array_equal(params["w"].data, before)


def test_missing_gradient_rejected():
    params = _params()
    params["w"].grad = np.ones(3)
    with pytest.raises(ValueError, match="no gradient"):
        OptimizerService.adam_step(params, AdamState.for_params(params, lr=0.1))


def test_moment_shape_mismatch_rejected():
    params = _params()
    state = AdamState.for_params(params, lr=0.1)
    params["w"] = Tensor(np.zeros(4), requires_grad=True)
    params["w"].grad = np.zeros(4)
    params["b"].grad = np.zeros(1)
    with pytest.raises(ValueError, match="moment shape"):
        OptimizerService.adam_step(params, state)


def test_non_positive_learning_rate_rejected():
    with pytest.raises(ValueError, match="learning rate"):
        AdamState.for_params(_params(), lr=0.0)
