from dataclasses import dataclass, field
from typing import Dict
import logging

import numpy as np

from app.services.tensor_service import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Per-parameter moment buffers for bias-corrected Adam."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Dict[str, Tensor], lr: float, **kwargs) -> "AdamState":
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        state = cls(lr=lr, **kwargs)
        for name, tensor in params.items():
            state.m[name] = np.zeros_like(tensor.data)
            state.v[name] = np.zeros_like(tensor.data)
        return state


class OptimizerService:
    """Adam updates applied in place on named parameter tensors"""

    @staticmethod
    def adam_step(params: Dict[str, Tensor], state: AdamState) -> Dict[str, Tensor]:
        for name, tensor in params.items():
            if tensor.grad is None:
                raise ValueError(f"parameter '{name}' has no gradient")
            if name not in state.m:
                raise ValueError(f"optimizer state has no moments for parameter '{name}'")
            if state.m[name].shape != tensor.shape:
                raise ValueError(
                    f"moment shape {state.m[name].shape} does not match parameter "
                    f"'{name}' shape {tensor.shape}"
                )

        state.step += 1
        bias1 = 1.0 - state.beta1 ** state.step
        bias2 = 1.0 - state.beta2 ** state.step

        for name, tensor in params.items():
            grad = tensor.grad
            m = state.m[name]
            v = state.v[name]
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * (grad * grad)
            m_hat = m / bias1
            v_hat = v / bias2
            update = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
            tensor.data -= update.astype(tensor.dtype, copy=False)

        return params
