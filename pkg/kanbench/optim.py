"""SGD, SGD with momentum and Adam behind one step interface."""

from abc import ABC, abstractmethod
from typing import List, Optional, Sequence

import numpy as np

from kanbench.errors import ContractError, ParameterError
from kanbench.models import OptimizerKind
from kanbench.tensor import Tensor


def zero_grads(params: Sequence[Tensor]) -> None:
    for param in params:
        param.zero_grad()


class Optimizer(ABC):
    """Base class; ``t`` counts completed steps."""

    kind: OptimizerKind

    def __init__(self, params: Sequence[Tensor], lr: float):
        if lr < 0:
            raise ParameterError(f"learning rate must be >= 0, got {lr}")
        self.params: List[Tensor] = list(params)
        self.lr = lr
        self.t = 0

    def zero_grads(self) -> None:
        zero_grads(self.params)

    def _gradients(self, grads: Optional[Sequence[np.ndarray]]) -> List[np.ndarray]:
        if grads is None:
            grads = [p.grad if p.grad is not None else np.zeros_like(p.values) for p in self.params]
        grads = [g.values if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in grads]
        if len(grads) != len(self.params):
            raise ContractError(f"got {len(grads)} gradients for {len(self.params)} parameters")
        for param, grad in zip(self.params, grads):
            if grad.shape != param.shape:
                raise ContractError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
        return grads

    def step(self, grads: Optional[Sequence[np.ndarray]] = None) -> None:
        """Update every parameter in place; uses ``param.grad`` unless grads are given."""
        grads = self._gradients(grads)
        self.t += 1
        for index, (param, grad) in enumerate(zip(self.params, grads)):
            self._update(index, param, grad)

    @abstractmethod
    def _update(self, index: int, param: Tensor, grad: np.ndarray) -> None:
        pass


class SGD(Optimizer):
    kind = OptimizerKind.SGD

    def _update(self, index, param, grad):
        param.values -= self.lr * grad


class SGDMomentum(Optimizer):
    """v <- mu v + g; p <- p - lr v."""

    kind = OptimizerKind.SGD_M

    def __init__(self, params: Sequence[Tensor], lr: float, momentum: float = 0.9):
        super().__init__(params, lr)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.values) for p in self.params]

    def _update(self, index, param, grad):
        v = self.velocity[index]
        v *= self.momentum
        v += grad
        param.values -= self.lr * v


class Adam(Optimizer):
    kind = OptimizerKind.ADAM

    def __init__(
        self,
        params: Sequence[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        super().__init__(params, lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]

    def _update(self, index, param, grad):
        m, v = self.m[index], self.v[index]
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * (grad * grad)
        m_hat = m / (1.0 - self.beta1 ** self.t)
        v_hat = v / (1.0 - self.beta2 ** self.t)
        param.values -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def create_optimizer(kind: OptimizerKind, params: Sequence[Tensor], lr: float) -> Optimizer:
    """Factory for optimizers by kind."""
    kind = OptimizerKind(kind)
    if kind == OptimizerKind.SGD:
        return SGD(params, lr)
    if kind == OptimizerKind.SGD_M:
        return SGDMomentum(params, lr)
    return Adam(params, lr)
