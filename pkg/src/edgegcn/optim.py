"""Adam, parameter initialization, and finite-difference verification."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    """Glorot-uniform weight matrix, the usual choice for GCN stacks."""
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                  requires_grad=True)


def zeros(*shape: int) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Moment buffers shape-match their parameters and the step counter
    advances by exactly one per update. Calling :meth:`step` with any
    gradient missing is an error; zero gradients are legitimate and
    leave the parameter (nearly) in place.
    """

    def __init__(self, params, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.first_moment = [np.zeros_like(p.data) for p in self.params]
        self.second_moment = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"parameter {i} has no gradient; "
                                 "run backward before step")
        self.step_count += 1
        t = self.step_count
        correct1 = 1.0 - self.beta1 ** t
        correct2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self.first_moment, self.second_moment):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / correct1
            v_hat = v / correct2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def grad_check(f, inputs, eps: float = 1e-5) -> float:
    """Compare backward against central finite differences.

    ``f`` must be a deterministic function of the given tensors that
    returns a scalar Tensor. Returns the max over every coordinate of
    |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Inputs that receive no
    gradient are treated as having an analytic gradient of zero.
    """
    inputs = list(inputs)
    for t in inputs:
        t.grad = None
    loss = f(*inputs)
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy()
                for t in inputs]

    worst = 0.0
    for t, ga in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        ga_flat = ga.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + eps
            up = float(f(*inputs).data)
            flat[i] = saved - eps
            down = float(f(*inputs).data)
            flat[i] = saved
            fd = (up - down) / (2.0 * eps)
            denom = max(1.0, abs(ga_flat[i]), abs(fd))
            worst = max(worst, abs(ga_flat[i] - fd) / denom)
    return worst
