"""ADADELTA updates (Zeiler 2012) over a list of parameter arrays, in place."""

import numpy as np


class Adadelta:
    """Per-parameter decayed averages of squared gradients and squared updates.

    ``rho`` is the decay of both running averages.  There is no global
    learning rate: the step size is the ratio of the RMS of past updates to
    the RMS of past gradients.
    """

    def __init__(self, params, rho: float = 0.9, epsilon: float = 1e-6):
        if not 0.0 < rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {rho}")
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        self.rho = rho
        self.epsilon = epsilon
        self.avg_sq_grad = [np.zeros_like(p) for p in params]
        self.avg_sq_update = [np.zeros_like(p) for p in params]
        self.steps = 0

    def step(self, params, grads):
        if len(params) != len(self.avg_sq_grad) or len(grads) != len(params):
            raise ValueError("parameter, gradient and state lists differ in length")
        rho, eps = self.rho, self.epsilon
        for p, g, eg, ex in zip(params, grads, self.avg_sq_grad, self.avg_sq_update):
            if p.shape != g.shape or p.shape != eg.shape:
                raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {eg.shape}")
            g = g.astype(p.dtype, copy=False)
            eg *= rho
            eg += (1 - rho) * g * g
            dx = -(np.sqrt(ex + eps) / np.sqrt(eg + eps)) * g
            ex *= rho
            ex += (1 - rho) * dx * dx
            p += dx
        self.steps += 1

    def state_arrays(self) -> list[np.ndarray]:
        return self.avg_sq_grad + self.avg_sq_update

    def load_state_arrays(self, arrays):
        n = len(self.avg_sq_grad)
        if len(arrays) != 2 * n:
            raise ValueError(f"expected {2 * n} state arrays, got {len(arrays)}")
        for dst, src in zip(self.avg_sq_grad + self.avg_sq_update, arrays):
            dst[...] = src


class SGD:
    """Plain gradient descent, for debugging the training loop."""

    def __init__(self, params, lr: float = 0.01):
        self.lr = lr
        self.steps = 0

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g.astype(p.dtype, copy=False)
        self.steps += 1

    def state_arrays(self):
        return []

    def load_state_arrays(self, arrays):
        if arrays:
            raise ValueError("SGD has no state")
