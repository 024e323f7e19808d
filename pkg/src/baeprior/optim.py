"""Adaptive moment estimation on flat parameter vectors."""
import numpy as np


class Adam:
    """Adam (Kingma & Ba) with PyTorch default moments.

    ``step`` returns the updated vector; set ``maximize=True`` for ascent.
    """

    def __init__(self, size, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, maximize=False):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.maximize = maximize
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, params, grad):
        if self.maximize:
            grad = -grad
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
