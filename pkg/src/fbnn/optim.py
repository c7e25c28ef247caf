"""First-order optimisers on flat parameter vectors."""
import numpy as np

from .errors import InvalidInputError


class Sgd:
    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self._v = None

    def step(self, theta, grad):
        if self.momentum:
            self._v = grad if self._v is None else self.momentum * self._v + grad
            grad = self._v
        return theta - self.lr * grad


class Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self._m = self._v = None
        self._t = 0

    def step(self, theta, grad):
        if self._m is None:
            self._m = np.zeros_like(theta)
            self._v = np.zeros_like(theta)
        self._t += 1
        self._m = self.b1 * self._m + (1 - self.b1) * grad
        self._v = self.b2 * self._v + (1 - self.b2) * grad * grad
        mhat = self._m / (1 - self.b1 ** self._t)
        vhat = self._v / (1 - self.b2 ** self._t)
        return theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name, lr):
    if name == "adam":
        return Adam(lr)
    if name == "sgd":
        return Sgd(lr)
    if name == "momentum":
        return Sgd(lr, momentum=0.9)
    raise InvalidInputError(f"unknown optimizer {name!r}")


def minibatches(n, batch_size, rng):
    perm = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield perm[i:i + batch_size]
