"""RMSProp, global-norm gradient clipping, and a finite-difference oracle."""

from __future__ import annotations

import math

import numpy as np

from .nn import ParamStore


class RmsProp:
    """Per-entry squared-gradient accumulator with the standard update.

    v <- alpha*v + (1-alpha)*g^2 ; p <- p - lr*g/(sqrt(v) + eps)
    """

    def __init__(self, store: ParamStore, lr: float = 5e-4, alpha: float = 0.99,
                 eps: float = 1e-5):
        self.lr = lr
        self.alpha = alpha
        self.eps = eps
        self.v = {name: np.zeros_like(store.value(name)) for name in store.names()}

    def step(self, store: ParamStore) -> None:
        rmsprop_step(store, self.v, self.lr, self.alpha, self.eps)


def rmsprop_step(store: ParamStore, v: dict, lr: float, alpha: float, eps: float) -> None:
    for name in store.names():
        g = store.grad(name)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {name}")
        acc = v[name]
        acc *= alpha
        acc += (1.0 - alpha) * g * g
        store.value(name)[...] -= lr * g / (np.sqrt(acc) + eps)


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for name in store.names():
        g = store.grad(name)
        total += float(np.dot(g.ravel(), g.ravel()))
    return math.sqrt(total)


def clip_global_norm(store: ParamStore, max_norm: float = 10.0) -> float:
    """Scale all gradients so their joint L2 norm is at most max_norm.

    Returns the pre-clip norm.
    """
    norm = global_grad_norm(store)
    if norm > max_norm:
        scale = max_norm / norm
        for name in store.names():
            store.grad(name)[...] *= scale
    return norm


def finite_diff_check(loss_and_grads, store: ParamStore, epsilon: float = 1e-5,
                      names: list[str] | None = None) -> float:
    """Compare tape gradients against central differences.

    ``loss_and_grads`` takes no arguments, leaves gradients in the store, and
    returns the scalar loss; it must be deterministic. Returns the maximum
    relative error over all checked entries.
    """
    store.zero_grads()
    loss_and_grads()
    names = list(store.names()) if names is None else names
    analytic = {name: store.grad(name).copy() for name in names}

    worst = 0.0
    for name in names:
        values = store.value(name)
        flat = values.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            store.zero_grads()
            up = loss_and_grads()
            flat[i] = orig - epsilon
            store.zero_grads()
            down = loss_and_grads()
            flat[i] = orig
            fd = (up - down) / (2.0 * epsilon)
            a = analytic[name].ravel()[i]
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-6)
            worst = max(worst, err)
    # Restore the analytic gradients so callers see a consistent store.
    store.zero_grads()
    loss_and_grads()
    return worst
