import numpy as np
import pytest

from protoadapt.tensor import Tensor


def numeric_gradient(loss_fn, leaf: Tensor, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss_fn() wrt leaf.data."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(loss_fn().data)
        flat[i] = orig - eps
        lo = float(loss_fn().data)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad


def gradcheck(loss_fn, leaves, eps: float = 1e-5) -> float:
    """Worst relative error between backward() and finite differences.

    loss_fn must rebuild a fresh scalar graph from the given leaf tensors on
    every call (their .data is perturbed in place between calls).
    """
    for leaf in leaves:
        leaf.grad = None
    loss = loss_fn()
    assert loss.data.shape == (), "gradcheck needs a scalar loss"
    loss.backward()
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy()
                for l in leaves]
    worst = 0.0
    for leaf, ana in zip(leaves, analytic):
        num = numeric_gradient(loss_fn, leaf, eps)
        denom = np.maximum(1.0, np.maximum(np.abs(ana), np.abs(num)))
        worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
