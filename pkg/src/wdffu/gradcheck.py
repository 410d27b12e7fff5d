"""Finite-difference gradient verification.

``max_rel_grad_error`` compares reverse-mode gradients of a scalar-valued
function against central differences with step h.  The error is the
largest absolute deviation normalized by the largest finite-difference
magnitude, so uniformly tiny gradients do not inflate the ratio.
"""
import numpy as np

from .tensor import Tensor


def finite_difference_grad(f, tensors, which, h=1e-5):
    """Central-difference gradient of scalar f(...) w.r.t. tensors[which]."""
    t = tensors[which]
    grad = np.zeros_like(t.data)
    flat = t.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f().item()
        flat[i] = orig - h
        lo = f().item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def max_rel_grad_error(f, tensors, h=1e-5):
    """Worst normalized error across all given tensors.

    f must rebuild the graph from ``tensors`` on every call and return a
    scalar Tensor.  Every tensor in the list gets requires_grad set.
    """
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    loss = f()
    loss.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for i, t in enumerate(tensors):
        fd = finite_difference_grad(f, tensors, i, h)
        scale = max(np.abs(fd).max(), np.abs(analytic[i]).max(), 1e-8)
        worst = max(worst, np.abs(analytic[i] - fd).max() / scale)
    return worst


def random_tensor(rng, shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)
