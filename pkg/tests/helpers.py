"""Shared test oracles.

The gradient oracle is a central finite difference, independent of the
autodiff engine: it only calls forward passes on raw arrays.
"""

import numpy as np

from gatenet.nn import Tensor, backward


def numeric_grad(f, x, h=1e-6):
    """Central-difference gradient of scalar f with respect to array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic, numeric):
    """max |a - n| / max(1, |a|, |n|), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / scale))


def check_grads(make_loss, arrays, h=1e-6, tol=1e-6):
    """Compare backward() gradients against the finite-difference oracle.

    make_loss maps a dict of name -> Tensor to a scalar loss Tensor. It
    must be a pure function of the tensor values (fresh state each call).
    Returns the worst relative error over all inputs.
    """
    tensors = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in arrays.items()}
    loss = make_loss(tensors)
    backward(loss)

    worst = 0.0
    for name in arrays:

        def f(x, _name=name):
            probe = {
                k: Tensor(x if k == _name else np.asarray(arrays[k], dtype=np.float64))
                for k in arrays
            }
            return make_loss(probe).item()

        num = numeric_grad(f, np.array(arrays[name], dtype=np.float64), h=h)
        worst = max(worst, max_rel_err(tensors[name].grad, num))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol:.1e}"
    return worst
