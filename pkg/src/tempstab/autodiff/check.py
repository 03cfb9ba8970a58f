"""Central finite-difference gradient checking."""
import numpy as np

from .tensor import Tensor, backward, no_grad, reset_tape


def gradient_check(f, x, eps=1e-5):
    """Max relative error between the taped gradient and central differences.

    Parameters
    ----------
    f : callable
        Maps a Tensor to a single-element Tensor; must be smooth at ``x``.
    x : Tensor or array_like
        Point of evaluation. Not modified.
    eps : float
        Finite-difference step.

    Returns
    -------
    float
        ``max_i |analytic_i - numeric_i| / max(1, |numeric_i|)``.
    """
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    reset_tape()
    xt = Tensor(x0.copy(), requires_grad=True)
    loss = f(xt)
    backward(loss)
    analytic = np.zeros_like(x0) if xt.grad is None else xt.grad
    if not np.all(np.isfinite(analytic)):
        idx = tuple(int(i) for i in np.unravel_index(np.argmax(~np.isfinite(analytic)), x0.shape))
        raise FloatingPointError(f"non-finite analytic gradient at index {idx}")
    numeric = np.empty_like(x0)
    flat = x0.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(Tensor(x0)).item()
            flat[i] = orig - eps
            fm = f(Tensor(x0)).item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                idx = tuple(int(j) for j in np.unravel_index(i, x0.shape))
                raise FloatingPointError(f"non-finite function value near index {idx}")
            numeric.reshape(-1)[i] = (fp - fm) / (2 * eps)
    err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
    return float(err.max()) if err.size else 0.0
