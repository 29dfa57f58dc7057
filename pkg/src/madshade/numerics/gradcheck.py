"""Central finite-difference oracle for autodiff gradients (float64)."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def numeric_grad(fn, arrays, index, coords, h):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    base = arrays[index]
    out = np.zeros(len(coords))
    for k, c in enumerate(coords):
        orig = base.flat[c]
        base.flat[c] = orig + h
        fp = float(fn(*[Tensor(a) for a in arrays]).data)
        base.flat[c] = orig - h
        fm = float(fn(*[Tensor(a) for a in arrays]).data)
        base.flat[c] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def relative_error(analytic, numeric, floor=1e-10):
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(diff / scale)


def gradcheck(fn, arrays, h=1e-3, max_coords=None, rng=None):
    """Largest relative error between autodiff and finite differences.

    ``fn`` maps tensors to a scalar tensor. Inputs are promoted to float64.
    With ``max_coords`` only a random subset of each input's entries is
    perturbed.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    worst = 0.0
    for i, t in enumerate(tensors):
        n = arrays[i].size
        coords = np.arange(n)
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, max_coords, replace=False)
        analytic = t.grad_or_zeros().ravel()[coords]
        numeric = numeric_grad(fn, arrays, i, coords, h)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def module_gradcheck(module, loss_fn, h=1e-3, max_coords=20, rng=None):
    """Finite-difference check of ``loss_fn(module)`` w.r.t. every parameter."""
    rng = np.random.default_rng(0) if rng is None else rng
    module.astype(np.float64)
    module.zero_grad()
    loss_fn(module).backward()
    worst = 0.0
    for name, p in module.named_parameters():
        analytic_full = p.grad_or_zeros().ravel()
        n = p.data.size
        coords = rng.choice(n, min(n, max_coords), replace=False)
        numeric = np.zeros(len(coords))
        for k, c in enumerate(coords):
            orig = p.data.flat[c]
            p.data.flat[c] = orig + h
            fp = float(loss_fn(module).data)
            p.data.flat[c] = orig - h
            fm = float(loss_fn(module).data)
            p.data.flat[c] = orig
            numeric[k] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(analytic_full[coords], numeric))
    return worst
