from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, scale


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    den = np.maximum(1e-8, np.abs(analytic) + np.abs(numeric))
    return float((np.abs(analytic - numeric) / den).max()) if analytic.size else 0.0


def grad_check_params(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5,
                      coords: int | None = None, seed: int = 0) -> float:
    """Max relative error between backprop and central differences over the
    coordinates of ``params``. ``f`` rebuilds the scalar loss from scratch.

    With ``coords`` set, only that many randomly chosen coordinates per
    parameter are perturbed (all of them when the parameter is smaller).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params:
        p.grad = None
    loss = f()
    if not np.isfinite(loss.data).all():
        raise FloatingPointError("grad_check: loss is not finite")
    backward(loss)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        if coords is None or coords >= flat.size:
            picked = np.arange(flat.size)
        else:
            picked = np.sort(rng.choice(flat.size, size=coords, replace=False))
        nflat = np.empty(len(picked))
        for n, i in enumerate(picked):
            orig = flat[i]
            flat[i] = orig + step
            up = f().item()
            flat[i] = orig - step
            down = f().item()
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError("grad_check: perturbed loss is not finite")
            nflat[n] = (up - down) / (2.0 * step)
        worst = max(worst, _rel_err(analytic.reshape(-1)[picked], nflat))
    return worst


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float = 1e-5) -> float:
    """Relative-error gradient check of a scalar function of one tensor."""
    x.requires_grad = True
    return grad_check_params(lambda: f(x), [x], step)


def rescaled(f: Callable[[], Tensor], magnitude: float = 1e-2) -> Callable[[], Tensor]:
    """Wrap ``f`` so its value at the current point has absolute size ``magnitude``.

    Central-difference noise is about eps * |f| / step; with |f| near 1e-2 and
    step 1e-5 it stays below the 1e-8 denominator floor, so exactly-zero and
    tiny gradients do not register as errors.
    """
    v = abs(f().item())
    c = magnitude / v if v > 0 else 1.0
    return lambda: scale(f(), c)
