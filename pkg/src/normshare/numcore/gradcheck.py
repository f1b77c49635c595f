"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import ContractError, Tensor, backward, no_grad

# offsets and weights of the central stencils; derivative = sum(w * f(x + k*h)) / h
_STENCILS = {
    2: ((1, 0.5), (-1, -0.5)),
    4: ((2, -1.0 / 12), (1, 8.0 / 12), (-1, -8.0 / 12), (-2, 1.0 / 12)),
}


def numeric_gradient(build_loss: Callable[[], Tensor], param: Tensor, h: float = 1e-2,
                     order: int = 4) -> np.ndarray:
    """Central-difference estimate of d(loss)/d(param), entry by entry."""
    stencil = _STENCILS[order]
    flat = param.value.reshape(-1)
    out = np.zeros(flat.size)
    with no_grad():
        for k in range(flat.size):
            orig = flat[k]
            acc = 0.0
            for off, w in stencil:
                flat[k] = orig + off * h
                acc += w * build_loss().item()
            flat[k] = orig
            out[k] = acc / h
    return out.reshape(param.shape)


def gradient_check(build_loss: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-2,
                   order: int = 4) -> float:
    """Largest relative error between backprop and central differences.

    The error for one entry is |a - n| / max(1e-8, |a| + |n|). The default is
    the fourth-order five-point stencil; ``order=2, h=1e-5`` gives the classic
    two-point check, whose roundoff (~1e-11) swamps gradients below ~1e-7.
    ``build_loss`` must be deterministic; it is evaluated twice up front.
    """
    if order not in _STENCILS:
        raise ValueError(f"order must be one of {sorted(_STENCILS)}")
    with no_grad():
        first = build_loss().item()
        second = build_loss().item()
    if first != second:
        raise ContractError(f"gradient_check: loss is not deterministic ({first!r} vs {second!r})")
    for p in params:
        p.grad = None
    backward(build_loss())
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None
    worst = 0.0
    for p, a in zip(params, analytic):
        num = numeric_gradient(build_loss, p, h, order)
        err = np.abs(a - num) / np.maximum(1e-8, np.abs(a) + np.abs(num))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
