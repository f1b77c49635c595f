"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import ContractError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    # keyed by id(param); each entry is (first moment, second moment, per-param step)
    moments: dict = field(default_factory=dict)

    def moment(self, p: Tensor):
        entry = self.moments.get(id(p))
        if entry is None:
            entry = [np.zeros_like(p.value), np.zeros_like(p.value), 0]
            self.moments[id(p)] = entry
        return entry


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """Apply one Adam update to ``params`` and clear their gradients.

    Every parameter passed in must carry a gradient; callers restrict the list
    to the parameters that took part in the current update.
    """
    missing = [p.name or repr(p) for p in params if p.grad is None]
    if missing:
        raise ContractError(f"adam_step: no gradient for {missing[:5]}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for p in params:
        entry = state.moment(p)
        m, v = entry[0], entry[1]
        entry[2] += 1
        t = entry[2]
        g = p.grad
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        p.grad = None
