"""Minimal reverse-mode differentiation engine, Adam, gradient checking."""

from .gradcheck import gradient_check
from .ops import (
    add,
    attention,
    concat,
    cross_entropy,
    dropout,
    embedding,
    forward_op,
    log_softmax,
    lstm,
    matmul,
    mean,
    mul,
    reshape,
    scale,
    sigmoid,
    slice_,
    softmax,
    stack,
    sum_,
    tanh,
    time_reverse,
)
from .optim import AdamState, adam_step
from .tensor import (
    ContractError,
    DimensionError,
    Node,
    ParameterError,
    Tape,
    Tensor,
    backward,
    grad_enabled,
    no_grad,
)

cross_entropy_loss = cross_entropy

__all__ = [name for name in dir() if not name.startswith("_")]
