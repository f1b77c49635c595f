"""Kernel backend selection.

The compiled extension is preferred; ``NORMSHARE_PURE=1`` forces the numpy
fallback (used by the benchmark and the equivalence tests).
"""

from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("NORMSHARE_PURE", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "numpy"
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "numpy"

lstm_forward = _impl.lstm_forward
lstm_backward = _impl.lstm_backward
attention_forward = _impl.attention_forward
attention_backward = _impl.attention_backward
xent_forward = _impl.xent_forward
xent_backward = _impl.xent_backward

__all__ = [
    "BACKEND",
    "lstm_forward",
    "lstm_backward",
    "attention_forward",
    "attention_backward",
    "xent_forward",
    "xent_backward",
]
