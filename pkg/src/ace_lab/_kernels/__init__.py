"""Numeric kernels behind the tensor engine.

Two interchangeable implementations exist: a Cython extension built at
install time and a pure-NumPy fallback. One is selected once, at import
time; everything above this seam is backend-agnostic. Set
ACE_LAB_BACKEND=ext|numpy to force a choice (the default "auto" prefers the
extension and falls back silently). `python -m ace_lab.bench` compares the
two on the shapes the training loops actually use.
"""

from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("ACE_LAB_BACKEND", "auto").lower()

if _requested in ("auto", "ext"):
    try:
        from . import ext_backend as _impl
    except ImportError:
        if _requested == "ext":
            raise
        _impl = numpy_backend
elif _requested == "numpy":
    _impl = numpy_backend
else:
    raise ValueError(
        f"unknown ACE_LAB_BACKEND {_requested!r}: expected 'auto', 'ext' or 'numpy'"
    )

BACKEND = _impl.NAME

gemm = _impl.gemm
relu = _impl.relu
relu_backward = _impl.relu_backward
sigmoid = _impl.sigmoid
tanh = _impl.tanh
exp = _impl.exp
log = _impl.log
sqrt = _impl.sqrt
softmax_rows = _impl.softmax_rows
adam_update = _impl.adam_update


def available_backends() -> list[str]:
    names = [numpy_backend.NAME]
    try:
        from . import ext_backend

        names.insert(0, ext_backend.NAME)
    except ImportError:
        pass
    return names
