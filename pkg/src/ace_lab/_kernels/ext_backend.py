"""Wrapper exposing the compiled kernels with the same API as numpy_backend.

Handles contiguity, output allocation and flattening; the Cython routines
in _core only see ready-made C-contiguous float64 buffers. Importing this
module raises ImportError when the extension was not built.
"""

from __future__ import annotations

import numpy as np

from . import _core

NAME = "ext"


def _c(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _flat(x: np.ndarray) -> np.ndarray:
    return _c(x).reshape(-1)


def gemm(a: np.ndarray, b: np.ndarray, ta: bool = False, tb: bool = False) -> np.ndarray:
    a = _c(a)
    b = _c(b)
    m = a.shape[1] if ta else a.shape[0]
    n = b.shape[0] if tb else b.shape[1]
    out = np.empty((m, n), dtype=np.float64)
    _core.gemm(a, b, out, ta, tb)
    return out


def _unary(fn, x: np.ndarray) -> np.ndarray:
    xc = _c(x)
    out = np.empty_like(xc)
    fn(xc.reshape(-1), out.reshape(-1))
    return out


def relu(x: np.ndarray) -> np.ndarray:
    return _unary(_core.relu, x)


def relu_backward(g: np.ndarray, x: np.ndarray) -> np.ndarray:
    xc = _c(x)
    out = np.empty_like(xc)
    _core.relu_backward(_flat(np.broadcast_to(g, xc.shape)), xc.reshape(-1), out.reshape(-1))
    return out


def sigmoid(x: np.ndarray) -> np.ndarray:
    return _unary(_core.sigmoid, x)


def tanh(x: np.ndarray) -> np.ndarray:
    return _unary(_core.tanh, x)


def exp(x: np.ndarray) -> np.ndarray:
    return _unary(_core.exp, x)


def log(x: np.ndarray) -> np.ndarray:
    return _unary(_core.log, x)


def sqrt(x: np.ndarray) -> np.ndarray:
    return _unary(_core.sqrt, x)


def softmax_rows(z: np.ndarray) -> np.ndarray:
    zc = _c(z)
    out = np.empty_like(zc)
    _core.softmax_rows(zc, out)
    return out


def adam_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
    t: int,
) -> None:
    # p, m, v are optimizer-owned contiguous buffers; only g may need a copy.
    _core.adam_update(p.reshape(-1), _flat(g), m.reshape(-1), v.reshape(-1),
                      lr, beta1, beta2, eps, t)
