"""Neural-network building blocks on top of the tensor engine.

Layers hold their parameters as Tensors with requires_grad=True and expose
`parameters()` as (name, tensor) pairs in a stable order; that order is what
optimizers and weight archives rely on. Forward passes take and return
Tensors so the whole model stays on one tape.
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from . import tensor as T
from .errors import ContractError, GraphError, ShapeError
from .rng import Rng
from .tensor import Tensor


def init_dense(in_dim: int, out_dim: int, scheme: str, rng: Rng) -> tuple[Tensor, Tensor]:
    """Uniform fan-based init. `scheme` is "he" (gain from fan-in, for ReLU
    layers) or "xavier" (fan-in + fan-out, for linear heads). Bias is zero."""
    if in_dim <= 0 or out_dim <= 0:
        raise ShapeError(f"degenerate dense shape ({in_dim}, {out_dim})")
    if scheme == "he":
        bound = np.sqrt(6.0 / in_dim)
    elif scheme == "xavier":
        bound = np.sqrt(6.0 / (in_dim + out_dim))
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    w = rng.uniform(-bound, bound, size=(in_dim, out_dim))
    b = np.zeros(out_dim)
    return Tensor(w, requires_grad=True), Tensor(b, requires_grad=True)


class Dense:
    """Affine layer y = x @ w + b."""

    def __init__(self, in_dim: int, out_dim: int, scheme: str, rng: Rng):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.w, self.b = init_dense(in_dim, out_dim, scheme, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return T.add(T.matmul(x, self.w), self.b)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("w", self.w), ("b", self.b)]


class BatchNorm:
    """1-D batch normalization over the row axis.

    Train mode normalizes with batch statistics and updates running
    statistics with `momentum`; eval mode normalizes with the running
    statistics as constants (still differentiable through x, gamma, beta).
    """

    def __init__(self, dim: int, momentum: float = 0.1, eps: float = 1e-5):
        self.dim = dim
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)

    def __call__(self, x: Tensor, train: bool) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ShapeError(f"batchnorm({self.dim}) got input {x.shape}")
        if train:
            n = x.shape[0]
            if n < 2:
                raise ContractError("batchnorm train mode needs at least 2 rows")
            mu = T.tmean(x, axis=0)
            xc = T.sub(x, mu)
            var = T.tmean(T.mul(xc, xc), axis=0)
            m = self.momentum
            self.running_mean *= 1.0 - m
            self.running_mean += m * mu.data
            self.running_var *= 1.0 - m
            self.running_var += m * var.data * (n / (n - 1.0))
            inv = T.div(1.0, T.sqrt(T.add(var, self.eps)))
            return T.add(T.mul(T.mul(xc, inv), self.gamma), self.beta)
        inv = 1.0 / np.sqrt(self.running_var + self.eps)
        scale = T.mul(self.gamma, Tensor(inv))
        return T.add(T.mul(T.sub(x, Tensor(self.running_mean)), scale), self.beta)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [("gamma", self.gamma), ("beta", self.beta)]

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("running_mean", self.running_mean), ("running_var", self.running_var)]


class Dropout:
    """Inverted dropout: active mode zeroes units with probability `rate`
    and rescales the rest by 1/(1-rate); inactive mode is the identity."""

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ContractError(f"dropout rate {rate} outside [0, 1)")
        self.rate = rate

    def __call__(self, x: Tensor, rng: Rng | None, active: bool) -> Tensor:
        if not active or self.rate == 0.0:
            return x
        if rng is None:
            raise ContractError("active dropout needs an rng stream")
        keep = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return T.mul(x, Tensor(keep))


class Adam:
    """Adam with bias correction. `step` consumes and clears `.grad`."""

    def __init__(
        self,
        params: list[Tensor],
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"adam step: parameter {i} has no gradient")
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            K.adam_update(p.data, p.grad, m, v, self.lr, self.beta1, self.beta2,
                          self.eps, self.t)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-likelihood of integer labels under softmax(logits)."""
    n, k = logits.shape
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    p = T.softmax(logits)
    logp = T.log(T.add(p, T.EPS_LOG))
    return T.mul(T.tmean(T.tsum(T.mul(logp, Tensor(onehot)), axis=1)), -1.0)
