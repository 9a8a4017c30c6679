"""Layer mechanics: initialization, batch norm modes, dropout scaling,
Adam behavior and loss gradients."""

import numpy as np
import pytest
from helpers import central_diff, max_rel_err

from ace_lab import tensor as T
from ace_lab.errors import ContractError, ShapeError
from ace_lab.nn import Adam, BatchNorm, Dense, Dropout, cross_entropy, init_dense
from ace_lab.rng import Rng
from ace_lab.tensor import Tensor

RNG = Rng(23, "test-nn")


class TestInit:
    def test_he_bound(self):
        w, b = init_dense(50, 30, "he", RNG.child("he"))
        bound = np.sqrt(6.0 / 50)
        assert np.all(np.abs(w.data) <= bound)
        assert np.all(b.data == 0.0)
        assert w.requires_grad and b.requires_grad

    def test_xavier_bound(self):
        w, _ = init_dense(50, 30, "xavier", RNG.child("xavier"))
        assert np.all(np.abs(w.data) <= np.sqrt(6.0 / 80))

    def test_unknown_scheme(self):
        with pytest.raises(ValueError):
            init_dense(3, 3, "orthogonal", RNG.child("bad"))

    def test_degenerate_shape(self):
        with pytest.raises(ShapeError):
            init_dense(0, 3, "he", RNG.child("zero"))


class TestDense:
    def test_affine_value(self):
        layer = Dense(3, 2, "he", RNG.child("dense"))
        x = RNG.normal((5, 3))
        out = layer(Tensor(x))
        assert np.allclose(out.data, x @ layer.w.data + layer.b.data)

    def test_gradients(self):
        layer = Dense(3, 2, "he", RNG.child("dense-g"))
        x = RNG.normal((4, 3))

        def f(w, b):
            return T.tsum(T.mul(T.add(T.matmul(Tensor(x), w), b), 1.0))

        loss = f(layer.w, layer.b)
        T.backward(loss)
        for tensor, i in ((layer.w, 0), (layer.b, 1)):
            want = central_diff(
                lambda w, b: f(Tensor(w), Tensor(b)).item(),
                [layer.w.data, layer.b.data], i)
            assert max_rel_err(tensor.grad, want) < 1e-6


class TestBatchNorm:
    def test_train_mode_normalizes(self):
        bn = BatchNorm(4)
        x = RNG.normal((64, 4)) * 3.0 + 1.0
        out = bn(Tensor(x), train=True)
        assert np.allclose(out.data.mean(axis=0), 0.0, atol=1e-10)
        assert np.allclose(out.data.std(axis=0), 1.0, atol=1e-3)

    def test_running_stats_converge(self):
        bn = BatchNorm(2)
        x = RNG.normal((256, 2)) * 2.0 + 5.0
        for _ in range(200):
            bn(Tensor(x), train=True)
        assert np.allclose(bn.running_mean, x.mean(axis=0), atol=1e-2)
        # Running variance uses the unbiased batch estimate.
        assert np.allclose(bn.running_var, x.var(axis=0, ddof=1), atol=5e-2)

    def test_eval_uses_running_stats(self):
        bn = BatchNorm(2)
        bn.running_mean[:] = [1.0, -1.0]
        bn.running_var[:] = [4.0, 9.0]
        x = np.array([[3.0, 2.0]])
        out = bn(Tensor(x), train=False)
        want = (x - bn.running_mean) / np.sqrt(bn.running_var + bn.eps)
        assert np.allclose(out.data, want)

    def test_eval_mode_leaves_stats(self):
        bn = BatchNorm(3)
        before = (bn.running_mean.copy(), bn.running_var.copy())
        bn(Tensor(RNG.normal((8, 3))), train=False)
        assert np.array_equal(bn.running_mean, before[0])
        assert np.array_equal(bn.running_var, before[1])

    def test_train_gradients(self):
        bn = BatchNorm(3)
        x = RNG.normal((6, 3))

        def f(g, b):
            bn.gamma, bn.beta = g, b
            return T.tsum(T.mul(bn(Tensor(x), train=True), bn(Tensor(x), train=True)))

        loss = f(bn.gamma, bn.beta)
        T.backward(loss)
        got = (bn.gamma.grad.copy(), bn.beta.grad.copy())
        want_g = central_diff(
            lambda g, b: f(Tensor(g, requires_grad=True), Tensor(b, requires_grad=True)).item(),
            [bn.gamma.data.copy(), bn.beta.data.copy()], 0)
        assert max_rel_err(got[0], want_g) < 1e-5

    def test_single_row_train_rejected(self):
        with pytest.raises(ContractError):
            BatchNorm(3)(Tensor(np.zeros((1, 3))), train=True)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            BatchNorm(3)(Tensor(np.zeros((4, 5))), train=True)


class TestDropout:
    def test_inactive_is_identity(self):
        x = Tensor(RNG.normal((10, 10)))
        out = Dropout(0.5)(x, None, active=False)
        assert out is x

    def test_zero_rate_is_identity(self):
        x = Tensor(RNG.normal((10, 10)))
        assert Dropout(0.0)(x, RNG.child("d0"), active=True) is x

    def test_inverted_scaling(self):
        x = Tensor(np.ones((200, 200)))
        out = Dropout(0.3)(x, RNG.child("d1"), active=True)
        vals = np.unique(out.data)
        assert set(np.round(vals, 12)) <= {0.0, np.round(1.0 / 0.7, 12)}
        assert abs(out.data.mean() - 1.0) < 0.02

    def test_active_needs_rng(self):
        with pytest.raises(ContractError):
            Dropout(0.5)(Tensor(np.ones((2, 2))), None, active=True)

    def test_bad_rate(self):
        with pytest.raises(ContractError):
            Dropout(1.0)


class TestAdam:
    def test_step_consumes_grad(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.ones(3)
        opt.step()
        assert p.grad is None
        assert opt.t == 1

    def test_first_step_size(self):
        # With bias correction the first step is lr * sign(g) regardless of |g|.
        p = Tensor(np.array([1.0, -1.0]), requires_grad=True)
        opt = Adam([p], lr=0.05)
        p.grad = np.array([3.0, -0.2])
        opt.step()
        assert np.allclose(p.data, [1.0 - 0.05, -1.0 + 0.05], atol=1e-6)

    def test_missing_grad_rejected(self):
        p = Tensor(np.ones(3), requires_grad=True)
        q = Tensor(np.ones(3), requires_grad=True)
        opt = Adam([p, q], lr=0.1)
        p.grad = np.ones(3)
        with pytest.raises(ContractError):
            opt.step()

    def test_zero_grad(self):
        p = Tensor(np.ones(3), requires_grad=True)
        opt = Adam([p], lr=0.1)
        p.grad = np.ones(3)
        opt.zero_grad()
        assert p.grad is None

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([5.0]), requires_grad=True)
        opt = Adam([p], lr=0.2)
        for _ in range(200):
            loss = T.tsum(T.mul(p, p))
            opt.zero_grad()
            T.backward(loss)
            opt.step()
        assert abs(p.data[0]) < 1e-2


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = Tensor(np.zeros((4, 3)), requires_grad=True)
        loss = cross_entropy(logits, np.array([0, 1, 2, 0]))
        assert np.isclose(loss.item(), np.log(3.0), atol=1e-9)

    def test_gradients(self):
        z = RNG.normal((5, 4))
        labels = np.array([0, 1, 2, 3, 1])

        def f(zt):
            return cross_entropy(zt, labels)

        t = Tensor(z, requires_grad=True)
        T.backward(f(t))
        want = central_diff(lambda a: f(Tensor(a)).item(), [z], 0)
        assert max_rel_err(t.grad, want) < 1e-6

    def test_softmax_grad_identity(self):
        # d CE / d logits = (softmax - onehot) / n, a classic closed form.
        z = RNG.normal((6, 3))
        labels = RNG.integers(0, 3, size=6)
        t = Tensor(z, requires_grad=True)
        T.backward(cross_entropy(t, labels))
        p = np.exp(z - z.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        onehot = np.zeros_like(p)
        onehot[np.arange(6), labels] = 1.0
        assert np.allclose(t.grad, (p - onehot) / 6.0, atol=1e-9)
