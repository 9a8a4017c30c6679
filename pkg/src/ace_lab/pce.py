"""Progressive counterfactual explainer: a conditional GAN trained against a
frozen classifier.

The generator G(x, c) = decode(encode(x), embed(c)) warps an input until the
classifier's posterior matches the condition vector c. Its objective is a
weighted sum of four terms:

  * adversarial realism (non-saturating generator loss against D),
  * a path-length regularizer on the decoder Jacobian (gradient of a random
    projection of the output with respect to the latent, pulled toward a
    running constant a),
  * classifier consistency: KL(f(G(x, c)) || c),
  * reconstruction: an L1 data + latent identity loss for self and cyclic
    generation.

The discriminator optionally fuses the classifier's penultimate features
with its own trunk before the real/fake head. The classifier is frozen
throughout: its parameters receive no gradients and are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .classifier import Classifier
from .data import LabeledSet
from .errors import ContractError, ShapeError, TrainingDiverged
from .nn import Adam, Dense
from .rng import Rng
from .tensor import EPS_LOG, Tensor
from .util import batches

# Floor added inside the per-sample Jacobian norm so a dead decoder path
# cannot put a zero under the sqrt during backward.
_NORM_FLOOR = 1e-24


@dataclass
class PceConfig:
    latent: int = 64
    hidden: int = 64
    lambda_adv: float = 10.0
    lambda_f: float = 10.0
    lambda_rec: float = 100.0
    epochs: int = 200
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    subset_fraction: float = 0.5
    pl_decay: float = 0.99
    fusion: bool = True
    # Fraction of each discriminator batch drawn as broad background noise
    # (batch mean + 3 sigma Gaussian). Generated samples alone never cover
    # the plane, which leaves D's score far from the data unconstrained;
    # background negatives anchor it low so D works as a density estimate.
    background_fraction: float = 0.25


class Encoder:
    """x -> latent w, one ReLU hidden layer, linear output."""

    def __init__(self, in_dim: int, latent: int, hidden: int, rng: Rng):
        self.fc1 = Dense(in_dim, hidden, "he", rng.child("fc1"))
        self.fc2 = Dense(hidden, latent, "xavier", rng.child("fc2"))

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(x)))

    def parameters(self):
        return [(f"fc1.{n}", t) for n, t in self.fc1.parameters()] + [
            (f"fc2.{n}", t) for n, t in self.fc2.parameters()
        ]


class ConditionEmbed:
    """Linear embedding of the K-dim condition vector into latent width."""

    def __init__(self, n_classes: int, latent: int, rng: Rng):
        # Fan-in here is K (tiny), so xavier would leave the condition an
        # order of magnitude quieter than the encoder latent it is
        # concatenated with, and the decoder learns to ignore it.
        self.fc = Dense(n_classes, latent, "he", rng.child("fc"))

    def __call__(self, c: Tensor) -> Tensor:
        return self.fc(c)

    def parameters(self):
        return [(f"fc.{n}", t) for n, t in self.fc.parameters()]


class Decoder:
    """concat(w, embed(c)) -> x_hat, one ReLU hidden layer, linear output."""

    def __init__(self, latent: int, hidden: int, out_dim: int, rng: Rng):
        self.fc1 = Dense(2 * latent, hidden, "he", rng.child("fc1"))
        self.fc2 = Dense(hidden, out_dim, "xavier", rng.child("fc2"))

    def __call__(self, h: Tensor) -> Tensor:
        return self.fc2(T.relu(self.fc1(h)))

    def parameters(self):
        return [(f"fc1.{n}", t) for n, t in self.fc1.parameters()] + [
            (f"fc2.{n}", t) for n, t in self.fc2.parameters()
        ]


class Discriminator:
    """Real/fake probability; optionally fuses classifier features."""

    def __init__(self, in_dim: int, hidden: int, fusion: bool, rng: Rng):
        self.fusion = fusion
        self.fc1 = Dense(in_dim, hidden, "he", rng.child("fc1"))
        self.fc2 = Dense(hidden, hidden, "he", rng.child("fc2"))
        head_in = 2 * hidden if fusion else hidden
        self.head = Dense(head_in, 1, "xavier", rng.child("head"))

    def __call__(self, x: Tensor, clf: Classifier | None) -> Tensor:
        h = T.relu(self.fc2(T.relu(self.fc1(x))))
        if self.fusion:
            if clf is None:
                raise ContractError("fusion discriminator needs the classifier")
            h = T.concat([h, clf.features(x)], axis=1)
        return T.sigmoid(self.head(h))

    def parameters(self):
        out = [(f"fc1.{n}", t) for n, t in self.fc1.parameters()]
        out += [(f"fc2.{n}", t) for n, t in self.fc2.parameters()]
        out += [(f"head.{n}", t) for n, t in self.head.parameters()]
        return out


def make_conditions(predicted: np.ndarray, n_classes: int, u: np.ndarray) -> np.ndarray:
    """Condition rows for predicted classes `predicted` and strengths `u`:
    zeros except c[k] = u and c[k_c] = 1 - u, with k_c the next class
    cyclically (the other class when K = 2). Rows sum to 1."""
    n = len(predicted)
    if len(u) != n:
        raise ShapeError(f"{n} predictions vs {len(u)} strengths")
    c = np.zeros((n, n_classes))
    kc = (predicted + 1) % n_classes
    c[np.arange(n), predicted] = u
    c[np.arange(n), kc] = 1.0 - u
    return c


class Pce:
    """Encoder + condition embedding + decoder + discriminator, and the
    path-length running constant `pl_a`."""

    def __init__(self, in_dim: int, n_classes: int, cfg: PceConfig, rng: Rng):
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.cfg = cfg
        self.encoder = Encoder(in_dim, cfg.latent, cfg.hidden, rng.child("encoder"))
        self.embed = ConditionEmbed(n_classes, cfg.latent, rng.child("embed"))
        self.decoder = Decoder(cfg.latent, cfg.hidden, in_dim, rng.child("decoder"))
        self.disc = Discriminator(in_dim, cfg.hidden, cfg.fusion, rng.child("disc"))
        self.pl_a = 0.0
        self.curves: list[tuple] = []

    # -- generation ------------------------------------------------------

    def _check_conditions(self, c: Tensor, n: int) -> None:
        if c.ndim != 2 or c.shape != (n, self.n_classes):
            raise ShapeError(f"conditions {c.shape} do not match ({n}, {self.n_classes})")
        if np.any(c.data < 0.0) or np.any(c.data > 1.0):
            raise ContractError("condition entries must lie in [0, 1]")

    def decode(self, w: Tensor, c: Tensor) -> Tensor:
        return self.decoder(T.concat([w, self.embed(c)], axis=1))

    def generate(self, x: Tensor, c: Tensor, return_latent: bool = False):
        """Counterfactual x_hat = G(x, c); optionally also the latent w."""
        self._check_conditions(c, x.shape[0])
        w = self.encoder(x)
        x_hat = self.decode(w, c)
        return (x_hat, w) if return_latent else x_hat

    def density(self, x: np.ndarray, clf: Classifier | None) -> np.ndarray:
        """Discriminator output in (0, 1); high means "looks like training
        data" once the GAN is trained."""
        with T.no_grad():
            return self.disc(Tensor(x), clf).data[:, 0]

    # -- state -------------------------------------------------------------

    def parameters_g(self) -> list[tuple[str, Tensor]]:
        out = [(f"encoder.{n}", t) for n, t in self.encoder.parameters()]
        out += [(f"embed.{n}", t) for n, t in self.embed.parameters()]
        out += [(f"decoder.{n}", t) for n, t in self.decoder.parameters()]
        return out

    def parameters_d(self) -> list[tuple[str, Tensor]]:
        return [(f"disc.{n}", t) for n, t in self.disc.parameters()]

    def state_dict(self) -> list[tuple[str, np.ndarray]]:
        return [(n, t.data) for n, t in self.parameters_g() + self.parameters_d()]

    def load_state_dict(self, entries: dict[str, np.ndarray]) -> None:
        for name, tensor in self.parameters_g() + self.parameters_d():
            tensor.data[...] = entries[name]

    def meta(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "n_classes": self.n_classes,
            "latent": self.cfg.latent,
            "hidden": self.cfg.hidden,
            "fusion": self.cfg.fusion,
            "pl_a": self.pl_a,
        }

    @classmethod
    def from_meta(cls, meta: dict, cfg: PceConfig, rng: Rng) -> "Pce":
        cfg.latent = meta["latent"]
        cfg.hidden = meta["hidden"]
        cfg.fusion = meta["fusion"]
        pce = cls(meta["in_dim"], meta["n_classes"], cfg, rng)
        pce.pl_a = meta["pl_a"]
        return pce


# -- loss terms --------------------------------------------------------------


def guarded_log(t: Tensor) -> Tensor:
    return T.log(T.add(t, EPS_LOG))


def disc_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """-(mean log D(x) + mean log (1 - D(x_hat))), the discriminator's
    half of the minimax objective as a minimization."""
    return T.mul(
        T.add(T.tmean(guarded_log(d_real)), T.tmean(guarded_log(T.sub(1.0, d_fake)))),
        -1.0,
    )


def gen_adv_loss(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss: -mean log D(x_hat)."""
    return T.mul(T.tmean(guarded_log(d_fake)), -1.0)


def path_length_penalty(
    x_hat: Tensor, w: Tensor, probe: Tensor, a: float
) -> tuple[Tensor, float]:
    """mean((p - a)^2) with p the per-sample norm of d<x_hat, probe>/dw.

    The VJP is built with create_graph=True, so the penalty is an ordinary
    differentiable loss. Returns the loss and mean p (for the EMA of a).
    """
    (q,) = T.vjp(x_hat, probe, [w], create_graph=True)
    if q is None:
        # A constant generator has a zero Jacobian everywhere.
        return Tensor(a * a), 0.0
    p = T.sqrt(T.add(T.tsum(T.mul(q, q), axis=1), _NORM_FLOOR))
    diff = T.sub(p, a)
    return T.tmean(T.mul(diff, diff)), float(p.data.mean())


def consistency_kl(probs: Tensor, c: Tensor) -> Tensor:
    """mean_i sum_k p_ik (log(p_ik + eps) - log(c_ik + eps)): how far the
    classifier's posterior on x_hat sits from the requested condition."""
    diff = T.sub(guarded_log(probs), guarded_log(c))
    return T.tmean(T.tsum(T.mul(probs, diff), axis=1))


def l1_pair(x: Tensor, xbar: Tensor, ex: Tensor, exbar: Tensor) -> Tensor:
    """L(x, xbar) = mean|x - xbar| + mean|e(x) - e(xbar)|, each term averaged
    over batch and coordinates."""
    data_term = T.tmean(T.absolute(T.sub(x, xbar)))
    latent_term = T.tmean(T.absolute(T.sub(ex, exbar)))
    return T.add(data_term, latent_term)


def data_l1(x: np.ndarray, xbar: np.ndarray) -> np.ndarray:
    """Per-sample data-space L1 distances (the reconstruction headline)."""
    return np.abs(x - xbar).sum(axis=1)


# -- training ------------------------------------------------------------------


def _freeze(params: list[tuple[str, Tensor]]) -> list[bool]:
    flags = [t.requires_grad for _, t in params]
    for _, t in params:
        t.requires_grad = False
    return flags


def _restore(params: list[tuple[str, Tensor]], flags: list[bool]) -> None:
    for (_, t), f in zip(params, flags):
        t.requires_grad = f


def train_pce(clf: Classifier, train: LabeledSet, cfg: PceConfig, rng: Rng) -> Pce:
    """Alternate discriminator and generator steps over a fixed half of the
    training set. Loss terms with zero weight are skipped outright; the
    classifier is frozen for the duration.

    The discriminator's negative batch is the generated counterfactuals
    plus a slice of broad background noise (config.background_fraction),
    so its sigmoid output decays away from the data manifold and can serve
    as the density score used by the selective classifier."""
    n = len(train)
    subset_n = int(round(cfg.subset_fraction * n))
    if subset_n < cfg.batch_size:
        raise ContractError(
            f"subset of {subset_n} samples is smaller than one batch ({cfg.batch_size})"
        )
    subset = rng.child("subset").permutation(n)[:subset_n]

    pce = Pce(train.x.shape[1], clf.n_classes, cfg, rng.child("init"))
    opt_g = Adam([t for _, t in pce.parameters_g()], lr=cfg.lr, beta1=cfg.beta1)
    opt_d = Adam([t for _, t in pce.parameters_d()], lr=cfg.lr, beta1=cfg.beta1)
    shuffle = rng.child("shuffle")
    cond_rng = rng.child("conditions")
    probe_rng = rng.child("probe")
    bg_rng = rng.child("background")

    frozen = _freeze(clf.parameters())
    step = 0
    try:
        for epoch in range(cfg.epochs):
            order = subset[shuffle.permutation(subset_n)]
            for batch in batches(order, cfg.batch_size):
                x_np = train.x[batch]
                x = Tensor(x_np)
                with T.no_grad():
                    fx_np = clf.predict_proba(x_np)
                k = fx_np.argmax(axis=1)
                u = cond_rng.random(len(batch))
                c = Tensor(make_conditions(k, clf.n_classes, u))
                fx = Tensor(fx_np)

                # Discriminator step (skipped entirely at lambda_adv = 0).
                d_loss_val = 0.0
                if cfg.lambda_adv > 0.0:
                    with T.no_grad():
                        x_fake = pce.generate(x, c)
                    neg = x_fake
                    n_bg = int(round(cfg.background_fraction * len(batch)))
                    if n_bg > 0:
                        bg = x_np.mean(axis=0) + 3.0 * x_np.std(axis=0) * (
                            bg_rng.normal((n_bg, x_np.shape[1]))
                        )
                        neg = Tensor(np.concatenate([x_fake.data, bg]))
                    ld = disc_loss(pce.disc(x, clf), pce.disc(neg, clf))
                    d_loss_val = ld.item()
                    if not np.isfinite(d_loss_val):
                        raise TrainingDiverged(
                            f"discriminator loss became {d_loss_val} at step {step}"
                        )
                    # The previous generator step deposited gradients into D
                    # (its adversarial loss flows through D), so clear first.
                    opt_d.zero_grad()
                    T.backward(T.mul(ld, cfg.lambda_adv))
                    opt_d.step()

                # Generator step.
                w = pce.encoder(x)
                x_hat = pce.decode(w, c)
                terms: list[Tensor] = []
                adv_val = reg_val = kl_val = rec_val = 0.0
                p_mean = None
                if cfg.lambda_adv > 0.0:
                    adv = gen_adv_loss(pce.disc(x_hat, clf))
                    probe = Tensor(probe_rng.normal(x_hat.shape))
                    reg, p_mean = path_length_penalty(x_hat, w, probe, pce.pl_a)
                    adv_val, reg_val = adv.item(), reg.item()
                    terms.append(T.mul(T.add(adv, reg), cfg.lambda_adv))
                if cfg.lambda_f > 0.0:
                    probs_hat = T.softmax(clf.forward(x_hat))
                    kl = consistency_kl(probs_hat, c)
                    kl_val = kl.item()
                    terms.append(T.mul(kl, cfg.lambda_f))
                if cfg.lambda_rec > 0.0:
                    x_self = pce.decode(w, fx)
                    x_cyc = pce.decode(pce.encoder(x_hat), fx)
                    rec = T.add(
                        l1_pair(x, x_self, w, pce.encoder(x_self)),
                        l1_pair(x, x_cyc, w, pce.encoder(x_cyc)),
                    )
                    rec_val = rec.item()
                    terms.append(T.mul(rec, cfg.lambda_rec))
                if not terms:
                    raise ContractError("all loss weights are zero; nothing to train")
                total = terms[0]
                for t in terms[1:]:
                    total = T.add(total, t)
                total_val = total.item()
                if not np.isfinite(total_val):
                    raise TrainingDiverged(
                        f"generator loss became {total_val} at step {step} "
                        f"(adv {adv_val}, reg {reg_val}, kl {kl_val}, rec {rec_val})"
                    )
                opt_g.zero_grad()
                T.backward(total)
                opt_g.step()
                if p_mean is not None:
                    # EMA update after the loss is formed with the old a.
                    pce.pl_a += (1.0 - cfg.pl_decay) * (p_mean - pce.pl_a)
                pce.curves.append(
                    (step, d_loss_val, adv_val, reg_val, kl_val, rec_val, pce.pl_a)
                )
                step += 1
    finally:
        _restore(clf.parameters(), frozen)
    return pce


CURVE_COLUMNS = ("step", "loss_d", "loss_g_adv", "l_reg", "l_f", "l_rec", "pl_a")


def discriminator_accuracy(pce: Pce, clf: Classifier, x: np.ndarray, rng: Rng) -> float:
    """Balanced accuracy of D on real rows vs generated counterfactuals of
    the same rows (threshold 0.5)."""
    with T.no_grad():
        fx = clf.predict_proba(x)
        u = rng.random(len(x))
        c = make_conditions(fx.argmax(axis=1), clf.n_classes, u)
        fake = pce.generate(Tensor(x), Tensor(c)).data
    d_real = pce.density(x, clf)
    d_fake = pce.density(fake, clf)
    return float(0.5 * (np.mean(d_real >= 0.5) + np.mean(d_fake < 0.5)))


def traversal(
    pce: Pce, clf: Classifier, x_row: np.ndarray, steps: int = 9
) -> dict[str, np.ndarray]:
    """Morph sequence for one sample: sweep its predicted-class condition
    strength from 1 to 0 (crossing all four bands), returning the inputs,
    conditions, generated points and classifier posteriors."""
    if steps < 2:
        raise ContractError(f"need at least 2 steps, got {steps}")
    x_row = np.asarray(x_row, dtype=np.float64).reshape(1, -1)
    k = int(clf.predict(x_row)[0])
    values = np.linspace(1.0, 0.0, steps)
    c = make_conditions(np.full(steps, k), clf.n_classes, values)
    x_rep = np.repeat(x_row, steps, axis=0)
    with T.no_grad():
        x_hat = pce.generate(Tensor(x_rep), Tensor(c)).data
    probs = clf.predict_proba(x_hat)
    return {"strength": values, "conditions": c, "x_hat": x_hat, "probs": probs}
