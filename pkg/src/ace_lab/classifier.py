"""The classifier under study, plus its uncertainty machinery.

A deliberately ordinary two-hidden-layer network: Dense, BatchNorm, ReLU,
Dropout, Dense, BatchNorm, ReLU, Dense head. Hidden layers use He-uniform
init, the head Xavier-uniform, biases zero. Uncertainty comes from
MC-dropout (dropout active at eval, batch-norm in eval mode) or from an
ensemble; ambiguous-looking samples ("ambiguity-induced", AiD) are the
top predictive-entropy fraction under MC-dropout.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import LabeledSet
from .errors import ContractError, TrainingDiverged
from .metrics import accuracy, ece
from .nn import Adam, BatchNorm, Dense, Dropout, cross_entropy
from .rng import Rng
from .tensor import Tensor
from .util import batches, smallest_count_at_least, thread_count


@dataclass
class ClassifierConfig:
    hidden: int = 64
    dropout: float = 0.1
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    checkpoint_window: float = 0.2
    acc_slack: float = 0.005


@dataclass
class TrainReport:
    """Per-epoch curves plus which epoch's weights were kept."""

    train_loss: list[float] = field(default_factory=list)
    test_acc: list[float] = field(default_factory=list)
    test_ece: list[float] = field(default_factory=list)
    selected_epoch: int = -1

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "test_acc": self.test_acc,
            "test_ece": self.test_ece,
            "selected_epoch": self.selected_epoch,
        }


class Classifier:
    def __init__(self, in_dim: int, n_classes: int, rng: Rng,
                 hidden: int = 64, dropout: float = 0.1):
        if n_classes < 2:
            raise ContractError(f"need at least 2 classes, got {n_classes}")
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.hidden = hidden
        self.fc1 = Dense(in_dim, hidden, "he", rng.child("init/fc1"))
        self.bn1 = BatchNorm(hidden)
        self.drop = Dropout(dropout)
        self.fc2 = Dense(hidden, hidden, "he", rng.child("init/fc2"))
        self.bn2 = BatchNorm(hidden)
        self.head = Dense(hidden, n_classes, "xavier", rng.child("init/head"))

    # -- forward passes ------------------------------------------------

    def features(self, x: Tensor, train: bool = False, rng: Rng | None = None,
                 dropout_active: bool | None = None) -> Tensor:
        """Penultimate activations (after the second ReLU)."""
        active = train if dropout_active is None else dropout_active
        h = T.relu(self.bn1(self.fc1(x), train))
        h = self.drop(h, rng, active)
        return T.relu(self.bn2(self.fc2(h), train))

    def forward(self, x: Tensor, train: bool = False, rng: Rng | None = None,
                dropout_active: bool | None = None) -> Tensor:
        return self.head(self.features(x, train, rng, dropout_active))

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Eval-mode softmax probabilities as a plain array."""
        with T.no_grad():
            return T.softmax(self.forward(Tensor(x))).data

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    # -- state ----------------------------------------------------------

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, layer in (("fc1", self.fc1), ("bn1", self.bn1),
                              ("fc2", self.fc2), ("bn2", self.bn2),
                              ("head", self.head)):
            out.extend((f"{prefix}.{n}", t) for n, t in layer.parameters())
        return out

    def state_dict(self) -> list[tuple[str, np.ndarray]]:
        """Parameters plus batch-norm running statistics, in archive order."""
        out = [(n, t.data) for n, t in self.parameters()]
        out.extend((f"bn1.{n}", a) for n, a in self.bn1.state_arrays())
        out.extend((f"bn2.{n}", a) for n, a in self.bn2.state_arrays())
        return out

    def load_state_dict(self, entries: dict[str, np.ndarray]) -> None:
        for name, tensor in self.parameters():
            tensor.data[...] = entries[name]
        self.bn1.running_mean[...] = entries["bn1.running_mean"]
        self.bn1.running_var[...] = entries["bn1.running_var"]
        self.bn2.running_mean[...] = entries["bn2.running_mean"]
        self.bn2.running_var[...] = entries["bn2.running_var"]

    def snapshot(self) -> dict[str, np.ndarray]:
        return {n: a.copy() for n, a in self.state_dict()}

    def clone(self, rng: Rng) -> "Classifier":
        twin = Classifier(self.in_dim, self.n_classes, rng,
                          self.hidden, self.drop.rate)
        twin.load_state_dict(self.snapshot())
        return twin

    def meta(self) -> dict:
        return {
            "in_dim": self.in_dim,
            "n_classes": self.n_classes,
            "hidden": self.hidden,
            "dropout": self.drop.rate,
        }

    @classmethod
    def from_meta(cls, meta: dict, rng: Rng) -> "Classifier":
        return cls(meta["in_dim"], meta["n_classes"], rng,
                   meta["hidden"], meta["dropout"])


def select_epoch(test_acc: list[float], test_ece: list[float],
                 window_fraction: float = 0.2, acc_slack: float = 0.005) -> int:
    """Checkpoint rule: among the final `window_fraction` of epochs, pick the
    lowest-ECE epoch whose accuracy is within `acc_slack` of the best seen
    anywhere. If the window has no such epoch, fall back to the window's
    best-accuracy epoch (lowest ECE among ties)."""
    n = len(test_acc)
    if n == 0 or n != len(test_ece):
        raise ContractError("need matching, non-empty accuracy and ECE curves")
    start = n - smallest_count_at_least(window_fraction, n)
    window = range(start, n)
    floor = max(test_acc) - acc_slack
    eligible = [e for e in window if test_acc[e] >= floor]
    if not eligible:
        best_acc = max(test_acc[e] for e in window)
        eligible = [e for e in window if test_acc[e] == best_acc]
    return min(eligible, key=lambda e: (test_ece[e], e))


def train_classifier(
    train: LabeledSet,
    test: LabeledSet,
    cfg: ClassifierConfig,
    rng: Rng,
    n_classes: int = 2,
) -> tuple[Classifier, TrainReport]:
    """Adam(lr, 0.9, 0.999) on softmax cross-entropy with shuffled
    minibatches, then roll back to the checkpoint epoch."""
    model = Classifier(train.x.shape[1], n_classes, rng,
                       hidden=cfg.hidden, dropout=cfg.dropout)
    opt = Adam([t for _, t in model.parameters()], lr=cfg.lr)
    shuffle = rng.child("shuffle")
    drop_rng = rng.child("dropout")
    report = TrainReport()
    snapshots: list[dict[str, np.ndarray]] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(train))
        losses = []
        for batch in batches(order, cfg.batch_size):
            logits = model.forward(Tensor(train.x[batch]), train=True, rng=drop_rng)
            loss = cross_entropy(logits, train.y[batch])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDiverged(
                    f"classifier loss became {value} at epoch {epoch}, step {step}"
                )
            T.backward(loss)
            opt.step()
            losses.append(value)
            step += 1
        probs = model.predict_proba(test.x)
        report.train_loss.append(float(np.mean(losses)))
        report.test_acc.append(accuracy(probs, test.y))
        report.test_ece.append(ece(probs, test.y))
        snapshots.append(model.snapshot())
    chosen = select_epoch(report.test_acc, report.test_ece,
                          cfg.checkpoint_window, cfg.acc_slack)
    report.selected_epoch = chosen
    model.load_state_dict(snapshots[chosen])
    return model, report


# -- uncertainty -----------------------------------------------------------


def predictive_entropy(probs: np.ndarray) -> np.ndarray:
    """Shannon entropy of each probability row, log floored at 1e-12."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2:
        raise ContractError(f"expected (n, K) probabilities, got {probs.shape}")
    if np.any(np.abs(probs.sum(axis=1) - 1.0) > 1e-6):
        raise ContractError("probability rows must sum to 1 within 1e-6")
    return -np.sum(probs * np.log(probs + T.EPS_LOG), axis=1)


def mc_dropout_proba(model: Classifier, x: np.ndarray, t_samples: int,
                     rng: Rng) -> np.ndarray:
    """Mean softmax over `t_samples` stochastic passes: dropout active,
    batch norm in eval mode."""
    if t_samples < 1:
        raise ContractError(f"need at least 1 MC sample, got {t_samples}")
    acc = np.zeros((len(x), model.n_classes))
    with T.no_grad():
        for _ in range(t_samples):
            logits = model.forward(Tensor(x), train=False, rng=rng, dropout_active=True)
            acc += T.softmax(logits).data
    return acc / t_samples


def label_aid(model: Classifier, x: np.ndarray, rng: Rng,
              fraction: float = 0.05, t_samples: int = 20) -> np.ndarray:
    """Indices of the ambiguity-induced subset: the top ceil(fraction * n)
    samples by MC-dropout predictive entropy, ties broken by lower index.
    Returned in ascending index order."""
    if not 0.0 < fraction <= 1.0:
        raise ContractError(f"fraction {fraction} outside (0, 1]")
    pe = predictive_entropy(mc_dropout_proba(model, x, t_samples, rng))
    m = smallest_count_at_least(fraction, len(x))
    order = np.lexsort((np.arange(len(x)), -pe))
    return np.sort(order[:m])


# -- ensembles --------------------------------------------------------------


class Ensemble:
    """Uniform average of independently trained classifiers."""

    def __init__(self, members: list[Classifier]):
        if not members:
            raise ContractError("ensemble needs at least one member")
        self.members = members

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        acc = np.zeros((len(x), self.members[0].n_classes))
        for m in self.members:
            acc += m.predict_proba(x)
        return acc / len(self.members)


def train_ensemble(
    train: LabeledSet,
    test: LabeledSet,
    cfg: ClassifierConfig,
    rng: Rng,
    n_members: int,
    n_classes: int = 2,
) -> tuple[Ensemble, list[TrainReport]]:
    """Train members on child streams; honors the ACE_LAB_THREADS cap."""
    if n_members < 1:
        raise ContractError(f"need at least 1 member, got {n_members}")
    seeds = [rng.child(f"member/{i}") for i in range(n_members)]

    def fit(member_rng: Rng) -> tuple[Classifier, TrainReport]:
        return train_classifier(train, test, cfg, member_rng, n_classes)

    workers = min(thread_count(), n_members)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(fit, seeds))
    else:
        results = [fit(s) for s in seeds]
    return Ensemble([m for m, _ in results]), [r for _, r in results]
