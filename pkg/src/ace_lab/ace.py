"""Counterfactual augmentation and soft-label fine-tuning.

The trained counterfactual generator turns a slice of the training set into
augmented samples: for each source row it draws condition strengths
u ~ Uniform(0,1) and emits (G(x, c), c), keeping c as the sample's soft
label. A mixed dataset (default 30% augmented / 70% real, real labels
promoted to one-hot) then fine-tunes a copy of the classifier for a few
epochs with a soft-label cross-entropy, widening its decision boundary
without disturbing in-distribution accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .classifier import Classifier, TrainReport, select_epoch
from .data import LabeledSet
from .errors import ContractError, TrainingDiverged
from .metrics import accuracy, ece
from .nn import Adam
from .pce import Pce, make_conditions
from .rng import Rng
from .tensor import EPS_LOG, Tensor
from .util import batches


@dataclass
class AugmentedSample:
    """One generated counterfactual: the point, its soft label, and where
    it came from."""

    x: np.ndarray
    soft_label: np.ndarray
    source_index: int
    u: float


@dataclass
class MixedDataset:
    """Real rows (one-hot labels) blended with augmented rows (soft
    labels); rho is the augmented fraction of the total."""

    x: np.ndarray
    soft: np.ndarray
    is_augmented: np.ndarray
    rho: float

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.soft = np.asarray(self.soft, dtype=np.float64)
        self.is_augmented = np.asarray(self.is_augmented, dtype=bool)
        if self.x.shape[0] != self.soft.shape[0]:
            raise ContractError(
                f"{self.x.shape[0]} rows but {self.soft.shape[0]} soft labels"
            )

    def __len__(self) -> int:
        return self.x.shape[0]


def generate_ace(
    pce: Pce,
    clf: Classifier,
    source: LabeledSet,
    m: int = 4,
    rng: Rng | None = None,
) -> list[AugmentedSample]:
    """m counterfactuals per source row. The condition anchors on the
    classifier's predicted class k with strength u ~ Uniform(0,1) and puts
    1 - u on the counterfactual class; for K > 2 every other class takes a
    turn as the counterfactual target."""
    if m < 1:
        raise ContractError(f"m must be >= 1, got {m}")
    if rng is None:
        raise ContractError("generate_ace needs an rng")
    k_pred = clf.predict_proba(source.x).argmax(axis=1)
    n_classes = clf.n_classes
    out: list[AugmentedSample] = []
    for offset in range(1, n_classes):
        for _ in range(m):
            u = rng.random(len(source))
            kc = (k_pred + offset) % n_classes
            c = np.zeros((len(source), n_classes))
            c[np.arange(len(source)), k_pred] = u
            c[np.arange(len(source)), kc] = 1.0 - u
            with T.no_grad():
                x_hat = pce.generate(Tensor(source.x), Tensor(c))
            for i in range(len(source)):
                out.append(
                    AugmentedSample(x_hat.data[i].copy(), c[i].copy(), i, float(u[i]))
                )
    return out


def build_mixed(
    real: LabeledSet,
    aug: list[AugmentedSample],
    rho: float = 0.3,
    rng: Rng | None = None,
    n_classes: int = 2,
) -> MixedDataset:
    """Blend real and augmented pools into a dataset of len(real) rows
    with an augmented fraction of rho, sampling each pool without
    replacement and shuffling deterministically."""
    if not 0.0 <= rho <= 1.0:
        raise ContractError(f"rho must be in [0, 1], got {rho}")
    if rng is None:
        raise ContractError("build_mixed needs an rng")
    total = len(real)
    n_aug = int(round(rho * total))
    n_real = total - n_aug
    if n_aug > len(aug):
        raise ContractError(
            f"need {n_aug} augmented samples but only {len(aug)} available"
        )
    real_idx = rng.child("real").permutation(len(real))[:n_real]
    aug_idx = rng.child("aug").permutation(len(aug))[:n_aug]
    onehot = np.zeros((n_real, n_classes))
    onehot[np.arange(n_real), real.y[real_idx]] = 1.0
    x = np.concatenate([real.x[real_idx], np.stack([aug[i].x for i in aug_idx])])\
        if n_aug else real.x[real_idx].copy()
    soft = np.concatenate([onehot, np.stack([aug[i].soft_label for i in aug_idx])])\
        if n_aug else onehot
    flag = np.concatenate([np.zeros(n_real, dtype=bool), np.ones(n_aug, dtype=bool)])
    order = rng.child("shuffle").permutation(total)
    return MixedDataset(x[order], soft[order], flag[order], rho)


def soft_cross_entropy(pred: Tensor, target: Tensor) -> Tensor:
    """mean_i -sum_k target_ik log(pred_ik + eps); equals ordinary
    cross-entropy when targets are one-hot."""
    logp = T.log(T.add(pred, EPS_LOG))
    return T.mul(T.tmean(T.tsum(T.mul(target, logp), axis=1)), -1.0)


@dataclass
class FinetuneConfig:
    epochs: int = 8
    batch_size: int = 64
    lr: float = 1e-4
    checkpoint_window: float = 0.2
    acc_slack: float = 0.005


def finetune(
    clf: Classifier,
    mixed: MixedDataset,
    test: LabeledSet,
    cfg: FinetuneConfig,
    rng: Rng,
) -> tuple[Classifier, TrainReport]:
    """Fine-tune a copy of the classifier on the mixed dataset with
    soft-label cross-entropy and a gentle Adam step. The input classifier
    is left untouched; the returned model is the checkpoint with the best
    calibration among near-best-accuracy epochs."""
    model = clf.clone(rng.child("clone"))
    if cfg.epochs == 0:
        report = TrainReport(train_loss=[], test_acc=[], test_ece=[], selected_epoch=-1)
        return model, report
    opt = Adam([t for _, t in model.parameters()], lr=cfg.lr)
    shuffle = rng.child("shuffle")
    drop_rng = rng.child("dropout")
    losses: list[float] = []
    accs: list[float] = []
    eces: list[float] = []
    snaps: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle.permutation(len(mixed))
        epoch_loss = 0.0
        nb = 0
        for batch in batches(order, cfg.batch_size):
            x = Tensor(mixed.x[batch])
            target = Tensor(mixed.soft[batch])
            logits = model.forward(x, train=True, rng=drop_rng)
            loss = soft_cross_entropy(T.softmax(logits), target)
            val = loss.item()
            if not np.isfinite(val):
                raise TrainingDiverged(
                    f"fine-tune loss became {val} at epoch {epoch} step {step}"
                )
            opt.zero_grad()
            T.backward(loss)
            opt.step()
            epoch_loss += val
            nb += 1
            step += 1
        losses.append(epoch_loss / max(nb, 1))
        probs = model.predict_proba(test.x)
        accs.append(accuracy(probs, test.y))
        eces.append(ece(probs, test.y))
        snaps.append(model.snapshot())
    pick = select_epoch(accs, eces, cfg.checkpoint_window, cfg.acc_slack)
    model.load_state_dict(snaps[pick])
    report = TrainReport(
        train_loss=losses, test_acc=accs, test_ece=eces, selected_epoch=pick
    )
    return model, report


def save_augmented_csv(path, aug: list[AugmentedSample]) -> None:
    """Rows of x coordinates, soft label, source index, and drawn u."""
    if not aug:
        raise ContractError("no augmented samples to save")
    d = aug[0].x.shape[0]
    k = aug[0].soft_label.shape[0]
    header = ",".join(
        [f"x{i}" for i in range(d)] + [f"c{i}" for i in range(k)] + ["source_index", "u"]
    )
    rows = np.array(
        [list(a.x) + list(a.soft_label) + [a.source_index, a.u] for a in aug]
    )
    np.savetxt(path, rows, delimiter=",", header=header, comments="", fmt="%.17g")


def load_augmented_csv(path) -> list[AugmentedSample]:
    """Inverse of save_augmented_csv; column split is read off the header."""
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    d = sum(1 for n in names if n.startswith("x"))
    k = sum(1 for n in names if n.startswith("c"))
    if d + k + 2 != len(names) or names[-2:] != ["source_index", "u"]:
        raise ContractError(f"unrecognized augmented-sample header: {names}")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [
        AugmentedSample(r[:d], r[d:d + k], int(r[d + k]), float(r[d + k + 1]))
        for r in rows
    ]


__all__ = [
    "AugmentedSample",
    "MixedDataset",
    "FinetuneConfig",
    "generate_ace",
    "build_mixed",
    "soft_cross_entropy",
    "finetune",
    "save_augmented_csv",
    "load_augmented_csv",
]
