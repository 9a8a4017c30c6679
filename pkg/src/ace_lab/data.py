"""Synthetic two-moons data and its out-of-distribution companions.

All sets are plain float64 arrays wrapped in LabeledSet. The far-OOD set is
generated in standardized units, so standardization happens first and its
exclusion radius means what it says in model space.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, GenerationError, ShapeError
from .rng import Rng

NEAR_OOD_LABEL = 2
FAR_OOD_LABEL = -1


@dataclass
class LabeledSet:
    """Feature matrix (n, d) with integer labels (n,). Label -1 marks
    samples that belong to no class (far-OOD probes)."""

    x: np.ndarray
    y: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim != 2 or self.y.ndim != 1 or len(self.x) != len(self.y):
            raise ShapeError(
                f"labeled set needs x (n, d) and y (n,), got {self.x.shape} and {self.y.shape}"
            )

    def __len__(self) -> int:
        return len(self.x)

    def take(self, idx: np.ndarray, name: str | None = None) -> "LabeledSet":
        return LabeledSet(self.x[idx], self.y[idx], self.name if name is None else name)


def two_moons(n: int, noise: float, rng: Rng) -> LabeledSet:
    """The classic interleaved half-circles, n/2 points per moon.

    Outer moon: (cos t, sin t); inner moon: (1 - cos t, 1 - sin t - 0.5),
    t evenly spaced on [0, pi] inclusive. Gaussian coordinate noise is added
    with standard deviation `noise`. Labels: outer 0, inner 1.
    """
    if n <= 0 or n % 2 != 0:
        raise ContractError(f"two_moons needs a positive even count, got {n}")
    if noise < 0:
        raise ContractError(f"negative noise {noise}")
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1.0 - np.cos(t), 1.0 - np.sin(t) - 0.5], axis=1)
    x = np.concatenate([outer, inner], axis=0)
    x = x + noise * rng.normal((n, 2))
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    return LabeledSet(x, y, "moons")


def near_ood_moons(n: int, rng: Rng, noise: float = 0.1) -> LabeledSet:
    """Near-OOD companion: the outer moon rotated 90 degrees counterclockwise
    about (0.5, 0.25), same noise scale as the training data, label 2."""
    if n <= 0:
        raise ContractError(f"near_ood_moons needs a positive count, got {n}")
    t = np.linspace(0.0, np.pi, n)
    pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    pts = pts + noise * rng.normal((n, 2))
    center = np.array([0.5, 0.25])
    rot = np.array([[0.0, -1.0], [1.0, 0.0]])
    x = center + (pts - center) @ rot.T
    return LabeledSet(x, np.full(n, NEAR_OOD_LABEL, dtype=np.int64), "near_ood")


def far_ood_uniform(
    n: int,
    rng: Rng,
    exclude: np.ndarray,
    box: float = 4.0,
    radius: float = 0.5,
) -> LabeledSet:
    """Uniform probes over [-box, box]^2 at least `radius` away from every
    row of `exclude` (all in the same, standardized, units). Proposals are
    capped at 100 * n; running out raises GenerationError. Label -1."""
    if n == 0:
        return LabeledSet(np.zeros((0, 2)), np.zeros(0, dtype=np.int64), "far_ood")
    if n < 0:
        raise ContractError(f"negative count {n}")
    exclude = np.asarray(exclude, dtype=np.float64)
    budget = 100 * n
    drawn = 0
    kept: list[np.ndarray] = []
    kept_n = 0
    while kept_n < n and drawn < budget:
        batch = min(4 * n, budget - drawn)
        drawn += batch
        pts = rng.uniform(-box, box, size=(batch, 2))
        d2 = ((pts[:, None, :] - exclude[None, :, :]) ** 2).sum(axis=2)
        ok = pts[d2.min(axis=1) >= radius * radius]
        kept.append(ok)
        kept_n += len(ok)
    if kept_n < n:
        raise GenerationError(
            f"far-OOD rejection sampling kept {kept_n}/{n} points "
            f"after {drawn} proposals (budget {budget})"
        )
    x = np.concatenate(kept, axis=0)[:n]
    return LabeledSet(x, np.full(n, FAR_OOD_LABEL, dtype=np.int64), "far_ood")


@dataclass
class Standardizer:
    """Per-coordinate affine map fitted on one set and applied to all."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        x = np.asarray(x, dtype=np.float64)
        mean = x.mean(axis=0)
        std = x.std(axis=0)
        zero = np.nonzero(std == 0.0)[0]
        if len(zero):
            raise ContractError(f"feature {int(zero[0])} has zero standard deviation")
        return cls(mean, std)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean

    def apply_set(self, s: LabeledSet) -> LabeledSet:
        return LabeledSet(self.apply(s.x), s.y.copy(), s.name)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def stratified_split(s: LabeledSet, test_fraction: float, rng: Rng) -> tuple[LabeledSet, LabeledSet]:
    """Shuffle within each class and split off round(test_fraction * n_c)
    samples per class for the test side."""
    if not 0.0 < test_fraction < 1.0:
        raise ContractError(f"test fraction {test_fraction} outside (0, 1)")
    train_idx: list[np.ndarray] = []
    test_idx: list[np.ndarray] = []
    for label in np.unique(s.y):
        members = np.nonzero(s.y == label)[0]
        order = members[rng.child(f"split/{int(label)}").permutation(len(members))]
        n_test = int(round(test_fraction * len(members)))
        test_idx.append(order[:n_test])
        train_idx.append(order[n_test:])
    train = np.sort(np.concatenate(train_idx))
    test = np.sort(np.concatenate(test_idx))
    return s.take(train, "train"), s.take(test, "test")


# -- CSV round trip --------------------------------------------------------

_FLOAT_FMT = "%.17g"


def save_labeled_csv(path: Path, s: LabeledSet) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{i}" for i in range(s.x.shape[1])] + ["label"])
        for row, label in zip(s.x, s.y):
            writer.writerow([_FLOAT_FMT % v for v in row] + [str(int(label))])


def load_labeled_csv(path: Path, name: str = "") -> LabeledSet:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "label":
            raise ShapeError(f"{path}: expected trailing 'label' column, got {header}")
        d = len(header) - 1
        xs, ys = [], []
        for row in reader:
            xs.append([float(v) for v in row[:d]])
            ys.append(int(row[d]))
    x = np.asarray(xs, dtype=np.float64).reshape(len(xs), d)
    return LabeledSet(x, np.asarray(ys, dtype=np.int64), name or path.stem)
