"""Abstaining classifier: predict only where the discriminator's density
score clears a threshold.

The discriminator from the counterfactual generator doubles as a density
estimate over the training manifold. The combined rule predicts with the
fine-tuned classifier when density >= h (h = 0.5 by default) and abstains
otherwise, so inputs far from the training distribution are rejected
instead of silently classified.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .classifier import Classifier, predictive_entropy
from .data import LabeledSet
from .errors import ContractError
from .metrics import accuracy
from .pce import Pce


@dataclass(frozen=True)
class Predicted:
    probs: np.ndarray
    entropy: float
    density: float


@dataclass(frozen=True)
class Abstained:
    density: float


Decision = Predicted | Abstained


class SelectiveClassifier:
    """Frozen (classifier, discriminator) pair with a fixed threshold.

    feature_clf is the classifier the discriminator was trained against;
    its penultimate features feed the fusion head, so density scoring must
    keep using it even after the predicting classifier is fine-tuned.
    """

    def __init__(self, clf: Classifier, pce: Pce, feature_clf: Classifier | None = None,
                 h: float = 0.5):
        if not 0.0 < h < 1.0:
            raise ContractError(f"threshold h must be in (0, 1), got {h}")
        self.clf = clf
        self.pce = pce
        self.feature_clf = feature_clf if feature_clf is not None else clf
        self.h = h

    def density(self, x: np.ndarray) -> np.ndarray:
        return self.pce.density(x, self.feature_clf)


def decide(sc: SelectiveClassifier, x: np.ndarray) -> list[Decision]:
    """Density >= h predicts with the classifier, otherwise abstains. The
    comparison is inclusive at exactly h."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    dens = sc.density(x)
    out: list[Decision] = []
    predict_mask = dens >= sc.h
    if predict_mask.any():
        probs = sc.clf.predict_proba(x[predict_mask])
        pes = predictive_entropy(probs)
    j = 0
    for i in range(x.shape[0]):
        if predict_mask[i]:
            out.append(Predicted(probs[j], float(pes[j]), float(dens[i])))
            j += 1
        else:
            out.append(Abstained(float(dens[i])))
    return out


def coverage_report(
    sc: SelectiveClassifier, sets: dict[str, LabeledSet]
) -> dict[str, dict[str, float]]:
    """Per named set: abstention rate, accuracy over covered samples, mean
    predictive entropy over covered samples, and mean density. Accuracy is
    NaN for sets without usable labels (for instance far-OOD noise)."""
    report: dict[str, dict[str, float]] = {}
    for name, ds in sets.items():
        dens = sc.density(ds.x)
        covered = dens >= sc.h
        row = {
            "abstention_rate": float(1.0 - covered.mean()),
            "mean_density": float(dens.mean()),
            "covered_accuracy": float("nan"),
            "covered_mean_pe": float("nan"),
        }
        if covered.any():
            probs = sc.clf.predict_proba(ds.x[covered])
            row["covered_mean_pe"] = float(predictive_entropy(probs).mean())
            labels = ds.y[covered]
            valid = (labels >= 0) & (labels < probs.shape[1])
            if valid.any():
                row["covered_accuracy"] = accuracy(probs[valid], labels[valid])
        report[name] = row
    return report


def decisions_csv(path, sc: SelectiveClassifier, sets: dict[str, LabeledSet]) -> None:
    """(sample_id, set, density, decision, predicted_class, entropy) rows."""
    lines = ["sample_id,set,density,decision,predicted_class,entropy"]
    for name, ds in sets.items():
        for i, d in enumerate(decide(sc, ds.x)):
            if isinstance(d, Predicted):
                lines.append(
                    f"{i},{name},{d.density:.17g},predicted,"
                    f"{int(np.argmax(d.probs))},{d.entropy:.17g}"
                )
            else:
                lines.append(f"{i},{name},{d.density:.17g},abstained,,")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


__all__ = [
    "Predicted",
    "Abstained",
    "Decision",
    "SelectiveClassifier",
    "decide",
    "coverage_report",
    "decisions_csv",
]
