"""Shared fixtures: small datasets and quickly trained models.

Everything here is sized for speed (hundreds of samples, tens of epochs);
the full-scale reference pipeline lives in test_acceptance.py.
"""

import numpy as np
import pytest

from ace_lab.classifier import Classifier, ClassifierConfig, train_classifier
from ace_lab.data import LabeledSet, Standardizer, stratified_split, two_moons
from ace_lab.pce import PceConfig, train_pce
from ace_lab.rng import Rng


def make_blobs(n: int, rng: Rng, spread: float = 0.4) -> LabeledSet:
    """Two well-separated Gaussian blobs; trivially learnable."""
    half = n // 2
    a = np.array([-1.5, 0.0]) + spread * rng.normal((half, 2))
    b = np.array([1.5, 0.0]) + spread * rng.normal((n - half, 2))
    y = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(n - half, dtype=np.int64)])
    return LabeledSet(np.concatenate([a, b]), y, "blobs")


@pytest.fixture(scope="session")
def blob_sets():
    root = Rng(11)
    ds = make_blobs(240, root.child("data"))
    train, test = stratified_split(ds, 0.25, root.child("split"))
    std = Standardizer.fit(train.x)
    return std.apply_set(train), std.apply_set(test)


@pytest.fixture(scope="session")
def blob_clf(blob_sets):
    train, test = blob_sets
    cfg = ClassifierConfig(hidden=16, epochs=15, batch_size=32)
    model, report = train_classifier(train, test, cfg, Rng(11).child("clf"))
    assert report.test_acc[report.selected_epoch] > 0.95
    return model


@pytest.fixture(scope="session")
def moon_sets():
    root = Rng(5)
    ds = two_moons(400, 0.1, root.child("data"))
    train, test = stratified_split(ds, 0.5, root.child("split"))
    std = Standardizer.fit(train.x)
    return std.apply_set(train), std.apply_set(test)


@pytest.fixture(scope="session")
def moon_clf(moon_sets):
    train, test = moon_sets
    cfg = ClassifierConfig(hidden=32, epochs=40, batch_size=32)
    model, report = train_classifier(train, test, cfg, Rng(5).child("clf"))
    assert report.test_acc[report.selected_epoch] > 0.9
    return model


@pytest.fixture(scope="session")
def moon_pce(moon_sets, moon_clf):
    train, _ = moon_sets
    cfg = PceConfig(hidden=32, latent=16, epochs=60, batch_size=32,
                    lambda_f=30.0, lambda_rec=25.0, background_fraction=1.5)
    return train_pce(moon_clf, train, cfg, Rng(5).child("pce"))
