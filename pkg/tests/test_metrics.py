"""Metric implementations against brute-force oracles.

AUC is compared with O(n^2) pair counting and TNR@TPR with an exhaustive
threshold sweep; both must agree on every random instance, ties included.
"""

import numpy as np
import pytest

from ace_lab.errors import ContractError
from ace_lab.metrics import accuracy, auc_roc, ece, ood_detection, tnr_at_tpr
from ace_lab.rng import Rng
from helpers import pair_count_auc, sweep_tnr


class TestAucOracle:
    def test_random_instances(self):
        rng = Rng(41, "auc")
        for trial in range(300):
            n = int(rng.integers(4, 50))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 0
                labels[-1] = 1
            # Quantized scores force plenty of ties.
            scores = np.round(rng.random(n) * 8) / 8.0
            want = pair_count_auc(scores, labels)
            assert abs(auc_roc(scores, labels) - want) < 1e-12

    def test_perfect_and_inverted(self):
        labels = np.array([0, 0, 1, 1])
        assert auc_roc(np.array([0.1, 0.2, 0.8, 0.9]), labels) == 1.0
        assert auc_roc(np.array([0.9, 0.8, 0.2, 0.1]), labels) == 0.0

    def test_all_ties(self):
        assert auc_roc(np.ones(6), np.array([0, 1, 0, 1, 0, 1])) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ContractError):
            auc_roc(np.ones(3), np.ones(3, dtype=np.int64))

    def test_non_binary_rejected(self):
        with pytest.raises(ContractError):
            auc_roc(np.ones(3), np.array([0, 1, 2]))

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            auc_roc(np.ones(3), np.array([0, 1]))


class TestTnrOracle:
    def test_random_instances(self):
        rng = Rng(43, "tnr")
        for trial in range(300):
            n = int(rng.integers(4, 50))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0] = 0
                labels[-1] = 1
            scores = np.round(rng.random(n) * 8) / 8.0
            target = float(rng.uniform(0.05, 1.0))
            want = sweep_tnr(scores, labels, target)
            assert tnr_at_tpr(scores, labels, target) == want

    def test_separable(self):
        labels = np.array([0, 0, 1, 1])
        assert tnr_at_tpr(np.array([0.1, 0.2, 0.8, 0.9]), labels, 0.95) == 1.0

    def test_target_validation(self):
        labels = np.array([0, 1])
        with pytest.raises(ContractError):
            tnr_at_tpr(np.ones(2), labels, 0.0)


class TestEce:
    def test_perfectly_calibrated_binary(self):
        # Confidence 1.0 and always right: zero gap.
        probs = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]])
        labels = np.array([0, 1, 0])
        assert ece(probs, labels) == 0.0

    def test_hand_computed(self):
        # n_bins=3 puts conf .9 in bin 2 and conf .55 in bin 1:
        # (conf .9, wrong) -> gap .9; (conf .55, right) -> gap .45.
        probs = np.array([[0.9, 0.1], [0.55, 0.45]])
        labels = np.array([1, 0])
        assert np.isclose(ece(probs, labels, n_bins=3), 0.5 * 0.9 + 0.5 * 0.45)

    def test_shared_bin_averages(self):
        # Both samples in one bin: gap = |acc .5 - mean conf .75| = .25.
        probs = np.array([[0.9, 0.1], [0.6, 0.4]])
        labels = np.array([1, 0])
        assert np.isclose(ece(probs, labels, n_bins=2), 0.25)

    def test_full_confidence_lands_in_last_bin(self):
        probs = np.array([[1.0, 0.0]])
        assert ece(probs, np.array([0]), n_bins=15) == 0.0

    def test_row_sum_validation(self):
        with pytest.raises(ContractError):
            ece(np.array([[0.9, 0.3]]), np.array([0]))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            ece(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))


class TestOodDetection:
    def test_direction_flag(self):
        id_s = np.array([0.1, 0.2, 0.3])
        ood_s = np.array([0.8, 0.9, 1.0])
        res = ood_detection(id_s, ood_s, high_is_ood=True)
        assert res.auc == 1.0 and res.tnr_at_tpr95 == 1.0
        flipped = ood_detection(-id_s, -ood_s, high_is_ood=False)
        assert flipped.auc == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            ood_detection(np.zeros(0), np.ones(3))


class TestAccuracy:
    def test_basic(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4]])
        assert accuracy(probs, np.array([0, 1, 1])) == pytest.approx(2.0 / 3.0)

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            accuracy(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
