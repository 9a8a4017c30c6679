"""Numerical checking utilities shared across test modules."""

import numpy as np


def central_diff(f, arrays, i, eps=1e-6):
    """Central finite-difference gradient of scalar f(*arrays) w.r.t. arrays[i]."""
    base = [np.array(a, dtype=np.float64, copy=True) for a in arrays]
    grad = np.zeros_like(base[i])
    flat = grad.reshape(-1)
    probe = base[i].reshape(-1)
    for j in range(probe.size):
        orig = probe[j]
        probe[j] = orig + eps
        hi = f(*base)
        probe[j] = orig - eps
        lo = f(*base)
        probe[j] = orig
        flat[j] = (hi - lo) / (2.0 * eps)
    return grad


def max_rel_err(got, want):
    """Worst-case |got - want| / max(|want|, 1): relative for large entries,
    absolute near zero."""
    got = np.asarray(got, dtype=np.float64)
    want = np.asarray(want, dtype=np.float64)
    return float(np.max(np.abs(got - want) / np.maximum(np.abs(want), 1.0)))


def pair_count_auc(scores, labels):
    """Quadratic ranking oracle: wins + half-credit ties over all pairs."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def sweep_tnr(scores, labels, target):
    """Exhaustive oracle: the highest candidate threshold still meeting the
    TPR target (prediction rule score >= threshold), then its TNR."""
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    feasible = [t for t in np.unique(scores) if np.mean(pos >= t) >= target]
    return np.mean(neg < max(feasible))
