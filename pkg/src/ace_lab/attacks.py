"""Adversarial attacks and robustness sweeps.

Three white-box attacks against a differentiable classifier: the fast
gradient sign method, DeepFool's iterative minimal perturbation, and the
Carlini-Wagner L2 attack in its change-of-variable form. robustness_sweep
runs one attack over a magnitude grid for several models and reports the
test AUC at each point, which is how fine-tuned and baseline classifiers
are compared under increasing attack strength.

All attacks target the true label and are deterministic given (model,
input, config). Models only need a `forward(Tensor) -> Tensor` returning
logits; gradients are taken with respect to the input.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import LabeledSet
from .errors import AttackError, ContractError
from .metrics import auc_roc
from .nn import cross_entropy
from .tensor import Tensor

SWEEP_COLUMNS = ("model", "attack", "magnitude", "auc")


@dataclass(frozen=True)
class AttackConfig:
    """Attack hyperparameters and sweep grids.

    The epsilon and iteration grids double as the magnitude axes of the
    sweep; 0 always means "no attack". Grids are in standardized input
    units since the data pipeline feeds attacks standardized coordinates.
    """

    fgsm_eps_grid: tuple[float, ...] = tuple(round(0.02 * i, 2) for i in range(16))
    cw_c: float = 1.0
    cw_alpha: float = 0.01
    cw_kappa: float = 0.5
    cw_iters_grid: tuple[int, ...] = tuple(range(0, 101, 10))
    deepfool_eta: float = 0.02
    deepfool_max_iter: int = 50
    deepfool_iters_grid: tuple[int, ...] = (0, 1, 2, 3, 5, 10, 25, 50)
    # Optional (lo, hi) clip bounds applied to FGSM output. None disables
    # clipping; unbounded 2-d point clouds have no natural pixel box.
    clip: tuple[float, float] | None = None

    def __post_init__(self):
        bad = []
        if any(e < 0 for e in self.fgsm_eps_grid):
            bad.append(f"fgsm_eps_grid={self.fgsm_eps_grid} (negative epsilon)")
        if self.cw_c < 0:
            bad.append(f"cw_c={self.cw_c}")
        if self.cw_alpha <= 0:
            bad.append(f"cw_alpha={self.cw_alpha}")
        if self.cw_kappa < 0:
            bad.append(f"cw_kappa={self.cw_kappa}")
        if any(i < 0 for i in self.cw_iters_grid):
            bad.append(f"cw_iters_grid={self.cw_iters_grid}")
        if self.deepfool_eta <= 0:
            bad.append(f"deepfool_eta={self.deepfool_eta}")
        if self.deepfool_max_iter < 1:
            bad.append(f"deepfool_max_iter={self.deepfool_max_iter}")
        if any(i < 0 for i in self.deepfool_iters_grid):
            bad.append(f"deepfool_iters_grid={self.deepfool_iters_grid}")
        if self.clip is not None and not self.clip[0] < self.clip[1]:
            bad.append(f"clip={self.clip}")
        if bad:
            raise ContractError("invalid attack config: " + ", ".join(bad))


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ContractError(f"attack input must be 1-d or 2-d, got shape {x.shape}")
    return x, False


def _logits(clf, x_np: np.ndarray) -> np.ndarray:
    with T.no_grad():
        return clf.forward(Tensor(x_np)).data


def fgsm(clf, x, y, eps: float, clip: tuple[float, float] | None = None) -> np.ndarray:
    """x + eps * sign(d CE(f(x), y) / dx), optionally clipped to a box.

    The perturbation has infinity-norm exactly eps wherever the gradient
    is nonzero and no clip binds.
    """
    if eps < 0:
        raise ContractError(f"eps must be >= 0, got {eps}")
    x, squeeze = _as_batch(x)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if eps == 0:
        adv = x.copy()
    else:
        xt = Tensor(x, requires_grad=True)
        loss = cross_entropy(clf.forward(xt), y)
        (g,) = T.vjp(loss, Tensor(1.0), [xt])
        if g is None or not np.isfinite(g.data).all():
            raise AttackError("non-finite or missing input gradient in fgsm")
        adv = x + eps * np.sign(g.data)
        if clip is not None:
            adv = np.clip(adv, clip[0], clip[1])
    return adv[0] if squeeze else adv


def deepfool(clf, x, y=None, max_iter: int = 50, eta: float = 0.02) -> np.ndarray:
    """Iterative minimal-perturbation attack.

    Each iteration linearizes the logit margins z_j - z_k around the
    current point (k = original predicted class) and takes the smallest
    step onto the nearest linearized boundary:

        r = |f_j*| / ||w_j*||^2 * w_j*

    with f_j = z_j - z_k and w_j its input gradient. Steps accumulate
    until the predicted label flips or max_iter runs out; the total
    perturbation is scaled by (1 + eta) throughout, matching the usual
    overshoot convention. With y given, samples the model already gets
    wrong are returned unchanged.
    """
    if max_iter < 1:
        raise ContractError(f"max_iter must be >= 1, got {max_iter}")
    if eta <= 0:
        raise ContractError(f"eta must be > 0, got {eta}")
    x, squeeze = _as_batch(x)
    n, d = x.shape
    z0 = _logits(clf, x)
    k = z0.argmax(axis=1)
    n_classes = z0.shape[1]
    active = np.ones(n, dtype=bool)
    if y is not None:
        active &= k == np.atleast_1d(np.asarray(y, dtype=np.int64))
    r_tot = np.zeros_like(x)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        cur = x[idx] + (1.0 + eta) * r_tot[idx]
        xt = Tensor(cur, requires_grad=True)
        z = clf.forward(xt)
        flipped = z.data.argmax(axis=1) != k[idx]
        active[idx[flipped]] = False
        rows = np.flatnonzero(~flipped)
        if rows.size == 0:
            continue
        ks = k[idx[rows]]
        best_ratio = np.full(rows.size, np.inf)
        best_f = np.zeros(rows.size)
        best_w = np.zeros((rows.size, d))
        for offset in range(1, n_classes):
            js = (ks + offset) % n_classes
            # One probe per batch row: +1 on the candidate logit, -1 on the
            # original, zero rows for already-flipped samples. One backward
            # pass yields every sample's margin gradient at once.
            probe = np.zeros(z.shape)
            probe[rows, js] = 1.0
            probe[rows, ks] = -1.0
            (g,) = T.vjp(z, Tensor(probe), [xt])
            if g is None or not np.isfinite(g.data).all():
                raise AttackError("non-finite input gradient in deepfool")
            w = g.data[rows]
            f = z.data[rows, js] - z.data[rows, ks]
            wn = np.sqrt((w * w).sum(axis=1))
            ratio = np.where(wn > 0, np.abs(f) / np.maximum(wn, 1e-300), np.inf)
            better = ratio < best_ratio
            best_ratio[better] = ratio[better]
            best_f[better] = f[better]
            best_w[better] = w[better]
        wsq = (best_w * best_w).sum(axis=1)
        # A vanishing margin gradient means the linearization offers no
        # step; drop the sample rather than divide by zero.
        stuck = wsq < 1e-24
        sel = idx[rows]
        active[sel[stuck]] = False
        ok = ~stuck
        r_tot[sel[ok]] += (np.abs(best_f[ok]) / wsq[ok])[:, None] * best_w[ok]
    adv = x + (1.0 + eta) * r_tot
    return adv[0] if squeeze else adv


def carlini_wagner(clf, x, y, iters: int, c: float = 1.0, alpha: float = 0.01,
                   kappa: float = 0.5,
                   box: tuple[np.ndarray, np.ndarray] | None = None) -> np.ndarray:
    """Carlini-Wagner L2 attack through a tanh change of variables.

    Minimizes ||delta||^2 + c * max(z_y - max_{j!=y} z_j, -kappa) by plain
    gradient descent at rate alpha on the tanh-space variable, for `iters`
    steps, and returns each sample's lowest-loss iterate (the starting
    point included, so a sample already misclassified with margin beyond
    kappa comes back unchanged up to the tanh round trip). iters=0 returns
    x exactly. The box defaults to the observed per-dimension data range
    widened by 3 standard deviations; the change of variables needs the
    data strictly inside it.
    """
    if iters < 0:
        raise ContractError(f"iters must be >= 0, got {iters}")
    x, squeeze = _as_batch(x)
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if iters == 0:
        return x[0].copy() if squeeze else x.copy()
    n, d = x.shape
    if box is None:
        spread = 3.0 * x.std(axis=0)
        if (spread < 1e-9).any():
            raise ContractError(
                "cannot derive a tanh box from a batch with zero variance; "
                "pass box=(lo, hi) explicitly")
        lo, hi = x.min(axis=0) - spread, x.max(axis=0) + spread
    else:
        lo = np.broadcast_to(np.asarray(box[0], dtype=np.float64), (d,)).copy()
        hi = np.broadcast_to(np.asarray(box[1], dtype=np.float64), (d,)).copy()
        if not (lo < hi).all():
            raise ContractError("box lower bound must be strictly below upper bound")
    span = hi - lo
    unit = np.clip(2.0 * (x - lo) / span - 1.0, -1.0 + 1e-9, 1.0 - 1e-9)
    w = Tensor(np.arctanh(unit), requires_grad=True)
    n_classes = _logits(clf, x[:1]).shape[1]
    onehot_y = np.zeros((n, n_classes))
    onehot_y[np.arange(n), y] = 1.0
    best_loss = np.full(n, np.inf)
    best_adv = x.copy()
    for step in range(iters + 1):
        adv = T.add(T.mul(T.add(T.tanh(w), 1.0), 0.5 * span), lo)
        delta = T.sub(adv, Tensor(x))
        z = clf.forward(adv)
        # max over j != y with a stop-gradient argmax: the gradient of the
        # max is the gradient of its achieving logit.
        masked = z.data - 1e9 * onehot_y
        j_star = masked.argmax(axis=1)
        onehot_j = np.zeros_like(onehot_y)
        onehot_j[np.arange(n), j_star] = 1.0
        l2 = T.tsum(T.mul(delta, delta), axis=1)
        margin = T.sub(T.tsum(T.mul(z, Tensor(onehot_y)), axis=1),
                       T.tsum(T.mul(z, Tensor(onehot_j)), axis=1))
        clamped = T.sub(T.relu(T.add(margin, kappa)), kappa)
        loss_vec = T.add(l2, T.mul(clamped, c))
        per_sample = loss_vec.data
        if not np.isfinite(per_sample).all():
            raise AttackError(f"non-finite carlini-wagner loss at step {step}")
        improved = per_sample < best_loss
        best_loss[improved] = per_sample[improved]
        best_adv[improved] = adv.data[improved]
        if step == iters:
            break
        (g,) = T.vjp(T.tsum(loss_vec), Tensor(1.0), [w])
        if g is None or not np.isfinite(g.data).all():
            raise AttackError("non-finite input gradient in carlini-wagner")
        w = Tensor(w.data - alpha * g.data, requires_grad=True)
    return best_adv[0] if squeeze else best_adv


def _attack_at(name: str, clf, x, y, magnitude, cfg: AttackConfig) -> np.ndarray:
    if name == "fgsm":
        return fgsm(clf, x, y, float(magnitude), cfg.clip)
    if name == "deepfool":
        it = int(magnitude)
        if it == 0:
            return np.asarray(x, dtype=np.float64).copy()
        return deepfool(clf, x, y, max_iter=it, eta=cfg.deepfool_eta)
    if name == "cw":
        return carlini_wagner(clf, x, y, int(magnitude), cfg.cw_c, cfg.cw_alpha,
                              cfg.cw_kappa)
    raise ContractError(f"unknown attack {name!r}; expected fgsm, deepfool or cw")


def default_grid(name: str, cfg: AttackConfig) -> tuple:
    grids = {"fgsm": cfg.fgsm_eps_grid, "deepfool": cfg.deepfool_iters_grid,
             "cw": cfg.cw_iters_grid}
    if name not in grids:
        raise ContractError(f"unknown attack {name!r}; expected fgsm, deepfool or cw")
    return grids[name]


def robustness_sweep(models: dict[str, object], attack: str, test: LabeledSet,
                     cfg: AttackConfig | None = None, grid=None) -> list[dict]:
    """Attack the full test set at each grid magnitude for each model.

    Returns one row per (model, magnitude) with the AUC of the class-1
    probability against the true labels on the attacked set. Magnitude 0
    is required in the grid and reproduces the clean-test AUC.
    """
    cfg = cfg if cfg is not None else AttackConfig()
    grid = tuple(grid) if grid is not None else default_grid(attack, cfg)
    if not any(m == 0 for m in grid):
        raise ContractError(f"magnitude grid must include 0, got {grid}")
    rows = []
    for name, clf in models.items():
        for mag in grid:
            adv = _attack_at(attack, clf, test.x, test.y, mag, cfg)
            with T.no_grad():
                probs = T.softmax(clf.forward(Tensor(adv))).data
            rows.append({
                "model": name,
                "attack": attack,
                "magnitude": float(mag),
                "auc": auc_roc(probs[:, 1], test.y),
            })
    return rows


def sweep_csv(path, rows: list[dict]) -> None:
    lines = [",".join(SWEEP_COLUMNS)]
    for r in rows:
        lines.append(f"{r['model']},{r['attack']},{r['magnitude']:.17g},"
                     f"{r['auc']:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


__all__ = [
    "AttackConfig",
    "SWEEP_COLUMNS",
    "fgsm",
    "deepfool",
    "carlini_wagner",
    "default_grid",
    "robustness_sweep",
    "sweep_csv",
]
