"""Command-line experiment pipeline.

Nine stages, each reading the previous stages' artifacts from the output
directory and writing its own:

    gen-data          train/test/near-OOD/far-OOD CSVs + standardizer
    train-classifier  baseline weight archive + training report
    train-pce         generator/discriminator archive + loss curves
    augment           counterfactual samples CSV
    finetune          fine-tuned classifier archive + training report
    evaluate          metrics.json, per-sample score CSVs, decisions.csv
    attack            robustness sweep CSV for FGSM / DeepFool / CW
    ablate            three generators, one loss term zeroed each
    report            aggregate summary.json

Every stage derives its randomness from the config seed through named
streams, so rerunning any stage (or the whole pipeline) with the same
config reproduces its artifacts byte for byte.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .ace import (build_mixed, finetune, generate_ace, load_augmented_csv,
                  save_augmented_csv)
from .attacks import robustness_sweep, sweep_csv
from .classifier import label_aid, predictive_entropy, train_classifier
from .config import (ExperimentConfig, load_config, packaged_config_path,
                     to_dict)
from .data import (LabeledSet, Standardizer, far_ood_uniform, load_labeled_csv,
                   near_ood_moons, save_labeled_csv, stratified_split, two_moons)
from .errors import AceLabError, MissingArtifactError
from .metrics import accuracy, auc_roc, ece, tnr_at_tpr
from .pce import CURVE_COLUMNS, discriminator_accuracy, train_pce
from .persist import (load_classifier, load_pce, read_json, save_model,
                      write_json)
from .rng import Rng
from .selective import SelectiveClassifier, coverage_report, decisions_csv
from .tensor import Tensor


# -- artifact plumbing -------------------------------------------------------

def _need(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(
            f"{path} does not exist; run `ace-lab {producer}` first")
    return path


def _load_sets(out: Path) -> dict[str, LabeledSet]:
    return {
        name: load_labeled_csv(_need(out / f"{name}.csv", "gen-data"), name)
        for name in ("train", "test", "near_ood", "far_ood")
    }


def _load_baseline(out: Path):
    _need(out / "classifier.json", "train-classifier")
    return load_classifier(out / "classifier")


def _load_generator(out: Path, cfg: ExperimentConfig):
    _need(out / "pce.json", "train-pce")
    return load_pce(out / "pce", replace(cfg.pce))


def _load_finetuned(out: Path):
    _need(out / "finetuned.json", "finetune")
    return load_classifier(out / "finetuned")


def _save_curves(path: Path, curves: list[tuple]) -> None:
    lines = [",".join(CURVE_COLUMNS)]
    for row in curves:
        lines.append(",".join(f"{v:.17g}" if isinstance(v, float) else str(int(v))
                              for v in row))
    path.write_text("\n".join(lines) + "\n")


def _report_dict(rep) -> dict:
    return {
        "train_loss": rep.train_loss,
        "test_acc": rep.test_acc,
        "test_ece": rep.test_ece,
        "selected_epoch": rep.selected_epoch,
    }


def _kl_ratio(curves_path: Path, epochs: int) -> float:
    rows = np.loadtxt(curves_path, delimiter=",", skiprows=1, ndmin=2)
    col = CURVE_COLUMNS.index("l_f")
    spe = len(rows) // max(epochs, 1)
    if spe == 0:
        return float("nan")
    first = float(rows[:spe, col].mean())
    last = float(rows[-spe:, col].mean())
    return last / first if first > 0 else float("nan")


def _self_l1(pce, clf, x: np.ndarray) -> float:
    """Coordinate-mean L1 self-reconstruction |x - G(x, f(x))|."""
    with T.no_grad():
        probs = clf.predict_proba(x)
        x_self = pce.generate(Tensor(x), Tensor(probs)).data
    return float(np.abs(x - x_self).mean())


def _scores_csv(path: Path, column: str, values: np.ndarray) -> None:
    lines = [f"sample_id,{column}"]
    lines.extend(f"{i},{v:.17g}" for i, v in enumerate(values))
    path.write_text("\n".join(lines) + "\n")


# -- stages ------------------------------------------------------------------

def stage_gen_data(cfg: ExperimentConfig, out: Path) -> None:
    root = Rng(cfg.seed)
    d = cfg.data
    raw = two_moons(d.n, d.noise, root.child("data"))
    tr, te = stratified_split(raw, d.test_fraction, root.child("split"))
    std = Standardizer.fit(tr.x)
    train, test = std.apply_set(tr), std.apply_set(te)
    near = std.apply_set(near_ood_moons(d.near_n, root.child("near"), d.near_noise))
    far = far_ood_uniform(d.far_n, root.child("far"), train.x,
                          d.far_box, d.far_exclusion)
    save_labeled_csv(out / "train.csv", train)
    save_labeled_csv(out / "test.csv", test)
    save_labeled_csv(out / "near_ood.csv", near)
    save_labeled_csv(out / "far_ood.csv", far)
    write_json(out / "standardizer.json", std.to_dict())
    print(f"gen-data: {len(train)} train / {len(test)} test / "
          f"{len(near)} near-OOD / {len(far)} far-OOD -> {out}")


def stage_train_classifier(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    clf, rep = train_classifier(sets["train"], sets["test"], cfg.classifier,
                                Rng(cfg.seed).child("clf"))
    save_model(out / "classifier", clf, "classifier")
    write_json(out / "classifier_report.json", _report_dict(rep))
    print(f"train-classifier: test acc {rep.test_acc[rep.selected_epoch]:.4f} "
          f"(epoch {rep.selected_epoch}) -> {out / 'classifier.json'}")


def stage_train_pce(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    clf = _load_baseline(out)
    pce = train_pce(clf, sets["train"], replace(cfg.pce), Rng(cfg.seed).child("pce"))
    save_model(out / "pce", pce, "pce")
    _save_curves(out / "pce_curves.csv", pce.curves)
    print(f"train-pce: {len(pce.curves)} steps -> {out / 'pce.json'}")


def stage_augment(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    clf = _load_baseline(out)
    pce = _load_generator(out, cfg)
    ace_rng = Rng(cfg.seed).child("ace")
    train = sets["train"]
    n_src = max(1, round(cfg.ace.source_fraction * len(train)))
    src_idx = np.sort(ace_rng.child("source").permutation(len(train))[:n_src])
    source = train.take(src_idx, "ace_source")
    aug = generate_ace(pce, clf, source, cfg.ace.m, ace_rng.child("draw"))
    save_augmented_csv(out / "augmented.csv", aug)
    print(f"augment: {len(aug)} counterfactuals from {n_src} sources "
          f"-> {out / 'augmented.csv'}")


def stage_finetune(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    clf = _load_baseline(out)
    aug = load_augmented_csv(_need(out / "augmented.csv", "augment"))
    mixed = build_mixed(sets["train"], aug, cfg.ace.rho, Rng(cfg.seed).child("mix"),
                        clf.n_classes)
    ft, rep = finetune(clf, mixed, sets["test"], cfg.finetune,
                       Rng(cfg.seed).child("finetune"))
    save_model(out / "finetuned", ft, "classifier")
    write_json(out / "finetune_report.json", _report_dict(rep))
    acc = rep.test_acc[rep.selected_epoch] if rep.test_acc else float("nan")
    print(f"finetune: test acc {acc:.4f} -> {out / 'finetuned.json'}")


def stage_evaluate(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    baseline = _load_baseline(out)
    pce = _load_generator(out, cfg)
    ft = _load_finetuned(out)
    root = Rng(cfg.seed)
    test, near, far = sets["test"], sets["near_ood"], sets["far_ood"]
    models = {"baseline": baseline, "finetuned": ft}

    scores_dir = out / "scores"
    scores_dir.mkdir(exist_ok=True)
    pe: dict[tuple[str, str], np.ndarray] = {}
    probs_test: dict[str, np.ndarray] = {}
    for mname, model in models.items():
        for sname, ds in (("test", test), ("near_ood", near), ("far_ood", far)):
            p = model.predict_proba(ds.x)
            if sname == "test":
                probs_test[mname] = p
            pe[mname, sname] = predictive_entropy(p)
            _scores_csv(scores_dir / f"pe_{mname}_{sname}.csv", "pe",
                        pe[mname, sname])
    dens = {sname: pce.density(ds.x, baseline)
            for sname, ds in (("test", test), ("near_ood", near), ("far_ood", far))}
    for sname, values in dens.items():
        _scores_csv(scores_dir / f"density_{sname}.csv", "density", values)

    aid_idx = label_aid(baseline, test.x, root.child("aid"),
                        cfg.metrics.aid_fraction, cfg.metrics.mc_samples)
    _scores_csv(scores_dir / "aid_indices.csv", "index", aid_idx.astype(float))
    aid_mask = np.zeros(len(test), dtype=np.int64)
    aid_mask[aid_idx] = 1

    tpr = cfg.metrics.tpr_target
    metrics: dict = {
        "aid": {"count": int(aid_mask.sum())},
        "near_ood": {},
        "models": {},
    }
    for mname in models:
        p = probs_test[mname]
        metrics["models"][mname] = {
            "test_accuracy": accuracy(p, test.y),
            "test_ece": ece(p, test.y, cfg.metrics.ece_bins),
        }
        metrics["aid"][mname] = {
            "mean_pe": float(pe[mname, "test"][aid_idx].mean()),
            "auc": auc_roc(pe[mname, "test"], aid_mask),
            "tnr_at_tpr": tnr_at_tpr(pe[mname, "test"], aid_mask, tpr),
        }
        near_scores = np.concatenate([pe[mname, "test"], pe[mname, "near_ood"]])
        near_labels = np.concatenate([np.zeros(len(test), dtype=np.int64),
                                      np.ones(len(near), dtype=np.int64)])
        metrics["near_ood"][mname] = {
            "auc": auc_roc(near_scores, near_labels),
            "tnr_at_tpr": tnr_at_tpr(near_scores, near_labels, tpr),
        }
    metrics["accuracy_delta"] = abs(
        metrics["models"]["finetuned"]["test_accuracy"]
        - metrics["models"]["baseline"]["test_accuracy"])

    far_scores = np.concatenate([-dens["test"], -dens["far_ood"]])
    far_labels = np.concatenate([np.zeros(len(test), dtype=np.int64),
                                 np.ones(len(far), dtype=np.int64)])
    metrics["far_ood"] = {
        "density_auc": auc_roc(far_scores, far_labels),
        "density_tnr_at_tpr": tnr_at_tpr(far_scores, far_labels, tpr),
    }

    sc = SelectiveClassifier(ft, pce, feature_clf=baseline, h=cfg.h)
    named = {"test": test, "near_ood": near, "far_ood": far}
    metrics["selective"] = {"h": cfg.h, **coverage_report(sc, named)}
    decisions_csv(out / "decisions.csv", sc, named)

    metrics["pce"] = {
        "self_l1": _self_l1(pce, baseline, test.x),
        "kl_ratio": _kl_ratio(_need(out / "pce_curves.csv", "train-pce"),
                              cfg.pce.epochs),
        "disc_balanced_acc": discriminator_accuracy(
            pce, baseline, sets["train"].x[:500], root.child("da")),
    }
    write_json(out / "metrics.json", metrics)
    print(f"evaluate: baseline acc "
          f"{metrics['models']['baseline']['test_accuracy']:.4f}, finetuned acc "
          f"{metrics['models']['finetuned']['test_accuracy']:.4f}, far-OOD density "
          f"AUC {metrics['far_ood']['density_auc']:.4f} -> {out / 'metrics.json'}")


def stage_attack(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    models = {"baseline": _load_baseline(out), "finetuned": _load_finetuned(out)}
    rows = []
    for attack in ("fgsm", "deepfool", "cw"):
        rows.extend(robustness_sweep(models, attack, sets["test"], cfg.attacks))
    sweep_csv(out / "attacks.csv", rows)
    write_json(out / "attacks.json", {"rows": rows})
    print(f"attack: {len(rows)} sweep points -> {out / 'attacks.csv'}")


ABLATION_ARMS = {
    "no-adv": "lambda_adv",
    "no-f": "lambda_f",
    "no-rec": "lambda_rec",
}


def stage_ablate(cfg: ExperimentConfig, out: Path) -> None:
    sets = _load_sets(out)
    clf = _load_baseline(out)
    arm_dir = out / "ablation"
    arm_dir.mkdir(exist_ok=True)
    summary = {}
    for arm, field_name in ABLATION_ARMS.items():
        arm_cfg = replace(cfg.pce, **{field_name: 0.0})
        # Same stream as train-pce: the zeroed term is the only difference
        # between an arm and the reference run.
        pce = train_pce(clf, sets["train"], arm_cfg, Rng(cfg.seed).child("pce"))
        save_model(arm_dir / f"pce_{arm}", pce, "pce")
        _save_curves(arm_dir / f"pce_{arm}_curves.csv", pce.curves)
        dens_test = pce.density(sets["test"].x, clf)
        dens_far = pce.density(sets["far_ood"].x, clf)
        far_scores = np.concatenate([-dens_test, -dens_far])
        far_labels = np.concatenate(
            [np.zeros(len(dens_test), dtype=np.int64),
             np.ones(len(dens_far), dtype=np.int64)])
        summary[arm] = {
            "zeroed": field_name,
            "self_l1": _self_l1(pce, clf, sets["test"].x),
            "kl_ratio": _kl_ratio(arm_dir / f"pce_{arm}_curves.csv",
                                  arm_cfg.epochs),
            "far_auc": auc_roc(far_scores, far_labels),
            "id_abstention": float(np.mean(dens_test < cfg.h)),
            "far_abstention": float(np.mean(dens_far < cfg.h)),
        }
        print(f"ablate[{arm}]: self_l1 {summary[arm]['self_l1']:.4f}, "
              f"kl_ratio {summary[arm]['kl_ratio']:.4f}, "
              f"far AUC {summary[arm]['far_auc']:.4f}")
    write_json(out / "ablation.json", {"arms": summary})


def stage_report(cfg: ExperimentConfig, out: Path) -> None:
    summary = {"config": to_dict(cfg)}
    parts = {
        "classifier_report": "classifier_report.json",
        "finetune_report": "finetune_report.json",
        "metrics": "metrics.json",
        "attacks": "attacks.json",
        "ablation": "ablation.json",
    }
    _need(out / "metrics.json", "evaluate")
    for key, fname in parts.items():
        path = out / fname
        if path.exists():
            summary[key] = read_json(path)
    write_json(out / "summary.json", summary)
    m = summary["metrics"]
    print(f"report -> {out / 'summary.json'}")
    print(f"  baseline:  acc {m['models']['baseline']['test_accuracy']:.4f}  "
          f"ece {m['models']['baseline']['test_ece']:.4f}")
    print(f"  finetuned: acc {m['models']['finetuned']['test_accuracy']:.4f}  "
          f"ece {m['models']['finetuned']['test_ece']:.4f}")
    print(f"  near-OOD PE AUC: baseline {m['near_ood']['baseline']['auc']:.4f} "
          f"-> finetuned {m['near_ood']['finetuned']['auc']:.4f}")
    print(f"  far-OOD density AUC {m['far_ood']['density_auc']:.4f}; "
          f"abstention iD {m['selective']['test']['abstention_rate']:.3f} / "
          f"far {m['selective']['far_ood']['abstention_rate']:.3f} "
          f"at h={m['selective']['h']}")


STAGES = {
    "gen-data": stage_gen_data,
    "train-classifier": stage_train_classifier,
    "train-pce": stage_train_pce,
    "augment": stage_augment,
    "finetune": stage_finetune,
    "evaluate": stage_evaluate,
    "attack": stage_attack,
    "ablate": stage_ablate,
    "report": stage_report,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ace-lab",
        description="Counterfactual-augmentation experiments on two moons.")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    for name in STAGES:
        p = sub.add_parser(name, help=f"run the {name} stage")
        p.add_argument("--config", type=Path, default=None,
                       help="experiment config JSON (default: packaged)")
        p.add_argument("--out", type=Path, default=None,
                       help="output directory (default: config out_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config if args.config else packaged_config_path())
        if args.seed is not None:
            cfg.seed = args.seed
        out = Path(args.out) if args.out else Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        STAGES[args.stage](cfg, out)
    except AceLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
