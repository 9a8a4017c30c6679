"""End-to-end checks of the staged command-line pipeline on a small run."""

import json

import numpy as np
import pytest

from ace_lab import cli
from ace_lab.persist import read_json

TINY = {
    "seed": 11,
    "h": 0.5,
    "data": {"n": 200, "noise": 0.1, "test_fraction": 0.5,
             "near_n": 60, "far_n": 60},
    "classifier": {"hidden": 16, "epochs": 10, "batch_size": 32},
    "pce": {"latent": 8, "hidden": 16, "epochs": 8, "batch_size": 32,
            "subset_fraction": 1.0},
    "ace": {"m": 2, "source_fraction": 0.5, "rho": 0.3},
    "finetune": {"epochs": 2, "batch_size": 32},
    "metrics": {"mc_samples": 5, "aid_fraction": 0.05},
    "attacks": {"fgsm_eps_grid": [0.0, 0.1], "cw_iters_grid": [0, 5],
                "deepfool_iters_grid": [0, 2]},
}

ORDER = ("gen-data", "train-classifier", "train-pce", "augment", "finetune",
         "evaluate", "attack", "ablate", "report")


def write_tiny(dirpath):
    path = dirpath / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def run(stage, cfg_path, out):
    return cli.main([stage, "--config", str(cfg_path), "--out", str(out)])


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    """One full pipeline on the tiny config; stages asserted in order."""
    base = tmp_path_factory.mktemp("cli")
    cfg_path = write_tiny(base)
    out = base / "run"
    for stage in ORDER:
        assert run(stage, cfg_path, out) == 0, stage
    return cfg_path, out


class TestPipelineArtifacts:
    def test_stage_outputs_exist(self, tiny_run):
        _, out = tiny_run
        for name in ("train.csv", "test.csv", "near_ood.csv", "far_ood.csv",
                     "standardizer.json", "classifier.json", "classifier.bin",
                     "classifier_report.json", "pce.json", "pce.bin",
                     "pce_curves.csv", "augmented.csv", "finetuned.json",
                     "finetuned.bin", "finetune_report.json", "metrics.json",
                     "decisions.csv", "attacks.csv", "attacks.json",
                     "ablation.json", "summary.json"):
            assert (out / name).is_file(), name
        for score in ("pe_baseline_test.csv", "pe_finetuned_near_ood.csv",
                      "density_far_ood.csv", "aid_indices.csv"):
            assert (out / "scores" / score).is_file(), score
        for arm in ("no-adv", "no-f", "no-rec"):
            assert (out / "ablation" / f"pce_{arm}.json").is_file(), arm

    def test_augmented_count(self, tiny_run):
        _, out = tiny_run
        lines = (out / "augmented.csv").read_text().strip().split("\n")
        # m=2 draws x round(0.5 * 100) sources, binary task
        assert len(lines) == 1 + 2 * 50

    def test_metrics_structure(self, tiny_run):
        _, out = tiny_run
        m = read_json(out / "metrics.json")
        for model in ("baseline", "finetuned"):
            assert 0.0 <= m["models"][model]["test_accuracy"] <= 1.0
            assert m["models"][model]["test_ece"] >= 0.0
            assert set(m["aid"][model]) == {"mean_pe", "auc", "tnr_at_tpr"}
            assert set(m["near_ood"][model]) == {"auc", "tnr_at_tpr"}
        assert m["aid"]["count"] == 5  # ceil(0.05 * 100)
        assert m["accuracy_delta"] >= 0.0
        assert set(m["far_ood"]) == {"density_auc", "density_tnr_at_tpr"}
        assert m["selective"]["h"] == 0.5
        for name in ("test", "near_ood", "far_ood"):
            assert "abstention_rate" in m["selective"][name]
        assert set(m["pce"]) == {"self_l1", "kl_ratio", "disc_balanced_acc"}

    def test_attack_rows(self, tiny_run):
        _, out = tiny_run
        rows = read_json(out / "attacks.json")["rows"]
        # 2 models x (2 fgsm + 2 deepfool + 2 cw) magnitudes
        assert len(rows) == 12
        attacks = {r["attack"] for r in rows}
        assert attacks == {"fgsm", "deepfool", "cw"}
        for r in rows:
            if r["magnitude"] == 0.0:
                clean = [s for s in rows
                         if s["model"] == r["model"] and s["magnitude"] == 0.0]
                assert len({s["auc"] for s in clean if s["attack"] == r["attack"]}) == 1
        header = (out / "attacks.csv").read_text().split("\n")[0]
        assert header == "model,attack,magnitude,auc"

    def test_zero_magnitude_shared_across_attacks(self, tiny_run):
        _, out = tiny_run
        rows = read_json(out / "attacks.json")["rows"]
        for model in ("baseline", "finetuned"):
            clean = {r["attack"]: r["auc"] for r in rows
                     if r["model"] == model and r["magnitude"] == 0.0}
            assert len(set(clean.values())) == 1

    def test_ablation_structure(self, tiny_run):
        _, out = tiny_run
        arms = read_json(out / "ablation.json")["arms"]
        assert set(arms) == {"no-adv", "no-f", "no-rec"}
        zeroed = {a["zeroed"] for a in arms.values()}
        assert zeroed == {"lambda_adv", "lambda_f", "lambda_rec"}
        for arm in arms.values():
            assert arm["self_l1"] >= 0.0
            assert 0.0 <= arm["id_abstention"] <= 1.0
            assert 0.0 <= arm["far_abstention"] <= 1.0

    def test_report_aggregates(self, tiny_run):
        cfg_path, out = tiny_run
        summary = read_json(out / "summary.json")
        for key in ("config", "classifier_report", "finetune_report",
                    "metrics", "attacks", "ablation"):
            assert key in summary, key
        assert summary["config"]["seed"] == 11
        assert summary["metrics"] == read_json(out / "metrics.json")

    def test_finetune_report_fields(self, tiny_run):
        _, out = tiny_run
        rep = read_json(out / "finetune_report.json")
        assert len(rep["train_loss"]) == 2
        assert 0 <= rep["selected_epoch"] < 2


class TestDeterminism:
    def test_identical_config_reproduces_metrics_bytes(self, tiny_run,
                                                       tmp_path):
        cfg_path, out_a = tiny_run
        out_b = tmp_path / "again"
        for stage in ORDER[:6]:
            assert run(stage, cfg_path, out_b) == 0, stage
        assert (out_b / "metrics.json").read_bytes() == \
            (out_a / "metrics.json").read_bytes()
        assert (out_b / "train.csv").read_bytes() == \
            (out_a / "train.csv").read_bytes()

    def test_rerunning_evaluate_overwrites_identically(self, tiny_run):
        cfg_path, out = tiny_run
        before = (out / "metrics.json").read_bytes()
        assert run("evaluate", cfg_path, out) == 0
        assert (out / "metrics.json").read_bytes() == before

    def test_seed_override_changes_data(self, tiny_run, tmp_path):
        cfg_path, out_a = tiny_run
        out_c = tmp_path / "seeded"
        rc = cli.main(["gen-data", "--config", str(cfg_path),
                       "--out", str(out_c), "--seed", "99"])
        assert rc == 0
        assert (out_c / "train.csv").read_bytes() != \
            (out_a / "train.csv").read_bytes()


class TestErrors:
    def test_stage_without_inputs_names_producer(self, tmp_path, capsys):
        cfg_path = write_tiny(tmp_path)
        rc = run("train-classifier", cfg_path, tmp_path / "empty")
        err = capsys.readouterr().err
        assert rc == 2
        assert err.startswith("error:")
        assert "train.csv" in err and "gen-data" in err

    def test_evaluate_needs_models(self, tmp_path, capsys):
        cfg_path = write_tiny(tmp_path)
        out = tmp_path / "partial"
        assert run("gen-data", cfg_path, out) == 0
        rc = run("evaluate", cfg_path, out)
        err = capsys.readouterr().err
        assert rc == 2
        assert "classifier.json" in err and "train-classifier" in err

    def test_report_needs_metrics(self, tmp_path, capsys):
        cfg_path = write_tiny(tmp_path)
        out = tmp_path / "bare"
        out.mkdir()
        rc = run("report", cfg_path, out)
        err = capsys.readouterr().err
        assert rc == 2
        assert "metrics.json" in err and "evaluate" in err

    def test_bad_config_key_reported(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"seeed": 1}))
        rc = cli.main(["gen-data", "--config", str(bad),
                       "--out", str(tmp_path / "x")])
        err = capsys.readouterr().err
        assert rc == 2
        assert "unknown config keys" in err and "seeed" in err

    def test_unknown_stage_rejected(self):
        with pytest.raises(SystemExit):
            cli.main(["explode"])
