"""End-to-end command-line flows on a miniature configuration."""

import json

import pytest

from contseg import metrics
from contseg.cli import main
from contseg.engine import load_checkpoint

TINY = {
    "dataset": {"plan": "two-stage", "spec": "tumor", "height": 32,
                "width": 32, "seed": 3, "n_per_stage": 6, "n_val": 2,
                "n_test": 2, "n_eval": 3},
    "model": {"enc_channels": [4, 8, 16], "enc_strides": [1, 2, 2],
              "dec_channels": [8, 8], "kernel": 3, "head_kernel": 1,
              "hyper_hidden": 16, "seed": 1,
              "embedding": {"provider": "hash", "dim": 8, "seed": 2}},
    "train": {"lr": 1e-3, "epochs": 2, "batch_size": 4, "seed": 4},
    "method": "ours",
}


@pytest.fixture
def cfg_file(tmp_path):
    doc = dict(TINY)
    doc["output_dir"] = str(tmp_path / "run")
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def test_print_config_smoke(capsys):
    assert main(["--print-config"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["method"] == "ours"
    assert doc["train"]["lr"] == 1e-4
    assert doc["train"]["weight_decay"] == 1e-5


class TestGenData:
    def test_writes_manifest_with_stages(self, cfg_file, tmp_path):
        assert main(["gen-data", "--config", str(cfg_file)]) == 0
        manifest = json.loads(
            (tmp_path / "run" / "dataset" / "manifest.json").read_text())
        assert len(manifest["stages"]) == 2
        assert (tmp_path / "run" / "run.json").exists()

    def test_refuses_to_overwrite_without_force(self, cfg_file):
        assert main(["gen-data", "--config", str(cfg_file)]) == 0
        assert main(["gen-data", "--config", str(cfg_file)]) == 2
        assert main(["gen-data", "--config", str(cfg_file), "--force"]) == 0

    def test_rerun_is_byte_identical(self, cfg_file, tmp_path):
        main(["gen-data", "--config", str(cfg_file)])
        files = {p.relative_to(tmp_path / "run"): p.read_bytes()
                 for p in (tmp_path / "run").rglob("*") if p.is_file()}
        main(["gen-data", "--config", str(cfg_file), "--force"])
        for rel, blob in files.items():
            assert (tmp_path / "run" / rel).read_bytes() == blob

    def test_unknown_config_key_rejected(self, tmp_path):
        doc = dict(TINY)
        doc["outputs"] = "typo"
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(doc))
        assert main(["gen-data", "--config", str(path)]) == 2


class TestEmbed:
    def test_generate_and_validate(self, cfg_file, tmp_path):
        out = tmp_path / "emb.json"
        assert main(["embed", "--config", str(cfg_file),
                     "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert set(doc["classes"]) == {"liver", "spleen", "kidney", "tumor"}
        assert main(["embed", "--config", str(cfg_file),
                     "--validate", str(out)]) == 0

    def test_validate_rejects_bad_file(self, cfg_file, tmp_path):
        bad = tmp_path / "emb.json"
        bad.write_text('{"dim": 3, "classes": {"liver": [1, 2]}}')
        assert main(["embed", "--config", str(cfg_file),
                     "--validate", str(bad)]) == 2


class TestTrainEval:
    def test_stage1_then_stage2_then_eval(self, cfg_file, tmp_path):
        run = tmp_path / "run"
        assert main(["gen-data", "--config", str(cfg_file)]) == 0
        assert main(["train", "--config", str(cfg_file), "--stage", "1"]) == 0
        ckpt1 = run / "checkpoints" / "stage1.ckpt"
        assert ckpt1.exists()
        assert (run / "logs" / "train_stage1.csv").exists()
        model = load_checkpoint(ckpt1)
        assert model.stage_index == 1
        assert len(model.registry) == 3

        assert main(["train", "--config", str(cfg_file), "--stage", "2",
                     "--from", str(ckpt1)]) == 0
        ckpt2 = run / "checkpoints" / "stage2.ckpt"
        model2 = load_checkpoint(ckpt2)
        assert len(model2.registry) == 4
        assert (run / "dataset" / "pseudo" / "stage2" /
                "manifest.json").exists()

        assert main(["eval", "--config", str(cfg_file),
                     "--checkpoint", str(ckpt1)]) == 0
        report_dir = run / "reports" / "stage1-ours"
        rows = metrics.load_report_csv(report_dir / "report.csv")
        # a stage-1 checkpoint reports exactly the stage-1 group
        assert {r["group"] for r in rows} == {"organs"}
        assert len(rows) == 3 + 1

        assert main(["eval", "--config", str(cfg_file),
                     "--checkpoint", str(ckpt2)]) == 0
        rows2 = metrics.load_report_csv(
            run / "reports" / "stage2-ours" / "report.csv")
        assert {r["group"] for r in rows2} == {"organs", "tumor"}
        assert len(rows2) == 4 + 2

        assert main(["report", "--config", str(cfg_file)]) == 0
        combined = run / "reports" / "combined"
        assert (combined / "report.txt").exists()
        series = metrics.parse_plot_svg(combined / "report.svg")
        assert "ours:organs" in series

    def test_stage2_without_from_fails(self, cfg_file):
        main(["gen-data", "--config", str(cfg_file)])
        assert main(["train", "--config", str(cfg_file), "--stage", "2"]) == 2

    def test_wrong_stage_checkpoint_rejected(self, cfg_file, tmp_path):
        main(["gen-data", "--config", str(cfg_file)])
        main(["train", "--config", str(cfg_file), "--stage", "1"])
        ckpt1 = tmp_path / "run" / "checkpoints" / "stage1.ckpt"
        assert main(["train", "--config", str(cfg_file), "--stage", "2",
                     "--from", str(ckpt1)]) == 0
        ckpt2 = tmp_path / "run" / "checkpoints" / "stage2.ckpt"
        assert main(["train", "--config", str(cfg_file), "--stage", "2",
                     "--from", str(ckpt2)]) == 2

    def test_train_rerun_writes_identical_checkpoint(self, cfg_file,
                                                     tmp_path):
        main(["gen-data", "--config", str(cfg_file)])
        ckpt = tmp_path / "run" / "checkpoints" / "stage1.ckpt"
        main(["train", "--config", str(cfg_file), "--stage", "1"])
        first = ckpt.read_bytes()
        main(["train", "--config", str(cfg_file), "--stage", "1"])
        assert ckpt.read_bytes() == first

    def test_nonfinite_training_exits_three(self, cfg_file, tmp_path):
        import numpy as np
        main(["gen-data", "--config", str(cfg_file)])
        main(["train", "--config", str(cfg_file), "--stage", "1"])
        ckpt = tmp_path / "run" / "checkpoints" / "stage1.ckpt"
        model = load_checkpoint(ckpt)
        model.hypernets[1].w2.data[0, 0] = np.inf
        from contseg.engine import save_checkpoint
        save_checkpoint(model, ckpt)
        assert main(["train", "--config", str(cfg_file), "--stage", "2",
                     "--from", str(ckpt)]) == 3

    def test_eval_deterministic(self, cfg_file, tmp_path):
        main(["gen-data", "--config", str(cfg_file)])
        main(["train", "--config", str(cfg_file), "--stage", "1"])
        ckpt = tmp_path / "run" / "checkpoints" / "stage1.ckpt"
        report = tmp_path / "run" / "reports" / "stage1-ours" / "report.csv"
        main(["eval", "--config", str(cfg_file), "--checkpoint", str(ckpt)])
        first = report.read_bytes()
        main(["eval", "--config", str(cfg_file), "--checkpoint", str(ckpt)])
        assert report.read_bytes() == first


class TestFlops:
    def test_writes_tables_and_exits_zero(self, cfg_file, tmp_path):
        assert main(["flops", "--config", str(cfg_file)]) == 0
        out = tmp_path / "run" / "flops"
        assert (out / "itemized.csv").exists()
        assert (out / "growth.csv").exists()

    def test_paper_constants_rows(self, cfg_file, tmp_path, capsys):
        assert main(["flops", "--config", str(cfg_file),
                     "--paper-constants"]) == 0
        growth = (tmp_path / "run" / "flops" / "growth.csv").read_text()
        assert "paper,decoder-per-step,2,1125480000000" in growth
        out = capsys.readouterr().out
        assert "661.6" in out.replace("661.600", "661.6")


class TestOutputRoot:
    def test_env_var_overrides_relative_output(self, tmp_path, monkeypatch):
        doc = dict(TINY)
        doc["output_dir"] = "nested/run"
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc))
        monkeypatch.setenv("CONTSEG_OUTPUT_ROOT", str(tmp_path / "root"))
        assert main(["gen-data", "--config", str(path)]) == 0
        assert (tmp_path / "root" / "nested" / "run" / "dataset" /
                "manifest.json").exists()
