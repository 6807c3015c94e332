import json

import pandas as pd
import pytest
import yaml

import main as cli
from main import main
from src.numerics import NonFiniteError
from src.storage import load_checkpoint

SMALL_SETTINGS = {
    "model": {"n_clips": 4, "dim_v": 4, "dim_s": 4, "vocab_size": 8, "bm_samples": 4},
    "train": {"epochs": 2, "lr": 0.01},
    "data": {"n_train": 16, "n_test": 8, "n_intest": 8, "bias_grid": 4, "top_k": 3},
    "scenarios": {
        "train": {
            "n_concepts": 3,
            "interval_prior": [{"center": 0.25, "width": 0.5}, {"center": 0.75, "width": 0.5}],
            "concept_interval_map": [],
            "n_clips": 4,
            "dim": 4,
            "vocab_size": 8,
            "n_distractor_tokens": 1,
        },
        "cross": {
            "target": {"interval_prior": [{"center": 0.6, "width": 0.3}, {"center": 0.4, "width": 0.3}]},
        },
    },
    "sweep": {"alphas": [0.5, 2.0], "seeds": [0]},
}


@pytest.fixture
def settings(tmp_path):
    path = tmp_path / "settings.yaml"
    path.write_text(yaml.safe_dump(SMALL_SETTINGS, sort_keys=False))
    return str(path)


@pytest.fixture
def data_dir(settings, tmp_path):
    out = tmp_path / "data"
    assert main(["--config", settings, "--quiet", "generate", "--out", str(out)]) == 0
    return out


class TestGenerate:
    def test_writes_datasets_and_reports(self, data_dir):
        for name in ("train", "in_test", "target_test"):
            assert (data_dir / f"{name}.jsonl").exists()
        assert (data_dir / "reports" / "train_bias.json").exists()
        overlap = pd.read_csv(data_dir / "reports" / "overlap.csv")
        assert list(overlap["dataset"]) == ["in_test", "target_test"]

    def test_byte_identical_across_runs(self, settings, data_dir, tmp_path):
        again = tmp_path / "again"
        assert main(["--config", settings, "--quiet", "generate", "--out", str(again)]) == 0
        for name in ("train.jsonl", "in_test.jsonl", "target_test.jsonl"):
            assert (data_dir / name).read_bytes() == (again / name).read_bytes()

    def test_analyze(self, settings, data_dir, tmp_path):
        args = ["--config", settings, "--quiet", "analyze",
                str(data_dir / "train.jsonl"), str(data_dir / "target_test.jsonl"), "--out", str(tmp_path / "r")]
        assert main(args) == 0
        report = json.loads((tmp_path / "r" / "target_test_bias.json").read_text())
        assert report["n_samples"] == 8
        assert report["overlap"] is not None


class TestTrainEval:
    def test_train_writes_checkpoint_and_log(self, settings, data_dir, tmp_path):
        ckpt = tmp_path / "runs" / "debias.ckpt"
        args = ["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                "--out", str(ckpt), "--alpha", "2.0"]
        assert main(args) == 0
        loaded = load_checkpoint(ckpt)
        assert loaded.epochs == 2
        assert loaded.config["train"]["alpha"] == 2.0
        log = [json.loads(line) for line in (tmp_path / "runs" / "debias.ckpt.log.jsonl").read_text().splitlines()]
        assert [r["epoch"] for r in log] == [1, 2]

    def test_train_is_reproducible(self, settings, data_dir, tmp_path):
        paths = [tmp_path / "a.ckpt", tmp_path / "b.ckpt"]
        for path in paths:
            assert main(["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                         "--out", str(path), "--mode", "tll"]) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()

    def test_huge_alpha_trains_like_tll(self, settings, data_dir, tmp_path):
        final = {}
        for name, extra in (("tll", ["--mode", "tll"]), ("debias", ["--mode", "debias", "--alpha", "64"])):
            ckpt = tmp_path / f"{name}.ckpt"
            assert main(["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                         "--out", str(ckpt), *extra]) == 0
            log = (tmp_path / f"{name}.ckpt.log.jsonl").read_text().splitlines()
            final[name] = json.loads(log[-1])["l_total"]
        assert final["debias"] == pytest.approx(final["tll"], rel=0.02)

    def test_failed_run_leaves_no_log(self, settings, data_dir, tmp_path, monkeypatch):
        def diverging(samples, train_cfg, model_cfg, threads=1, progress=False, on_epoch=None):
            on_epoch({"epoch": 1, "l_v": 0.7, "l_vs_raw": 0.7, "s": 0.5, "weight": 0.5, "l_total": 1.05,
                      "n_degenerate": 0})
            raise NonFiniteError("non-finite loss at epoch 2")

        monkeypatch.setattr(cli, "train", diverging)
        ckpt = tmp_path / "runs" / "m.ckpt"
        assert main(["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                     "--out", str(ckpt)]) == 1
        assert not ckpt.exists()
        assert not (tmp_path / "runs" / "m.ckpt.log.jsonl").exists()

    def test_eval_all_modes(self, settings, data_dir, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        assert main(["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                     "--out", str(ckpt)]) == 0
        assert main(["--config", settings, "--quiet", "eval", "--checkpoint", str(ckpt),
                     "--data", str(data_dir / "target_test.jsonl"), "--mode", "all"]) == 0
        for mode in ("full", "video_only", "query_masked", "random"):
            report = json.loads((tmp_path / f"m_target_test_{mode}.json").read_text())
            assert report["mode"] == mode
            assert 0.0 <= report["metrics"]["R1@0.5"] <= 100.0
            frame = pd.read_csv(tmp_path / f"m_target_test_{mode}.csv")
            assert len(frame) == 4

    def test_eval_rejects_incompatible_checkpoint(self, settings, data_dir, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        assert main(["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                     "--out", str(ckpt)]) == 0
        other = dict(SMALL_SETTINGS, model={**SMALL_SETTINGS["model"], "n_clips": 6})
        other["scenarios"] = {
            "train": {**SMALL_SETTINGS["scenarios"]["train"], "n_clips": 6},
            "cross": SMALL_SETTINGS["scenarios"]["cross"],
        }
        other_settings = tmp_path / "other.yaml"
        other_settings.write_text(yaml.safe_dump(other, sort_keys=False))
        other_dir = tmp_path / "other"
        assert main(["--config", str(other_settings), "--quiet", "generate", "--out", str(other_dir)]) == 0
        assert main(["--config", settings, "--quiet", "eval", "--checkpoint", str(ckpt),
                     "--data", str(other_dir / "target_test.jsonl")]) == 3

    def test_eval_rejects_unreadable_checkpoint(self, settings, data_dir, tmp_path):
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_text("not a checkpoint\n")
        assert main(["--config", settings, "--quiet", "eval", "--checkpoint", str(bogus),
                     "--data", str(data_dir / "train.jsonl")]) == 3


class TestExitCodes:
    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "bad.yaml"
        path.write_text("train:\n  learning_rate: 0.1\n")
        assert main(["--config", str(path), "gradcheck"]) == 2

    @pytest.mark.parametrize("text", ["train:\n  learning_rate: 0.1\n", "train: [unclosed\n"])
    def test_bad_config_generates_nothing(self, tmp_path, text):
        path = tmp_path / "bad.yaml"
        path.write_text(text)
        out = tmp_path / "data"
        assert main(["--config", str(path), "--quiet", "generate", "--out", str(out)]) == 2
        assert not out.exists()

    def test_empty_query_is_a_validation_error(self, settings, tmp_path):
        data = tmp_path / "empty_query.jsonl"
        record = {"video": [[0.0] * 4] * 4, "tokens": [], "gt": [0.25, 0.75], "concept": 0}
        data.write_text(json.dumps(record) + "\n")
        assert main(["--config", settings, "--quiet", "train", "--data", str(data),
                     "--out", str(tmp_path / "m.ckpt")]) == 2

    def test_missing_dataset_is_a_runtime_failure(self, settings, tmp_path):
        assert main(["--config", settings, "--quiet", "train", "--data", str(tmp_path / "absent.jsonl"),
                     "--out", str(tmp_path / "m.ckpt")]) == 1

    def test_gradcheck_passes(self, settings):
        assert main(["--config", settings, "gradcheck"]) == 0

    def test_gradcheck_detects_injected_fault(self, settings):
        assert main(["--config", settings, "gradcheck", "--inject-fault"]) == 1


class TestExperiments:
    def test_sweep_alpha_csv(self, settings, data_dir, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["--config", settings, "--quiet", "sweep-alpha", "--train", str(data_dir / "train.jsonl"),
                     "--test", str(data_dir / "target_test.jsonl"), "--out", str(out)]) == 0
        df = pd.read_csv(out)
        assert list(df.columns) == ["alpha", "r1_iou0.7", "r5_iou0.7", "seed"]
        assert list(df["alpha"]) == [0.5, 2.0]

    def test_single_alpha_sweep_matches_standalone_run(self, settings, data_dir, tmp_path):
        out = tmp_path / "sweep.csv"
        assert main(["--config", settings, "--quiet", "sweep-alpha", "--train", str(data_dir / "train.jsonl"),
                     "--test", str(data_dir / "target_test.jsonl"), "--alphas", "1.0", "--out", str(out)]) == 0
        ckpt = tmp_path / "m.ckpt"
        assert main(["--config", settings, "--quiet", "train", "--data", str(data_dir / "train.jsonl"),
                     "--out", str(ckpt), "--mode", "debias", "--alpha", "1.0"]) == 0
        assert main(["--config", settings, "--quiet", "eval", "--checkpoint", str(ckpt),
                     "--data", str(data_dir / "target_test.jsonl")]) == 0

        row = pd.read_csv(out).iloc[0]
        metrics = json.loads((tmp_path / "m_target_test_full.json").read_text())["metrics"]
        assert row["r1_iou0.7"] == pytest.approx(metrics["R1.7"])
        assert row["r5_iou0.7"] == pytest.approx(metrics["R5.7"])

    def test_compare_csv(self, settings, data_dir, tmp_path):
        out = tmp_path / "compare.csv"
        assert main(["--config", settings, "--quiet", "--seed", "3", "compare",
                     "--train", str(data_dir / "train.jsonl"), "--test", str(data_dir / "target_test.jsonl"),
                     "--out", str(out)]) == 0
        df = pd.read_csv(out)
        assert {"debias", "tll", "debias/video_only", "tll/random"} <= set(df["method"])
        assert "mean" in set(df["seed"].astype(str))
