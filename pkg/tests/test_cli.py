import json
import subprocess
import sys

import numpy as np
import pytest

from fabl.cli import main
from fabl.data_io import load_features, load_model, save_features
from fabl.evaluation import SyntheticSpec, generate_synthetic


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def features(tmp_path):
    fm, _ = generate_synthetic(SyntheticSpec(n=60, block_dim=6, noise_sigma=0.5, active_joints=(1,), seed=0))
    path = tmp_path / "synth.fabl"
    save_features(fm, path)
    return path


@pytest.fixture
def trained(tmp_path, features):
    model = tmp_path / "model.fabl"
    assert run("train", "--features", features, "--model", model) == 0
    return model


def report(path):
    doc = json.loads(path.read_text())
    assert doc["format_version"] == 1
    return doc


class TestExtract:
    def test_writes_matrix(self, tmp_path, dataset):
        out = tmp_path / "f.fabl"
        assert run("extract", "--manifest", dataset, "--out", out, "--bins", 4) == 0
        fm = load_features(out)
        assert fm.n == 12 and fm.c == 2 and fm.layout.d == 15 * 4 * 10
        assert fm.hist_config.bins == 4 and fm.ranges is not None

    def test_byte_identical_rerun(self, tmp_path, dataset):
        run("extract", "--manifest", dataset, "--out", tmp_path / "a.fabl")
        run("extract", "--manifest", dataset, "--out", tmp_path / "b.fabl")
        assert (tmp_path / "a.fabl").read_bytes() == (tmp_path / "b.fabl").read_bytes()

    def test_corrupt_input_names_file(self, tmp_path, dataset, capsys):
        (dataset.parent / "s1_wave_0.skel").write_text("FABL-SKELETON 1\njoints 15\n")
        assert run("extract", "--manifest", dataset, "--out", tmp_path / "f.fabl") == 1
        assert "s1_wave_0.skel" in capsys.readouterr().err

    def test_fixed_range_and_no_normalize(self, tmp_path, dataset):
        out = tmp_path / "f.fabl"
        assert run("extract", "--manifest", dataset, "--out", out, "--range=-1,1", "--no-normalize") == 0
        fm = load_features(out)
        assert fm.hist_config.fixed_range == (-1.0, 1.0) and not fm.hist_config.normalize

    @pytest.mark.parametrize("bad", ["1,1", "a,b", "3"])
    def test_bad_range_is_usage_error(self, tmp_path, dataset, bad):
        assert run("extract", "--manifest", dataset, "--out", tmp_path / "f.fabl", f"--range={bad}") == 2

    def test_ranges_from_model(self, tmp_path, dataset):
        train_f = tmp_path / "train.fabl"
        run("extract", "--manifest", dataset, "--out", train_f, "--bins", 4)
        run("train", "--features", train_f, "--model", tmp_path / "m.fabl")
        again = tmp_path / "again.fabl"
        assert run("extract", "--manifest", dataset, "--out", again, "--ranges-from", tmp_path / "m.fabl") == 0
        assert load_features(again).ranges == load_features(train_f).ranges
        assert load_features(again).X.tobytes() == load_features(train_f).X.tobytes()


class TestTrain:
    def test_defaults_and_report(self, tmp_path, trained):
        doc = report(tmp_path / "fit_report.json")
        assert doc["hyperparams"]["gamma1"] == 0.1 and doc["hyperparams"]["gamma2"] == 0.1
        assert doc["converged"] is True and doc["iterations"] <= 100
        assert doc["config"]["features"].endswith("synth.fabl")
        model = load_model(trained)
        assert model.metadata["converged"] and model.hyperparams.gamma1 == 0.1

    def test_ridge_mode_note(self, tmp_path, features, capsys):
        assert run("train", "--features", features, "--model", tmp_path / "m.fabl", "--gamma1", 0, "--gamma2", 0) == 0
        assert "ridge-equivalent mode" in capsys.readouterr().out
        doc = report(tmp_path / "fit_report.json")
        assert doc["mode"] == "ridge-equivalent mode" and doc["iterations"] == 1

    def test_failure_persists_report(self, tmp_path, features):
        # d > n with no ridge: the starting solve is singular
        code = run("train", "--features", features, "--model", tmp_path / "m.fabl",
                   "--gamma1", 0, "--gamma2", 0, "--init-ridge", 0)
        assert code == 1
        doc = report(tmp_path / "fit_report.json")
        assert "SingularSystem" in doc["error"] and "trace" in doc
        assert not (tmp_path / "m.fabl").exists()

    def test_deterministic(self, tmp_path, features):
        run("train", "--features", features, "--model", tmp_path / "a.fabl", "--threads", 1)
        run("train", "--features", features, "--model", tmp_path / "b.fabl", "--threads", 1)
        assert load_model(tmp_path / "a.fabl").W.tobytes() == load_model(tmp_path / "b.fabl").W.tobytes()

    def test_config_precedence(self, tmp_path, features):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gamma1": 0.5, "gamma2": 0.7, "max-iter": 9}))
        assert run("train", "--features", features, "--model", tmp_path / "m.fabl", "--config", cfg,
                   "--gamma2", 0.2, "--output", tmp_path / "out") == 0
        doc = report(tmp_path / "out" / "fit_report.json")
        assert (doc["hyperparams"]["gamma1"], doc["hyperparams"]["gamma2"], doc["hyperparams"]["max_iter"]) == (0.5, 0.2, 9)
        assert doc["config"]["config"].endswith("cfg.json")

    def test_bad_config(self, tmp_path, features):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"gamma3": 1}))
        assert run("train", "--features", features, "--model", tmp_path / "m.fabl", "--config", cfg) == 2
        cfg.write_text("{")
        assert run("train", "--features", features, "--model", tmp_path / "m.fabl", "--config", cfg) == 2

    def test_invalid_hyperparameter_is_runtime_error(self, tmp_path, features):
        assert run("train", "--features", features, "--model", tmp_path / "m.fabl", "--epsilon", 0) == 1


class TestPredict:
    def test_tsv(self, tmp_path, features, trained):
        assert run("predict", "--model", trained, "--features", features, "--output", tmp_path / "p") == 0
        lines = (tmp_path / "p" / "predictions.tsv").read_text().splitlines()
        assert lines[0].split("\t") == ["#id", "predicted", "class0", "class1", "class2"]
        assert len(lines) == 61
        ident, pred, *scores = lines[1].split("\t")
        assert ident == "synthetic0" and pred in ("class0", "class1", "class2")
        assert pred == f"class{int(np.argmax([float(s) for s in scores]))}"

    def test_top_k(self, tmp_path, features, trained, capsys):
        assert run("predict", "--model", trained, "--features", features, "--top-k", 2) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "#id\tpredicted\trank1\trank2"
        _, pred, first, second = lines[1].split("\t")
        assert first.startswith(pred + "=")
        assert float(first.split("=")[1]) >= float(second.split("=")[1])

    def test_missing_model_is_usage_error(self, tmp_path, features):
        assert run("predict", "--model", tmp_path / "nope.fabl", "--features", features) == 2

    def test_corrupt_model(self, tmp_path, features):
        bad = tmp_path / "bad.fabl"
        bad.write_bytes(b"FABLMODL\x05\x00\x00\x00{")
        assert run("predict", "--model", bad, "--features", features) == 1

    def test_from_manifest(self, tmp_path, dataset, capsys):
        run("extract", "--manifest", dataset, "--out", tmp_path / "f.fabl", "--bins", 4)
        run("train", "--features", tmp_path / "f.fabl", "--model", tmp_path / "m.fabl")
        capsys.readouterr()
        assert run("predict", "--model", tmp_path / "m.fabl", "--manifest", dataset) == 0
        rows = capsys.readouterr().out.splitlines()[1:]
        assert len(rows) == 12
        assert all(r.split("\t")[1] == ("wave" if "_wave_" in r.split("\t")[0] else "still") for r in rows)


class TestEval:
    def test_training_accuracy_on_separable(self, tmp_path):
        fm, _ = generate_synthetic(SyntheticSpec(n=40, c=2, noise_sigma=0.0, inactive_sigma=0.0, seed=1))
        save_features(fm, tmp_path / "sep.fabl")
        run("train", "--features", tmp_path / "sep.fabl", "--model", tmp_path / "m.fabl")
        assert run("eval", "--model", tmp_path / "m.fabl", "--features", tmp_path / "sep.fabl",
                   "--output", tmp_path) == 0
        doc = report(tmp_path / "eval_report.json")
        assert doc["accuracy"] == 1.0 and doc["n"] == 40
        assert "accuracy: 100.00%" in (tmp_path / "eval_summary.txt").read_text()

    def test_cv_and_ablation(self, tmp_path, features):
        assert run("eval", "--cv", "--features", features, "--output", tmp_path) == 0
        doc = report(tmp_path / "eval_report.json")
        assert len(doc["per_fold"]) == 4 and 0 <= doc["mean_accuracy"] <= 1
        assert sum(map(sum, doc["pooled_confusion"]["counts"])) == 60
        assert run("eval", "--cv", "--ablation", "--split", "kfold:3", "--features", features,
                   "--output", tmp_path) == 0
        doc = report(tmp_path / "eval_report.json")
        assert set(doc["configs"]) == {"fabl", "feature_only", "part_only", "unregularized"}

    def test_low_accuracy_still_exits_zero(self, tmp_path):
        fm, _ = generate_synthetic(SyntheticSpec(n=40, signal=0.0, seed=2))
        save_features(fm, tmp_path / "noise.fabl")
        assert run("eval", "--cv", "--features", tmp_path / "noise.fabl", "--output", tmp_path) == 0

    def test_usage_errors(self, tmp_path, features):
        assert run("eval", "--features", features) == 2
        assert run("eval", "--cv", "--split", "bogus", "--features", features, "--output", tmp_path) == 2
        assert run("eval", "--model", tmp_path / "missing.fabl", "--features", features) == 2


class TestBenchInspect:
    def test_bench_fields(self, tmp_path, trained):
        assert run("bench", "--model", trained, "--n", 2000, "--repeats", 1, "--output", tmp_path) == 0
        doc = report(tmp_path / "bench_report.json")
        cls = doc["classification"]
        assert cls["predictions_per_second"] > 0 and cls["seconds_per_observation"] > 0

    def test_bench_random_model(self, tmp_path, capsys):
        assert run("bench", "--random-model", "240,5", "--n", 2000, "--output", tmp_path) == 0
        out = capsys.readouterr().out
        assert "Hz" in out and "s/observation" in out

    def test_bench_end_to_end(self, tmp_path, dataset):
        run("extract", "--manifest", dataset, "--out", tmp_path / "f.fabl", "--bins", 4)
        run("train", "--features", tmp_path / "f.fabl", "--model", tmp_path / "m.fabl")
        assert run("bench", "--model", tmp_path / "m.fabl", "--n", 1000, "--manifest", dataset,
                   "--output", tmp_path) == 0
        assert report(tmp_path / "bench_report.json")["end_to_end"]["mode"] == "end_to_end"

    def test_bench_needs_a_model(self):
        assert run("bench") == 2

    def test_inspect_ranks_planted_joint(self, tmp_path, trained, capsys):
        assert run("inspect", "--model", trained) == 0
        doc = report(tmp_path / "inspect_report.json")
        for cls in doc["classes"]:
            assert cls["joints"][0]["index"] == 1
            assert abs(sum(j["share"] for j in cls["joints"]) - 1) <= 1e-9
        assert "joints:" in capsys.readouterr().out

    def test_inspect_corrupt(self, tmp_path):
        (tmp_path / "bad.fabl").write_bytes(b"junk")
        assert run("inspect", "--model", tmp_path / "bad.fabl") == 1


def test_no_command_is_usage_error():
    assert run() == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "fabl.cli", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("fabl ")
    proc = subprocess.run([sys.executable, "-m", "fabl.cli", "train"], capture_output=True, text=True)
    assert proc.returncode == 2
