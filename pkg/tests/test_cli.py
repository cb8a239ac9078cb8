import json

import pytest

from medaug.cli import EXIT_CONFIG, EXIT_ERROR, EXIT_STAGE, main

from tiny_configs import tiny

LM = ["--d-model", "16", "--n-layers", "1", "--context-len", "64", "--epochs", "1"]
CLF = ["--epochs", "3"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["corpus", "gen", "--out-dir", str(d), "--n-docs", "300", "--seed", "2"]) == 0
    assert main(["lm", "train", "--train", str(d / "train.jsonl"), "--out", str(d / "g.maug"), "--balanced", *LM]) == 0
    return d


def test_corpus_files(workdir):
    lines = (workdir / "train.jsonl").read_text().splitlines()
    assert len(lines) == 240
    assert set(json.loads(lines[0])) == {"id", "label", "text", "origin"}


def test_lm_sample(workdir, capsys):
    out = workdir / "s.jsonl"
    args = ["lm", "sample", "--model", str(workdir / "g.maug"), "--n", "4", "--out", str(out),
            "--context-from", str(workdir / "train.jsonl")]
    assert main(args) == 0
    assert 1 <= len(out.read_text().splitlines()) <= 4


def test_augment_distill_eval(workdir):
    d = workdir
    assert main(["augment", "--train", str(d / "train.jsonl"), "--model", str(d / "g.maug"), "--count", "10",
                 "--strategy", "medaug", "--out", str(d / "comb.jsonl"), "--report", str(d / "aug.json")]) == 0
    report = json.loads((d / "aug.json").read_text())
    assert report["apply_kl"] and report["n_kept"] == 10
    assert main(["distill", "--train", str(d / "train.jsonl"), "--combined", str(d / "comb.jsonl"),
                 "--out", str(d / "student.maug"), "--teacher-out", str(d / "teacher.maug"),
                 "--report", str(d / "distill.json"), *CLF]) == 0
    assert len(json.loads((d / "distill.json").read_text())["loss"]) == 3
    assert main(["eval", "--model", str(d / "student.maug"), "--data", str(d / "valid.jsonl"),
                 "--curves-dir", str(d / "curves"), "--out", str(d / "m.json")]) == 0
    metrics = json.loads((d / "m.json").read_text())
    assert set(metrics) == {"auroc", "auprc", "rp80"}
    assert (d / "curves" / "roc.csv").read_text().startswith("threshold,fpr,tpr")


def test_clf_train_and_eval(workdir, capsys):
    d = workdir
    assert main(["clf", "train", "--train", str(d / "train.jsonl"), "--out", str(d / "c.maug"), *CLF]) == 0
    assert main(["eval", "--model", str(d / "c.maug"), "--data", str(d / "test.jsonl")]) == 0
    assert "auroc" in json.loads(capsys.readouterr().out)


def test_eval_rejects_generator(workdir, capsys):
    assert main(["eval", "--model", str(workdir / "g.maug"), "--data", str(workdir / "test.jsonl")]) == EXIT_ERROR
    assert "not a classifier" in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert main(["clf", "train", "--train", str(tmp_path / "nope.jsonl"), "--out", str(tmp_path / "c")]) == EXIT_ERROR


def test_experiment_and_report(tmp_path, capsys):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(tiny(kinds="none, medaug"))
    out = tmp_path / "run"
    assert main(["experiment", "run", "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert "# tiny" in capsys.readouterr().out
    assert main(["report", "--run-dir", str(out)]) == 0
    assert capsys.readouterr().out == (out / "summary.md").read_text()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[augment]\nn_synthetic = lots\n")
    assert main(["experiment", "run", "--config", str(cfg)]) == EXIT_CONFIG
    assert "bad.ini:2:" in capsys.readouterr().err


def test_stage_failure_exit_code(tmp_path, capsys):
    cfg = tmp_path / "starve.ini"
    text = tiny(n_synthetic="10", kinds="base").replace("max_new_tokens = 30", "max_new_tokens = 30\ntemperature = 0.0001")
    text = text.replace("[augment]", "[augment]\nprompt_mode = without_context")
    cfg.write_text(text)
    assert main(["experiment", "run", "--config", str(cfg), "--out-dir", str(tmp_path / "o")]) == EXIT_STAGE
    assert "stage 'generate'" in capsys.readouterr().err


def test_report_missing_run(tmp_path):
    assert main(["report", "--run-dir", str(tmp_path)]) == EXIT_ERROR
