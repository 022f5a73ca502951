"""End-to-end runs of every CLI subcommand on a small on-disk corpus."""

import json

import pytest

from fewts.cli import main
from fewts.synthetic import ar_coefficient_domain, sine_frequency_domain, square_duty_domain

from helpers import write_ucr


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Four tiny datasets on disk plus a meta-split manifest and configs."""
    base = tmp_path_factory.mktemp("corpus")
    data = base / "data"
    kwargs = dict(n_classes=4, length=32, train_per_class=8, test_per_class=4)
    write_ucr(sine_frequency_domain(1, **kwargs), data, name="sine_frequency")
    write_ucr(square_duty_domain(2, **kwargs), data, name="square_duty")
    write_ucr(ar_coefficient_domain(3, **kwargs), data, name="ar_coefficient")
    write_ucr(sine_frequency_domain(7, **kwargs), data, name="sine_b")
    manifest = base / "manifest.json"
    manifest.write_text(json.dumps({
        "train": ["sine_frequency"],
        "validation": ["square_duty"],
        "test": ["ar_coefficient"],
    }))
    arch = {"blocks": 1, "convs_per_block": 2, "filter_lengths": [3, 5],
            "filters_per_length": 2}
    train_cfg = base / "train.json"
    train_cfg.write_text(json.dumps({
        "data_root": str(data), "split_manifest": str(manifest), "seed": 11,
        "arch": arch,
        "meta": {"meta_iterations": 2, "meta_batch": 1, "batch_size": 10,
                 "epochs": 1, "inner_lr": 1e-3, "k_train": 3,
                 "checkpoint_every": 2, "validation_tasks": 2},
    }))
    eval_cfg = base / "eval.json"
    eval_cfg.write_text(json.dumps({
        "data_root": str(data), "split_manifest": str(manifest), "seed": 11,
        "k": 3, "k_prime": 2, "tasks_per_dataset": 2, "arch": arch,
        "finetune": {"fs1": {"epochs": 1}, "resnet": {"epochs": 1}},
        "dtw": {"fractions": [0.2, 1.0]},
    }))
    return base


def test_sine_and_square_domains_have_expected_names(corpus):
    assert (corpus / "data" / "sine_frequency").is_dir()
    assert (corpus / "data" / "ar_coefficient").is_dir()


def test_meta_train_writes_checkpoints(corpus, capsys):
    out = corpus / "run_fs1"
    rc = main(["meta-train", "--config", str(corpus / "train.json"),
               "--out-dir", str(out)])
    assert rc == 0
    assert (out / "final.ckpt").is_file()
    assert (out / "selected.ckpt").is_file()
    assert (out / "model_selection.json").is_file()
    lines = (out / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 2
    stdout = capsys.readouterr().out
    assert "2 meta-iterations" in stdout and "selected iteration" in stdout


def test_meta_train_fs2_variant(corpus, capsys):
    out = corpus / "run_fs2"
    rc = main(["meta-train", "--config", str(corpus / "train.json"),
               "--variant", "fs2", "--out-dir", str(out)])
    assert rc == 0
    assert "fs2:" in capsys.readouterr().out
    assert (out / "selected.ckpt").is_file()


def test_evaluate_then_report(corpus, capsys):
    run = corpus / "run_fs1"
    if not (run / "selected.ckpt").is_file():
        assert main(["meta-train", "--config", str(corpus / "train.json"),
                     "--out-dir", str(run)]) == 0
    out = corpus / "eval"
    cfg = json.loads((corpus / "eval.json").read_text())
    cfg["checkpoints"] = {"fs1": str(run / "selected.ckpt")}
    cfg["methods"] = ["fs1", "resnet", "ed"]
    cfg["split_manifest"] = str(corpus / "manifest2.json")
    # Two test datasets so the rank statistics are defined.
    (corpus / "manifest2.json").write_text(json.dumps({
        "train": ["sine_frequency"], "validation": ["square_duty"],
        "test": ["ar_coefficient", "sine_b"],
    }))
    cfg_path = corpus / "eval_full.json"
    cfg_path.write_text(json.dumps(cfg))

    assert main(["evaluate", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    rows = [json.loads(l) for l in (out / "records.jsonl").read_text().splitlines()]
    assert len(rows) == 2 * 2 * 3
    capsys.readouterr()

    assert main(["report", "--config", str(cfg_path), "--out-dir", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "mean ranks:" in stdout and "friedman chi2" in stdout
    summary = json.loads((out / "summary.json").read_text())
    assert summary["method_count"] == 3
    assert (out / "accuracy_table.csv").is_file()
    assert (out / "cd_plot.json").is_file()


def test_baseline_defaults_to_ed_and_dtw(corpus):
    out = corpus / "base"
    rc = main(["baseline", "--config", str(corpus / "eval.json"),
               "--out-dir", str(out), "--tasks-per-dataset", "1"])
    assert rc == 0
    rows = [json.loads(l) for l in (out / "records.jsonl").read_text().splitlines()]
    assert sorted({r["method"] for r in rows}) == ["dtw", "ed"]


def test_baseline_rejects_model_methods(corpus, capsys):
    rc = main(["baseline", "--config", str(corpus / "eval.json"),
               "--out-dir", str(corpus / "never"), "--method", "fs1"])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error: ")


def test_class_split_writes_partition(corpus, capsys):
    out = corpus / "splits"
    rc = main(["class-split", "--data-root", str(corpus / "data"),
               "--dataset", "ar_coefficient", "--out-dir", str(out), "--seed", "2"])
    assert rc == 0
    payload = json.loads((out / "class_split_ar_coefficient.json").read_text())
    ids = payload["train"] + payload["validation"] + payload["test"]
    assert sorted(ids) == list(range(payload["n_classes"]))
    assert payload["train"] and payload["test"]


def test_gradcheck_prints_small_error(capsys):
    rc = main(["gradcheck"])
    out = capsys.readouterr().out
    assert rc == 0
    value = float(out.split(":")[1])
    assert value < 1e-4


def test_errors_are_single_line_on_stderr(tmp_path, capsys):
    rc = main(["report", "--out-dir", str(tmp_path / "void")])
    captured = capsys.readouterr()
    assert rc == 1
    assert captured.err.startswith("error: ")
    assert captured.err.strip().count("\n") == 0


def test_missing_checkpoint_is_an_error(corpus, capsys):
    rc = main(["evaluate", "--config", str(corpus / "eval.json"),
               "--method", "fs1", "--out-dir", str(corpus / "never2")])
    assert rc == 1
    assert "checkpoint" in capsys.readouterr().err


def test_unknown_config_key_is_an_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sedd": 1}))
    rc = main(["report", "--config", str(bad)])
    assert rc == 1
    assert "sedd" in capsys.readouterr().err
