import csv
import json

import pytest

from pedfuse import cli
from pedfuse import tensor as tn
from pedfuse.training import HISTORY_COLUMNS

SMALL = ["--n-samples", "24", "--feature-dim", "4", "--global", "1.0", "--noise", "0.2"]
FAST = ["--hidden-dim", "4", "--epochs", "1", "--batch-size", "8", "--split", "0.5,0.25,0.25"]


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "data"
    assert cli.main(["gen-data", "--out", str(out), *SMALL]) == 0
    return out


def test_gen_data_is_byte_identical(tmp_path, dataset):
    other = tmp_path / "again"
    assert cli.main(["gen-data", "--out", str(other), *SMALL]) == 0
    for name in ("manifest.jsonl", "local.pft", "global.pft"):
        assert (dataset / name).read_bytes() == (other / name).read_bytes()


def test_gen_data_with_no_samples(tmp_path):
    out = tmp_path / "empty"
    assert cli.main(["gen-data", "--out", str(out), "--n-samples", "0"]) == 0
    lines = (out / "manifest.jsonl").read_text().splitlines()
    assert len(lines) == 1 and json.loads(lines[0])["schema"] == "pedfuse.manifest"


def test_gen_data_rejects_bad_strength(tmp_path, capsys):
    assert cli.main(["gen-data", "--out", str(tmp_path / "x"), "--pose", "2"]) == cli.EXIT_CONFIG
    assert "pose" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_train_with_zero_epochs_writes_header_only_history(tmp_path, dataset):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(dataset), "--out", str(run), *FAST, "--epochs", "0"]) == 0
    lines = (run / "history.csv").read_text().splitlines()
    body = [ln for ln in lines if not ln.startswith("#")]
    assert lines[0].startswith("#") and body == [",".join(HISTORY_COLUMNS)]
    assert (run / "best.ckpt.json").exists() and (run / "final.ckpt.json").exists()


def test_train_then_eval_is_deterministic(tmp_path, dataset):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(dataset), "--out", str(run), *FAST, "--variant", "Ours6"]) == 0
    reports = []
    for i in range(2):
        out = tmp_path / f"m{i}.json"
        assert cli.main(["eval", "--checkpoint", str(run / "best.ckpt.json"), "--data", str(dataset),
                         "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        reports.append(doc["metrics"])
    assert reports[0] == reports[1]
    assert list(reports[0]) == ["Accuracy", "AUC", "F1 Score", "Precision", "Recall"]


def test_eval_flags_single_class_auc(tmp_path):
    data = tmp_path / "one"
    assert cli.main(["gen-data", "--out", str(data), *SMALL, "--positive-rate", "1.0"]) == 0
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(data), "--out", str(run), *FAST]) == 0
    out = tmp_path / "m.json"
    assert cli.main(["eval", "--checkpoint", str(run / "best.ckpt.json"), "--data", str(data), "--out", str(out)]) == 0
    assert "auc" in json.loads(out.read_text())["degenerate"]


def test_eval_dimension_mismatch_is_a_config_error(tmp_path, dataset):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(dataset), "--out", str(run), *FAST, "--epochs", "0"]) == 0
    wide = tmp_path / "wide"
    assert cli.main(["gen-data", "--out", str(wide), *SMALL, "--feature-dim", "6"]) == 0
    rc = cli.main(["eval", "--checkpoint", str(run / "best.ckpt.json"), "--data", str(wide),
                   "--out", str(tmp_path / "m.json")])
    assert rc == cli.EXIT_CONFIG and not (tmp_path / "m.json").exists()


def test_unknown_variant_writes_nothing(tmp_path, dataset):
    run = tmp_path / "run"
    assert cli.main(["train", "--data", str(dataset), "--out", str(run), "--variant", "Ours9"]) == cli.EXIT_CONFIG
    assert not run.exists()


def test_missing_data_is_an_io_error(tmp_path):
    rc = cli.main(["train", "--data", str(tmp_path / "nowhere"), "--out", str(tmp_path / "r")])
    assert rc == cli.EXIT_IO


def test_config_precedence(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochs": 7, "batch_size": 3}))
    ns = cli.build_parser().parse_args(["train", "--config", str(path), "--epochs", "9"])
    cfg = cli.resolve("train", ns)
    assert cfg["epochs"] == 9 and cfg["batch_size"] == 3 and cfg["learning_rate"] == 1e-3


def test_unknown_config_key_fails(tmp_path, capsys):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps({"epochz": 7}))
    assert cli.main(["train", "--config", str(path), "--data", "x"]) == cli.EXIT_CONFIG
    assert "epochz" in capsys.readouterr().err


def test_ablate_writes_all_rows(tmp_path, dataset):
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--data", str(dataset), "--out", str(out), *FAST, "--seq-len", "8"]) == 0
    rows = [r for r in csv.reader(ln for ln in (out / "ablation.csv").read_text().splitlines()
                                  if not ln.startswith("#"))]
    assert rows[0][:4] == ["Model", "Visual Encoder", "Global Context", "Fusion Approach"]
    assert [r[0] for r in rows[1:]] == ["Ours", "Ours1", "Ours2", "Ours3", "Ours4", "Ours5", "Ours6", "Ours7"]


def test_gradcheck_passes_and_writes_json(tmp_path):
    out = tmp_path / "gc.json"
    assert cli.main(["gradcheck", "--kinds", "op", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert all(c["worst"] < doc["tolerance"] for c in doc["components"])


def test_gradcheck_catches_a_broken_backward(monkeypatch, capsys):
    original = tn.Sigmoid.backward

    def broken(self, g):
        return tuple(x * 1.01 for x in original(self, g))

    monkeypatch.setattr(tn.Sigmoid, "backward", broken)
    assert cli.main(["gradcheck", "--kinds", "op,layer"]) == cli.EXIT_FAIL
    assert "sigmoid" in capsys.readouterr().out


def test_gradcheck_rejects_unknown_kind():
    assert cli.main(["gradcheck", "--kinds", "op,tensor"]) == cli.EXIT_CONFIG
