import csv
import hashlib
import json

import numpy as np
import pytest

from tann.cli import main
from tann.gradcheck import toy_setup
from tann.trainer import load_checkpoint

SMALL = ["--d-f", "4", "--d-out", "4", "--disc-hidden", "8", "--batch-size", "8"]


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    assert main(["synth", "--out", str(out), "--subjects", "3", "--trials", "4", "--samples", "5", "--seed", "3"]) == 0
    return out / "manifest.json"


def train(dataset, out, *extra):
    return main(["train", "--data", str(dataset), "--out", str(out), "--epochs", "2", *SMALL, *extra])


def test_synth_reproducible_and_creates_dirs(tmp_path):
    a, b = tmp_path / "a" / "nested", tmp_path / "b"
    for out in (a, b):
        assert main(["synth", "--out", str(out), "--seed", "7", "--subjects", "2", "--samples", "3"]) == 0
    for f in sorted(p.name for p in a.iterdir()):
        if f != "config.json":
            assert sha(a / f) == sha(b / f), f
    man = json.loads((a / "manifest.json").read_text())
    assert len(man["planted_regions"]) == 4
    assert json.loads((a / "config.json").read_text())["synth"]["seed"] == 7


def test_train_is_deterministic(tmp_path, dataset):
    assert train(dataset, tmp_path / "a") == 0
    assert train(dataset, tmp_path / "b") == 0
    assert (tmp_path / "a" / "history.csv").read_text() == (tmp_path / "b" / "history.csv").read_text()
    assert sha(tmp_path / "a" / "checkpoint.tann") == sha(tmp_path / "b" / "checkpoint.tann")


def test_eval_checkpoint_matches_end_of_train(tmp_path, dataset):
    assert train(dataset, tmp_path / "run") == 0
    assert main(["eval", "--checkpoint", str(tmp_path / "run" / "checkpoint.tann"), "--out", str(tmp_path / "ev")]) == 0
    a = json.loads((tmp_path / "run" / "metrics.json").read_text())["accuracy"]
    b = json.loads((tmp_path / "ev" / "metrics.json").read_text())["accuracy"]
    assert abs(a - b) <= 1e-12


def test_resume_equals_uninterrupted(tmp_path, dataset):
    assert train(dataset, tmp_path / "full", "--epochs", "3") == 0
    assert train(dataset, tmp_path / "part", "--epochs", "1") == 0
    assert train(dataset, tmp_path / "part", "--epochs", "3", "--resume") == 0
    assert sha(tmp_path / "full" / "checkpoint.tann") == sha(tmp_path / "part" / "checkpoint.tann")


def test_no_adversary_matches_r1(tmp_path, dataset):
    assert train(dataset, tmp_path / "a", "--alpha", "0", "--beta", "0") == 0
    assert train(dataset, tmp_path / "b", "--variant", "r1") == 0
    pa = load_checkpoint(tmp_path / "a" / "checkpoint.tann").net.params
    pb = load_checkpoint(tmp_path / "b" / "checkpoint.tann").net.params
    for k in pa:
        assert np.array_equal(pa[k], pb[k]), k


def test_resolved_config_reproduces_run(tmp_path, dataset):
    assert train(dataset, tmp_path / "a", "--seed", "4", "--lr", "0.01") == 0
    cfg = tmp_path / "a" / "config.json"
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert sha(tmp_path / "a" / "checkpoint.tann") == sha(tmp_path / "b" / "checkpoint.tann")


def test_yaml_config_with_flag_override(tmp_path, dataset):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(f"data: {dataset}\ntrain:\n  epochs: 1\n  beta: 0.2\nmodel:\n  d_f: 4\n  d_out: 4\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--beta", "0.05"]) == 0
    resolved = json.loads((tmp_path / "r" / "config.json").read_text())
    assert resolved["train"]["epochs"] == 1 and resolved["train"]["beta"] == 0.05
    assert resolved["model"]["d_f"] == 4


def test_ablate_row_count(tmp_path, dataset):
    rc = main(["ablate", "--data", str(dataset), "--out", str(tmp_path), "--variants", "full,r1,r2,r3",
               "--seeds", "5", "--epochs", "1", "--max-folds", "1", *SMALL])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "ablation.csv")))
    assert len(rows) == 20
    assert {(r["variant"], r["seed"]) for r in rows} == {(v, str(s)) for v in ("full", "r1", "r2", "r3")
                                                         for s in range(5)}


def test_protocol_eval_writes_per_fold_files(tmp_path, dataset):
    rc = main(["eval", "--data", str(dataset), "--out", str(tmp_path), "--epochs", "1", *SMALL])
    assert rc == 0
    folds = list(csv.DictReader(open(tmp_path / "folds.csv")))
    assert [f["subject"] for f in folds] == ["S01", "S02", "S03"]
    assert len(list(tmp_path.glob("fold_*_history.csv"))) == 3
    summary = json.loads((tmp_path / "summary.json").read_text())
    acc = np.array([float(f["accuracy"]) for f in folds])
    assert summary["mean"] == acc.mean() and summary["std"] == acc.std()


def test_attmap_exports(tmp_path, dataset):
    assert train(dataset, tmp_path / "run", "--epochs", "1") == 0
    rc = main(["attmap", "--checkpoint", str(tmp_path / "run" / "checkpoint.tann"), "--out", str(tmp_path / "m")])
    assert rc == 0
    rows = list(csv.DictReader(open(tmp_path / "m" / "region_map.csv")))
    assert len(rows) == 16
    assert (tmp_path / "m" / "attention.csv").exists() and (tmp_path / "m" / "global_attention.csv").exists()


def test_gradcheck_reports_every_tensor_once(capsys):
    assert main(["gradcheck"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    names = [ln.split()[0] for ln in lines]
    assert sorted(names) == sorted(toy_setup()[0].params)
    assert all(ln.endswith("ok") for ln in lines)


def test_gradcheck_fault_injection():
    assert main(["gradcheck", "--corrupt", "local.01.W2"]) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_exit_codes(tmp_path, dataset):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--nope"])
    assert exc.value.code == 1
    assert main(["train", "--data", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    assert train(dataset, tmp_path / "bad", "--epochs", "0") == 2
    one = tmp_path / "one"
    assert main(["synth", "--out", str(one), "--subjects", "1", "--samples", "2"]) == 0
    # LOSO with a single subject is rejected before training
    assert main(["train", "--data", str(one / "manifest.json"), "--out", str(tmp_path / "r")]) == 1
    assert train(dataset, tmp_path / "nan", "--lr", "1e9", "--no-clip", "--epochs", "30") == 3


def test_inputs_not_mutated(tmp_path, dataset):
    before = {p.name: sha(p) for p in dataset.parent.iterdir()}
    assert train(dataset, tmp_path / "r", "--epochs", "1") == 0
    assert {p.name: sha(p) for p in dataset.parent.iterdir()} == before
