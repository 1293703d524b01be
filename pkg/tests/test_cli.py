import csv
import hashlib
import json

import numpy as np
import pytest

from semsurprise.cli import main
from semsurprise.data import LabelHierarchy, load_embeddings, save_hierarchy, save_embeddings, EmbeddingSet
from semsurprise.diagnostics import manifold_report
from semsurprise.prototypes import load_bank
from semsurprise.trainer import TrainConfig, embed, initial_state, load_head
from semsurprise.data import load_hierarchy


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def tree_digests(d, skip=("manifest.json",)):
    return {p.name: digest(p) for p in sorted(d.iterdir()) if p.name not in skip}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["gen-data", "--out", str(root / "data"), "--seed", "7"]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "ck")]) == 0
    return root


def test_gen_data_outputs(workdir):
    names = sorted(p.name for p in (workdir / "data").iterdir())
    assert names == ["far_ood.semb", "hierarchy.hier", "id_test.semb", "manifest.json", "near_ood.semb", "train.semb"]
    manifest = json.loads((workdir / "data" / "manifest.json").read_text())
    assert manifest["seeds"] == {"data": 7}
    assert manifest["outputs"]["train.semb"] == digest(workdir / "data" / "train.semb")


def test_gen_data_deterministic(workdir, tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "again"), "--seed", "7"]) == 0
    assert tree_digests(tmp_path / "again") == tree_digests(workdir / "data")


def test_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["gen-data"])
    assert exc.value.code == 2


def test_train_deterministic(workdir, tmp_path):
    assert main(["train", "--data", str(workdir / "data"), "--out", str(tmp_path / "ck2")]) == 0
    assert tree_digests(tmp_path / "ck2") == tree_digests(workdir / "ck")


def test_zero_epochs_checkpoint_is_initialization(workdir, tmp_path):
    assert main(["train", "--data", str(workdir / "data"), "--out", str(tmp_path / "ck0"), "--epochs", "0"]) == 0
    h = load_hierarchy(workdir / "data" / "hierarchy.hier")
    data = load_embeddings(workdir / "data" / "train.semb", h)
    head0, bank0, _ = initial_state(data, h, TrainConfig(epochs=0))
    assert load_head(tmp_path / "ck0" / "head.bin") == head0
    assert load_bank(tmp_path / "ck0" / "bank.pbank", h) == bank0


def test_train_log_loss_decreases(workdir):
    rows = list(csv.DictReader(open(workdir / "ck" / "train_log.csv")))
    assert len(rows) == 30
    assert float(rows[-1]["total"]) < float(rows[0]["total"])


def test_train_config_errors(workdir, tmp_path):
    assert main(["train", "--data", str(workdir / "data"), "--out", str(tmp_path / "x"), "--set", "bogus=1"]) == 2
    assert main(["train", "--out", str(tmp_path / "x")]) == 2


def test_probe_outputs_and_determinism(workdir, tmp_path):
    files = [str(workdir / "data" / f"{n}.semb") for n in ("train", "id_test", "near_ood", "far_ood")]
    for out in ("p1", "p2"):
        assert main(["probe", "--checkpoint", str(workdir / "ck"), "--out", str(tmp_path / out), *files]) == 0
    assert tree_digests(tmp_path / "p1") == tree_digests(tmp_path / "p2")
    assert sorted(tree_digests(tmp_path / "p1")) == [
        "far_ood.ssv.csv", "id_test.ssv.csv", "near_ood.ssv.csv", "train.ssv.csv"]
    means = {}
    for name in ("id_test", "near_ood", "far_ood"):
        rows = list(csv.DictReader(open(tmp_path / "p1" / f"{name}.ssv.csv")))
        means[name] = np.mean([float(r["s_novel"]) for r in rows])
    train_novel = [float(r["s_novel"]) for r in csv.DictReader(open(tmp_path / "p1" / "train.ssv.csv"))]
    assert min(train_novel) < 0.2
    assert means["far_ood"] > means["near_ood"] > means["id_test"]


def test_probe_missing_checkpoint(tmp_path, workdir):
    assert main(["probe", "--checkpoint", str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                 str(workdir / "data" / "far_ood.semb")]) == 2


def test_diagnose_matches_library(workdir, tmp_path):
    args = ["diagnose", "--checkpoint", str(workdir / "ck"), "--embeddings", str(workdir / "data" / "id_test.semb")]
    assert main([*args, "--out", str(tmp_path / "d1")]) == 0
    assert main([*args, "--out", str(tmp_path / "d2")]) == 0
    assert tree_digests(tmp_path / "d1") == tree_digests(tmp_path / "d2")
    h = load_hierarchy(workdir / "ck" / "hierarchy.hier")
    z = embed(load_head(workdir / "ck" / "head.bin"), load_embeddings(workdir / "data" / "id_test.semb", h))
    rep = manifold_report(z.vectors, z.labels, h, load_bank(workdir / "ck" / "bank.pbank", h).prototypes)
    values = {r["metric"]: r["value"] for r in csv.DictReader(open(tmp_path / "d1" / "report.csv"))}
    assert float(values["compactness"]) == rep.compactness
    assert float(values["cohesion"]) == rep.cohesion
    assert float(values["separation"]) == rep.separation
    assert float(values["inter_super_angle_deg"]) == rep.inter_super_angle_deg


def test_diagnose_single_superclass(tmp_path, capsys):
    h = LabelHierarchy.from_pairs([("a", "A"), ("b", "A")])
    save_hierarchy(h, tmp_path / "h.hier")
    r = np.random.default_rng(0)
    X = r.standard_normal((20, 4))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    save_embeddings(EmbeddingSet(X, np.arange(20) % 2), tmp_path / "t.semb")
    assert main(["train", "--train", str(tmp_path / "t.semb"), "--hier", str(tmp_path / "h.hier"),
                 "--out", str(tmp_path / "ck"), "--epochs", "1"]) == 0
    code = main(["diagnose", "--checkpoint", str(tmp_path / "ck"), "--embeddings", str(tmp_path / "t.semb"),
                 "--out", str(tmp_path / "d")])
    assert code != 0
    assert "inter undefined" in capsys.readouterr().err


def _write_preds(path, true, pred):
    with open(path, "w") as fh:
        fh.write("true,pred\n")
        for t, p in zip(true, pred):
            fh.write(f"{t},{p}\n")


def _report_value(d, key):
    return {r["metric"]: r["value"] for r in csv.DictReader(open(d / "report.csv"))}[key]


def test_evaluate_injected(tmp_path):
    true = ["ID"] * 5 + ["Near"] * 3 + ["Far"] * 2
    _write_preds(tmp_path / "always.csv", true, ["ID"] * 10)
    _write_preds(tmp_path / "perfect.csv", true, true)
    assert main(["evaluate", "--predictions", str(tmp_path / "always.csv"), "--out", str(tmp_path / "a")]) == 0
    assert float(_report_value(tmp_path / "a", "nSR")) == 1.0
    assert main(["evaluate", "--predictions", str(tmp_path / "perfect.csv"), "--out", str(tmp_path / "p")]) == 0
    assert float(_report_value(tmp_path / "p", "nSR")) == 0.0
    assert "built-in default" in (tmp_path / "a" / "report.txt").read_text()


def test_evaluate_full_beats_single(workdir, tmp_path):
    files = [str(workdir / "data" / f"{n}.semb") for n in ("id_test", "near_ood", "far_ood")]
    assert main(["probe", "--checkpoint", str(workdir / "ck"), "--out", str(tmp_path / "ssv"), *files]) == 0
    ssv = [str(tmp_path / "ssv" / f"{n}.ssv.csv") for n in ("id_test", "near_ood", "far_ood")]
    scores = {}
    for comp in ("all", "conf", "novel", "ambig"):
        out = tmp_path / f"ev_{comp}"
        assert main(["evaluate", "--ssv", *ssv, "--components", comp, "--out", str(out)]) == 0
        scores[comp] = float(_report_value(out, "macro_F1"))
    assert all(scores["all"] > scores[c] for c in ("conf", "novel", "ambig"))
    again = tmp_path / "ev_again"
    assert main(["evaluate", "--ssv", *ssv, "--components", "all", "--out", str(again)]) == 0
    assert tree_digests(again) == tree_digests(tmp_path / "ev_all")


def test_evaluate_kmeans_and_binary(workdir, tmp_path):
    files = [str(workdir / "data" / f"{n}.semb") for n in ("id_test", "near_ood", "far_ood")]
    assert main(["probe", "--checkpoint", str(workdir / "ck"), "--out", str(tmp_path / "ssv"), *files]) == 0
    ssv = [str(tmp_path / "ssv" / f"{n}.ssv.csv") for n in ("id_test", "near_ood", "far_ood")]
    assert main(["evaluate", "--ssv", *ssv, "--classifier", "kmeans", "--binary-score", "novel",
                 "--out", str(tmp_path / "km")]) == 0
    auc = float(_report_value(tmp_path / "km", "AUROC_s_novel"))
    assert 0.5 < auc <= 1.0
