import json
import subprocess
import sys

import pytest

from partshare.cli import main
from partshare.formats import ingest
from partshare.metrics import compute_accuracy
from partshare.model_io import load_model
from partshare.part_model import PartUniverse
from partshare.sampling import SamplerStrategy, attach_parts, train_shared


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    assert run("synth", "--preset", "planted", "--seed", 3, "--num-images", 30, "--num-test", 15,
               "--out", root / "planted") == 0
    assert run("synth", "--preset", "provenance", "--seed", 1, "--num-images", 40, "--num-test", 20,
               "--out", root / "prov") == 0
    return root


def test_synth_writes_both_splits(synth):
    d = synth / "planted"
    assert {p.name for p in d.iterdir()} >= {"train.json", "test.json", "synth.config.json"}
    assert len(ingest(d / "train.json").images) == 30
    assert len(ingest(d / "test.json").images) == 15


def test_train_predict_eval_match_library(synth, tmp_path, capsys):
    train_path, test_path = synth / "planted" / "train.json", synth / "planted" / "test.json"
    model_path = tmp_path / "m.zip"
    assert run("train", "--data", train_path, "--budget", 3, "--iters", 20, "--depth", 1,
               "--seed", 5, "--out", model_path) == 0
    assert (tmp_path / "m.zip.log.csv").exists()
    config = json.loads((tmp_path / "m.zip.config.json").read_text())
    assert config["command"] == "train" and config["parameters"]["budget"] == 3
    capsys.readouterr()
    assert run("eval", "--model", model_path, "--data", test_path, "--metric", "accuracy") == 0
    reported = json.loads(capsys.readouterr().out)

    # the same run through the library
    train, test = ingest(train_path), ingest(test_path)
    universe = PartUniverse.from_images(train.images)
    model = train_shared(universe.encode(train.images), train.labels, SamplerStrategy(), 3, 20, 1, 5)
    attach_parts(model, universe)
    pred = model.predict(model.lift(model.pool_responses(test.images)))
    assert reported == {"metric": "accuracy", "value": compute_accuracy(pred, test.labels)}

    loaded, _ = load_model(model_path)
    assert loaded.pool.selected == model.pool.selected

    assert run("predict", "--model", model_path, "--data", test_path, "--out", tmp_path / "p.csv") == 0
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0].startswith("image_id,predicted,score_cat0")
    assert len(rows) == 16


def test_training_is_byte_deterministic(synth, tmp_path):
    data = synth / "planted" / "train.json"
    for name in ("a.zip", "b.zip"):
        assert run("train", "--data", data, "--budget", 3, "--iters", 15, "--seed", 2,
                   "--out", tmp_path / name) == 0
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()
    assert (tmp_path / "a.zip.log.csv").read_bytes() == (tmp_path / "b.zip.log.csv").read_bytes()


def test_fuse_analyze_and_map(synth, tmp_path, capsys):
    train, test = synth / "prov" / "train.json", synth / "prov" / "test.json"
    model = tmp_path / "f.zip"
    assert run("fuse", "--data", train, "--budget", 8, "--iters", 15, "--global-iters", 10,
               "--out", model) == 0
    capsys.readouterr()
    assert run("eval", "--model", model, "--data", test, "--metric", "map") == 0
    result = json.loads(capsys.readouterr().out)
    assert result["metric"] == "map" and 0.0 <= result["value"] <= 1.0
    assert set(result["per_category"]) == {"cat0", "cat1", "cat2", "cat3"}
    hist, table = tmp_path / "h.csv", tmp_path / "t.csv"
    assert run("analyze", "--model", model, "--boxes", train, "--bins", 10, "--out", hist,
               "--table", table) == 0
    lines = hist.read_text().splitlines()
    assert lines[0] == "bin_low,bin_high,own,other,context,total" and len(lines) == 11
    # accuracy is undefined for multilabel data
    assert run("eval", "--model", model, "--data", test, "--metric", "accuracy") == 1


def test_exit_codes(synth, tmp_path, capsys):
    assert run("train", "--data", tmp_path / "missing.json", "--budget", 2) == 2
    assert "missing.json" in capsys.readouterr().err
    assert run("train", "--data", synth / "planted" / "train.json", "--budget", 0) == 1
    assert run("frobnicate") == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("train", "--data", bad, "--budget", 2) == 2
    assert run("eval", "--model", tmp_path / "nope.zip", "--data", synth / "planted" / "test.json") == 2
    # a model trained on other categories does not apply
    model = tmp_path / "m.zip"
    assert run("train", "--data", synth / "planted" / "train.json", "--budget", 2, "--iters", 3,
               "--out", model) == 0
    assert run("predict", "--model", model, "--data", synth / "prov" / "test.json",
               "--out", tmp_path / "p.csv") != 0


def test_data_path_from_stdin(synth, tmp_path):
    out = tmp_path / "piped.zip"
    proc = subprocess.run(
        [sys.executable, "-m", "partshare.cli", "train", "--data", "-", "--budget", "3", "--iters", "5",
         "--out", str(out)],
        input=str(synth / "planted" / "train.json") + "\n", capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
    assert "|P| =" in proc.stderr
