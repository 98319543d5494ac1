import json
import math

import numpy as np
import pytest

import coffe


def test_chernoff_and_losses():
    assert coffe.chernoff_distance([0.25] * 4, [0.25] * 4, 0.3) == pytest.approx(0.0, abs=1e-15)
    p, q = [0.8, 0.2], [0.5, 0.5]
    oracle = -math.log(sum(a**0.3 * b**0.7 for a, b in zip(p, q)))
    assert coffe.chernoff_distance(p, q, 0.3) == pytest.approx(oracle, abs=1e-12)
    assert coffe.total_loss(2.0, 0.5, 0.1) == pytest.approx(2.05)
    with pytest.raises(coffe.UsageError):
        coffe.chernoff_distance(p, q, 1.0)
    with pytest.raises(coffe.DimensionError):
        coffe.chernoff_distance([1.0], q, 0.3)


def test_metrics():
    assert coffe.accuracy([0, 1, 2, 3], [0, 1, 2, 0]) == 0.75
    assert coffe.macro_f1([0, 1, 1, 1], [0, 0, 1, 1], 2) == pytest.approx(0.7333333333333334)
    assert coffe.confusion_matrix([1, 1], [0, 1], 2) == [[0, 1], [0, 1]]
    assert coffe.equal_error_rate([0.9, 0.8, 0.7, 0.4], [0.6, 0.3, 0.2, 0.1]) == 0.25

    scores = np.full((4, 8), 0.01)
    labels = [0, 1, 2, 3]
    for i, c in enumerate(labels):
        scores[i, c] = 0.93
    avg, per_class = coffe.eer_one_vs_all(scores, labels)
    assert avg == 0.0
    assert all(math.isnan(v) for v in per_class[4:])
    report = json.loads(coffe.compute_metrics(scores, labels))
    assert report["accuracy"] == 1.0
    assert report["eer_per_class"][7] is None


def test_embedding_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = coffe.EmbeddingDataset(
        rng.normal(size=(5, 6)).astype(np.float32), [0, 1, 2, 7, 7], "toy", sample_ids=list("abcde")
    )
    assert len(ds) == 5 and ds.dim == 6
    path = tmp_path / "toy.emb"
    coffe.write_embedding_file(ds, path)
    back = coffe.read_embedding_file(path)
    assert back == ds
    assert np.array_equal(back.vectors, ds.vectors)
    assert coffe.EmbeddingDataset.from_bytes(ds.to_bytes()) == ds
    with pytest.raises(coffe.FormatError):
        coffe.EmbeddingDataset.from_bytes(b"XEMB" + ds.to_bytes()[4:])
    with pytest.raises(coffe.ValidationError):
        coffe.EmbeddingDataset(np.zeros((2, 3), np.float32), [0, 9])


def test_train_evaluate_and_model_io(tmp_path):
    data = coffe.synth_dataset(16, 12, spread=3.0, seed=3)
    model, report_json = coffe.train("coffe", data["train_a"], data["train_b"], epochs=3, seed=7)
    report = json.loads(report_json)
    assert report["config"]["lambda"] == 0.1
    assert 1 <= report["best_epoch"] <= report["stopped_epoch"] <= 3
    probs = model.predict_proba(data["test_a"], data["test_b"])
    assert probs.shape == (len(data["test_a"]), 8)
    assert np.allclose(probs.sum(axis=1), 1.0)

    path = tmp_path / "m.cfm"
    model.save(path)
    again = coffe.Model.load(path)
    assert again.to_bytes() == model.to_bytes()
    assert again.evaluate(data["test_a"], data["test_b"]) == model.evaluate(data["test_a"], data["test_b"])
    with pytest.raises(coffe.UsageError):
        coffe.train("cnn", data["train_a"], bogus=1)


def test_parameter_budget_and_cli(tmp_path):
    assert 3_000_000 <= coffe.parameter_count("coffe", 1024, 768) <= 8_000_000
    code, out, err = coffe.run_cli(["synth", "--dim", "16", "--per-class", "5", "--out-prefix", str(tmp_path / "d")])
    assert code == 0 and err == ""
    assert (tmp_path / "d.train.a.emb").exists()
    code, _, err = coffe.run_cli(["train", "--bogus"])
    assert code == 2 and err.startswith("error: usage:")
