import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tann.attention_local import RegionAttention
from tann.data import Dataset, Partition, split_loso
from tann.evaluation import (accuracy_from_confusion, confusion_matrix, evaluate, mean_std, predictions_csv,
                             region_map_csv, region_transferability_map, run_protocol, top_regions, FoldResult,
                             ProtocolResult, attention_csv)
from tann.model import LossWeights, ModelConfig, Network
from tann.trainer import TrainConfig, TrainedModel

SMALL = ModelConfig(d=2, n_classes=3, d_f=3, d_out=3, n_proj=3, disc_hidden=4)


def tiny_dataset(n, subjects=2, per=6, seed=0):
    rng = np.random.default_rng(seed)
    M = subjects * per
    labels = np.tile(np.arange(3), M // 3 + 1)[:M]
    return Dataset("tiny", 3, rng.normal(size=(M, 2, n)), labels,
                   np.repeat([f"S{s}" for s in range(subjects)], per), np.array([f"T{k}" for k in range(M)]),
                   np.ones(M, dtype=int), np.zeros(M, dtype=int))


def constant_model(montage, cls=0):
    net = Network(montage, SMALL, seed=0)
    net.params["classifier.G"][:] = 0.0
    net.params["classifier.b_c"][:] = 0.0
    net.params["classifier.b_c"][cls] = 5.0
    return TrainedModel(net, TrainConfig(epochs=1))


def test_constant_prediction_accuracy(toy):
    ds = tiny_dataset(toy.n, subjects=1, per=9)
    res = evaluate(constant_model(toy), Partition(ds, False))
    assert res.accuracy == pytest.approx(1 / 3)
    assert np.count_nonzero(res.confusion.sum(axis=0)) == 1 and res.confusion[:, 0].sum() == 9


def test_perfect_predictions_diagonal():
    y = np.array([0, 1, 2, 2, 1, 0, 0])
    cm = confusion_matrix(y, y, 3)
    assert np.array_equal(cm, np.diag([3, 2, 2]))
    assert accuracy_from_confusion(cm) == 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=50))
def test_confusion_conservation(pairs):
    t, p = zip(*pairs)
    cm = confusion_matrix(t, p, 4)
    assert cm.sum() == len(pairs)
    assert 0 <= accuracy_from_confusion(cm) <= 1
    assert accuracy_from_confusion(cm) == pytest.approx(np.mean(np.array(t) == np.array(p)))


def test_empty_target_rejected(toy):
    ds = tiny_dataset(toy.n, subjects=1, per=3).select(np.zeros(3, dtype=bool))
    with pytest.raises(ValueError, match="empty"):
        evaluate(constant_model(toy), Partition(ds, False))


def test_std_of_identical_folds_is_zero():
    assert mean_std([0.7, 0.7, 0.7]) == (pytest.approx(0.7), 0.0)
    assert mean_std([0.0, 1.0])[1] == 0.5  # population STD


def test_protocol_rows_and_csv_recomputation(toy):
    ds = tiny_dataset(toy.n, subjects=3, per=6)
    res = run_protocol(ds, "loso", TrainConfig(epochs=1, batch_size=4), SMALL, toy, domain_holdout=0.2)
    assert len(res.folds) == 3
    rows = list(csv.DictReader(io.StringIO(res.csv())))
    assert [r["subject"] for r in rows] == ["S0", "S1", "S2"]
    acc = np.array([float(r["accuracy"]) for r in rows])
    assert res.mean == acc.mean() and res.std == acc.std()


def test_parallel_protocol_matches_serial(toy):
    ds = tiny_dataset(toy.n, subjects=2, per=6)
    cfg = TrainConfig(epochs=1, batch_size=4)
    a = run_protocol(ds, "loso", cfg, SMALL, toy, jobs=1)
    b = run_protocol(ds, "loso", cfg, SMALL, toy, jobs=2)
    assert a.csv() == b.csv()


def test_region_map_rows(montage62):
    ds = tiny_dataset(62, subjects=1, per=4)
    res = evaluate(constant_model(montage62), Partition(ds, False))
    rmap = region_transferability_map(res.region_att, montage62)
    assert [r for r, _ in rmap] == list(montage62.region_names) and len(rmap) == 16
    assert len(region_map_csv(rmap).strip().splitlines()) == 17
    assert len(attention_csv(res, montage62).strip().splitlines()) == 1 + 4 * 16


def test_uniform_weights_give_uniform_map(toy):
    R = toy.n_regions
    ra = RegionAttention(np.full((5, R, 2), 0.5), np.ones((5, R)), np.full((5, R), 0.25))
    rmap = region_transferability_map(ra, toy)
    assert {v for _, v in rmap} == {0.25}
    # ties broken by name
    assert top_regions(rmap, 2) == sorted(toy.region_names)[:2]


def test_predictions_csv_columns(toy):
    ds = tiny_dataset(toy.n, subjects=1, per=3)
    res = evaluate(constant_model(toy), Partition(ds, False))
    rows = list(csv.DictReader(io.StringIO(predictions_csv(res))))
    assert list(rows[0]) == ["sample_id", "true_label", "predicted_label", "p_0", "p_1", "p_2"]
    for r in rows:
        assert sum(float(r[f"p_{c}"]) for c in range(3)) == pytest.approx(1.0)


def test_r1_forward_equals_full_with_adversary_removed(toy):
    net = Network(toy, SMALL, seed=2)
    X = np.random.default_rng(0).normal(size=(5, 2, toy.n))
    r1 = net.forward(X, LossWeights.resolve("r1"))
    forced = net.forward(X, LossWeights.resolve("full", alpha=0.0, force_local_zero=True,
                                                detach_discriminators=True))
    assert np.array_equal(r1.probs, forced.probs)
    assert np.array_equal(r1.H_att, forced.H_att)
