import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tann.data import (Dataset, DatasetError, LabelAccessError, SynthConfig, generate_synthetic, load_dataset,
                       planted_probe_gap, probe_accuracy, read_features, split_loso, split_subject_dependent,
                       write_dataset, write_features)
from tann.benchmark import BENCH_SYNTH

SEED_TRIAL_LENGTHS = [235, 233, 206, 238, 185, 195, 237, 216, 265, 237, 235, 233, 235, 238, 206]


def make_dataset(trial_lengths, subjects=1, d=2, n=8, n_classes=3, sessions=1, seed=0):
    rng = np.random.default_rng(seed)
    X, labels, subj, trials, sess, tidx = [], [], [], [], [], []
    for s in range(subjects):
        for ses in range(1, sessions + 1):
            for k, m in enumerate(trial_lengths):
                X.append(rng.normal(size=(m, d, n)))
                labels.append(np.full(m, k % n_classes))
                subj.append(np.full(m, f"S{s}"))
                trials.append(np.full(m, f"s{ses}t{k}"))
                sess.append(np.full(m, ses))
                tidx.append(np.full(m, k))
    cat = np.concatenate
    return Dataset("toy", n_classes, cat(X), cat(labels), cat(subj).astype(str), cat(trials).astype(str),
                   cat(sess), cat(tidx))


def test_feature_file_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    blocks = [rng.normal(size=(m, 5, 62)) for m in (3, 7, 1)]
    write_features(tmp_path / "a.feat", blocks)
    back, d, n = read_features(tmp_path / "a.feat")
    assert (d, n) == (5, 62)
    for a, b in zip(blocks, back):
        assert np.array_equal(a, b)


def test_manifest_round_trip_bitwise(tmp_path):
    ds = generate_synthetic(SynthConfig(subjects=2, trials_per_subject=4, samples_per_trial=5))
    back = load_dataset(write_dataset(ds, tmp_path))
    assert np.array_equal(back.X, ds.X)
    assert np.array_equal(back.labels, ds.labels)
    assert np.array_equal(back.subjects, ds.subjects)
    assert back.planted_regions == ds.planted_regions


def test_shape_mismatch_names_file(tmp_path):
    ds = make_dataset([4, 4], d=1, n=62)
    man = write_dataset(ds, tmp_path)
    meta = json.loads(man.read_text())
    meta["d"] = 5
    man.write_text(json.dumps(meta))
    with pytest.raises(DatasetError, match="S0.feat"):
        load_dataset(man)


def test_unreadable_and_bad_label(tmp_path):
    with pytest.raises(DatasetError, match="cannot read"):
        load_dataset(tmp_path / "missing.json")
    man = write_dataset(make_dataset([3, 3]), tmp_path)
    meta = json.loads(man.read_text())
    meta["subjects"][0]["trials"][0]["label"] = 9
    man.write_text(json.dumps(meta))
    with pytest.raises(DatasetError, match="label 9"):
        load_dataset(man)


def test_seed_conforming_sample_counts(tmp_path):
    ds = load_dataset(write_dataset(make_dataset(SEED_TRIAL_LENGTHS, d=5, n=62), tmp_path))
    sp = split_subject_dependent(ds, "seed", "S0")
    assert (len(sp.source), len(sp.target)) == (2010, 1384)


def test_seed_rule_trial_indices():
    ds = make_dataset([2] * 15)
    sp = split_subject_dependent(ds, "seed", "S0")
    assert sorted(set(sp.source.trials)) == sorted(f"s1t{k}" for k in range(9))
    assert sorted(set(sp.target.trials)) == sorted(f"s1t{k}" for k in range(9, 15))


@pytest.mark.parametrize("protocol,trials,expect", [("mped", 28, (21, 7)), ("seed-iv", 24, (16, 8)),
                                                    ("seed", 15, (9, 6))])
def test_subject_dependent_rules(protocol, trials, expect):
    ds = make_dataset([120] * trials)
    sp = split_subject_dependent(ds, protocol, "S0")
    assert (len(sp.source) // 120, len(sp.target) // 120) == expect


def test_mped_sample_counts():
    sp = split_subject_dependent(make_dataset([120] * 28), "mped", "S0")
    assert (len(sp.source), len(sp.target)) == (2520, 840)


def test_split_applies_per_session():
    ds = make_dataset([2] * 24, sessions=3)
    sp = split_subject_dependent(ds, "seed-iv", "S0")
    assert len(sp.source) == 3 * 16 * 2 and len(sp.target) == 3 * 8 * 2


def test_insufficient_trials_and_unknown_subject():
    ds = make_dataset([2] * 10)
    with pytest.raises(DatasetError, match="needs 15"):
        split_subject_dependent(ds, "seed", "S0")
    with pytest.raises(DatasetError, match="unknown subject"):
        split_subject_dependent(make_dataset([2] * 15), "seed", "S9")


@settings(max_examples=30, deadline=None)
@given(st.integers(15, 20), st.integers(1, 3))
def test_subject_dependent_split_is_partition(n_trials, subjects):
    ds = make_dataset([1] * n_trials, subjects=subjects)
    for sp in split_subject_dependent(ds, "seed"):
        src = {(s, t) for s, t in zip(sp.source.subjects, sp.source.trials)}
        tgt = {(s, t) for s, t in zip(sp.target.subjects, sp.target.trials)}
        assert not src & tgt
        assert len(src | tgt) == 15


def test_target_labels_gated():
    sp = split_subject_dependent(make_dataset([2] * 15), "seed", "S0")
    assert len(sp.source.labels) == len(sp.source)
    with pytest.raises(LabelAccessError):
        sp.target.labels
    assert len(sp.target.evaluation_labels()) == len(sp.target)


def test_loso_two_subjects():
    ds = make_dataset([2, 2], subjects=2)
    folds = split_loso(ds)
    assert [f.name for f in folds] == ["S0", "S1"]
    assert set(folds[0].source.subjects) == {"S1"} and set(folds[0].target.subjects) == {"S0"}
    assert set(folds[1].source.subjects) == {"S0"} and set(folds[1].target.subjects) == {"S1"}


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 15))
def test_loso_partition(k):
    folds = split_loso(make_dataset([1], subjects=k))
    assert len(folds) == k
    targets = [s for f in folds for s in set(f.target.subjects)]
    assert sorted(targets) == sorted(set(targets)) and len(targets) == k
    for f in folds:
        assert len(f.source) + len(f.target) == k


def test_loso_needs_two_subjects():
    with pytest.raises(DatasetError):
        split_loso(make_dataset([1]))


def test_synthetic_deterministic():
    a = generate_synthetic(SynthConfig(subjects=2, samples_per_trial=3, seed=4))
    b = generate_synthetic(SynthConfig(subjects=2, samples_per_trial=3, seed=4))
    assert np.array_equal(a.X, b.X) and a.planted_regions == b.planted_regions
    c = generate_synthetic(SynthConfig(subjects=2, samples_per_trial=3, seed=5))
    assert not np.array_equal(a.X, c.X)


def test_synthetic_planted_fraction(montage62):
    ds = generate_synthetic(SynthConfig(subjects=2, samples_per_trial=2))
    assert len(ds.planted_regions) == 4
    assert set(ds.planted_regions) <= set(montage62.region_names)


def test_degenerate_config_is_separable(montage62):
    ds = generate_synthetic(SynthConfig(subjects=3, samples_per_trial=10, shift=0.0, noise=0.0, trial_noise=0.0))
    from sklearn.linear_model import LogisticRegression
    planted = [i for r in ds.planted_regions for i in montage62.regions[montage62.region_names.index(r)]]
    feats = ds.X[:, :, planted].reshape(len(ds.X), -1)
    clf = LogisticRegression(max_iter=2000).fit(feats, ds.labels)
    assert clf.score(feats, ds.labels) == 1.0
    # no shift: every subject shares the planted-region class means
    assert probe_accuracy(ds, planted) == 1.0


def test_default_probe_gap(montage62):
    ds = generate_synthetic(BENCH_SYNTH, montage62)
    planted, other = planted_probe_gap(ds, montage62)
    assert planted - other >= 0.20


def test_synth_config_validation():
    with pytest.raises(DatasetError):
        SynthConfig(signal_bands=6).validate()
    with pytest.raises(DatasetError):
        SynthConfig(transferable_fraction=0).validate()
