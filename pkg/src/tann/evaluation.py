"""Metrics, protocol runner, ablation harness, and attention-map export."""
from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .attention_global import GlobalAttention
from .attention_local import RegionAttention, SOURCE, TARGET
from .data import Dataset, Partition, Split, split_loso, split_subject_dependent
from .mathkernel import make_rng
from .model import VARIANTS, ModelConfig
from .montage import Montage
from .trainer import TrainConfig, TrainedModel, fit


def confusion_matrix(true, pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def accuracy_from_confusion(cm: np.ndarray) -> float:
    return float(np.trace(cm) / cm.sum())


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation."""
    v = np.asarray(values, dtype=np.float64)
    if np.all(v == v[0]):
        # identical folds: avoid round-off in the mean leaking into the STD
        return float(v[0]), 0.0
    return float(v.mean()), float(v.std())


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray
    probs: np.ndarray
    predicted: np.ndarray
    true: np.ndarray
    region_att: RegionAttention
    global_att: GlobalAttention
    sample_ids: list[str]


def evaluate(model: TrainedModel, target: Partition) -> EvalResult:
    if len(target) == 0:
        raise ValueError("empty evaluation set")
    lw = model.train_cfg.loss_weights()
    probs, pred, region_att, global_att = model.net.predict(target.X, lw)
    true = target.evaluation_labels()
    cm = confusion_matrix(true, pred, model.net.cfg.n_classes)
    ids = [f"{s}/{t}/{k}" for k, (s, t) in enumerate(zip(target.subjects, target.trials))]
    return EvalResult(accuracy_from_confusion(cm), cm, probs, pred, true, region_att, global_att, ids)


def domain_accuracy(model: TrainedModel, source_X, target_X) -> float:
    """Balanced accuracy of the global discriminator (0.5 = fully confused)."""
    lw = model.train_cfg.loss_weights()
    _, _, _, gs = model.net.predict(source_X, lw)
    _, _, _, gt = model.net.predict(target_X, lw)
    src_ok = np.mean(gs.probs.argmax(axis=1) == SOURCE)
    tgt_ok = np.mean(gt.probs.argmax(axis=1) == TARGET)
    return float(0.5 * (src_ok + tgt_ok))


def region_transferability_map(region_att: RegionAttention, montage: Montage) -> list[tuple[str, float]]:
    if region_att.weight.size == 0:
        raise ValueError("no attention records")
    means = region_att.weight.mean(axis=0)
    return list(zip(montage.region_names, means.tolist()))


def top_regions(region_map: list[tuple[str, float]], k: int) -> list[str]:
    ranked = sorted(region_map, key=lambda t: (-t[1], t[0]))
    return [name for name, _ in ranked[:k]]


# --- CSV exports ---------------------------------------------------------------

def _csv(rows, header) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def attention_csv(res: EvalResult, montage: Montage) -> str:
    ra = res.region_att
    rows = [(sid, montage.region_names[r], repr(ra.probs[k, r, 0]), repr(ra.probs[k, r, 1]),
             repr(ra.entropy[k, r]), repr(ra.weight[k, r]))
            for k, sid in enumerate(res.sample_ids) for r in range(montage.n_regions)]
    return _csv(rows, ("sample_id", "region_name", "d_s", "d_t", "entropy", "weight"))


def global_attention_csv(res: EvalResult) -> str:
    ga = res.global_att
    rows = [(sid, repr(ga.probs[k, 0]), repr(ga.probs[k, 1]), repr(ga.weight[k]))
            for k, sid in enumerate(res.sample_ids)]
    return _csv(rows, ("sample_id", "d_s", "d_t", "w"))


def predictions_csv(res: EvalResult) -> str:
    C = res.probs.shape[1]
    rows = [(sid, int(t), int(p), *map(repr, pr.tolist()))
            for sid, t, p, pr in zip(res.sample_ids, res.true, res.predicted, res.probs)]
    return _csv(rows, ("sample_id", "true_label", "predicted_label", *(f"p_{c}" for c in range(C))))


def confusion_csv(cm: np.ndarray, class_names=None) -> str:
    names = class_names or [str(c) for c in range(len(cm))]
    return _csv([(names[i], *cm[i].tolist()) for i in range(len(cm))], ("true\\pred", *names))


def region_map_csv(region_map) -> str:
    return _csv([(name, repr(v)) for name, v in region_map], ("region_name", "mean_weight"))


# --- protocols and ablations --------------------------------------------------

FOLD_COLUMNS = ("fold", "subject", "variant", "accuracy", "epochs", "seed")


@dataclass
class FoldResult:
    fold: int
    subject: str
    variant: str
    accuracy: float
    epochs: int
    seed: int
    domain_acc: float = float("nan")
    region_map: list = field(default_factory=list)
    confusion: np.ndarray | None = None
    history: list = field(default_factory=list)


@dataclass
class ProtocolResult:
    folds: list[FoldResult]

    @property
    def mean(self) -> float:
        return mean_std([f.accuracy for f in self.folds])[0]

    @property
    def std(self) -> float:
        return mean_std([f.accuracy for f in self.folds])[1]

    def csv(self) -> str:
        return _csv([(f.fold, f.subject, f.variant, repr(f.accuracy), f.epochs, f.seed) for f in self.folds],
                    FOLD_COLUMNS)


def make_splits(ds: Dataset, protocol: str) -> list[Split]:
    if protocol.lower() == "loso":
        return split_loso(ds)
    return split_subject_dependent(ds, protocol)


def _holdout(n: int, frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    k = int(round(frac * n)) if frac > 0 else 0
    k = min(k, n - 1)
    perm = rng.permutation(n)
    return np.sort(perm[k:]), np.sort(perm[:k])


def run_fold(args) -> FoldResult:
    fold, split, montage, model_cfg, cfg, domain_holdout = args
    rng = make_rng(cfg.seed + 7919 * (fold + 1))
    s_train, s_hold = _holdout(len(split.source), domain_holdout, rng)
    t_train, t_hold = _holdout(len(split.target), domain_holdout, rng)
    model = fit(split.source.X[s_train], split.source.labels[s_train], split.target.X[t_train],
                montage, model_cfg, cfg)
    res = evaluate(model, split.target)
    dacc = domain_accuracy(model, split.source.X[s_hold], split.target.X[t_hold]) if len(t_hold) else float("nan")
    return FoldResult(fold, split.name, cfg.variant, res.accuracy, cfg.epochs, cfg.seed, dacc,
                      region_transferability_map(res.region_att, montage), res.confusion, model.history)


def run_protocol(ds: Dataset, protocol: str, cfg: TrainConfig, model_cfg: ModelConfig, montage: Montage,
                 variant: str | None = None, jobs: int = 1, domain_holdout: float = 0.1,
                 folds: list[int] | None = None) -> ProtocolResult:
    """Train and evaluate one model per fold; aggregate mean and population STD.

    ``domain_holdout`` of each side is excluded from training and used only
    to measure the global discriminator's held-out balanced accuracy.
    """
    if variant is not None:
        cfg = replace(cfg, variant=variant)
    splits = make_splits(ds, protocol)
    idx = range(len(splits)) if folds is None else folds
    tasks = [(k, splits[k], montage, model_cfg, cfg, domain_holdout) for k in idx]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_fold, tasks))
    else:
        results = [run_fold(t) for t in tasks]
    return ProtocolResult(results)


def run_ablation(ds: Dataset, protocol: str, cfg: TrainConfig, model_cfg: ModelConfig, montage: Montage,
                 variants=VARIANTS, seeds=(0,), jobs: int = 1, **kwargs) -> list[ProtocolResult]:
    out = []
    for variant in variants:
        for seed in seeds:
            out.append(run_protocol(ds, protocol, replace(cfg, seed=seed), model_cfg, montage,
                                    variant=variant, jobs=jobs, **kwargs))
    return out
