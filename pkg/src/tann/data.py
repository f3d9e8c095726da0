"""Feature datasets: binary container I/O, manifests, protocol splits, and a
seeded synthetic multi-subject generator with planted region-level signal.

Feature container (one file per subject, little-endian)::

    8 bytes   magic  b"TANNFEAT"
    u32       format version (1)
    u32       d      (feature rows per electrode)
    u32       n      (electrodes)
    u32       T      (trial count)
    T x u32   samples in each trial
    float64[] samples, each a row-major d x n matrix, trials in order

The manifest is JSON::

    {"name": str, "d": int, "n": int, "n_classes": int,
     "subjects": [{"id": str, "file": str,
                   "trials": [{"id": str, "label": int, "session": int}, ...]}, ...],
     "planted_regions": [str, ...]        # synthetic data only
     "generator": {...}}                  # synthetic data only

File paths are relative to the manifest's directory.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .files import atomic_write
from .mathkernel import make_rng
from .montage import Montage, load_montage

MAGIC = b"TANNFEAT"
VERSION = 1

# trials per session used for training / testing in subject-dependent runs
SUBJECT_DEPENDENT_RULES = {"seed": (9, 6), "seed-iv": (16, 8), "mped": (21, 7)}
DATASET_CLASS_COUNTS = {"seed": 3, "seed-iv": 4, "mped": 7}


class DatasetError(ValueError):
    pass


class LabelAccessError(RuntimeError):
    """Raised when training code asks for target-domain labels."""


@dataclass
class Dataset:
    name: str
    n_classes: int
    X: np.ndarray            # (M, d, n)
    labels: np.ndarray       # (M,)
    subjects: np.ndarray     # (M,) subject id per sample
    trials: np.ndarray       # (M,) trial id per sample
    sessions: np.ndarray     # (M,)
    trial_index: np.ndarray  # (M,) 0-based trial position within its session
    planted_regions: list[str] = field(default_factory=list)
    generator: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[2]

    def subject_ids(self) -> list[str]:
        seen = dict.fromkeys(self.subjects.tolist())
        return list(seen)

    def select(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.name, self.n_classes, self.X[mask], self.labels[mask], self.subjects[mask],
                       self.trials[mask], self.sessions[mask], self.trial_index[mask],
                       list(self.planted_regions), dict(self.generator))


class Partition:
    """One side of a split. Target partitions hide their labels from training code."""

    def __init__(self, ds: Dataset, labelled: bool):
        self._ds = ds
        self.labelled = labelled

    def __len__(self) -> int:
        return len(self._ds.X)

    @property
    def X(self) -> np.ndarray:
        return self._ds.X

    @property
    def subjects(self) -> np.ndarray:
        return self._ds.subjects

    @property
    def trials(self) -> np.ndarray:
        return self._ds.trials

    @property
    def labels(self) -> np.ndarray:
        if not self.labelled:
            raise LabelAccessError("target-domain labels are only available via evaluation_labels()")
        return self._ds.labels

    def evaluation_labels(self) -> np.ndarray:
        return self._ds.labels

    @property
    def n_classes(self) -> int:
        return self._ds.n_classes


@dataclass
class Split:
    source: Partition
    target: Partition
    name: str = ""


# --- container I/O -----------------------------------------------------------

def write_features(path: str | Path, trials: list[np.ndarray]) -> None:
    """Write a list of per-trial arrays, each (samples, d, n)."""
    if not trials:
        raise DatasetError("no trials to write")
    d, n = trials[0].shape[1:]
    header = MAGIC + struct.pack("<4I", VERSION, d, n, len(trials))
    header += struct.pack(f"<{len(trials)}I", *(len(t) for t in trials))
    body = np.concatenate([np.asarray(t, dtype="<f8") for t in trials]).tobytes()
    atomic_write(path, header + body)


def read_features(path: str | Path) -> tuple[list[np.ndarray], int, int]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DatasetError(f"cannot read feature file {path}: {exc}") from None
    if raw[:8] != MAGIC:
        raise DatasetError(f"{path}: not a feature container (bad magic)")
    version, d, n, T = struct.unpack_from("<4I", raw, 8)
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported container version {version}")
    counts = struct.unpack_from(f"<{T}I", raw, 24)
    offset = 24 + 4 * T
    total = sum(counts)
    if len(raw) - offset != total * d * n * 8:
        raise DatasetError(f"{path}: payload size does not match header (d={d}, n={n}, samples={total})")
    data = np.frombuffer(raw, dtype="<f8", offset=offset).astype(np.float64).reshape(total, d, n)
    out, start = [], 0
    for c in counts:
        out.append(data[start:start + c])
        start += c
    return out, d, n


def write_dataset(ds: Dataset, directory: str | Path, manifest_name: str = "manifest.json") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    subjects = []
    for sid in ds.subject_ids():
        sel = ds.subjects == sid
        trial_ids = list(dict.fromkeys(ds.trials[sel].tolist()))
        blocks, tinfo = [], []
        for tid in trial_ids:
            m = sel & (ds.trials == tid)
            blocks.append(ds.X[m])
            tinfo.append({"id": tid, "label": int(ds.labels[m][0]), "session": int(ds.sessions[m][0])})
        fname = f"{sid}.feat"
        write_features(directory / fname, blocks)
        subjects.append({"id": sid, "file": fname, "trials": tinfo})
    manifest = {"name": ds.name, "d": ds.d, "n": ds.n, "n_classes": ds.n_classes, "subjects": subjects}
    if ds.planted_regions:
        manifest["planted_regions"] = list(ds.planted_regions)
    if ds.generator:
        manifest["generator"] = ds.generator
    path = directory / manifest_name
    atomic_write(path, json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def load_dataset(manifest_path: str | Path, montage: Montage | None = None) -> Dataset:
    manifest_path = Path(manifest_path)
    try:
        man = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from None
    for key in ("name", "d", "n_classes", "subjects"):
        if key not in man:
            raise DatasetError(f"{manifest_path}: manifest missing field {key!r}")
    d = int(man["d"])
    n = int(man.get("n", montage.n if montage else 62))
    if montage is not None and montage.n != n:
        raise DatasetError(f"{manifest_path}: manifest n={n} but montage has {montage.n} electrodes")
    C = int(man["n_classes"])
    if C < 2:
        raise DatasetError(f"{manifest_path}: n_classes must be >= 2")
    Xs, labels, subj, trials, sessions, tidx = [], [], [], [], [], []
    for s in man["subjects"]:
        fpath = manifest_path.parent / s["file"]
        blocks, fd, fn = read_features(fpath)
        if fd != d or fn != n:
            raise DatasetError(f"{fpath}: feature shape d={fd}, n={fn} but manifest declares d={d}, n={n}")
        if len(blocks) != len(s["trials"]):
            raise DatasetError(f"{fpath}: {len(blocks)} trials in file, {len(s['trials'])} in manifest")
        per_session: dict[int, int] = {}
        for block, t in zip(blocks, s["trials"]):
            label = int(t["label"])
            if not 0 <= label < C:
                raise DatasetError(f"{fpath}: trial {t['id']} has label {label} outside [0, {C})")
            sess = int(t.get("session", 1))
            k = per_session.get(sess, 0)
            per_session[sess] = k + 1
            m = len(block)
            Xs.append(block)
            labels.append(np.full(m, label))
            subj.append(np.full(m, s["id"], dtype=object))
            trials.append(np.full(m, t["id"], dtype=object))
            sessions.append(np.full(m, sess))
            tidx.append(np.full(m, k))
    X = np.concatenate(Xs)
    if not np.all(np.isfinite(X)):
        raise DatasetError(f"{manifest_path}: non-finite feature values")
    return Dataset(man["name"], C, X, np.concatenate(labels), np.concatenate(subj).astype(str),
                   np.concatenate(trials).astype(str), np.concatenate(sessions), np.concatenate(tidx),
                   list(man.get("planted_regions", [])), dict(man.get("generator", {})))


# --- protocols -----------------------------------------------------------------

def split_subject_dependent(ds: Dataset, protocol: str, subject: str | None = None) -> Split | list[Split]:
    """Per-session trial split: the first k trials are source, the rest target.

    With ``subject`` given, returns that subject's split, otherwise one split
    per subject.
    """
    key = protocol.lower()
    if key not in SUBJECT_DEPENDENT_RULES:
        raise DatasetError(f"unknown protocol {protocol!r}; choose from {sorted(SUBJECT_DEPENDENT_RULES)}")
    n_train, n_test = SUBJECT_DEPENDENT_RULES[key]
    subjects = [subject] if subject is not None else ds.subject_ids()
    out = []
    for sid in subjects:
        sel = ds.subjects == sid
        if not np.any(sel):
            raise DatasetError(f"unknown subject {sid!r}")
        for sess in np.unique(ds.sessions[sel]):
            n_trials = len(np.unique(ds.trial_index[sel & (ds.sessions == sess)]))
            if n_trials < n_train + n_test:
                raise DatasetError(f"subject {sid} session {sess} has {n_trials} trials; "
                                   f"{protocol} needs {n_train + n_test}")
        src = sel & (ds.trial_index < n_train)
        tgt = sel & (ds.trial_index >= n_train) & (ds.trial_index < n_train + n_test)
        out.append(Split(Partition(ds.select(src), True), Partition(ds.select(tgt), False), sid))
    return out[0] if subject is not None else out


def split_loso(ds: Dataset) -> list[Split]:
    subjects = ds.subject_ids()
    if len(subjects) < 2:
        raise DatasetError("leave-one-subject-out needs at least two subjects")
    return [Split(Partition(ds.select(ds.subjects != s), True), Partition(ds.select(ds.subjects == s), False), s)
            for s in subjects]


# --- synthetic generator -------------------------------------------------------

@dataclass
class SynthConfig:
    subjects: int = 6
    trials_per_subject: int = 12
    samples_per_trial: int = 100
    n_classes: int = 4
    d: int = 5
    signal_bands: int = 3
    class_sep: float = 1.0
    shift: float = 1.0
    confound_scale: float = 1.0
    transferable_fraction: float = 0.25
    noise: float = 1.0
    trial_noise: float = 0.2
    region_equalization: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        for k in ("subjects", "trials_per_subject", "samples_per_trial", "d", "signal_bands"):
            if getattr(self, k) < 1:
                raise DatasetError(f"{k} must be >= 1")
        if self.signal_bands > self.d:
            raise DatasetError("signal_bands cannot exceed d")
        if self.n_classes < 2:
            raise DatasetError("n_classes must be >= 2")
        for k in ("class_sep", "shift", "confound_scale", "noise", "trial_noise"):
            if getattr(self, k) < 0:
                raise DatasetError(f"{k} must be >= 0")
        if self.region_equalization < 0:
            raise DatasetError("region_equalization must be >= 0")
        if not 0 < self.transferable_fraction <= 1:
            raise DatasetError("transferable_fraction must be in (0, 1]")


def generate_synthetic(cfg: SynthConfig, montage: Montage | None = None) -> Dataset:
    """Class-conditional Gaussian features with region- and band-level structure.

    The first ``signal_bands`` feature rows of the planted (transferable)
    regions carry class centroids shared by all subjects, distorted per
    subject by a gain and an offset of size ``shift``. The remaining rows of
    the other regions carry subject-specific confounds: a per-subject offset
    plus class-linked centroids drawn independently for every subject, so
    they separate classes within a subject but not across subjects. All other
    entries are noise. The structured parts are rescaled by
    (mean region size / region size) ** ``region_equalization``; 0.5 keeps a
    region's total signal energy independent of its electrode count. Trials add a small shared offset; samples add
    isotropic noise.
    """
    cfg.validate()
    montage = montage or load_montage()
    rng = make_rng(cfg.seed)
    n, d, C, k = montage.n, cfg.d, cfg.n_classes, cfg.signal_bands
    n_planted = max(1, int(round(cfg.transferable_fraction * montage.n_regions)))
    planted_ids = np.sort(rng.choice(montage.n_regions, size=n_planted, replace=False))
    planted = np.zeros(n, dtype=bool)
    for rid in planted_ids:
        planted[list(montage.regions[rid])] = True
    signal_mask = np.zeros((d, n), dtype=bool)
    signal_mask[:k, planted] = True
    confound_mask = np.zeros((d, n), dtype=bool)
    confound_mask[k:, ~planted] = True
    # offset the advantage large regions get from having more electrodes
    sizes = np.asarray(montage.region_sizes(), dtype=np.float64)
    scale = np.empty(n)
    for rid, members in enumerate(montage.regions):
        scale[list(members)] = (sizes.mean() / sizes[rid]) ** cfg.region_equalization
    signal_mask = signal_mask * scale
    confound_mask = confound_mask * scale

    centroids = rng.normal(size=(C, d, n)) * cfg.class_sep * signal_mask
    labels_per_trial = np.arange(cfg.trials_per_subject) % C
    Xs, labels, subj, trials = [], [], [], []
    for s in range(cfg.subjects):
        sid = f"S{s + 1:02d}"
        gain = 1.0 + cfg.shift * rng.uniform(-0.25, 0.25)
        offset = rng.normal(size=(d, n)) * cfg.shift * signal_mask
        confound = (rng.normal(size=(C, d, n)) + rng.normal(size=(1, d, n))) * cfg.confound_scale * confound_mask
        for t, label in enumerate(labels_per_trial):
            mean = gain * centroids[label] + offset + confound[label]
            mean = mean + rng.normal(size=(d, n)) * cfg.trial_noise
            Xs.append(mean + rng.normal(size=(cfg.samples_per_trial, d, n)) * cfg.noise)
            labels.append(np.full(cfg.samples_per_trial, label))
            subj.append(np.full(cfg.samples_per_trial, sid))
            trials.append(np.full(cfg.samples_per_trial, f"T{t + 1:02d}"))
    X = np.concatenate(Xs)
    M = len(X)
    tidx = np.tile(np.repeat(np.arange(cfg.trials_per_subject), cfg.samples_per_trial), cfg.subjects)
    return Dataset("synthetic", C, X, np.concatenate(labels), np.concatenate(subj).astype(str),
                   np.concatenate(trials).astype(str), np.ones(M, dtype=int), tidx,
                   [montage.region_names[i] for i in planted_ids], asdict(cfg))


def probe_accuracy(ds: Dataset, electrodes, held_out: str | None = None, seed: int = 0) -> float:
    """Held-out-subject accuracy of a logistic probe restricted to ``electrodes``."""
    from sklearn.linear_model import LogisticRegression

    held_out = held_out or ds.subject_ids()[-1]
    cols = np.asarray(electrodes)
    feats = ds.X[:, :, cols].reshape(len(ds.X), -1)
    train = ds.subjects != held_out
    model = LogisticRegression(max_iter=500, random_state=seed)
    model.fit(feats[train], ds.labels[train])
    return float(model.score(feats[~train], ds.labels[~train]))


def planted_probe_gap(ds: Dataset, montage: Montage | None = None) -> tuple[float, float]:
    """(planted-region probe accuracy, other-region probe accuracy) on the last subject."""
    montage = montage or load_montage()
    planted = [i for r in ds.planted_regions for i in montage.regions[montage.region_names.index(r)]]
    others = sorted(set(range(montage.n)) - set(planted))
    return probe_accuracy(ds, planted), probe_accuracy(ds, others)
