"""Seeded momentum-SGD training of the full adversarial objective."""
from __future__ import annotations

import csv
import io
import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attention_local import SOURCE, TARGET
from .files import atomic_write
from .mathkernel import NumericalError, make_rng
from .model import LossWeights, ModelConfig, Network
from .montage import Montage, parse_montage

HISTORY_COLUMNS = ("epoch", "L_c", "L_e", "L_local_d", "L_global_d", "train_acc", "domain_acc", "lr")


@dataclass
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.1
    learning_rate: float = 0.003
    momentum: float = 0.9
    lr_decay: float = 0.95
    batch_size: int = 200
    epochs: int = 100
    seed: int = 0
    variant: str = "full"
    clip_norm: float | None = 10.0
    batch_mode: str = "balanced"
    force_local_zero: bool = False
    detach_discriminators: bool = False

    def validate(self) -> None:
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_mode not in BATCH_MODES:
            raise ValueError(f"batch_mode must be one of {BATCH_MODES}")
        LossWeights.resolve(self.variant)

    def loss_weights(self) -> LossWeights:
        return LossWeights.resolve(self.variant, self.alpha, self.beta,
                                   self.force_local_zero, self.detach_discriminators)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class StepReport:
    losses: dict
    grad_norm: float
    clipped: bool
    lr: float
    train_correct: int
    n_source: int
    domain_correct: tuple[int, int]  # (source rows called source, target rows called target)
    domain_counts: tuple[int, int]


class Optimizer:
    """Classical momentum SGD: ``v <- mu*v + g``; ``theta <- theta - lr*v``."""

    def __init__(self, params: dict[str, np.ndarray], momentum: float):
        self.momentum = momentum
        self.buffers = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for k, g in grads.items():
            buf = self.buffers[k]
            buf *= self.momentum
            buf += g
            params[k] -= lr * buf


def clip_grads(grads: dict[str, np.ndarray], max_norm: float | None) -> tuple[float, bool]:
    norm = float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values())))
    if max_norm is None or norm <= max_norm:
        return norm, False
    scale = max_norm / norm
    for g in grads.values():
        g *= scale
    return norm, True


def train_step(net: Network, opt: Optimizer, X, labels, domains, cfg: TrainConfig, lr: float) -> StepReport:
    lw = cfg.loss_weights()
    losses, grads, fw = net.loss_and_grads(X, labels, domains, lw)
    norm, clipped = clip_grads(grads, cfg.clip_norm)
    opt.step(net.params, grads, lr)
    src = domains == SOURCE
    pred = fw.probs.argmax(axis=1)
    dpred = fw.global_att.probs.argmax(axis=1)
    return StepReport(
        losses, norm, clipped, lr,
        int((pred[src] == labels[src]).sum()), int(src.sum()),
        (int((dpred[src] == SOURCE).sum()), int((dpred[~src] == TARGET).sum())),
        (int(src.sum()), int((~src).sum())),
    )


BATCH_MODES = ("balanced", "proportional")


def make_batches(rng: np.random.Generator, n_source: int, n_target: int, batch_size: int,
                 mode: str = "balanced"):
    """Shuffled (source_idx, target_idx) batches for one epoch.

    ``balanced``: every source sample once, half of each batch; the other
    half is target samples drawn from a reshuffled, cycled target stream.
    ``proportional``: both partitions once, split across batches in
    proportion to their sizes, at least one sample of each per batch.
    """
    if n_source == 0 or n_target == 0:
        raise ValueError("both source and target partitions must be non-empty")
    if mode == "balanced":
        half = max(1, batch_size // 2)
        n_batches = -(-n_source // half)
        ps = rng.permutation(n_source)
        reps = -(-n_batches * half // n_target)
        pt = np.concatenate([rng.permutation(n_target) for _ in range(reps)])
        out = []
        for j in range(n_batches):
            s = ps[j * half:(j + 1) * half]
            out.append((s, pt[j * half:j * half + len(s)]))
        return out
    n_batches = max(1, -(-(n_source + n_target) // batch_size))
    ps = rng.permutation(n_source)
    pt = rng.permutation(n_target)
    src_chunks = np.array_split(ps, n_batches)
    tgt_chunks = np.array_split(pt, n_batches)
    out = []
    for j in range(n_batches):
        s = src_chunks[j] if len(src_chunks[j]) else ps[[j % n_source]]
        t = tgt_chunks[j] if len(tgt_chunks[j]) else pt[[j % n_target]]
        out.append((s, t))
    return out


@dataclass
class TrainedModel:
    net: Network
    train_cfg: TrainConfig
    history: list[dict] = field(default_factory=list)
    optimizer: Optimizer | None = None
    epochs_done: int = 0

    @property
    def model_cfg(self) -> ModelConfig:
        return self.net.cfg


def fit(source_X, source_labels, target_X, montage: Montage, model_cfg: ModelConfig, cfg: TrainConfig,
        resume: TrainedModel | None = None, on_epoch=None) -> TrainedModel:
    """Train on labelled source and unlabelled target samples.

    Parameter initialisation and batch shuffling draw from independent
    streams derived from ``cfg.seed``.
    """
    cfg.validate()
    source_X = np.asarray(source_X, dtype=np.float64)
    target_X = np.asarray(target_X, dtype=np.float64)
    source_labels = np.asarray(source_labels, dtype=np.intp)
    if len(source_X) == 0 or len(target_X) == 0:
        raise ValueError("empty source or target partition")
    if resume is None:
        net = Network(montage, model_cfg, seed=cfg.seed)
        model = TrainedModel(net, cfg, [], Optimizer(net.params, cfg.momentum), 0)
    else:
        model = resume
        net = model.net
    shuffle_rng = make_rng(cfg.seed ^ 0x5EED5EED)
    # replay the shuffle stream so a resumed run continues the same sequence
    for _ in range(model.epochs_done):
        make_batches(shuffle_rng, len(source_X), len(target_X), cfg.batch_size, cfg.batch_mode)
    for epoch in range(model.epochs_done, cfg.epochs):
        lr = cfg.learning_rate * cfg.lr_decay ** epoch
        sums = dict.fromkeys(("L_c", "L_e", "L_local_d", "L_global_d"), 0.0)
        correct = total = 0
        dom_ok = [0, 0]
        dom_n = [0, 0]
        batches = make_batches(shuffle_rng, len(source_X), len(target_X), cfg.batch_size, cfg.batch_mode)
        for s_idx, t_idx in batches:
            X = np.concatenate([source_X[s_idx], target_X[t_idx]])
            labels = np.concatenate([source_labels[s_idx], np.full(len(t_idx), -1, dtype=np.intp)])
            domains = np.concatenate([np.zeros(len(s_idx), dtype=np.intp), np.ones(len(t_idx), dtype=np.intp)])
            rep = train_step(net, model.optimizer, X, labels, domains, cfg, lr)
            for k in sums:
                sums[k] += rep.losses[k]
            correct += rep.train_correct
            total += rep.n_source
            for i in range(2):
                dom_ok[i] += rep.domain_correct[i]
                dom_n[i] += rep.domain_counts[i]
        nb = len(batches)
        row = {"epoch": epoch + 1, **{k: v / nb for k, v in sums.items()},
               "train_acc": correct / total,
               "domain_acc": 0.5 * (dom_ok[0] / dom_n[0] + dom_ok[1] / dom_n[1]),
               "lr": lr}
        if not all(np.isfinite(v) for v in row.values()):
            raise NumericalError(f"non-finite history entry at epoch {epoch + 1}")
        model.history.append(row)
        model.epochs_done = epoch + 1
        if on_epoch is not None:
            on_epoch(model)
    return model


# --- history and checkpoints -------------------------------------------------

def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_COLUMNS)
    for row in history:
        w.writerow([row["epoch"]] + [repr(float(row[k])) for k in HISTORY_COLUMNS[1:]])
    return buf.getvalue()


def read_history_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: (int(v) if k == "epoch" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


CKPT_MAGIC = b"TANNCKPT"
CKPT_VERSION = 1


def montage_text(m: Montage) -> str:
    region_of = {}
    for name, members in zip(m.region_names, m.regions):
        for i in members:
            region_of[i] = name
    return "\n".join(f"{m.names[i]} {m.rows[i]} {m.cols[i]} {region_of[i]}" for i in range(m.n)) + "\n"


def save_checkpoint(model: TrainedModel) -> bytes:
    """Serialise a model.

    Layout (little-endian): magic ``TANNCKPT``; u32 version; u64 length +
    UTF-8 JSON header (configs, epochs done, history, montage); u32 tensor
    count; per tensor: u32 name length, name, u32 ndim, ndim x u64 shape,
    float64 data (row-major). Momentum buffers follow the parameters under
    the ``momentum/`` prefix.
    """
    net = model.net
    header = {
        "model_config": asdict(net.cfg),
        "train_config": asdict(model.train_cfg),
        "epochs_done": model.epochs_done,
        "history": model.history,
        "montage": montage_text(net.montage),
        "region_order": list(net.montage.region_names),
    }
    tensors = dict(net.params)
    if model.optimizer is not None:
        tensors.update({f"momentum/{k}": v for k, v in model.optimizer.buffers.items()})
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(hbytes)), hbytes, struct.pack("<I", len(tensors))]
    for name, arr in tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(data: bytes | str | Path) -> TrainedModel:
    if not isinstance(data, bytes):
        data = Path(data).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<IQ", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 20
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * size
    parsed = parse_montage(header["montage"], expected_n=None, expected_regions=None)
    order = [parsed.region_names.index(r) for r in header["region_order"]]
    montage = Montage(parsed.names, parsed.rows, parsed.cols, tuple(header["region_order"]),
                      tuple(parsed.regions[i] for i in order))
    params = {k: v for k, v in tensors.items() if not k.startswith("momentum/")}
    net = Network(montage, ModelConfig(**header["model_config"]), params=params)
    cfg = TrainConfig.from_dict(header["train_config"])
    opt = Optimizer(params, cfg.momentum)
    for k in params:
        if f"momentum/{k}" in tensors:
            opt.buffers[k] = tensors[f"momentum/{k}"].copy()
    return TrainedModel(net, cfg, header["history"], opt, header["epochs_done"])
