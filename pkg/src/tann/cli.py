"""Command-line entry point.

Every command writes ``config.json`` (the fully resolved configuration) next
to its outputs; rerunning with ``--config <that file>`` reproduces the run.
Exit codes: 0 success, 1 usage, 2 validation, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, fields, replace
from pathlib import Path

import yaml

from . import __version__
from .benchmark import BENCH_SYNTH
from .data import DatasetError, SynthConfig, generate_synthetic, load_dataset, planted_probe_gap, write_dataset
from .evaluation import (FOLD_COLUMNS, attention_csv, confusion_csv, evaluate, global_attention_csv, make_splits,
                         mean_std, predictions_csv, region_map_csv, region_transferability_map, run_protocol)
from .files import atomic_write
from .gradcheck import check_gradients, report, toy_setup
from .mathkernel import NumericalError
from .model import VARIANTS, LossWeights, ModelConfig
from .montage import load_montage
from .trainer import TrainConfig, fit, history_csv, load_checkpoint, save_checkpoint

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2, 3
PROTOCOLS = ("seed", "seed-iv", "mped", "loso")
CHECKPOINT = "checkpoint.tann"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


# --- configuration ------------------------------------------------------------

def read_config(path) -> dict:
    if path is None:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    try:
        cfg = yaml.safe_load(text) if Path(path).suffix in (".yaml", ".yml") else json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"config {path} must be a mapping")
    return cfg


def _section(cls, base, overrides: dict, name: str):
    known = {f.name for f in fields(cls)}
    unknown = set(overrides) - known
    if unknown:
        raise UsageError(f"unknown {name} keys: {sorted(unknown)}")
    return replace(base, **overrides)


# flag name -> (section, field)
TRAIN_FLAGS = {"alpha": "alpha", "beta": "beta", "lr": "learning_rate", "momentum": "momentum",
               "lr_decay": "lr_decay", "batch_size": "batch_size", "epochs": "epochs", "variant": "variant",
               "clip_norm": "clip_norm", "batch_mode": "batch_mode"}
MODEL_FLAGS = {"d_f": "d_f", "d_out": "d_out", "n_proj": "n_proj", "disc_hidden": "disc_hidden"}
SYNTH_FLAGS = {"subjects": "subjects", "trials": "trials_per_subject", "samples": "samples_per_trial",
               "classes": "n_classes", "bands": "d", "noise": "noise", "shift": "shift"}


def _flag_overrides(args, mapping) -> dict:
    return {dst: getattr(args, src) for src, dst in mapping.items() if getattr(args, src, None) is not None}


def resolve(args) -> dict:
    """Merge config file and flags (flags win) into one plain dict."""
    cfg = read_config(args.config)
    out = {k: v for k, v in cfg.items() if k not in ("train", "model", "synth")}
    out["command"] = args.command
    for key in ("data", "protocol", "fold", "checkpoint", "montage", "jobs", "seed", "resume"):
        val = getattr(args, key, None)
        if val not in (None, False):
            out[key] = str(val) if isinstance(val, Path) else val
    out.setdefault("jobs", 1)
    out.setdefault("seed", 0)
    train = _section(TrainConfig, TrainConfig(), cfg.get("train", {}), "train")
    train = replace(train, seed=int(out["seed"]), **_flag_overrides(args, TRAIN_FLAGS))
    if getattr(args, "no_clip", False):
        train = replace(train, clip_norm=None)
    out["train"] = asdict(train)
    model = _section(ModelConfig, ModelConfig(), cfg.get("model", {}), "model")
    out["model"] = asdict(replace(model, **_flag_overrides(args, MODEL_FLAGS)))
    synth = _section(SynthConfig, BENCH_SYNTH, cfg.get("synth", {}), "synth")
    out["synth"] = asdict(replace(synth, seed=int(out["seed"]), **_flag_overrides(args, SYNTH_FLAGS)))
    if getattr(args, "variants", None):
        out["variants"] = args.variants.split(",")
    if getattr(args, "seeds", None) is not None:
        out["seeds"] = args.seeds
    if getattr(args, "max_folds", None) is not None:
        out["max_folds"] = args.max_folds
    return out


def persist(out_dir: Path, resolved: dict) -> None:
    atomic_write(out_dir / "config.json", json.dumps(resolved, indent=1, sort_keys=True) + "\n")


def _montage(resolved):
    return load_montage(resolved.get("montage"))


def _train_cfg(resolved) -> TrainConfig:
    cfg = TrainConfig(**resolved["train"])
    try:
        cfg.validate()
    except ValueError as exc:
        raise DatasetError(f"invalid training config: {exc}") from None
    return cfg


def _model_cfg(resolved, ds, montage) -> ModelConfig:
    cfg = replace(ModelConfig(**resolved["model"]), d=ds.d, n_classes=ds.n_classes)
    if ds.n != montage.n:
        raise DatasetError(f"dataset has {ds.n} electrodes, montage has {montage.n}")
    if not 1 <= cfg.n_proj <= montage.n:
        raise UsageError(f"n_proj={cfg.n_proj} must be in [1, {montage.n}]")
    return cfg


def _dataset_and_splits(resolved, montage):
    if "data" not in resolved:
        raise UsageError("--data (manifest path) is required")
    protocol = resolved.get("protocol", "loso")
    if protocol not in PROTOCOLS:
        raise UsageError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    ds = load_dataset(resolved["data"], montage)
    try:
        splits = make_splits(ds, protocol)
    except DatasetError as exc:
        # protocol/dataset conflicts are caught before any training
        raise UsageError(str(exc)) from None
    return ds, splits


def _pick_split(splits, fold):
    if fold is None:
        return splits[0]
    for sp in splits:
        if sp.name == str(fold):
            return sp
    raise UsageError(f"fold {fold!r} not found; available: {[sp.name for sp in splits]}")


def _write_eval(out_dir: Path, res, montage) -> dict:
    metrics = {"accuracy": res.accuracy, "n_samples": int(len(res.true))}
    atomic_write(out_dir / "metrics.json", json.dumps(metrics, indent=1) + "\n")
    atomic_write(out_dir / "predictions.csv", predictions_csv(res))
    atomic_write(out_dir / "confusion.csv", confusion_csv(res.confusion))
    return metrics


# --- commands -----------------------------------------------------------------

def cmd_synth(args, resolved) -> int:
    out = Path(args.out)
    cfg = SynthConfig(**resolved["synth"])
    montage = _montage(resolved)
    ds = generate_synthetic(cfg, montage)
    probe = ""
    if cfg.subjects > 1:
        # self-test: held-out-subject probe on planted vs other regions
        planted, other = planted_probe_gap(ds, montage)
        ds.generator["probe_planted"] = planted
        ds.generator["probe_other"] = other
        probe = f"; probe planted={planted:.3f} other={other:.3f}"
    write_dataset(ds, out)
    persist(out, resolved)
    log(f"wrote {len(ds.X)} samples from {len(ds.subject_ids())} subjects to {out}; "
        f"planted regions {ds.planted_regions}{probe}")
    return EXIT_OK


def cmd_train(args, resolved) -> int:
    out = Path(args.out)
    montage = _montage(resolved)
    ds, splits = _dataset_and_splits(resolved, montage)
    split = _pick_split(splits, resolved.get("fold"))
    resolved["fold"] = split.name
    model_cfg = _model_cfg(resolved, ds, montage)
    cfg = _train_cfg(resolved)
    resume = None
    ckpt = out / CHECKPOINT
    if resolved.get("resume"):
        if not ckpt.exists():
            raise UsageError(f"--resume given but {ckpt} does not exist")
        resume = load_checkpoint(ckpt)
        if replace(resume.train_cfg, epochs=cfg.epochs) != cfg or resume.net.cfg != model_cfg:
            raise UsageError(f"{ckpt} was trained with a different configuration")
        resume.train_cfg = cfg
        log(f"resuming from epoch {resume.epochs_done}")
    persist(out, resolved)

    def on_epoch(model):
        atomic_write(ckpt, save_checkpoint(model))
        atomic_write(out / "history.csv", history_csv(model.history))
        row = model.history[-1]
        log(f"epoch {row['epoch']}: L_c={row['L_c']:.4f} train_acc={row['train_acc']:.3f} "
            f"domain_acc={row['domain_acc']:.3f}")

    model = fit(split.source.X, split.source.labels, split.target.X, montage, model_cfg, cfg,
                resume=resume, on_epoch=on_epoch)
    atomic_write(ckpt, save_checkpoint(model))
    atomic_write(out / "history.csv", history_csv(model.history))
    metrics = _write_eval(out, evaluate(model, split.target), montage)
    log(f"fold {split.name}: target accuracy {metrics['accuracy']:.4f}")
    return EXIT_OK


def _from_checkpoint_run(resolved) -> None:
    """Fill data/protocol/fold from the config written by the training run."""
    run_cfg = Path(resolved["checkpoint"]).parent / "config.json"
    if run_cfg.exists():
        prev = json.loads(run_cfg.read_text(encoding="utf-8"))
        for key in ("data", "protocol", "fold", "montage"):
            if key not in resolved and key in prev:
                resolved[key] = prev[key]


def _load_for_eval(resolved):
    _from_checkpoint_run(resolved)
    model = load_checkpoint(resolved["checkpoint"])
    montage = model.net.montage
    if resolved.get("montage") and load_montage(resolved["montage"]).names != montage.names:
        raise DatasetError("--montage differs from the montage stored in the checkpoint")
    ds, splits = _dataset_and_splits(resolved, montage)
    split = _pick_split(splits, resolved.get("fold"))
    resolved["fold"] = split.name
    return model, split


def cmd_eval(args, resolved) -> int:
    out = Path(args.out)
    if "checkpoint" in resolved:
        model, split = _load_for_eval(resolved)
        persist(out, resolved)
        metrics = _write_eval(out, evaluate(model, split.target), model.net.montage)
        log(f"fold {split.name}: target accuracy {metrics['accuracy']:.4f}")
        return EXIT_OK
    montage = _montage(resolved)
    ds, splits = _dataset_and_splits(resolved, montage)
    model_cfg = _model_cfg(resolved, ds, montage)
    cfg = _train_cfg(resolved)
    folds = list(range(min(len(splits), resolved.get("max_folds") or len(splits))))
    persist(out, resolved)
    res = run_protocol(ds, resolved.get("protocol", "loso"), cfg, model_cfg, montage, jobs=resolved["jobs"],
                       folds=folds)
    for f in res.folds:
        atomic_write(out / f"fold_{f.fold:02d}_history.csv", history_csv(f.history))
    atomic_write(out / "folds.csv", res.csv())
    summary = {"mean": res.mean, "std": res.std, "folds": len(res.folds), "variant": cfg.variant}
    atomic_write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    log(f"{cfg.variant}: {res.mean:.4f} +/- {res.std:.4f} over {len(res.folds)} folds")
    return EXIT_OK


ABLATION_COLUMNS = ("variant", "seed", "mean_accuracy", "std_accuracy", "folds")


def cmd_ablate(args, resolved) -> int:
    out = Path(args.out)
    montage = _montage(resolved)
    ds, splits = _dataset_and_splits(resolved, montage)
    model_cfg = _model_cfg(resolved, ds, montage)
    cfg = _train_cfg(resolved)
    variants = resolved.get("variants", list(VARIANTS))
    for v in variants:
        if v not in VARIANTS:
            raise UsageError(f"unknown variant {v!r}; choose from {VARIANTS}")
    n_seeds = int(resolved.get("seeds", 1))
    if n_seeds < 1:
        raise UsageError("--seeds must be >= 1")
    seeds = [cfg.seed + k for k in range(n_seeds)]
    folds = list(range(min(len(splits), resolved.get("max_folds") or len(splits))))
    persist(out, resolved)
    rows, fold_lines = [], [",".join(FOLD_COLUMNS)]
    for v in variants:
        for s in seeds:
            res = run_protocol(ds, resolved.get("protocol", "loso"), replace(cfg, seed=s), model_cfg, montage,
                               variant=v, jobs=resolved["jobs"], folds=folds)
            rows.append(f"{v},{s},{res.mean!r},{res.std!r},{len(res.folds)}")
            fold_lines += res.csv().strip().splitlines()[1:]
            log(f"{v} seed {s}: {res.mean:.4f} +/- {res.std:.4f}")
    atomic_write(out / "ablation.csv", "\n".join([",".join(ABLATION_COLUMNS), *rows]) + "\n")
    atomic_write(out / "ablation_folds.csv", "\n".join(fold_lines) + "\n")
    return EXIT_OK


def cmd_gradcheck(args, resolved) -> int:
    net, X, labels, domains = toy_setup(seed=int(resolved["seed"]))
    variant = resolved["train"]["variant"]
    checks = check_gradients(net, X, labels, domains, LossWeights.resolve(variant), corrupt=args.corrupt)
    table = report(checks)
    print(table)
    if args.out:
        out = Path(args.out)
        persist(out, resolved)
        atomic_write(out / "gradcheck.csv", "tensor,coords,max_rel_err,ok\n" + "".join(
            f"{c.name},{c.coords},{c.max_rel_err!r},{int(c.ok)}\n" for c in checks))
    failed = [c.name for c in checks if not c.ok]
    if failed:
        log(f"gradient check failed for {failed}")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_attmap(args, resolved) -> int:
    out = Path(args.out)
    if "checkpoint" not in resolved:
        raise UsageError("attmap needs --checkpoint")
    model, split = _load_for_eval(resolved)
    persist(out, resolved)
    res = evaluate(model, split.target)
    montage = model.net.montage
    rmap = region_transferability_map(res.region_att, montage)
    atomic_write(out / "attention.csv", attention_csv(res, montage))
    atomic_write(out / "global_attention.csv", global_attention_csv(res))
    atomic_write(out / "region_map.csv", region_map_csv(rmap))
    for name, w in sorted(rmap, key=lambda t: -t[1]):
        print(f"{name:26s} {w:.4f}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate,
            "gradcheck": cmd_gradcheck, "attmap": cmd_attmap}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tann", description="Transferable attention network for EEG emotion recognition.")
    p.add_argument("--version", action="version", version=f"tann {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_required=True):
        sp.add_argument("--config", type=Path, help="JSON or YAML config; flags override it")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, required=out_required)
        sp.add_argument("--montage", type=Path, help="montage file (default: bundled 62-channel)")
        sp.add_argument("--jobs", type=int, help="parallel folds")

    def training(sp):
        sp.add_argument("--data", type=Path, help="dataset manifest")
        sp.add_argument("--protocol", choices=PROTOCOLS)
        sp.add_argument("--variant", choices=VARIANTS)
        for flag, typ in (("alpha", float), ("beta", float), ("lr", float), ("momentum", float),
                          ("lr-decay", float), ("batch-size", int), ("epochs", int), ("clip-norm", float),
                          ("d-f", int), ("d-out", int), ("n-proj", int), ("disc-hidden", int)):
            sp.add_argument(f"--{flag}", type=typ)
        sp.add_argument("--no-clip", action="store_true", help="disable gradient-norm clipping")
        sp.add_argument("--batch-mode", choices=("balanced", "proportional"))

    sp = sub.add_parser("synth", help="generate a synthetic dataset")
    common(sp)
    for flag, typ in (("subjects", int), ("trials", int), ("samples", int), ("classes", int), ("bands", int),
                      ("noise", float), ("shift", float)):
        sp.add_argument(f"--{flag}", type=typ)

    sp = sub.add_parser("train", help="train one fold")
    common(sp)
    training(sp)
    sp.add_argument("--fold", help="subject id of the fold (default: first)")
    sp.add_argument("--resume", action="store_true", help="continue from <out>/checkpoint.tann")

    sp = sub.add_parser("eval", help="evaluate a checkpoint, or run a whole protocol")
    common(sp)
    training(sp)
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--fold")
    sp.add_argument("--max-folds", type=int)

    sp = sub.add_parser("ablate", help="variants x seeds over a protocol")
    common(sp)
    training(sp)
    sp.add_argument("--variants", help="comma-separated, e.g. full,r1,r2,r3")
    sp.add_argument("--seeds", type=int, help="number of seeds, counting up from --seed")
    sp.add_argument("--max-folds", type=int)

    sp = sub.add_parser("gradcheck", help="finite-difference check on a toy network")
    common(sp, out_required=False)
    sp.add_argument("--variant", choices=VARIANTS)
    sp.add_argument("--corrupt", help=argparse.SUPPRESS)  # fault-injection hook

    sp = sub.add_parser("attmap", help="export attention maps for a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", type=Path)
    sp.add_argument("--data", type=Path)
    sp.add_argument("--protocol", choices=PROTOCOLS)
    sp.add_argument("--fold")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        resolved = resolve(args)
        return COMMANDS[args.command](args, resolved)
    except UsageError as exc:
        log(f"usage error: {exc}")
        return EXIT_USAGE
    except NumericalError as exc:
        log(f"numerical failure: {exc}")
        return EXIT_NUMERICAL
    except (DatasetError, ValueError, OSError) as exc:
        log(f"validation error: {exc}")
        return EXIT_VALIDATION


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
