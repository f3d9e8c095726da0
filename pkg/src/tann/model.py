"""Full network assembly: forward pass, composite loss, and gradient routing.

Gradient routing follows the min-max objective

    L = L_c + alpha * L_e - beta * (mean_i L_local_i + L_global)

Feature-side tensors (extractor, projection ``S``) and the classifier descend
``L``; a gradient-reversal layer sits in front of every discriminator, so the
discriminators themselves descend ``beta * L_d`` (their own NLL) while the
features receive the sign-flipped signal. Attention weights are constants in
the backward pass.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import attention_global as ag
from . import attention_local as al
from . import classifier as clf
from . import extractor as ext
from .mathkernel import NumericalError, ShapeError, make_rng, softmax
from .montage import Montage, ScanOrders, region_permutation, traversal_orders

VARIANTS = ("full", "r1", "r2", "r3")


@dataclass
class ModelConfig:
    d: int = 5
    n_classes: int = 3
    d_f: int = 32
    d_out: int = 32
    n_proj: int = 6
    disc_hidden: int = 64


@dataclass
class LossWeights:
    """Which parts of the objective are active, resolved from a variant."""
    alpha: float = 0.1
    beta: float = 0.1
    local_attention: bool = True
    local_loss: bool = True
    global_loss: bool = True
    entropy_loss: bool = True

    @classmethod
    def resolve(cls, variant: str = "full", alpha: float = 0.1, beta: float = 0.1,
                force_local_zero: bool = False, detach_discriminators: bool = False) -> "LossWeights":
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
        has_local = variant in ("full", "r2")
        has_global = variant in ("full", "r3")
        # an untrained (beta=0) or detached discriminator carries no transferability signal
        active = beta > 0 and not detach_discriminators
        return cls(
            alpha=alpha if has_global else 0.0,
            beta=beta if active else 0.0,
            local_attention=has_local and active and not force_local_zero,
            local_loss=has_local and active,
            global_loss=has_global and active,
            entropy_loss=has_global and alpha > 0,
        )


def tensor_groups(name: str) -> str:
    return name.split(".", 1)[0]


class Network:
    """Parameter container plus the montage-dependent wiring."""

    def __init__(self, montage: Montage, cfg: ModelConfig, params: dict[str, np.ndarray] | None = None,
                 seed: int = 0):
        self.montage = montage
        self.cfg = cfg
        self.orders: ScanOrders = traversal_orders(montage)
        self.perm = region_permutation(montage)
        self.inv_perm = np.argsort(self.perm)
        self.params = params if params is not None else self.init_params(seed)

    def init_params(self, seed: int) -> dict[str, np.ndarray]:
        rng = make_rng(seed)
        c = self.cfg
        params: dict[str, np.ndarray] = {}
        for k, v in ext.init_params(rng, c.d, c.d_f, c.d_out).items():
            params[f"extractor.{k}"] = v
        for rid, size in enumerate(self.montage.region_sizes()):
            for k, v in al.init_discriminator(rng, c.d_out * size, c.disc_hidden).items():
                params[f"local.{rid:02d}.{k}"] = v
        for k, v in ag.init_params(rng, self.montage.n, c.n_proj, c.d_out, c.disc_hidden).items():
            params[f"global.{k}"] = v
        for k, v in clf.init_params(rng, c.d_out * c.n_proj, c.n_classes).items():
            params[f"classifier.{k}"] = v
        return params

    # -- parameter views ----------------------------------------------------
    def group(self, prefix: str) -> dict[str, np.ndarray]:
        pre = prefix + "."
        return {k[len(pre):]: v for k, v in self.params.items() if k.startswith(pre)}

    def local_discs(self) -> list[dict[str, np.ndarray]]:
        return [self.group(f"local.{rid:02d}") for rid in range(self.montage.n_regions)]

    # -- forward --------------------------------------------------------------
    def forward(self, X, lw: LossWeights | None = None, local_weights: np.ndarray | None = None,
                global_weights: np.ndarray | None = None) -> "Forward":
        lw = lw or LossWeights()
        H, etape = ext.forward(X, self.group("extractor"), self.orders)
        H_hat = H[:, self.perm]
        H_att, region_att, ltape = al.local_attend(H_hat, self.local_discs(), self.montage,
                                                   weights=local_weights, enabled=lw.local_attention)
        gp = self.group("global")
        H_tilde = ag.global_project(H_att, gp["S"])
        global_att, gtape = ag.global_attend(H_tilde, gp)
        if global_weights is not None:
            global_att = ag.GlobalAttention(global_att.probs, global_att.entropy, np.asarray(global_weights))
        flat = ag.flatten(H_tilde)
        z = clf.logits(flat, self.group("classifier"))
        return Forward(H, etape, H_hat, H_att, region_att, ltape, H_tilde, global_att, gtape,
                       flat, z, softmax(z))

    def predict(self, X, lw: LossWeights | None = None, chunk: int = 512):
        probs, regions, gweights = [], [], []
        for start in range(0, len(X), chunk):
            fw = self.forward(X[start:start + chunk], lw)
            probs.append(fw.probs)
            regions.append(fw.region_att)
            gweights.append(fw.global_att)
        probs = np.concatenate(probs)
        region_att = al.RegionAttention(*(np.concatenate([getattr(r, f) for r in regions])
                                          for f in ("probs", "entropy", "weight")))
        global_att = ag.GlobalAttention(*(np.concatenate([getattr(g, f) for g in gweights])
                                          for f in ("probs", "entropy", "weight")))
        return probs, probs.argmax(axis=1), region_att, global_att

    # -- loss and gradients -----------------------------------------------------
    def loss_and_grads(self, X, labels, domains, lw: LossWeights, need_grads: bool = True,
                       local_weights=None, global_weights=None):
        """Composite loss components and per-tensor update directions.

        ``labels`` are ignored for target rows (``domains == 1``).
        """
        X = np.asarray(X, dtype=np.float64)
        labels = np.asarray(labels)
        domains = np.asarray(domains)
        if len(labels) != len(X) or len(domains) != len(X):
            raise ShapeError("labels/domains length does not match batch")
        src = domains == al.SOURCE
        if not np.any(src):
            raise ValueError("batch contains no labelled source samples")
        fw = self.forward(X, lw, local_weights, global_weights)
        cp = self.group("classifier")
        p = self.params

        L_c, g_cls, _, dlog_c = clf.class_loss(fw.flat[src], labels[src].astype(np.intp), cp)
        dlogits = np.zeros_like(fw.logits)
        dlogits[src] = dlog_c
        L_e = 0.0
        if lw.entropy_loss:
            L_e, dlog_e = ag.entropy_logit_grad(fw.probs, fw.global_att.weight)
            dlogits += lw.alpha * dlog_e
        L_ld = L_gd = 0.0
        per_region = np.zeros(self.montage.n_regions)
        need_disc = lw.local_loss or lw.global_loss
        if need_disc:
            al.check_two_domains(domains)
        if lw.local_loss:
            L_ld, per_region, g_local, dH_hat_d = al.local_disc_loss(
                fw.H_hat, domains, self.local_discs(), self.montage, fw.local_tape)
        if lw.global_loss:
            L_gd, g_glob, dH_tilde_d = ag.global_disc_loss(fw.H_tilde, domains, self.group("global"), fw.global_tape)

        total = L_c + lw.alpha * L_e - lw.beta * (L_ld + L_gd)
        losses = {"L": total, "L_c": L_c, "L_e": L_e, "L_local_d": L_ld, "L_global_d": L_gd}
        if not np.isfinite(total):
            raise NumericalError(f"non-finite loss; first offender: {first_nonfinite(fw, p)}")
        if not need_grads:
            return losses, None, fw

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        g_cls_full, dflat = clf.logits_backward(fw.flat, dlogits, cp)
        grads["classifier.G"] = g_cls_full["G"]
        grads["classifier.b_c"] = g_cls_full["b_c"]
        dH_tilde = dflat.reshape(fw.H_tilde.shape)
        if lw.global_loss:
            # gradient reversal: features ascend the discriminator loss
            dH_tilde = dH_tilde - lw.beta * dH_tilde_d
            for k, g in g_glob.items():
                grads[f"global.{k}"] = lw.beta * g
        dS, dH_att = ag.global_project_backward(fw.H_att, p["global.S"], dH_tilde)
        grads["global.S"] = dS
        dH_hat = dH_att * (1.0 + fw.local_tape.weights)[:, np.repeat(np.arange(self.montage.n_regions),
                                                                     self.montage.region_sizes())][..., None]
        if lw.local_loss:
            dH_hat = dH_hat - lw.beta * dH_hat_d
            for rid, g in enumerate(g_local):
                for k, v in g.items():
                    grads[f"local.{rid:02d}.{k}"] = lw.beta * v
        dH = dH_hat[:, self.inv_perm]
        g_ext, _ = ext.backward(fw.ext_tape, dH, self.group("extractor"))
        for k, v in g_ext.items():
            grads[f"extractor.{k}"] = v
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient in {k}")
        losses["per_region_local_d"] = per_region
        return losses, grads, fw

    def objectives(self, X, labels, domains, lw: LossWeights, local_weights, global_weights):
        """Scalar objectives each tensor group descends, with attention weights frozen.

        Used by the finite-difference gradient check: feature-side tensors and
        the classifier descend the total loss, region discriminator ``i``
        descends ``beta * L_local_i`` and the global discriminator
        ``beta * L_global``.
        """
        losses, _, _ = self.loss_and_grads(X, labels, domains, lw, need_grads=False,
                                           local_weights=local_weights, global_weights=global_weights)
        out = {"total": losses["L"], "global": lw.beta * losses["L_global_d"]}
        if lw.local_loss:
            fw = self.forward(X, lw, local_weights, global_weights)
            _, per_region, _, _ = al.local_disc_loss(fw.H_hat, domains, self.local_discs(), self.montage,
                                                     fw.local_tape)
            for rid, v in enumerate(per_region):
                out[f"local.{rid:02d}"] = lw.beta * v
        else:
            for rid in range(self.montage.n_regions):
                out[f"local.{rid:02d}"] = 0.0
        return out


def objective_key(name: str) -> str:
    if name.startswith("local."):
        return name[:8]
    if name.startswith("global.") and name != "global.S":
        return "global"
    return "total"


@dataclass
class Forward:
    H: np.ndarray
    ext_tape: ext.ExtractorTape
    H_hat: np.ndarray
    H_att: np.ndarray
    region_att: al.RegionAttention
    local_tape: al.LocalTape
    H_tilde: np.ndarray
    global_att: ag.GlobalAttention
    global_tape: al.DiscTape
    flat: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def first_nonfinite(fw: Forward, params: dict[str, np.ndarray]) -> str:
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            return f"parameter {k}"
    for k in ("H", "H_hat", "H_att", "H_tilde", "flat", "logits", "probs"):
        if not np.all(np.isfinite(getattr(fw, k))):
            return f"activation {k}"
    return "loss reduction"


def config_dict(cfg) -> dict:
    return asdict(cfg)
