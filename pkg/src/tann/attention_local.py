"""Region-level transferable attention.

Each brain region owns a small domain discriminator. The base-2 entropy of
its (source, target) output is turned into a weight ``w = 1 - H`` and the
region block is scaled by ``1 + w``. Weights are treated as constants during
backpropagation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathkernel import ShapeError, glorot_uniform, log_softmax, sigmoid, softmax
from .montage import Montage, region_slices

SOURCE, TARGET = 0, 1


def entropy2(d) -> np.ndarray:
    """Base-2 entropy of probability pairs along the last axis (0·log0 = 0)."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != 2:
        raise ShapeError(f"expected probability pairs, got shape {d.shape}")
    if np.any(d < 0):
        raise ValueError("negative probability")
    if np.any(np.abs(d.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("probability pair does not sum to 1")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(d > 0, -d * np.log2(np.where(d > 0, d, 1.0)), 0.0)
    return np.clip(terms.sum(axis=-1), 0.0, 1.0)


def local_weight(d) -> np.ndarray:
    """Region attention ``1 - H(d)``: confidently discriminated regions score high."""
    return 1.0 - entropy2(d)


# --- two-layer domain discriminator ---------------------------------------

def init_discriminator(rng: np.random.Generator, n_in: int, hidden: int = 64) -> dict[str, np.ndarray]:
    return {
        "W1": glorot_uniform(rng, (hidden, n_in)),
        "b1": np.zeros(hidden),
        "W2": glorot_uniform(rng, (2, hidden)),
        "b2": np.zeros(2),
    }


@dataclass
class DiscTape:
    x: np.ndarray
    a: np.ndarray
    logits: np.ndarray


def disc_forward(x: np.ndarray, p: dict[str, np.ndarray]):
    """Return (logits, tape) for flattened inputs ``x`` of shape (B, n_in)."""
    if x.shape[-1] != p["W1"].shape[1]:
        raise ShapeError(f"discriminator expects {p['W1'].shape[1]} inputs, got {x.shape[-1]}")
    a = sigmoid(x @ p["W1"].T + p["b1"])
    logits = a @ p["W2"].T + p["b2"]
    return logits, DiscTape(x, a, logits)


def disc_backward(tape: DiscTape, dlogits: np.ndarray, p: dict[str, np.ndarray]):
    grads = {"W2": dlogits.T @ tape.a, "b2": dlogits.sum(axis=0)}
    da = dlogits @ p["W2"]
    dz = da * tape.a * (1.0 - tape.a)
    grads["W1"] = dz.T @ tape.x
    grads["b1"] = dz.sum(axis=0)
    return grads, dz @ p["W1"]


def domain_nll(logits: np.ndarray, domains: np.ndarray):
    """Summed negative log-likelihood (nats) of domain labels and its logit gradient."""
    domains = np.asarray(domains)
    rows = np.arange(len(domains))
    loss = -log_softmax(logits)[rows, domains].sum()
    dlogits = softmax(logits)
    dlogits[rows, domains] -= 1.0
    return float(loss), dlogits


def check_two_domains(domains) -> None:
    domains = np.asarray(domains)
    if not (np.any(domains == SOURCE) and np.any(domains == TARGET)):
        raise ValueError("batch must contain both source and target samples")


# --- region blocks ---------------------------------------------------------

def flatten_block(block: np.ndarray) -> np.ndarray:
    """(B, n_c, f) -> (B, n_c*f), column-major over the per-sample f x n_c matrix."""
    return block.reshape(block.shape[0], -1)


@dataclass
class LocalTape:
    disc: list[DiscTape]
    weights: np.ndarray  # (B, N)


@dataclass
class RegionAttention:
    """Per-sample, per-region discriminator output and derived weight."""
    probs: np.ndarray    # (B, N, 2)
    entropy: np.ndarray  # (B, N)
    weight: np.ndarray   # (B, N)


def local_attend(H_hat: np.ndarray, discs: list[dict[str, np.ndarray]], m: Montage,
                 weights: np.ndarray | None = None, enabled: bool = True):
    """Scale each region block of ``H_hat`` (B, n, f) by ``1 + w``.

    ``weights`` (B, N) overrides the discriminator-derived values; with
    ``enabled=False`` all weights are zero and the features pass through.
    """
    slices = region_slices(m)
    if H_hat.shape[1] != m.n:
        raise ShapeError(f"feature width {H_hat.shape[1]} does not match montage ({m.n} electrodes)")
    B = H_hat.shape[0]
    probs = np.empty((B, len(slices), 2))
    tapes = []
    for rid, sl in slices:
        logits, tape = disc_forward(flatten_block(H_hat[:, sl]), discs[rid])
        probs[:, rid] = softmax(logits)
        tapes.append(tape)
    ent = entropy2(probs)
    if weights is None:
        weights = 1.0 - ent if enabled else np.zeros_like(ent)
    elif weights.shape != ent.shape:
        raise ShapeError(f"weight override has shape {weights.shape}, expected {ent.shape}")
    out = np.empty_like(H_hat)
    for rid, sl in slices:
        out[:, sl] = (1.0 + weights[:, rid])[:, None, None] * H_hat[:, sl]
    return out, RegionAttention(probs, ent, weights), LocalTape(tapes, weights)


def local_disc_loss(H_hat: np.ndarray, domains, discs: list[dict[str, np.ndarray]], m: Montage,
                    tape: LocalTape | None = None):
    """Mean over regions of each region discriminator's summed domain NLL.

    Returns ``(loss, per_region_losses, param_grads, dH_hat)`` where
    ``param_grads[i]`` is the gradient of region ``i``'s own NLL and
    ``dH_hat`` the gradient of the region-averaged loss w.r.t. ``H_hat``.
    """
    check_two_domains(domains)
    slices = region_slices(m)
    N = len(slices)
    per_region = np.empty(N)
    grads = []
    dH = np.zeros_like(H_hat)
    for rid, sl in slices:
        if tape is None:
            logits, dt = disc_forward(flatten_block(H_hat[:, sl]), discs[rid])
        else:
            dt = tape.disc[rid]
            logits = dt.logits
        per_region[rid], dlogits = domain_nll(logits, domains)
        g, dx = disc_backward(dt, dlogits, discs[rid])
        grads.append(g)
        dH[:, sl] = dx.reshape(H_hat[:, sl].shape) / N
    return float(per_region.mean()), per_region, grads, dH
