"""Sample-level transferable attention.

The region-attended features are projected to ``n'`` columns, a global
domain discriminator scores each sample, and ``w = 1 + H(d)`` (base 2)
weights that sample's prediction entropy in the attentive entropy loss.
The weight never scales the features.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attention_local import (DiscTape, check_two_domains, disc_backward, disc_forward,
                              domain_nll, entropy2, init_discriminator)
from .mathkernel import ShapeError, glorot_uniform, softmax


def init_params(rng: np.random.Generator, n: int, n_proj: int, d_out: int, hidden: int = 64):
    params = {"S": glorot_uniform(rng, (n, n_proj))}
    params.update(init_discriminator(rng, d_out * n_proj, hidden))
    return params


def global_weight(d) -> np.ndarray:
    """``1 + H(d)``: samples that confuse the discriminator get weight near 2."""
    return 1.0 + entropy2(d)


def global_project(H_att: np.ndarray, S: np.ndarray) -> np.ndarray:
    """(B, n, f) features times the n x n' projection -> (B, n', f)."""
    if H_att.shape[1] != S.shape[0]:
        raise ShapeError(f"cannot project {H_att.shape[1]} electrodes with S of shape {S.shape}")
    return np.matmul(S.T, H_att)


def global_project_backward(H_att: np.ndarray, S: np.ndarray, dH_tilde: np.ndarray):
    B, n, f = H_att.shape
    dS = H_att.transpose(1, 0, 2).reshape(n, B * f) @ dH_tilde.transpose(1, 0, 2).reshape(S.shape[1], B * f).T
    dH_att = np.matmul(S, dH_tilde)
    return dS, dH_att


def flatten(H_tilde: np.ndarray) -> np.ndarray:
    return H_tilde.reshape(H_tilde.shape[0], -1)


@dataclass
class GlobalAttention:
    probs: np.ndarray    # (B, 2)
    entropy: np.ndarray  # (B,)
    weight: np.ndarray   # (B,)


def global_attend(H_tilde: np.ndarray, params: dict[str, np.ndarray]):
    logits, tape = disc_forward(flatten(H_tilde), params)
    probs = softmax(logits)
    ent = entropy2(probs)
    return GlobalAttention(probs, ent, 1.0 + ent), tape


def global_disc_loss(H_tilde: np.ndarray, domains, params: dict[str, np.ndarray],
                     tape: DiscTape | None = None):
    """Summed domain NLL; returns ``(loss, param_grads, dH_tilde)``."""
    check_two_domains(domains)
    if tape is None:
        _, tape = disc_forward(flatten(H_tilde), params)
    loss, dlogits = domain_nll(tape.logits, domains)
    grads, dx = disc_backward(tape, dlogits, params)
    return loss, grads, dx.reshape(H_tilde.shape)


def attentive_entropy_loss(preds, w):
    """``sum_k w_k * sum_c -p log p`` (nats) and its gradient w.r.t. ``preds``.

    ``w`` is a constant here: no gradient is returned for it.
    """
    p = np.asarray(preds, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1):
        raise ValueError("probabilities must lie in [0, 1]")
    if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-9):
        raise ValueError("prediction rows must sum to 1")
    safe = np.where(p > 0, p, 1.0)
    plogp = np.where(p > 0, p * np.log(safe), 0.0)
    loss = float(-(w * plogp.sum(axis=-1)).sum()) + 0.0  # no negative zero
    dpreds = -w[:, None] * (np.log(np.where(p > 0, p, np.finfo(float).tiny)) + 1.0)
    return loss, dpreds


def entropy_logit_grad(probs: np.ndarray, w: np.ndarray):
    """Weighted prediction entropy and its gradient w.r.t. the softmax logits."""
    logp = np.log(np.where(probs > 0, probs, 1.0))
    ent = -(probs * logp).sum(axis=-1)
    loss = float((w * ent).sum())
    dlogits = -w[:, None] * probs * (logp + ent[:, None])
    return loss, dlogits
