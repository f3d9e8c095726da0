"""Linear softmax classifier over flattened attended features."""
from __future__ import annotations

import numpy as np

from .mathkernel import ShapeError, glorot_uniform, log_softmax, softmax


def init_params(rng: np.random.Generator, n_in: int, n_classes: int) -> dict[str, np.ndarray]:
    if n_classes < 2:
        raise ValueError("need at least two classes")
    return {"G": glorot_uniform(rng, (n_classes, n_in)), "b_c": np.zeros(n_classes)}


def logits(flat: np.ndarray, params: dict[str, np.ndarray]) -> np.ndarray:
    flat = np.atleast_2d(flat)
    if flat.shape[1] != params["G"].shape[1]:
        raise ShapeError(f"classifier expects {params['G'].shape[1]} inputs, got {flat.shape[1]}")
    return flat @ params["G"].T + params["b_c"]


def predict(flat: np.ndarray, params: dict[str, np.ndarray]):
    """Class probabilities and labels. ``argmax`` breaks ties toward the lowest index."""
    probs = softmax(logits(flat, params))
    return probs, probs.argmax(axis=-1)


def class_loss(flat: np.ndarray, labels, params: dict[str, np.ndarray]):
    """Summed cross-entropy over labelled source rows.

    Returns ``(loss, grads, dflat, dlogits)``.
    """
    labels = np.asarray(labels)
    C = params["G"].shape[0]
    if labels.dtype.kind not in "iu" or np.any(labels < 0) or np.any(labels >= C):
        raise ValueError(f"labels must be integers in [0, {C})")
    z = logits(flat, params)
    rows = np.arange(len(labels))
    loss = -log_softmax(z)[rows, labels].sum()
    dlogits = softmax(z)
    dlogits[rows, labels] -= 1.0
    grads, dflat = logits_backward(flat, dlogits, params)
    return float(loss), grads, dflat, dlogits


def logits_backward(flat: np.ndarray, dlogits: np.ndarray, params: dict[str, np.ndarray]):
    grads = {"G": dlogits.T @ flat, "b_c": dlogits.sum(axis=0)}
    return grads, dlogits @ params["G"]
