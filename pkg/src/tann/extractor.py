"""Directional RNN feature extractor with a hand-derived backward pass.

Batched tensors use an electrode-major layout: features of a batch are held
as ``(batch, n_electrodes, dim)``, i.e. the transpose of the ``dim x n``
per-sample matrices. Column ``i`` of the per-sample matrix is row ``i`` here.

Each axis (horizontal ``h``, vertical ``v``) is scanned twice, forward and
reversed along its serpentine order, with a separate parameter set per scan.
The two scan states of an axis are summed before the output projection.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathkernel import ShapeError, glorot_uniform, sigmoid
from .montage import ScanOrders

SCANS = ("h_fwd", "h_bwd", "v_fwd", "v_bwd")


def param_shapes(d: int, d_f: int, d_out: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for s in SCANS:
        shapes[f"U_{s}"] = (d_f, d)
        shapes[f"V_{s}"] = (d_f, d_f)
        shapes[f"b_{s}"] = (d_f,)
    shapes["P"] = (d_out, d_f)
    shapes["Q"] = (d_out, d_f)
    shapes["b"] = (d_out,)
    return shapes


def init_params(rng: np.random.Generator, d: int, d_f: int = 32, d_out: int = 32) -> dict[str, np.ndarray]:
    params = {}
    for name, shape in param_shapes(d, d_f, d_out).items():
        if name.startswith("b"):
            params[name] = np.zeros(shape)
        else:
            params[name] = glorot_uniform(rng, shape)
    return params


def scan_order(orders: ScanOrders, scan: str) -> np.ndarray:
    base = orders.horizontal if scan[0] == "h" else orders.vertical
    return base if scan.endswith("fwd") else base[::-1]


@dataclass
class ExtractorTape:
    # internal arrays are electrode-leading, (n, B, .), so scan steps slice contiguously
    X: np.ndarray        # (n, B, d)
    order: np.ndarray    # (4, n): electrode visited at each step of each scan
    steps: np.ndarray    # (4, n, B, d_f): scan states in visiting order
    S_h: np.ndarray
    S_v: np.ndarray

    @property
    def states(self) -> dict[str, np.ndarray]:
        """scan -> (n, B, d_f) states indexed by electrode."""
        out = {}
        for k, scan in enumerate(SCANS):
            S = np.empty_like(self.steps[k])
            S[self.order[k]] = self.steps[k]
            out[scan] = S
        return out


def _check_input(X: np.ndarray, params: dict[str, np.ndarray], n: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ShapeError(f"expected (batch, d, n) input, got shape {X.shape}")
    d = params["U_h_fwd"].shape[1]
    if X.shape[1] != d or X.shape[2] != n:
        raise ShapeError(f"input has shape (d={X.shape[1]}, n={X.shape[2]}), model expects (d={d}, n={n})")
    return X


def _stack(params, name):
    return np.stack([params[f"{name}_{scan}"] for scan in SCANS])


def forward(X, params: dict[str, np.ndarray], orders: ScanOrders):
    """Map a batch ``X`` of shape ``(B, d, n)`` to deep features ``(B, n, d_out)``.

    The four scans are independent, so they advance in lockstep: step ``t``
    updates electrode ``order[k, t]`` of every scan ``k`` with one batched
    matmul.
    """
    n = len(orders.horizontal)
    X = _check_input(X, params, n)
    Xe = np.ascontiguousarray(X.transpose(2, 0, 1))  # (n, B, d)
    order = np.stack([scan_order(orders, scan) for scan in SCANS])
    U, V, b = _stack(params, "U"), _stack(params, "V"), _stack(params, "b")
    pre = np.matmul(Xe[order], U[:, None].transpose(0, 1, 3, 2)) + b[:, None, None]  # (4, n, B, d_f)
    VT = V.transpose(0, 2, 1)
    steps = np.empty_like(pre)
    prev = steps[:, 0] = sigmoid(pre[:, 0])
    for t in range(1, n):
        prev = steps[:, t] = sigmoid(pre[:, t] + np.matmul(prev, VT))
    S = np.empty_like(steps)
    for k in range(len(SCANS)):
        S[k, order[k]] = steps[k]
    S_h = S[0] + S[1]
    S_v = S[2] + S[3]
    H = S_h @ params["P"].T + S_v @ params["Q"].T + params["b"]
    return H.transpose(1, 0, 2), ExtractorTape(Xe, order, steps, S_h, S_v)


def backward(tape: ExtractorTape, dH: np.ndarray, params: dict[str, np.ndarray], need_dx: bool = False):
    """Gradients of a scalar w.r.t. every extractor tensor, given ``dH`` (B, n, d_out).

    Returns ``(grads, dX)`` where ``dX`` has the input layout ``(B, d, n)``
    or is ``None`` unless requested.
    """
    dH = np.asarray(dH, dtype=np.float64)
    n, B = tape.S_h.shape[:2]
    if dH.shape != (B, n, params["P"].shape[0]):
        raise ShapeError(f"gradient shape {dH.shape} does not match tape (B={B}, n={n})")
    dH = np.ascontiguousarray(dH.transpose(1, 0, 2))
    grads = {
        "P": _outer_sum(dH, tape.S_h),
        "Q": _outer_sum(dH, tape.S_v),
        "b": dH.sum(axis=(0, 1)),
    }
    order, steps = tape.order, tape.steps
    dS_h, dS_v = dH @ params["P"], dH @ params["Q"]
    # upstream gradient of every scan state, in visiting order
    dS = np.stack([dS_h[order[0]], dS_h[order[1]], dS_v[order[2]], dS_v[order[3]]])
    V = _stack(params, "V")
    dA = np.empty_like(steps)
    s = steps[:, -1]
    carry = dA[:, -1] = dS[:, -1] * s * (1.0 - s)
    for t in range(n - 2, -1, -1):
        s = steps[:, t]
        carry = dA[:, t] = (dS[:, t] + np.matmul(carry, V)) * s * (1.0 - s)
    f = steps.shape[-1]
    # recurrence input of each step is the state of its predecessor in the scan
    gV = np.matmul(dA[:, 1:].reshape(4, -1, f).transpose(0, 2, 1), steps[:, :-1].reshape(4, -1, f))
    Xo = tape.X[order]  # (4, n, B, d)
    gU = np.matmul(dA.reshape(4, -1, f).transpose(0, 2, 1), Xo.reshape(4, -1, Xo.shape[-1]))
    gb = dA.sum(axis=(1, 2))
    for k, scan in enumerate(SCANS):
        grads[f"V_{scan}"] = gV[k]
        grads[f"U_{scan}"] = gU[k]
        grads[f"b_{scan}"] = gb[k]
    dX = None
    if need_dx:
        dXo = np.matmul(dA, _stack(params, "U")[:, None])  # (4, n, B, d)
        dXe = np.zeros_like(tape.X)
        for k in range(len(SCANS)):
            dXe[order[k]] += dXo[k]
        dX = dXe.transpose(1, 2, 0)
    return grads, dX


def _outer_sum(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """sum over leading axes of outer(a, b): (..., p), (..., q) -> (p, q)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])
