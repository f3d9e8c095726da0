"""Finite-difference verification of every tensor's update direction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathkernel import finite_diff_grad, make_rng, relative_error
from .model import LossWeights, ModelConfig, Network, objective_key
from .montage import Montage, toy_montage

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class TensorCheck:
    name: str
    max_rel_err: float
    coords: int

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE


def toy_setup(seed: int = 0, batch: int = 6):
    """3x3 grid with 8 electrodes in 3 regions, d=2, d_f=4, C=3."""
    m = toy_montage("grid3x3")
    cfg = ModelConfig(d=2, n_classes=3, d_f=4, d_out=4, n_proj=3, disc_hidden=8)
    net = Network(m, cfg, seed=seed)
    rng = make_rng(seed + 1)
    X = rng.normal(size=(batch, cfg.d, m.n))
    n_src = batch - batch // 3
    labels = np.concatenate([rng.integers(0, cfg.n_classes, n_src), np.full(batch - n_src, -1)])
    domains = np.concatenate([np.zeros(n_src, dtype=int), np.ones(batch - n_src, dtype=int)])
    return net, X, labels, domains


def check_gradients(net: Network, X, labels, domains, lw: LossWeights | None = None, eps: float = EPS,
                    max_coords: int | None = None, seed: int = 0, corrupt: str | None = None,
                    floor: float = 1e-6) -> list[TensorCheck]:
    """Compare analytic update directions against central differences.

    Attention weights are frozen at their current values: the analytic
    backward pass treats them as constants. ``corrupt`` names a tensor whose
    analytic gradient is deliberately perturbed (fault injection).
    """
    lw = lw or LossWeights.resolve("full")
    _, grads, fw = net.loss_and_grads(X, labels, domains, lw)
    lwts = fw.local_tape.weights.copy()
    gwts = fw.global_att.weight.copy()
    if corrupt is not None:
        grads[corrupt] = grads[corrupt] * 1.01 + 1e-3
    rng = make_rng(seed)
    out = []
    for name, g in grads.items():
        key = objective_key(name)
        objective = lambda _v, key=key: net.objectives(X, labels, domains, lw, lwts, gwts)[key]
        coords = None
        if max_coords is not None and g.size > max_coords:
            coords = np.sort(rng.choice(g.size, max_coords, replace=False))
        fd = finite_diff_grad(objective, net.params[name], eps=eps, coords=coords)
        sel = slice(None) if coords is None else coords
        err = relative_error(g.reshape(-1)[sel], fd.reshape(-1)[sel], floor=floor)
        out.append(TensorCheck(name, float(err.max()), int(err.size)))
    return out


def report(checks: list[TensorCheck]) -> str:
    lines = [f"{'tensor':28s} {'coords':>6s} {'max_rel_err':>12s}  status"]
    for c in checks:
        lines.append(f"{c.name:28s} {c.coords:6d} {c.max_rel_err:12.3e}  {'ok' if c.ok else 'FAIL'}")
    return "\n".join(lines)
