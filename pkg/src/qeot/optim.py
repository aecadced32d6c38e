"""Decoupled-weight-decay adaptive-moment optimizer (AdamW)."""

from __future__ import annotations

import numpy as np

from .autodiff import Parameter
from .errors import NumericError


def adamw_update(p: np.ndarray, g: np.ndarray, m: np.ndarray, v: np.ndarray, t: int,
                 lr: float, betas: tuple[float, float], eps: float, weight_decay: float) -> None:
    """One in-place update of parameter `p` at step `t` (1-based).

    Weight decay is decoupled: p -= lr * wd * p, independent of the
    adaptive term, then p -= lr * m_hat / (sqrt(v_hat) + eps).
    """
    b1, b2 = betas
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * g * g
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    if weight_decay:
        p -= lr * weight_decay * p
    p -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """Holds per-parameter moments keyed by parameter name."""

    def __init__(self, lr: float, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: list[Parameter]) -> None:
        self.t += 1
        for p in params:
            g = p.grad
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in parameter '{p.name}'")
            if p.name not in self.m:
                self.m[p.name] = np.zeros_like(p.data)
                self.v[p.name] = np.zeros_like(p.data)
            adamw_update(p.data, g, self.m[p.name], self.v[p.name], self.t,
                         self.lr, self.betas, self.eps, self.weight_decay)

    # checkpoint plumbing: moments and step count as flat named records
    def state_records(self) -> dict[str, np.ndarray]:
        records = {"opt/step": np.array(float(self.t))}
        for name, m in self.m.items():
            records[f"opt/m/{name}"] = m
            records[f"opt/v/{name}"] = self.v[name]
        return records

    def load_state_records(self, records: dict[str, np.ndarray]) -> None:
        self.t = int(records.get("opt/step", np.array(0.0)))
        self.m = {k[len("opt/m/"):]: v.copy() for k, v in records.items() if k.startswith("opt/m/")}
        self.v = {k[len("opt/v/"):]: v.copy() for k, v in records.items() if k.startswith("opt/v/")}
