"""Adam with bias correction and per-epoch learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kgconv.errors import TrainingDiverged
from kgconv.nn.params import ParamStore


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epoch_decay: float = 0.9
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def end_epoch(self) -> None:
        self.lr *= self.epoch_decay


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One in-place update from the gradients currently in `store`."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in store.params.items():
        g = store.grads[name]
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for parameter {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** state.step)
        v_hat = v / (1.0 - b2 ** state.step)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
