"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from kgconv.nn import tensor as T
from kgconv.nn.params import ParamStore


def value_and_grads(store: ParamStore, fn: Callable[[], T.Var]) -> float:
    """Evaluate `fn` (which must build its graph from store.leaves()) and
    leave the analytic gradients in store.grads."""
    store.zero_grads()
    out = fn()
    T.backward(out)
    store.accumulate_last()
    return float(out.data)


def _eval_at(fn, flat, i, delta: float) -> float:
    orig = flat[i]
    flat[i] = orig + delta
    with T.no_grad():
        out = float(fn().data)
    flat[i] = orig
    return out


def _fd(fn, flat, i, eps: float) -> float:
    return (_eval_at(fn, flat, i, eps) - _eval_at(fn, flat, i, -eps)) / (2.0 * eps)


def _one_sided(fn, flat, i, eps: float, f0: float) -> tuple[float, float]:
    """Second-order one-sided derivative estimates (forward, backward)."""
    fwd = (-3.0 * f0 + 4.0 * _eval_at(fn, flat, i, eps)
           - _eval_at(fn, flat, i, 2.0 * eps)) / (2.0 * eps)
    bwd = (3.0 * f0 - 4.0 * _eval_at(fn, flat, i, -eps)
           + _eval_at(fn, flat, i, -2.0 * eps)) / (2.0 * eps)
    return fwd, bwd


def _rel_err(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(fn: Callable[[], T.Var], store: ParamStore, eps: float = 1e-5,
               names: Sequence[str] | None = None,
               eps_ladder: Sequence[float] = ()) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
    With `eps_ladder`, a coordinate that disagrees at `eps` is re-checked
    and its best agreement kept: near-zero gradients are roundoff-limited
    at small eps, smooth directions are truncation-limited at large eps,
    and a coordinate straddling a max-pool tie matches a one-sided
    derivative rather than the central average, so those stencils are
    consulted as well. A wrong analytic gradient disagrees with all of
    them at every step size.
    """
    value_and_grads(store, fn)
    analytic = {k: v.copy() for k, v in store.grads.items()}
    worst = 0.0
    for name in (names if names is not None else store.names()):
        flat = store.params[name].reshape(-1)
        a_flat = analytic[name].reshape(-1)
        for i in range(flat.size):
            a = a_flat[i]
            err = _rel_err(a, _fd(fn, flat, i, eps))
            for step in eps_ladder:
                if err < 1e-6:
                    break
                err = min(err, _rel_err(a, _fd(fn, flat, i, step)))
            if eps_ladder and err >= 1e-6:
                f0 = _eval_at(fn, flat, i, 0.0)
                for step in (1e-4, 1e-3):
                    fwd, bwd = _one_sided(fn, flat, i, step, f0)
                    err = min(err, _rel_err(a, fwd), _rel_err(a, bwd))
            worst = max(worst, err)
    return worst
