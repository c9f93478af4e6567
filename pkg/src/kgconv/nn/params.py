"""Named parameter storage, seeded initialization, and checkpoint IO."""

from __future__ import annotations

import hashlib
import json
from typing import Iterable

import numpy as np

from kgconv.errors import ConfigurationError
from kgconv.nn import tensor as T

RECURRENT_INIT_RANGE = 0.08
EMBED_INIT_STD = 0.1


class ParamStore:
    """Named parameter tensors with matching gradient slots."""

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._last_leaves: dict[str, T.Var] | None = None

    def add(self, name: str, shape: tuple[int, ...], init: str = "uniform") -> np.ndarray:
        if name in self.params:
            raise ConfigurationError(f"duplicate parameter name: {name}")
        if init == "uniform":
            data = self.rng.uniform(-RECURRENT_INIT_RANGE, RECURRENT_INIT_RANGE, shape)
        elif init == "normal":
            data = self.rng.normal(0.0, EMBED_INIT_STD, shape)
        elif init == "zeros":
            data = np.zeros(shape)
        else:
            raise ConfigurationError(f"unknown init: {init}")
        data = np.asarray(data, dtype=np.float64)
        self.params[name] = data
        self.grads[name] = np.zeros_like(data)
        return data

    def set(self, name: str, value: np.ndarray) -> None:
        if name not in self.params:
            raise ConfigurationError(f"unknown parameter: {name}")
        if self.params[name].shape != value.shape:
            raise ConfigurationError(f"shape mismatch for {name}")
        self.params[name] = np.asarray(value, dtype=np.float64)
        self.grads[name] = np.zeros_like(self.params[name])

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def leaves(self) -> dict[str, T.Var]:
        """Fresh Var leaves bound to the current parameter arrays.

        The result is remembered so `accumulate_last` can route gradients
        back after a backward pass.
        """
        out = {name: T.Var(data) for name, data in self.params.items()}
        self._last_leaves = out
        return out

    def accumulate_last(self) -> None:
        if self._last_leaves is None:
            return
        for name, v in self._last_leaves.items():
            if v.grad is not None:
                self.grads[name] += v.grad

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, snapshot: dict[str, np.ndarray]) -> None:
        for name, value in snapshot.items():
            self.set(name, value)


def save_checkpoint(path, store: ParamStore, meta: dict) -> None:
    """Named-tensor archive with shapes implicit, seed and epoch in `meta`."""
    meta = dict(meta)
    meta.setdefault("seed", store.seed)
    arrays = {f"param/{k}": v for k, v in store.params.items()}
    arrays["__meta__"] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8
    )
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"].tobytes()).decode("utf-8"))
        params = {
            k[len("param/"):]: np.asarray(z[k], dtype=np.float64)
            for k in z.files
            if k.startswith("param/")
        }
    return params, meta


def checkpoint_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_pretrained_embeddings(path, tokens: Iterable[str], dim: int,
                               fallback_rng: np.random.Generator) -> np.ndarray:
    """Embedding matrix for `tokens` from a `token v1 .. vD` text file.

    Tokens missing from the file get seeded normal(0, 0.1) rows.
    """
    table: dict[str, np.ndarray] = {}
    wanted = set(tokens)
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1 or parts[0] not in wanted:
                continue
            table[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
    rows = []
    for tok in tokens:
        vec = table.get(tok)
        if vec is None:
            vec = fallback_rng.normal(0.0, EMBED_INIT_STD, dim)
        rows.append(vec)
    return np.stack(rows)
