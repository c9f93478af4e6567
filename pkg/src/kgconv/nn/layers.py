"""Recurrent, pooling, and loss layers built on the autodiff core."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from kgconv.errors import ContractViolation, DimensionError
from kgconv.nn import tensor as T
from kgconv.nn.params import ParamStore

GRU_SLOTS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")


class GruParams:
    """View over one GRU's leaves, resolved by name prefix."""

    def __init__(self, leaves: dict[str, T.Var], prefix: str):
        for slot in GRU_SLOTS:
            setattr(self, slot, leaves[f"{prefix}.{slot}"])


def add_gru_params(ps: ParamStore, prefix: str, d_in: int, d_hidden: int) -> None:
    for slot in ("Wz", "Wr", "Wh"):
        ps.add(f"{prefix}.{slot}", (d_in, d_hidden))
    for slot in ("Uz", "Ur", "Uh"):
        ps.add(f"{prefix}.{slot}", (d_hidden, d_hidden))
    for slot in ("bz", "br", "bh"):
        ps.add(f"{prefix}.{slot}", (d_hidden,), init="zeros")


def gru_cell(x: T.Var, h: T.Var, p: GruParams) -> T.Var:
    """Standard GRU update; accepts a single vector or a batch of rows."""
    if x.data.shape[-1] != p.Wz.data.shape[0] or h.data.shape[-1] != p.Uz.data.shape[0]:
        raise DimensionError(
            f"gru_cell shapes x={x.data.shape} h={h.data.shape} "
            f"W={p.Wz.data.shape} U={p.Uz.data.shape}"
        )
    z = T.sigmoid(T.add(T.add(T.matmul(x, p.Wz), T.matmul(h, p.Uz)), p.bz))
    r = T.sigmoid(T.add(T.add(T.matmul(x, p.Wr), T.matmul(h, p.Ur)), p.br))
    hh = T.tanh(T.add(T.add(T.matmul(x, p.Wh), T.matmul(T.mul(r, h), p.Uh)), p.bh))
    one_minus_z = T.add(T.scale(z, -1.0), T.leaf(np.ones_like(z.data)))
    return T.add(T.mul(one_minus_z, h), T.mul(z, hh))


def gru_sequence(inputs: T.Var, p: GruParams, h0: T.Var | None = None) -> tuple[T.Var, T.Var]:
    """Run a GRU over `inputs` (L x d_in). Returns (all states L x d, final state)."""
    d = p.Uz.data.shape[0]
    h = h0 if h0 is not None else T.zeros((d,))
    states = []
    for t in range(inputs.data.shape[0]):
        h = gru_cell(T.row(inputs, t), h, p)
        states.append(h)
    if not states:
        return T.zeros((0, d)), h
    return T.stack_rows(states), h


def encode_utterance(emb: T.Var, token_ids: Sequence[int], p: GruParams,
                     bos: int, eos: int) -> T.Var:
    """Word-level encoding: GRU over BOS + tokens + EOS, final state."""
    ids = [bos, *token_ids, eos]
    _, final = gru_sequence(T.gather_rows(emb, ids), p)
    return final


def hierarchical_gru(emb: T.Var, utterances: Sequence[Sequence[int]],
                     word_p: GruParams, utt_p: GruParams,
                     bos: int, eos: int) -> T.Var:
    """Word-level GRU per utterance, then an utterance-level GRU; final state."""
    if not utterances:
        raise ContractViolation("hierarchical_gru needs at least one utterance")
    finals = [encode_utterance(emb, u, word_p, bos, eos) for u in utterances]
    _, final = gru_sequence(T.stack_rows(finals), utt_p)
    return final


def pool(m: T.Var | None, mode: str, width: int) -> T.Var:
    """Column-wise mean or max; the empty input pools to the zero vector."""
    if m is None or m.data.shape[0] == 0:
        return T.zeros((width,))
    if mode == "mean":
        return T.mean_rows(m)
    if mode == "max":
        return T.max_rows(m)
    raise ContractViolation(f"unknown pool mode: {mode}")


def masked_softmax_nll(logits: T.Var, mask: np.ndarray,
                       gold: Sequence[int]) -> tuple[T.Var, np.ndarray]:
    """Softmax over masked entries only; loss = sum of -log p(gold).

    Returns (loss Var, full-size probability vector that is exactly zero
    off the mask).
    """
    mask = np.asarray(mask, dtype=bool)
    if logits.data.ndim != 1 or mask.shape != logits.data.shape:
        raise DimensionError("masked_softmax_nll shape mismatch")
    mask_idx = np.flatnonzero(mask)
    if mask_idx.size == 0:
        raise ContractViolation("mask has no true entries")
    gold = list(gold)
    pos_of = {int(i): k for k, i in enumerate(mask_idx)}
    try:
        gold_pos = [pos_of[int(g)] for g in gold]
    except KeyError as e:
        raise ContractViolation(f"gold index {e} outside mask") from None
    logp = T.log_softmax(T.gather(logits, mask_idx))
    loss = T.neg(T.vsum(T.gather(logp, gold_pos)))
    probs = np.zeros_like(logits.data)
    probs[mask_idx] = np.exp(logp.data)
    return loss, probs
