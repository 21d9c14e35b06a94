"""Channel-aware attention over per-channel graph embeddings.

Channel ``i`` scores ``e_ik = gate(a . [Wa^T h_i || Wa^T h_k])`` against
every channel ``k`` (itself included); its weight is the softmax over
channels of the mean score ``s_i``. The joint embedding is the
weight-averaged channel embedding. The gate is LeakyReLU(0.2) by default;
``sigmoid`` bounds the scores so no channel weight can collapse to zero.

All functions take ``(B, hidden)`` embedding batches, one per channel, so a
whole batch of examples is fused at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .tensor import (
    Tensor,
    add,
    concat_cols,
    leaky_relu,
    matmul,
    mean_cols,
    scale_add,
    scale_rows,
    sigmoid,
    softmax_rows,
    take_cols,
    take_rows,
)

LEAKY_SLOPE = 0.2
GATES = ("leaky_relu", "sigmoid")


def gate(x, kind: str = "leaky_relu") -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "leaky_relu":
        return leaky_relu(x, LEAKY_SLOPE)
    raise ValueError(f"unknown gate {kind!r}")


@dataclass
class AttentionParams:
    Wa: Tensor  # (hidden, att)
    a: Tensor  # (2 * att, 1)

    @property
    def att_dim(self) -> int:
        return self.Wa.shape[1]

    def tensors(self) -> list[Tensor]:
        return [self.Wa, self.a]

    @classmethod
    def init(cls, rng: np.random.Generator, hidden_dim: int, att_dim: int | None = None) -> "AttentionParams":
        att = att_dim or hidden_dim
        lim_w = np.sqrt(6.0 / (hidden_dim + att))
        lim_a = np.sqrt(6.0 / (2 * att + 1))
        return cls(
            Wa=Tensor(rng.uniform(-lim_w, lim_w, (hidden_dim, att)), requires_grad=True, name="Wa"),
            a=Tensor(rng.uniform(-lim_a, lim_a, (2 * att, 1)), requires_grad=True, name="a"),
        )


def _halves(params: AttentionParams) -> tuple[Tensor, Tensor]:
    att = params.att_dim
    if params.a.shape != (2 * att, 1):
        raise ShapeMismatch(f"attention vector {params.a.shape} for att_dim {att}")
    return take_rows(params.a, np.arange(att)), take_rows(params.a, np.arange(att, 2 * att))


def pair_score(h_i, h_k, params: AttentionParams, kind: str = "leaky_relu") -> Tensor:
    """Gated correlation ``e_ik`` as a ``(B, 1)`` column."""
    if h_i.shape != h_k.shape or h_i.shape[1] != params.Wa.shape[0]:
        raise ShapeMismatch(f"pair_score {h_i.shape}, {h_k.shape} with Wa {params.Wa.shape}")
    a_src, a_dst = _halves(params)
    return gate(add(matmul(matmul(h_i, params.Wa), a_src), matmul(matmul(h_k, params.Wa), a_dst)), kind)


def attention_weights(embeddings: list, params: AttentionParams, kind: str = "leaky_relu") -> Tensor:
    """``(B, |C|)`` channel weights; each row lies on the probability simplex."""
    if not embeddings:
        raise ShapeMismatch("need at least one channel embedding")
    shape = embeddings[0].shape
    if any(h.shape != shape for h in embeddings) or shape[1] != params.Wa.shape[0]:
        raise ShapeMismatch(f"channel embedding shapes {[h.shape for h in embeddings]}")
    n = len(embeddings)
    a_src, a_dst = _halves(params)
    projected = [matmul(h, params.Wa) for h in embeddings]
    src = [matmul(z, a_src) for z in projected]
    dst = [matmul(z, a_dst) for z in projected]
    scores = []
    for i in range(n):
        pair = [gate(add(src[i], dst[k]), kind) for k in range(n)]
        scores.append(mean_cols(concat_cols(*pair)))
    return softmax_rows(concat_cols(*scores))


def joint_embedding(embeddings: list, alpha) -> Tensor:
    """``sum_i alpha[:, i] * h_i``."""
    if alpha.shape != (embeddings[0].shape[0], len(embeddings)):
        raise ShapeMismatch(f"weights {alpha.shape} for {len(embeddings)} channels")
    terms = [scale_rows(h, take_cols(alpha, [i])) for i, h in enumerate(embeddings)]
    return scale_add([1.0] * len(terms), terms)


def concat_embedding(embeddings: list) -> Tensor:
    """Fusion ablation: channel embeddings side by side, no weighting."""
    return concat_cols(*embeddings)
