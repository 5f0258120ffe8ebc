"""Patient-side encoding: cross-attention text fusion and prescription history.

A visit is summarized from four frozen text embeddings (the combined
diagnosis/procedure/symptom text plus the three component texts). The three
component vectors are pooled with attention queried by the combined vector,
concatenated with it, and linearly mixed into the visit representation. Past
prescriptions enter as a second attention pool over the medication texts of
earlier visits, queried by the visit representation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ehr import Visit
from .tensor import Tensor, concat, matmul, softmax_scaled


@dataclass
class FusionParams:
    """Weights for component-text attention and the visit-level mix."""

    key_proj: Tensor    # text_dim x joint_dim
    query_proj: Tensor  # text_dim x joint_dim
    mix_w: Tensor       # 2*text_dim x text_dim
    mix_b: Tensor       # text_dim
    joint_dim: int

    @classmethod
    def init(cls, text_dim: int, joint_dim: int, rng: np.random.Generator) -> "FusionParams":
        def glorot(n_in, n_out):
            return Tensor(rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out)),
                          requires_grad=True)

        return cls(
            key_proj=glorot(text_dim, joint_dim),
            query_proj=glorot(text_dim, joint_dim),
            mix_w=glorot(2 * text_dim, text_dim),
            mix_b=Tensor(np.zeros(text_dim), requires_grad=True),
            joint_dim=joint_dim,
        )

    def named_parameters(self):
        return [
            ("fusion.key_proj", self.key_proj),
            ("fusion.query_proj", self.query_proj),
            ("fusion.mix_w", self.mix_w),
            ("fusion.mix_b", self.mix_b),
        ]


@dataclass
class HistoryParams:
    """Weights for attention over past prescription texts."""

    key_proj: Tensor    # text_dim x joint_dim
    query_proj: Tensor  # text_dim x joint_dim
    out_w: Tensor       # text_dim x joint_dim
    out_b: Tensor       # joint_dim
    joint_dim: int

    @classmethod
    def init(cls, text_dim: int, joint_dim: int, rng: np.random.Generator) -> "HistoryParams":
        def glorot(n_in, n_out):
            return Tensor(rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out)),
                          requires_grad=True)

        return cls(
            key_proj=glorot(text_dim, joint_dim),
            query_proj=glorot(text_dim, joint_dim),
            out_w=glorot(text_dim, joint_dim),
            out_b=Tensor(np.zeros(joint_dim), requires_grad=True),
            joint_dim=joint_dim,
        )

    def named_parameters(self):
        return [
            ("history.key_proj", self.key_proj),
            ("history.query_proj", self.query_proj),
            ("history.out_w", self.out_w),
            ("history.out_b", self.out_b),
        ]


def encode_visit_texts(visit: Visit, table):
    """Look up the combined text plus the three component texts of a visit."""
    return (
        table.lookup(visit.combined_text),
        table.lookup(visit.diag_text),
        table.lookup(visit.proc_text),
        table.lookup(visit.symp_text),
    )


def cross_attention_fuse(h_diag: np.ndarray, h_proc: np.ndarray, h_symp: np.ndarray,
                         h_combined: np.ndarray, params: FusionParams) -> Tensor:
    """Attention-pool the three component embeddings, queried by the combined one."""
    components = Tensor(np.stack([h_diag, h_proc, h_symp]))
    keys = matmul(components, params.key_proj)
    query = matmul(Tensor(h_combined), params.query_proj)
    weights = softmax_scaled(matmul(keys, query), params.joint_dim)
    return matmul(weights, components)


def fuse_patient(pooled: Tensor, h_combined: np.ndarray, params: FusionParams) -> Tensor:
    """Visit representation: linear mix of [pooled || combined-text embedding]."""
    return matmul(concat([pooled, Tensor(h_combined)]), params.mix_w) + params.mix_b


def history_representation(past_med_texts, visit_repr: Tensor, table,
                           params: HistoryParams, window: int | None = None) -> Tensor:
    """Attention-pool past prescription texts; zero vector when there are none.

    Only visits strictly before the current one may appear in
    ``past_med_texts``; an optional window keeps just the most recent ones.
    """
    if window is not None:
        past_med_texts = list(past_med_texts)[-window:]
    if not past_med_texts:
        return Tensor(np.zeros(params.joint_dim))
    med_vecs = Tensor(np.stack([table.lookup(text) for text in past_med_texts]))
    keys = matmul(med_vecs, params.key_proj)
    query = matmul(visit_repr, params.query_proj)
    weights = softmax_scaled(matmul(keys, query), params.joint_dim)
    pooled = matmul(weights, med_vecs)
    return matmul(pooled, params.out_w) + params.out_b
