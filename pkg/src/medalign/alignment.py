"""Joint-space projection of both towers, similarity scoring, set prediction.

Both towers are projected by separate two-layer MLPs (ReLU between, dropout
on the hidden activation during training) into one joint width; a visit's
score for each medication is the sigmoid of the inner product between the
patient feature and that medication's projected row. The recommendation set
keeps indices whose score strictly exceeds the threshold.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, concat, dropout, matmul, relu, sigmoid


@dataclass
class MlpParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor

    @classmethod
    def init(cls, in_dim: int, hidden_dim: int, out_dim: int,
             rng: np.random.Generator) -> "MlpParams":
        def glorot(n_in, n_out):
            return Tensor(rng.normal(0.0, np.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out)),
                          requires_grad=True)

        return cls(
            w1=glorot(in_dim, hidden_dim),
            b1=Tensor(np.zeros(hidden_dim), requires_grad=True),
            w2=glorot(hidden_dim, out_dim),
            b2=Tensor(np.zeros(out_dim), requires_grad=True),
        )

    def apply(self, x: Tensor, dropout_rate: float, training: bool,
              rng: np.random.Generator | None) -> Tensor:
        hidden = relu(matmul(x, self.w1) + self.b1)
        hidden = dropout(hidden, dropout_rate, rng, training)
        return matmul(hidden, self.w2) + self.b2


@dataclass
class ProjectionParams:
    """The two tower MLPs mapping into the shared joint space."""

    patient_mlp: MlpParams
    med_mlp: MlpParams
    dropout_rate: float

    @classmethod
    def init(cls, patient_in: int, med_in: int, joint_dim: int, dropout_rate: float,
             rng: np.random.Generator) -> "ProjectionParams":
        return cls(
            patient_mlp=MlpParams.init(patient_in, joint_dim, joint_dim, rng),
            med_mlp=MlpParams.init(med_in, joint_dim, joint_dim, rng),
            dropout_rate=dropout_rate,
        )

    def named_parameters(self):
        return [
            ("projection.patient.w1", self.patient_mlp.w1),
            ("projection.patient.b1", self.patient_mlp.b1),
            ("projection.patient.w2", self.patient_mlp.w2),
            ("projection.patient.b2", self.patient_mlp.b2),
            ("projection.med.w1", self.med_mlp.w1),
            ("projection.med.b1", self.med_mlp.b1),
            ("projection.med.w2", self.med_mlp.w2),
            ("projection.med.b2", self.med_mlp.b2),
        ]

    def project_patient(self, visit_repr: Tensor, training: bool = False,
                        rng: np.random.Generator | None = None) -> Tensor:
        return self.patient_mlp.apply(visit_repr, self.dropout_rate, training, rng)

    def project_medications(self, med_matrix: Tensor, training: bool = False,
                            rng: np.random.Generator | None = None) -> Tensor:
        return self.med_mlp.apply(med_matrix, self.dropout_rate, training, rng)


@dataclass(frozen=True)
class PredictionConfig:
    threshold: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


def build_medication_matrix(struct_matrix: Tensor | None,
                            text_matrix: Tensor | None) -> Tensor:
    """Row-wise concatenation [structure || text]; either branch may be absent."""
    if struct_matrix is None and text_matrix is None:
        raise ValueError("at least one medication branch is required")
    if struct_matrix is None:
        return text_matrix
    if text_matrix is None:
        return struct_matrix
    if struct_matrix.shape[0] != text_matrix.shape[0]:
        raise ShapeError(
            f"medication branch row counts differ: {struct_matrix.shape} vs {text_matrix.shape}")
    return concat([struct_matrix, text_matrix], axis=1)


def score(patient_feature: Tensor, med_projected: Tensor) -> Tensor:
    """Sigmoid inner-product score of one patient feature against every drug row."""
    if med_projected.shape[1] != patient_feature.shape[0]:
        raise ShapeError(
            f"joint dims differ: medications {med_projected.shape} vs "
            f"patient {patient_feature.shape}")
    return sigmoid(matmul(med_projected, patient_feature))


def predict_set(scores: np.ndarray, cfg: PredictionConfig) -> set[int]:
    """Indices scoring strictly above the threshold; may be empty."""
    return {int(i) for i in np.flatnonzero(scores > cfg.threshold)}


def rank_medications(scores: np.ndarray) -> list[int]:
    """Indices by descending score, ties broken by ascending index."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    return [int(i) for i in order]
