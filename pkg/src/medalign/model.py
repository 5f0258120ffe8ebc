"""End-to-end model assembly: configuration, parameter set, forward passes.

The medication tower runs once per step (graph encoder over every molecule,
optional description-text branch, projection MLP); the patient tower runs per
visit (text fusion, optional history attention, projection MLP) and the two
meet in an inner-product score per medication.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import molgraph
from .alignment import ProjectionParams, build_medication_matrix, score
from .ehr import Dataset, PatientRecord, visit_to_multihot
from .molgraph import GinParams, MoleculeSet
from .patient import (
    FusionParams,
    HistoryParams,
    cross_attention_fuse,
    encode_visit_texts,
    fuse_patient,
    history_representation,
)
from .tensor import Tensor


@dataclass(frozen=True)
class ModelConfig:
    n_meds: int
    atom_cardinalities: tuple[int, ...]
    bond_cardinalities: tuple[int, ...]
    text_dim: int = 768
    joint_dim: int = 256
    struct_dim: int = 64
    gin_layers: int = 4
    dropout: float = 0.2
    use_med_text: bool = True
    use_med_struct: bool = True
    use_history: bool = True
    history_window: int | None = None

    def __post_init__(self):
        if not (self.use_med_text or self.use_med_struct):
            raise ValueError("at least one medication branch must be enabled")
        if min(self.n_meds, self.text_dim, self.joint_dim, self.struct_dim, self.gin_layers) < 1:
            raise ValueError("model dimensions must be >= 1")
        object.__setattr__(self, "atom_cardinalities", tuple(self.atom_cardinalities))
        object.__setattr__(self, "bond_cardinalities", tuple(self.bond_cardinalities))

    @property
    def med_in_dim(self) -> int:
        return (self.struct_dim if self.use_med_struct else 0) + \
               (self.text_dim if self.use_med_text else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["atom_cardinalities"] = list(self.atom_cardinalities)
        d["bond_cardinalities"] = list(self.bond_cardinalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["atom_cardinalities"] = tuple(d["atom_cardinalities"])
        d["bond_cardinalities"] = tuple(d["bond_cardinalities"])
        if d.get("history_window") is not None:
            d["history_window"] = int(d["history_window"])
        return cls(**d)


class ModelParams:
    """Every learnable tensor, with a canonical (name, tensor) manifest."""

    def __init__(self, cfg: ModelConfig, seed: int):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.fusion = FusionParams.init(cfg.text_dim, cfg.joint_dim, rng)
        self.history = (HistoryParams.init(cfg.text_dim, cfg.joint_dim, rng)
                        if cfg.use_history else None)
        self.gin = (GinParams(cfg.atom_cardinalities, cfg.bond_cardinalities,
                              cfg.struct_dim, cfg.gin_layers, cfg.dropout, rng)
                    if cfg.use_med_struct else None)
        self.projection = ProjectionParams.init(
            cfg.text_dim, cfg.med_in_dim, cfg.joint_dim, cfg.dropout, rng)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = self.fusion.named_parameters()
        if self.history is not None:
            named += self.history.named_parameters()
        if self.gin is not None:
            named += self.gin.named_parameters()
        named += self.projection.named_parameters()
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return [(name, t.data) for name, t in self.named_parameters()]

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self.named_parameters():
            if name not in arrays:
                raise ValueError(f"checkpoint is missing parameter {name!r}")
            value = arrays[name]
            if value.shape != t.data.shape:
                raise ValueError(
                    f"parameter {name!r}: checkpoint shape {value.shape} != model "
                    f"shape {t.data.shape}")
            t.data = value.astype(np.float64).copy()
            t.zero_grad()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_parameters()}


@dataclass
class Model:
    """Bundle of config, parameters, and the frozen per-corpus inputs."""

    cfg: ModelConfig
    params: ModelParams
    med_graphs: list
    med_text_matrix: np.ndarray | None

    @classmethod
    def build(cls, cfg: ModelConfig, dataset: Dataset, molecules: MoleculeSet,
              table, seed: int) -> "Model":
        med_vocab = dataset.vocabularies["medication"]
        if cfg.n_meds != len(med_vocab):
            raise ValueError(
                f"config n_meds {cfg.n_meds} != medication vocabulary size {len(med_vocab)}")
        graphs = []
        if cfg.use_med_struct:
            for code in med_vocab.codes:
                if code not in molecules.molecules:
                    raise ValueError(f"no molecule for medication code {code!r}")
                graphs.append(molecules.molecules[code])
        text_matrix = None
        if cfg.use_med_text:
            text_matrix = np.stack([table.lookup(text) for text in med_vocab.texts])
        return cls(cfg=cfg, params=ModelParams(cfg, seed), med_graphs=graphs,
                   med_text_matrix=text_matrix)

    def medication_features(self, training: bool = False,
                            rng: np.random.Generator | None = None) -> Tensor:
        """Projected medication matrix, one joint-space row per drug."""
        struct = None
        if self.cfg.use_med_struct:
            struct = molgraph.encode_all_medications(
                self.med_graphs, self.params.gin, training=training, rng=rng)
        text = Tensor(self.med_text_matrix) if self.cfg.use_med_text else None
        med_matrix = build_medication_matrix(struct, text)
        return self.params.projection.project_medications(med_matrix, training, rng)

    def visit_feature(self, patient: PatientRecord, t: int, table,
                      training: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """Joint-space patient feature for visit t (0-based) of a patient."""
        visit = patient.visits[t]
        h_combined, h_diag, h_proc, h_symp = encode_visit_texts(visit, table)
        pooled = cross_attention_fuse(h_diag, h_proc, h_symp, h_combined, self.params.fusion)
        visit_repr = fuse_patient(pooled, h_combined, self.params.fusion)
        feature = self.params.projection.project_patient(visit_repr, training, rng)
        if self.cfg.use_history:
            past_texts = [patient.visits[i].med_text for i in range(t)]
            feature = feature + history_representation(
                past_texts, visit_repr, table, self.params.history,
                window=self.cfg.history_window)
        return feature

    def visit_scores(self, patient: PatientRecord, t: int, table, med_projected: Tensor,
                     training: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        return score(self.visit_feature(patient, t, table, training, rng), med_projected)

    def score_patients(self, patients, table) -> list[list[np.ndarray]]:
        """Evaluation-mode score vectors for every visit of every patient."""
        med_projected = self.medication_features(training=False)
        out = []
        for patient in patients:
            out.append([
                self.visit_scores(patient, t, table, med_projected, training=False).data
                for t in range(len(patient.visits))
            ])
        return out


def visit_labels(dataset: Dataset, patient: PatientRecord) -> list[np.ndarray]:
    med_vocab = dataset.vocabularies["medication"]
    return [visit_to_multihot(v.med_codes, med_vocab) for v in patient.visits]
