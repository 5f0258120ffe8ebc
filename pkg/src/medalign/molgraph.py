"""Molecular graphs and a GIN encoder producing per-drug structure vectors.

Molecule file layout (UTF-8 JSON):
  {"feature_cardinalities": {"atom": [9 ints], "bond": [3 ints]},
   "molecules": {med_code: {"atoms": [[9 ints], ...],
                            "bonds": [[i, j, f1, f2, f3], ...]}}}

Each atom carries 9 categorical features and each undirected bond 3; every
categorical slot is embedded through its own learnable table and the slot
embeddings are summed into the hidden width. Message passing aggregates, for
every atom, the sum over neighbors of (neighbor embedding + bond embedding),
combines it with (1 + eps) times the atom's own embedding, and applies a
two-layer MLP. The molecule vector is the mean over final atom embeddings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tensor import (
    Tensor,
    dropout,
    mean_rows,
    relu,
    scatter_rows,
    stack_rows,
    take_rows,
)

ATOM_FEATURE_SLOTS = 9
BOND_FEATURE_SLOTS = 3


class MoleculeError(Exception):
    """A molecule violates the graph schema."""


@dataclass(frozen=True)
class MoleculeGraph:
    atom_features: tuple[tuple[int, ...], ...]
    bonds: tuple[tuple[int, int, tuple[int, ...]], ...]

    @property
    def n_atoms(self) -> int:
        return len(self.atom_features)


def validate_molecule(graph: MoleculeGraph, atom_cards, bond_cards, where: str = "molecule") -> None:
    n = graph.n_atoms
    if n < 1:
        raise MoleculeError(f"{where}: molecule has no atoms")
    for a, feats in enumerate(graph.atom_features):
        if len(feats) != ATOM_FEATURE_SLOTS:
            raise MoleculeError(
                f"{where}: atom {a} has {len(feats)} features, expected {ATOM_FEATURE_SLOTS}")
        for slot, (value, card) in enumerate(zip(feats, atom_cards)):
            if not 0 <= value < card:
                raise MoleculeError(
                    f"{where}: atom {a} feature {slot} = {value} outside cardinality {card}")
    seen: set[tuple[int, int]] = set()
    for i, j, feats in graph.bonds:
        if not (0 <= i < n and 0 <= j < n):
            raise MoleculeError(f"{where}: bond ({i}, {j}) references a missing atom")
        if i == j:
            raise MoleculeError(f"{where}: self-loop bond on atom {i}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise MoleculeError(f"{where}: duplicate bond between atoms {i} and {j}")
        seen.add(key)
        if len(feats) != BOND_FEATURE_SLOTS:
            raise MoleculeError(
                f"{where}: bond ({i}, {j}) has {len(feats)} features, expected {BOND_FEATURE_SLOTS}")
        for slot, (value, card) in enumerate(zip(feats, bond_cards)):
            if not 0 <= value < card:
                raise MoleculeError(
                    f"{where}: bond ({i}, {j}) feature {slot} = {value} outside cardinality {card}")


def parse_molecule(obj: dict, atom_cards, bond_cards, where: str = "molecule") -> MoleculeGraph:
    atoms = obj.get("atoms")
    bonds = obj.get("bonds", [])
    if not isinstance(atoms, list) or not isinstance(bonds, list):
        raise MoleculeError(f"{where}: expected 'atoms' and 'bonds' lists")
    try:
        atom_features = tuple(tuple(int(v) for v in feats) for feats in atoms)
        bond_tuples = tuple(
            (int(b[0]), int(b[1]), tuple(int(v) for v in b[2:])) for b in bonds)
    except (TypeError, ValueError):
        raise MoleculeError(f"{where}: non-integer feature values") from None
    graph = MoleculeGraph(atom_features=atom_features, bonds=bond_tuples)
    validate_molecule(graph, atom_cards, bond_cards, where=where)
    return graph


@dataclass(frozen=True)
class MoleculeSet:
    atom_cardinalities: tuple[int, ...]
    bond_cardinalities: tuple[int, ...]
    molecules: dict[str, MoleculeGraph]


def load_molecules(path: str | Path) -> MoleculeSet:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MoleculeError(f"{path}: malformed JSON: {exc}") from None
    cards = obj.get("feature_cardinalities", {})
    atom_cards = tuple(cards.get("atom", ()))
    bond_cards = tuple(cards.get("bond", ()))
    if len(atom_cards) != ATOM_FEATURE_SLOTS or len(bond_cards) != BOND_FEATURE_SLOTS:
        raise MoleculeError(
            f"{path}: feature_cardinalities must declare {ATOM_FEATURE_SLOTS} atom and "
            f"{BOND_FEATURE_SLOTS} bond slots")
    molecules = {
        code: parse_molecule(m, atom_cards, bond_cards, where=f"{path}: molecule {code!r}")
        for code, m in obj.get("molecules", {}).items()
    }
    return MoleculeSet(atom_cards, bond_cards, molecules)


def molecule_set_to_json(molset: MoleculeSet) -> dict:
    return {
        "feature_cardinalities": {
            "atom": list(molset.atom_cardinalities),
            "bond": list(molset.bond_cardinalities),
        },
        "molecules": {
            code: {
                "atoms": [list(f) for f in g.atom_features],
                "bonds": [[i, j, *feats] for i, j, feats in g.bonds],
            }
            for code, g in molset.molecules.items()
        },
    }


def write_molecules(molset: MoleculeSet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(molecule_set_to_json(molset), indent=1) + "\n",
                          encoding="utf-8")


# -- GIN encoder -------------------------------------------------------------

@dataclass
class GinLayerParams:
    eps: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


class GinParams:
    """Shared encoder weights: per-slot embedding tables plus message layers."""

    def __init__(self, atom_cards, bond_cards, hidden_dim: int, n_layers: int,
                 dropout_rate: float, rng: np.random.Generator):
        self.hidden_dim = int(hidden_dim)
        self.n_layers = int(n_layers)
        self.dropout_rate = float(dropout_rate)
        table_scale = 1.0 / np.sqrt(len(atom_cards))
        self.atom_tables = [
            Tensor(rng.normal(0.0, table_scale, size=(card, hidden_dim)), requires_grad=True)
            for card in atom_cards
        ]
        bond_scale = 1.0 / np.sqrt(len(bond_cards))
        self.bond_tables = [
            Tensor(rng.normal(0.0, bond_scale, size=(card, hidden_dim)), requires_grad=True)
            for card in bond_cards
        ]
        w_scale = np.sqrt(2.0 / (hidden_dim + hidden_dim))
        self.layers = [
            GinLayerParams(
                eps=Tensor(0.0, requires_grad=True),
                w1=Tensor(rng.normal(0.0, w_scale, size=(hidden_dim, hidden_dim)),
                          requires_grad=True),
                b1=Tensor(np.zeros(hidden_dim), requires_grad=True),
                w2=Tensor(rng.normal(0.0, w_scale, size=(hidden_dim, hidden_dim)),
                          requires_grad=True),
                b2=Tensor(np.zeros(hidden_dim), requires_grad=True),
            )
            for _ in range(n_layers)
        ]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        named = [(f"gin.atom_table.{i}", t) for i, t in enumerate(self.atom_tables)]
        named += [(f"gin.bond_table.{i}", t) for i, t in enumerate(self.bond_tables)]
        for k, layer in enumerate(self.layers):
            named += [
                (f"gin.layer.{k}.eps", layer.eps),
                (f"gin.layer.{k}.w1", layer.w1),
                (f"gin.layer.{k}.b1", layer.b1),
                (f"gin.layer.{k}.w2", layer.w2),
                (f"gin.layer.{k}.b2", layer.b2),
            ]
        return named


def atom_embeddings(graph: MoleculeGraph, params: GinParams) -> Tensor:
    """Initial [n_atoms x hidden] embedding: per-slot table rows, summed."""
    feats = np.asarray(graph.atom_features, dtype=np.intp)
    out = take_rows(params.atom_tables[0], feats[:, 0])
    for slot in range(1, len(params.atom_tables)):
        out = out + take_rows(params.atom_tables[slot], feats[:, slot])
    return out


def _directed_edges(graph: MoleculeGraph):
    dst, src, feats = [], [], []
    for i, j, f in graph.bonds:
        dst.append(i); src.append(j); feats.append(f)
        dst.append(j); src.append(i); feats.append(f)
    return np.asarray(dst, dtype=np.intp), np.asarray(src, dtype=np.intp), np.asarray(feats, dtype=np.intp)


def edge_embeddings(graph: MoleculeGraph, params: GinParams) -> Tensor | None:
    """[2E x hidden] embedding of each directed bond, or None when bondless."""
    if not graph.bonds:
        return None
    _, _, feats = _directed_edges(graph)
    out = take_rows(params.bond_tables[0], feats[:, 0])
    for slot in range(1, len(params.bond_tables)):
        out = out + take_rows(params.bond_tables[slot], feats[:, slot])
    return out


def gin_layer(feats: Tensor, graph: MoleculeGraph, params: GinParams, layer_index: int,
              edge_feats: Tensor | None = None, training: bool = False,
              rng: np.random.Generator | None = None) -> Tensor:
    """One message-passing round over the molecule."""
    if feats.shape[0] != graph.n_atoms:
        raise MoleculeError(
            f"feature rows {feats.shape[0]} != atom count {graph.n_atoms}")
    layer = params.layers[layer_index]
    if graph.bonds:
        dst, src, _ = _directed_edges(graph)
        if edge_feats is None:
            edge_feats = edge_embeddings(graph, params)
        messages = take_rows(feats, src) + edge_feats
        agg = scatter_rows(messages, dst, graph.n_atoms)
    else:
        agg = Tensor(np.zeros(feats.shape))
    combined = feats * (layer.eps + 1.0) + agg
    hidden = relu(combined @ layer.w1 + layer.b1)
    hidden = dropout(hidden, params.dropout_rate, rng, training)
    return hidden @ layer.w2 + layer.b2


def gin_readout(feats: Tensor) -> Tensor:
    """Mean over atom embeddings; the molecule-level vector."""
    return mean_rows(feats)


def encode_molecule(graph: MoleculeGraph, params: GinParams, training: bool = False,
                    rng: np.random.Generator | None = None) -> Tensor:
    feats = atom_embeddings(graph, params)
    edge_feats = edge_embeddings(graph, params)
    for k in range(params.n_layers):
        feats = gin_layer(feats, graph, params, k, edge_feats=edge_feats,
                          training=training, rng=rng)
    return gin_readout(feats)


def encode_all_medications(graphs, params: GinParams, training: bool = False,
                           rng: np.random.Generator | None = None) -> Tensor:
    """Encode every medication with the shared parameters; one row per drug."""
    if not graphs:
        raise MoleculeError("no molecules to encode")
    return stack_rows([encode_molecule(g, params, training=training, rng=rng) for g in graphs])
