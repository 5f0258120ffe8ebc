"""Loss functions, the training loop, and checkpoint serialization.

Per patient, the loss sums over that patient's visits: a label-wise binary
cross entropy plus a positive/negative hinge that pushes prescribed drugs
above unprescribed ones, blended by a weight ``alpha``. A batch optimizes
the mean of its patients' losses with one Adam step; the learning rate
decays multiplicatively on a fixed epoch period. The best parameters by
validation Jaccard are kept.

Checkpoint layout: magic ``NLACKPT1``, little-endian u32 header length, a
JSON header (parameter manifest with shapes, model config, run config echo),
then every parameter as little-endian float64 in manifest order.
"""
from __future__ import annotations

import csv
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .alignment import PredictionConfig
from .ehr import Dataset, split_dataset
from .metrics import evaluate, mean_jaccard
from .model import Model, ModelConfig, ModelParams, visit_labels
from .molgraph import MoleculeSet
from .tensor import (
    AdamState,
    ShapeError,
    Tensor,
    adam_step,
    backward,
    clamp,
    log,
    relu,
    take_rows,
)

CKPT_MAGIC = b"NLACKPT1"
LOG_COLUMNS = ("epoch", "lr", "train_loss", "val_jaccard", "val_f1", "val_prauc")


class NumericError(Exception):
    """Training produced a non-finite value."""


class CheckpointError(Exception):
    """The bytes do not form a valid checkpoint."""


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.95
    lr: float = 5e-4
    epochs: int = 110
    batch_size: int = 8
    seed: int = 0
    lr_decay_factor: float = 0.95
    lr_decay_every: int = 10
    stop_train_jaccard: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def bce_loss(visit_scores, labels, eps_log: float = 1e-12) -> Tensor:
    """Binary cross entropy summed over visits and medications (logs clamped)."""
    if len(visit_scores) != len(labels):
        raise ShapeError(f"{len(visit_scores)} score vectors vs {len(labels)} label vectors")
    total = Tensor(0.0)
    for scores, y in zip(visit_scores, labels):
        y = np.asarray(y, dtype=np.float64)
        if scores.shape != y.shape:
            raise ShapeError(f"scores {scores.shape} vs labels {y.shape}")
        y_t = Tensor(y)
        hit = y_t * log(clamp(scores, lo=eps_log))
        miss = (1.0 - y_t) * log(clamp(1.0 - scores, lo=eps_log))
        total = total + (hit + miss).sum()
    return -total


def margin_loss(visit_scores, labels) -> Tensor:
    """Hinge between every (prescribed, unprescribed) score pair, over visits.

    Each pair contributes max(1 - (s_pos - s_neg), 0) / n_medications; visits
    with no positive or no negative labels contribute nothing.
    """
    if len(visit_scores) != len(labels):
        raise ShapeError(f"{len(visit_scores)} score vectors vs {len(labels)} label vectors")
    total = Tensor(0.0)
    for scores, y in zip(visit_scores, labels):
        y = np.asarray(y)
        if scores.shape != y.shape:
            raise ShapeError(f"scores {scores.shape} vs labels {y.shape}")
        pos = np.flatnonzero(y == 1)
        neg = np.flatnonzero(y == 0)
        if len(pos) == 0 or len(neg) == 0:
            continue
        s_pos = take_rows(scores, pos).reshape((len(pos), 1))
        s_neg = take_rows(scores, neg).reshape((1, len(neg)))
        hinge = relu(1.0 - s_pos + s_neg)
        total = total + hinge.sum() * (1.0 / len(y))
    return total


def total_loss(bce: Tensor, margin: Tensor, alpha: float) -> Tensor:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    return bce * alpha + margin * (1.0 - alpha)


def patient_loss(model: Model, patient, dataset: Dataset, table, med_projected,
                 alpha: float, training: bool, rng) -> Tensor:
    scores = [model.visit_scores(patient, t, table, med_projected, training, rng)
              for t in range(len(patient.visits))]
    labels = visit_labels(dataset, patient)
    return total_loss(bce_loss(scores, labels), margin_loss(scores, labels), alpha)


@dataclass
class TrainResult:
    model: Model
    log_rows: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_jaccard: float | None = None
    stopped_early: bool = False


def train(dataset: Dataset, molecules: MoleculeSet, table, model_cfg: ModelConfig,
          cfg: TrainConfig, prediction_cfg: PredictionConfig | None = None) -> TrainResult:
    """Fit a model on the dataset's train split; keep the best-validation epoch."""
    prediction_cfg = prediction_cfg or PredictionConfig()
    med_vocab = dataset.vocabularies["medication"]
    train_split, val_split, _ = split_dataset(dataset, cfg.seed)
    model = Model.build(model_cfg, dataset, molecules, table, seed=cfg.seed)
    params = model.params.parameters()
    opt = AdamState(params, lr=cfg.lr)
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    dropout_rng = np.random.default_rng(cfg.seed + 2)

    result = TrainResult(model=model)
    best_arrays = None
    for epoch in range(1, cfg.epochs + 1):
        if epoch > 1 and (epoch - 1) % cfg.lr_decay_every == 0:
            opt.lr *= cfg.lr_decay_factor

        order = shuffle_rng.permutation(len(train_split))
        batch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [train_split[i] for i in order[start:start + cfg.batch_size]]
            med_projected = model.medication_features(training=True, rng=dropout_rng)
            losses = [
                patient_loss(model, p, dataset, table, med_projected,
                             cfg.alpha, True, dropout_rng)
                for p in batch
            ]
            for p, loss in zip(batch, losses):
                if not np.isfinite(loss.item()):
                    raise NumericError(
                        f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}, "
                        f"patient {p.patient_id!r}")
            batch_loss = losses[0]
            for loss in losses[1:]:
                batch_loss = batch_loss + loss
            batch_loss = batch_loss * (1.0 / len(losses))
            backward(batch_loss)
            adam_step(opt, params)
            batch_losses.append(batch_loss.item())

        row = {
            "epoch": epoch,
            "lr": opt.lr,
            "train_loss": float(np.mean(batch_losses)) if batch_losses else 0.0,
            "val_jaccard": 0.0, "val_f1": 0.0, "val_prauc": 0.0,
        }
        if val_split:
            val_scores = model.score_patients(val_split, table)
            report = evaluate(val_split, val_scores, med_vocab, prediction_cfg,
                              bootstrap_rounds=0)
            row["val_jaccard"] = report.jaccard_mean
            row["val_f1"] = report.f1_mean
            row["val_prauc"] = report.prauc_mean
            if result.best_val_jaccard is None or report.jaccard_mean > result.best_val_jaccard:
                result.best_val_jaccard = report.jaccard_mean
                result.best_epoch = epoch
                best_arrays = model.params.snapshot()
        result.log_rows.append(row)

        if cfg.stop_train_jaccard is not None and train_split:
            train_scores = model.score_patients(train_split, table)
            if mean_jaccard(train_split, train_scores, med_vocab,
                            prediction_cfg) >= cfg.stop_train_jaccard:
                result.stopped_early = True
                break

    # Early stop on the train-split target keeps the params that reached it;
    # otherwise the best-validation snapshot wins.
    if best_arrays is not None and not result.stopped_early:
        model.params.load_state_arrays(best_arrays)
    return result


def write_training_log(rows, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in LOG_COLUMNS})


# -- checkpoint I/O ----------------------------------------------------------

def save_checkpoint(path: str | Path, params: ModelParams,
                    run_config: dict | None = None) -> None:
    manifest = [{"name": name, "shape": list(arr.shape)}
                for name, arr in params.state_arrays()]
    header = {
        "format_version": 1,
        "model_config": params.cfg.to_dict(),
        "run_config": run_config or {},
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for _, arr in params.state_arrays():
            fh.write(arr.astype("<f8").tobytes())


def load_checkpoint(path: str | Path):
    """Returns (model_config, {name: array}, run_config)."""
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: bad magic {data[:8]!r}, expected {CKPT_MAGIC!r}")
    if len(data) < 12:
        raise CheckpointError(f"{path}: truncated header")
    (header_len,) = struct.unpack_from("<I", data, 8)
    if 12 + header_len > len(data):
        raise CheckpointError(f"{path}: truncated header payload")
    try:
        header = json.loads(data[12:12 + header_len].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header: {exc}") from None
    try:
        model_cfg = ModelConfig.from_dict(header["model_config"])
        manifest = header["params"]
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: incomplete header: {exc}") from None

    arrays: dict[str, np.ndarray] = {}
    offset = 12 + header_len
    for entry in manifest:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count
        if offset + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated payload at parameter {entry['name']!r}")
        arrays[entry["name"]] = np.frombuffer(
            data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return model_cfg, arrays, header.get("run_config", {})


def model_from_checkpoint(path: str | Path, dataset: Dataset, molecules: MoleculeSet,
                          table) -> tuple[Model, dict]:
    model_cfg, arrays, run_config = load_checkpoint(path)
    model = Model.build(model_cfg, dataset, molecules, table, seed=0)
    model.params.load_state_arrays(arrays)
    return model, run_config
