"""Per-visit recommendation metrics and the evaluation report.

Jaccard and F1 compare the predicted set against the ground-truth set;
ranking quality is measured as average precision over the score vector
(descending scores, ties broken by ascending index). The interaction rate of
a prescription is the fraction of its unordered medication pairs that appear
in the known-interaction list; the reported delta is the model's rate minus
the ground truth's.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .alignment import PredictionConfig, predict_set


def jaccard(pred: set, truth: set) -> float:
    """|intersection| / |union|; two empty sets agree perfectly (1.0)."""
    if not pred and not truth:
        return 1.0
    union = len(pred | truth)
    return len(pred & truth) / union


def f1(pred: set, truth: set) -> float:
    """Harmonic mean of precision and recall; empty vs empty is 1.0."""
    if not pred and not truth:
        return 1.0
    hits = len(pred & truth)
    if hits == 0:
        return 0.0
    precision = hits / len(pred)
    recall = hits / len(truth)
    return 2.0 * precision * recall / (precision + recall)


def prauc(scores: np.ndarray, truth: np.ndarray) -> float:
    """Average precision of the score ranking against multi-hot truth."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValueError(f"shape mismatch: scores {scores.shape} vs truth {truth.shape}")
    n_pos = int(truth.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without a positive label")
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        if truth[idx]:
            hits += 1
            total += hits / rank
    return total / n_pos


def ddi_rate(pred_sets, ddi_pairs) -> float:
    """Mean, over prescriptions with >= 2 drugs, of the interacting-pair fraction."""
    rates = []
    for pred in pred_sets:
        items = sorted(pred)
        if len(items) < 2:
            continue
        pairs = list(combinations(items, 2))
        bad = sum(1 for a, b in pairs if (a, b) in ddi_pairs or (b, a) in ddi_pairs)
        rates.append(bad / len(pairs))
    return float(np.mean(rates)) if rates else 0.0


@dataclass
class EvalReport:
    jaccard_mean: float
    jaccard_std: float
    f1_mean: float
    f1_std: float
    prauc_mean: float
    prauc_std: float
    n_visits: int
    n_skipped_prauc: int
    ddi_rate: float | None = None
    delta_ddi: float | None = None

    def to_dict(self, config_echo: dict | None = None) -> dict:
        d = {
            "jaccard": {"mean": self.jaccard_mean, "std": self.jaccard_std},
            "f1": {"mean": self.f1_mean, "std": self.f1_std},
            "prauc": {"mean": self.prauc_mean, "std": self.prauc_std},
            "n_visits": self.n_visits,
            "n_skipped_prauc": self.n_skipped_prauc,
        }
        if self.ddi_rate is not None:
            d["ddi_rate"] = self.ddi_rate
            d["delta_ddi"] = self.delta_ddi
        if config_echo is not None:
            d["config"] = config_echo
        return d

    def to_json(self, config_echo: dict | None = None) -> str:
        return json.dumps(self.to_dict(config_echo), indent=2)


def _per_visit_metrics(patients, score_lists, med_codes, cfg: PredictionConfig):
    """Per-patient lists of (jaccard, f1, prauc-or-None) plus predicted code sets."""
    per_patient = []
    pred_code_sets = []
    truth_code_sets = []
    for patient, visit_scores in zip(patients, score_lists):
        rows = []
        for visit, scores in zip(patient.visits, visit_scores):
            truth_idx = {med_codes.index_of(c) for c in visit.med_codes}
            pred_idx = predict_set(scores, cfg)
            truth_vec = np.zeros(len(scores))
            truth_vec[sorted(truth_idx)] = 1.0
            ap = prauc(scores, truth_vec) if truth_idx else None
            rows.append((jaccard(pred_idx, truth_idx), f1(pred_idx, truth_idx), ap))
            pred_code_sets.append({med_codes.codes[i] for i in pred_idx})
            truth_code_sets.append(set(visit.med_codes))
        per_patient.append(rows)
    return per_patient, pred_code_sets, truth_code_sets


def _mean_of(per_patient, which: int, indices) -> tuple[float, int]:
    values = [row[which]
              for i in indices for row in per_patient[i] if row[which] is not None]
    return (float(np.mean(values)) if values else 0.0), len(values)


def evaluate(patients, score_lists, med_vocab, prediction_cfg: PredictionConfig,
             ddi_pairs=None, bootstrap_rounds: int = 10, seed: int = 0) -> EvalReport:
    """Aggregate per-visit metrics over a split.

    Deviations are the spread of the per-round means under patient
    resampling (``bootstrap_rounds`` rounds, with replacement).
    """
    if not patients:
        raise ValueError("cannot evaluate an empty split")
    per_patient, pred_sets, truth_sets = _per_visit_metrics(
        patients, score_lists, med_vocab, prediction_cfg)

    everyone = range(len(patients))
    j_mean, n_visits = _mean_of(per_patient, 0, everyone)
    f_mean, _ = _mean_of(per_patient, 1, everyone)
    p_mean, n_scored = _mean_of(per_patient, 2, everyone)

    stds = [0.0, 0.0, 0.0]
    if bootstrap_rounds > 1:
        rng = np.random.default_rng(seed)
        rounds = [[], [], []]
        for _ in range(bootstrap_rounds):
            sample = rng.integers(0, len(patients), size=len(patients))
            for which in range(3):
                rounds[which].append(_mean_of(per_patient, which, sample)[0])
        stds = [float(np.std(r)) for r in rounds]

    report = EvalReport(
        jaccard_mean=j_mean, jaccard_std=stds[0],
        f1_mean=f_mean, f1_std=stds[1],
        prauc_mean=p_mean, prauc_std=stds[2],
        n_visits=n_visits, n_skipped_prauc=n_visits - n_scored,
    )
    if ddi_pairs is not None:
        model_rate = ddi_rate(pred_sets, ddi_pairs)
        truth_rate = ddi_rate(truth_sets, ddi_pairs)
        report.ddi_rate = model_rate
        report.delta_ddi = model_rate - truth_rate
    return report


def mean_jaccard(patients, score_lists, med_vocab, prediction_cfg: PredictionConfig) -> float:
    """Fast path for model selection: mean per-visit Jaccard only."""
    per_patient, _, _ = _per_visit_metrics(patients, score_lists, med_vocab, prediction_cfg)
    return _mean_of(per_patient, 0, range(len(patients)))[0]
