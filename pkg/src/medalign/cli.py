"""Command-line entry points: gen-synth, train, eval, predict.

A run is configured by a single JSON document (see ``gen-synth``'s emitted
``corpus_config.json``) whose values individual flags override. Exit codes:
0 success, 2 validation error, 3 I/O or file-format error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from .alignment import PredictionConfig, predict_set
from .ehr import ValidationError, corpus_text_keys, load_dataset, split_dataset
from .embeddings import (
    EmbeddingFormatError,
    EmbeddingKeyError,
    PseudoEmbeddings,
    load_embeddings,
)
from .metrics import evaluate
from .model import Model, ModelConfig
from .molgraph import MoleculeError, load_molecules
from .synth import SynthConfig, SynthCorpus, gen_synthetic, write_corpus
from .training import (
    CheckpointError,
    NumericError,
    TrainConfig,
    load_checkpoint,
    model_from_checkpoint,
    save_checkpoint,
    train,
    write_training_log,
)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

VOCAB_KEYS = ("vocab_diagnosis", "vocab_procedure", "vocab_symptom", "vocab_medication")

MODEL_KEYS = ("text_dim", "joint_dim", "struct_dim", "gin_layers", "dropout",
              "use_med_text", "use_med_struct", "use_history", "history_window")
TRAIN_KEYS = ("alpha", "lr", "epochs", "batch_size", "seed", "lr_decay_factor",
              "lr_decay_every", "stop_train_jaccard")


def _read_config_file(path: str) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: malformed config JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return obj


def _merge_run_config(args: argparse.Namespace) -> dict:
    """File config first, then every explicitly passed flag on top."""
    cfg: dict = {"model": {}, "train": {}, "threshold": 0.5, "pseudo_seed": None}
    if getattr(args, "config", None):
        file_cfg = _read_config_file(args.config)
        cfg["model"].update(file_cfg.pop("model", {}))
        cfg["train"].update(file_cfg.pop("train", {}))
        cfg.update(file_cfg)

    for key in ("ehr", "molecules", "embeddings", "ddi", "out_dir", "threshold",
                *VOCAB_KEYS):
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if getattr(args, "pseudo_embeddings", None) is not None:
        cfg["pseudo_seed"] = args.pseudo_embeddings
    for key in MODEL_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg["model"][key] = value
    for key in TRAIN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg["train"][key] = value

    if cfg.get("embeddings") and cfg.get("pseudo_seed") is not None:
        raise ValidationError(
            "an embeddings file and --pseudo-embeddings are mutually exclusive")
    return cfg


def _require(cfg: dict, keys) -> None:
    missing = [k for k in keys if not cfg.get(k)]
    if missing:
        raise ValidationError(f"missing required config value(s): {', '.join(missing)}")


def _load_corpus(cfg: dict):
    _require(cfg, ("ehr", "molecules", *VOCAB_KEYS))
    dataset = load_dataset(
        cfg["ehr"],
        {kind: cfg[f"vocab_{kind}"]
         for kind in ("diagnosis", "procedure", "symptom", "medication")},
        ddi_path=cfg.get("ddi"))
    molecules = load_molecules(cfg["molecules"])
    return dataset, molecules


def _build_table(cfg: dict, text_dim: int):
    if cfg.get("pseudo_seed") is not None:
        return PseudoEmbeddings(text_dim, int(cfg["pseudo_seed"]))
    _require(cfg, ("embeddings",))
    table = load_embeddings(cfg["embeddings"])
    if table.dim != text_dim:
        raise ValidationError(
            f"embedding file dim {table.dim} != model text_dim {text_dim}")
    return table


def _check_table_covers_corpus(table, dataset) -> None:
    for key in sorted(corpus_text_keys(dataset)):
        if key not in table:
            raise EmbeddingKeyError(key)


def _model_config(cfg: dict, dataset, molecules) -> ModelConfig:
    knobs = dict(cfg.get("model", {}))
    return ModelConfig(
        n_meds=len(dataset.vocabularies["medication"]),
        atom_cardinalities=molecules.atom_cardinalities,
        bond_cardinalities=molecules.bond_cardinalities,
        **knobs)


def _split_by_name(dataset, seed: int, name: str):
    train_split, val_split, test_split = split_dataset(dataset, seed)
    try:
        return {"train": train_split, "val": val_split, "test": test_split}[name]
    except KeyError:
        raise ValidationError(f"unknown split {name!r}") from None


# -- commands -----------------------------------------------------------------

def cmd_gen_synth(args) -> int:
    cfg = SynthConfig(
        seed=args.seed, n_patients=args.n_patients, n_diagnoses=args.n_diagnoses,
        n_procedures=args.n_procedures, n_symptoms=args.n_symptoms,
        n_medications=args.n_medications, max_visits=args.max_visits,
        avg_meds=args.avg_meds, include_ddi=not args.no_ddi)
    corpus: SynthCorpus = gen_synthetic(cfg)
    paths = write_corpus(corpus, args.out_dir)

    # Self-validation: the generated files must parse under their own schemas.
    reloaded, _ = _load_corpus({**paths})
    assert reloaded.patients == corpus.dataset.patients

    generator_echo = {k: v for k, v in vars(args).items() if k != "func"}
    run_config = {**paths, "generator": {**generator_echo, "command": "gen-synth"}}
    config_path = Path(args.out_dir) / "corpus_config.json"
    config_path.write_text(json.dumps(run_config, indent=2, sort_keys=True) + "\n",
                           encoding="utf-8")
    n_visits = sum(len(p.visits) for p in corpus.dataset.patients)
    print(f"wrote corpus: {cfg.n_patients} patients, {n_visits} visits, "
          f"{cfg.n_medications} medications -> {args.out_dir}")
    print(f"config: {config_path}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _merge_run_config(args)
    _require(cfg, ("out_dir",))
    dataset, molecules = _load_corpus(cfg)
    model_cfg = _model_config(cfg, dataset, molecules)
    table = _build_table(cfg, model_cfg.text_dim)
    _check_table_covers_corpus(table, dataset)
    train_cfg = TrainConfig(**cfg.get("train", {}))
    prediction_cfg = PredictionConfig(float(cfg.get("threshold", 0.5)))

    result = train(dataset, molecules, table, model_cfg, train_cfg, prediction_cfg)

    out_dir = Path(cfg["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    echo = {k: v for k, v in cfg.items() if k not in ("model", "train")}
    echo["model"] = model_cfg.to_dict()
    echo["train"] = dataclasses.asdict(train_cfg)
    echo["threshold"] = prediction_cfg.threshold
    ckpt_path = out_dir / "checkpoint.nlackpt"
    save_checkpoint(ckpt_path, result.model.params, run_config=echo)
    log_path = out_dir / "training_log.csv"
    write_training_log(result.log_rows, log_path)

    if result.log_rows:
        last = result.log_rows[-1]
        print(f"trained {len(result.log_rows)} epochs; "
              f"best val jaccard {result.best_val_jaccard} (epoch {result.best_epoch}); "
              f"final val jaccard {last['val_jaccard']:.4f} f1 {last['val_f1']:.4f} "
              f"prauc {last['val_prauc']:.4f}")
    else:
        print("trained 0 epochs; checkpoint holds the initial parameters")
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _merge_run_config(args)
    dataset, molecules = _load_corpus(cfg)
    model_cfg_from_ckpt, _, _ = load_checkpoint(args.checkpoint)
    table = _build_table(cfg, model_cfg_from_ckpt.text_dim)
    _check_table_covers_corpus(table, dataset)
    model, _ = model_from_checkpoint(args.checkpoint, dataset, molecules, table)

    split = _split_by_name(dataset, int(cfg.get("train", {}).get("seed", 0)), args.split)
    if not split:
        raise ValidationError(f"split {args.split!r} is empty")
    score_lists = model.score_patients(split, table)
    prediction_cfg = PredictionConfig(float(cfg.get("threshold", 0.5)))
    report = evaluate(split, score_lists, dataset.vocabularies["medication"],
                      prediction_cfg, ddi_pairs=dataset.ddi_pairs,
                      bootstrap_rounds=args.bootstrap_rounds, seed=args.eval_seed)

    echo = {**{k: v for k, v in cfg.items() if k != "model"},
            "model": model.cfg.to_dict(), "checkpoint": str(args.checkpoint),
            "split": args.split}
    out_path = Path(args.report) if args.report else Path(cfg.get("out_dir", ".")) / "report.json"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(report.to_json(config_echo=echo) + "\n", encoding="utf-8")
    print(f"{args.split}: jaccard {report.jaccard_mean:.4f} f1 {report.f1_mean:.4f} "
          f"prauc {report.prauc_mean:.4f}"
          + (f" ddi {report.ddi_rate:.4f} (delta {report.delta_ddi:+.4f})"
             if report.ddi_rate is not None else ""))
    print(f"report: {out_path}")
    return EXIT_OK


def cmd_predict(args) -> int:
    cfg = _merge_run_config(args)
    dataset, molecules = _load_corpus(cfg)
    model_cfg_from_ckpt, _, _ = load_checkpoint(args.checkpoint)
    table = _build_table(cfg, model_cfg_from_ckpt.text_dim)
    _check_table_covers_corpus(table, dataset)
    model, _ = model_from_checkpoint(args.checkpoint, dataset, molecules, table)
    prediction_cfg = PredictionConfig(float(cfg.get("threshold", 0.5)))
    med_vocab = dataset.vocabularies["medication"]

    out_path = Path(args.out) if args.out else Path(cfg.get("out_dir", ".")) / "predictions.jsonl"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    score_lists = model.score_patients(dataset.patients, table)
    with open(out_path, "w", encoding="utf-8") as fh:
        for patient, visit_scores in zip(dataset.patients, score_lists):
            for t, scores in enumerate(visit_scores):
                chosen = sorted(predict_set(scores, prediction_cfg))
                fh.write(json.dumps({
                    "patient_id": patient.patient_id,
                    "visit_idx": t,
                    "scores": [float(s) for s in scores],
                    "predicted": [med_vocab.codes[i] for i in chosen],
                    "truth": list(patient.visits[t].med_codes),
                }) + "\n")
    echo = {**{k: v for k, v in cfg.items() if k != "model"},
            "model": model.cfg.to_dict(), "checkpoint": str(args.checkpoint)}
    sidecar = out_path.with_suffix(".config.json")
    sidecar.write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    n_visits = sum(len(v) for v in score_lists)
    print(f"wrote {n_visits} visit predictions -> {out_path}")
    return EXIT_OK


# -- argument plumbing ---------------------------------------------------------

def _add_corpus_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file; flags override its values")
    p.add_argument("--ehr")
    for key in VOCAB_KEYS:
        p.add_argument(f"--{key.replace('_', '-')}")
    p.add_argument("--molecules")
    p.add_argument("--ddi")
    p.add_argument("--embeddings", help="NLAEMB1 embedding file")
    p.add_argument("--pseudo-embeddings", type=int, metavar="SEED",
                   help="use deterministic stand-in embeddings with this seed")
    p.add_argument("--out-dir")
    p.add_argument("--threshold", type=float)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--text-dim", type=int)
    p.add_argument("--joint-dim", type=int)
    p.add_argument("--struct-dim", type=int)
    p.add_argument("--gin-layers", type=int)
    p.add_argument("--dropout", type=float)
    p.add_argument("--history-window", type=int)
    p.add_argument("--no-med-text", dest="use_med_text", action="store_false", default=None)
    p.add_argument("--no-med-struct", dest="use_med_struct", action="store_false", default=None)
    p.add_argument("--no-history", dest="use_history", action="store_false", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="medalign",
        description="Medication set recommendation: train, evaluate, predict.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic corpus")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-patients", type=int, default=30)
    g.add_argument("--n-diagnoses", type=int, default=24)
    g.add_argument("--n-procedures", type=int, default=10)
    g.add_argument("--n-symptoms", type=int, default=12)
    g.add_argument("--n-medications", type=int, default=40)
    g.add_argument("--max-visits", type=int, default=3)
    g.add_argument("--avg-meds", type=int, default=6)
    g.add_argument("--no-ddi", action="store_true")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train and write a checkpoint + log")
    _add_corpus_flags(t)
    _add_model_flags(t)
    t.add_argument("--alpha", type=float)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--lr-decay-factor", type=float)
    t.add_argument("--lr-decay-every", type=int)
    t.add_argument("--stop-train-jaccard", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    _add_corpus_flags(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "val", "test"))
    e.add_argument("--report", help="output JSON path (default <out-dir>/report.json)")
    e.add_argument("--bootstrap-rounds", type=int, default=10)
    e.add_argument("--eval-seed", type=int, default=0)
    e.add_argument("--seed", type=int, help="split seed (must match training)")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="write per-visit scores and predicted sets")
    _add_corpus_flags(pr)
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--out", help="output JSONL path (default <out-dir>/predictions.jsonl)")
    pr.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, MoleculeError, EmbeddingKeyError, ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (EmbeddingFormatError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
