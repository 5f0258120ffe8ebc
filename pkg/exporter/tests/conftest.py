import json

import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

DIAG_TEXTS = [
    "chronic cardiac stenosis",
    "acute renal edema",
    # Deliberately longer than the tokenizer's max length to force truncation.
    " ".join(["relapsing vascular inflammation with extensive collateral damage"] * 12),
]
PROC_TEXTS = ["open cardiac repair"]
SYMP_TEXTS = ["exertional chest pain", "persistent nausea"]
MED_TEXTS = [
    "cardizol tablet used to treat chronic cardiac stenosis",
    "renoprile capsule used to treat acute renal edema",
]


def _write_jsonl(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n", encoding="utf-8")


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory):
    """A local frozen encoder: hidden size 768, word-level vocabulary."""
    out = tmp_path_factory.mktemp("tiny-encoder")
    words = set()
    for text in DIAG_TEXTS + PROC_TEXTS + SYMP_TEXTS + MED_TEXTS:
        words.update(text.lower().split())
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", ";"] + sorted(words)
    (out / "vocab.txt").write_text("\n".join(vocab), encoding="utf-8")
    tokenizer = BertTokenizerFast(vocab_file=str(out / "vocab.txt"), do_lower_case=True,
                                  model_max_length=40)
    torch.manual_seed(7)
    config = BertConfig(vocab_size=len(vocab), hidden_size=768, num_hidden_layers=2,
                        num_attention_heads=4, intermediate_size=256,
                        max_position_embeddings=40)
    model = BertModel(config)
    model.save_pretrained(out)
    tokenizer.save_pretrained(out)
    return str(out)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    _write_jsonl(out / "vocab_diagnosis.jsonl",
                 [{"code": f"D{i}", "text": t} for i, t in enumerate(DIAG_TEXTS)])
    _write_jsonl(out / "vocab_procedure.jsonl",
                 [{"code": f"P{i}", "text": t} for i, t in enumerate(PROC_TEXTS)])
    _write_jsonl(out / "vocab_symptom.jsonl",
                 [{"code": f"S{i}", "text": t} for i, t in enumerate(SYMP_TEXTS)])
    _write_jsonl(out / "vocab_medication.jsonl",
                 [{"code": f"M{i}", "text": t} for i, t in enumerate(MED_TEXTS)])
    _write_jsonl(out / "ehr.jsonl", [
        {"patient_id": "p0", "visits": [
            {"diag": ["D0"], "proc": ["P0"], "symp": ["S0"], "med": ["M0"]},
            {"diag": ["D1", "D2"], "proc": [], "symp": ["S1"], "med": ["M0", "M1"]},
        ]},
        # Same first visit as p0: its texts must deduplicate to one entry each.
        {"patient_id": "p1", "visits": [
            {"diag": ["D0"], "proc": ["P0"], "symp": ["S0"], "med": ["M0"]},
            {"diag": [], "proc": [], "symp": [], "med": ["M1"]},
        ]},
    ])
    return out


@pytest.fixture(scope="session")
def vocab_paths(corpus_dir):
    return {kind: corpus_dir / f"vocab_{kind}.jsonl"
            for kind in ("diagnosis", "procedure", "symptom", "medication")}
