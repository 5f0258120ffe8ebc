"""Corpus file reading and text-key derivation.

The exporter consumes the corpus through its file schemas only:

  vocabulary   JSONL {"code": str, "text": str}, file order = index order
  EHR          JSONL {"patient_id": str, "visits": [{"diag": [...], "proc": [...],
               "symp": [...], "med": [...]}, ...]}

A visit contributes five text keys: the per-kind descriptions (members joined
with "; " in vocabulary order), the combined "<diag> ; <proc> ; <symp>" text
(empty when all three code sets are empty), and the prescription text over
its medication codes. Every medication description is a key of its own.
Empty texts are never exported; the consumer substitutes the zero vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

VOCAB_KINDS = ("diagnosis", "procedure", "symptom", "medication")
_FIELDS = {"diagnosis": "diag", "procedure": "proc", "symptom": "symp", "medication": "med"}


class CorpusError(Exception):
    """A corpus file does not match its schema."""


@dataclass
class Vocab:
    codes: list[str]
    texts: list[str]
    index: dict[str, int]


def load_vocab(path: str | Path) -> Vocab:
    codes, texts, index = [], [], {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            code, text = obj.get("code"), obj.get("text")
            if not isinstance(code, str) or not isinstance(text, str):
                raise CorpusError(f"{path}:{lineno}: expected string 'code' and 'text'")
            if code in index:
                raise CorpusError(f"{path}:{lineno}: duplicate code {code!r}")
            index[code] = len(codes)
            codes.append(code)
            texts.append(text)
    return Vocab(codes=codes, texts=texts, index=index)


def _code_set_text(codes, vocab: Vocab, where: str) -> str:
    for code in codes:
        if code not in vocab.index:
            raise CorpusError(f"{where}: unknown code {code!r}")
    ordered = sorted(codes, key=vocab.index.__getitem__)
    return "; ".join(vocab.texts[vocab.index[c]] for c in ordered)


def corpus_text_keys(ehr_path: str | Path, vocabs: dict[str, Vocab]) -> set[str]:
    """Every distinct non-empty text key the corpus can ask for."""
    keys: set[str] = set(vocabs["medication"].texts)
    with open(ehr_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{ehr_path}:{lineno}: malformed JSON: {exc}") from None
            for i, visit in enumerate(obj.get("visits", [])):
                where = f"{ehr_path}:{lineno} visit {i}"
                parts = {}
                for kind in VOCAB_KINDS:
                    parts[kind] = _code_set_text(visit.get(_FIELDS[kind], []),
                                                 vocabs[kind], where)
                diag, proc, symp = parts["diagnosis"], parts["procedure"], parts["symptom"]
                if diag or proc or symp:
                    keys.add(f"{diag} ; {proc} ; {symp}")
                keys.update((diag, proc, symp, parts["medication"]))
    keys.discard("")
    return keys


def load_corpus_keys(ehr_path, vocab_paths: dict[str, str | Path]) -> set[str]:
    vocabs = {kind: load_vocab(vocab_paths[kind]) for kind in VOCAB_KINDS}
    return corpus_text_keys(ehr_path, vocabs)
