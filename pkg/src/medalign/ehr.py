"""Patient/visit data model, JSONL ingestion, and multi-hot encoding.

File formats (all UTF-8 JSONL, one object per line):
  vocabulary   {"code": str, "text": str}          file order defines index order
  EHR          {"patient_id": str, "visits": [{"diag": [...], "proc": [...],
                "symp": [...], "med": [...]}, ...]}
  DDI pairs    {"a": med_code, "b": med_code}      unordered, duplicates rejected

Visit texts are derived deterministically: within a code kind, member
descriptions are joined with "; " in vocabulary-index order; the combined
visit text is "<diag> ; <proc> ; <symp>" (empty string when all three code
sets are empty).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

VOCAB_KINDS = ("diagnosis", "procedure", "symptom", "medication")

_VISIT_FIELDS = {"diagnosis": "diag", "procedure": "proc", "symptom": "symp", "medication": "med"}


class ValidationError(Exception):
    """Input data violates the corpus contract."""


@dataclass(frozen=True)
class Vocabulary:
    kind: str
    codes: tuple[str, ...]
    texts: tuple[str, ...]
    _index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if self.kind not in VOCAB_KINDS:
            raise ValidationError(f"unknown vocabulary kind {self.kind!r}")
        if len(self.codes) != len(self.texts):
            raise ValidationError("codes and texts must be parallel")
        for i, (code, text) in enumerate(zip(self.codes, self.texts)):
            if code in self._index:
                raise ValidationError(f"duplicate code {code!r} in {self.kind} vocabulary")
            if not text:
                raise ValidationError(f"empty text for code {code!r} in {self.kind} vocabulary")
            self._index[code] = i

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: str) -> bool:
        return code in self._index

    def index_of(self, code: str) -> int:
        try:
            return self._index[code]
        except KeyError:
            raise ValidationError(
                f"code {code!r} not in {self.kind} vocabulary") from None

    def text_of(self, code: str) -> str:
        return self.texts[self.index_of(code)]


@dataclass(frozen=True)
class Visit:
    """One clinical encounter; code tuples are sorted by vocabulary index."""

    diag_codes: tuple[str, ...]
    proc_codes: tuple[str, ...]
    symp_codes: tuple[str, ...]
    med_codes: tuple[str, ...]
    diag_text: str
    proc_text: str
    symp_text: str
    med_text: str
    combined_text: str

    def codes(self, kind: str) -> tuple[str, ...]:
        return getattr(self, f"{_VISIT_FIELDS[kind]}_codes")


@dataclass(frozen=True)
class PatientRecord:
    patient_id: str
    visits: tuple[Visit, ...]


@dataclass(frozen=True)
class Dataset:
    patients: tuple[PatientRecord, ...]
    vocabularies: dict[str, Vocabulary]
    ddi_pairs: frozenset[tuple[str, str]] | None = None


def code_set_text(codes, vocab: Vocabulary) -> str:
    """Join member descriptions with '; ' in vocabulary-index order."""
    ordered = sorted(codes, key=vocab.index_of)
    return "; ".join(vocab.text_of(c) for c in ordered)


def combined_visit_text(diag_text: str, proc_text: str, symp_text: str) -> str:
    if not (diag_text or proc_text or symp_text):
        return ""
    return f"{diag_text} ; {proc_text} ; {symp_text}"


def build_visit(raw: dict, vocabs: dict[str, Vocabulary], *, where: str = "") -> Visit:
    """Validate one visit dict against the vocabularies and derive its texts."""
    sets: dict[str, tuple[str, ...]] = {}
    texts: dict[str, str] = {}
    for kind in VOCAB_KINDS:
        key = _VISIT_FIELDS[kind]
        codes = raw.get(key, [])
        if not isinstance(codes, list) or not all(isinstance(c, str) for c in codes):
            raise ValidationError(f"{where}: field {key!r} must be a list of code strings")
        if len(set(codes)) != len(codes):
            raise ValidationError(f"{where}: duplicate codes in {key!r}")
        vocab = vocabs[kind]
        for code in codes:
            if code not in vocab:
                raise ValidationError(
                    f"{where}: code {code!r} not in {kind} vocabulary")
        ordered = tuple(sorted(codes, key=vocab.index_of))
        sets[key] = ordered
        texts[key] = code_set_text(ordered, vocab)
    if not sets["med"]:
        raise ValidationError(f"{where}: visit has an empty medication set")
    return Visit(
        diag_codes=sets["diag"], proc_codes=sets["proc"],
        symp_codes=sets["symp"], med_codes=sets["med"],
        diag_text=texts["diag"], proc_text=texts["proc"],
        symp_text=texts["symp"], med_text=texts["med"],
        combined_text=combined_visit_text(texts["diag"], texts["proc"], texts["symp"]),
    )


def load_vocabulary(path: str | Path, kind: str) -> Vocabulary:
    codes: list[str] = []
    texts: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            if not isinstance(obj.get("code"), str) or not isinstance(obj.get("text"), str):
                raise ValidationError(f"{path}:{lineno}: expected string 'code' and 'text'")
            codes.append(obj["code"])
            texts.append(obj["text"])
    return Vocabulary(kind=kind, codes=tuple(codes), texts=tuple(texts))


def parse_ehr_jsonl(path: str | Path, vocabs: dict[str, Vocabulary]) -> list[PatientRecord]:
    """Parse patient records in file order, validating every code."""
    patients: list[PatientRecord] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            pid = obj.get("patient_id")
            raw_visits = obj.get("visits")
            if not isinstance(pid, str) or not isinstance(raw_visits, list) or not raw_visits:
                raise ValidationError(
                    f"{path}:{lineno}: each line needs a 'patient_id' and a non-empty 'visits' list")
            if pid in seen_ids:
                raise ValidationError(f"{path}:{lineno}: duplicate patient_id {pid!r}")
            seen_ids.add(pid)
            visits = tuple(
                build_visit(v, vocabs, where=f"{path}:{lineno} patient {pid!r} visit {i}")
                for i, v in enumerate(raw_visits))
            patients.append(PatientRecord(patient_id=pid, visits=visits))
    return patients


def load_ddi(path: str | Path, med_vocab: Vocabulary) -> frozenset[tuple[str, str]]:
    pairs: set[tuple[str, str]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from None
            a, b = obj.get("a"), obj.get("b")
            if not isinstance(a, str) or not isinstance(b, str):
                raise ValidationError(f"{path}:{lineno}: expected string fields 'a' and 'b'")
            if a == b:
                raise ValidationError(f"{path}:{lineno}: self-pair {a!r}")
            for code in (a, b):
                if code not in med_vocab:
                    raise ValidationError(
                        f"{path}:{lineno}: code {code!r} not in medication vocabulary")
            pair = tuple(sorted((a, b)))
            if pair in pairs:
                raise ValidationError(f"{path}:{lineno}: duplicate pair {pair}")
            pairs.add(pair)
    return frozenset(pairs)


def load_dataset(ehr_path, vocab_paths: dict[str, str | Path],
                 ddi_path=None) -> Dataset:
    vocabs = {kind: load_vocabulary(vocab_paths[kind], kind) for kind in VOCAB_KINDS}
    patients = parse_ehr_jsonl(ehr_path, vocabs)
    ddi = load_ddi(ddi_path, vocabs["medication"]) if ddi_path else None
    return Dataset(patients=tuple(patients), vocabularies=vocabs, ddi_pairs=ddi)


# -- serialization (inverse of parsing) --------------------------------------

def write_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for code, text in zip(vocab.codes, vocab.texts):
            fh.write(json.dumps({"code": code, "text": text}) + "\n")


def write_ehr_jsonl(patients, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for patient in patients:
            obj = {
                "patient_id": patient.patient_id,
                "visits": [
                    {"diag": list(v.diag_codes), "proc": list(v.proc_codes),
                     "symp": list(v.symp_codes), "med": list(v.med_codes)}
                    for v in patient.visits
                ],
            }
            fh.write(json.dumps(obj) + "\n")


def write_ddi(pairs, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for a, b in sorted(pairs):
            fh.write(json.dumps({"a": a, "b": b}) + "\n")


# -- encodings and splits -----------------------------------------------------

def visit_to_multihot(codes, vocab: Vocabulary) -> np.ndarray:
    """0/1 vector over the vocabulary with a 1 at each member code's index."""
    vec = np.zeros(len(vocab))
    for code in codes:
        vec[vocab.index_of(code)] = 1.0
    return vec


def multihot_to_codes(vec: np.ndarray, vocab: Vocabulary) -> tuple[str, ...]:
    if len(vec) != len(vocab):
        raise ValidationError(f"vector length {len(vec)} != vocabulary size {len(vocab)}")
    return tuple(vocab.codes[i] for i in np.flatnonzero(vec))


def split_dataset(dataset: Dataset, seed: int):
    """Deterministic 2/3 : 1/6 : 1/6 patient split into train/val/test."""
    n = len(dataset.patients)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * 2 / 3))
    n_val = int(round(n / 6))
    train = [dataset.patients[i] for i in order[:n_train]]
    val = [dataset.patients[i] for i in order[n_train:n_train + n_val]]
    test = [dataset.patients[i] for i in order[n_train + n_val:]]
    return train, val, test


def corpus_text_keys(dataset: Dataset) -> set[str]:
    """Every non-empty text key the model may look up for this corpus."""
    keys: set[str] = set()
    for patient in dataset.patients:
        for visit in patient.visits:
            keys.update({visit.combined_text, visit.diag_text, visit.proc_text,
                         visit.symp_text, visit.med_text})
    med_vocab = dataset.vocabularies["medication"]
    keys.update(med_vocab.texts)
    keys.discard("")
    return keys
