"""Deterministic synthetic corpus generator.

Patients are drawn from latent condition clusters that tie diagnosis codes to
medication codes, so a model can learn (and overfit) the corpus. Three
structures are planted on purpose:

* each cluster prescribes a fixed base medication set plus per-template
  extras, so visit texts predict most of the prescription;
* medications are built over a *shared pool of molecule structures* (two
  medications per structure), so structure alone cannot tell every pair
  apart and the description text carries real signal;
* half the patients are "chronic": a marker diagnosis appears only in their
  first visit while a cluster-specific maintenance medication appears in
  every visit, so later visits are only predictable from prescription
  history.

All sampling is driven by one seeded generator; identical configurations
produce byte-identical corpora.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ehr import (
    Dataset,
    PatientRecord,
    Vocabulary,
    build_visit,
    write_ddi,
    write_ehr_jsonl,
    write_vocabulary,
)
from .molgraph import MoleculeGraph, MoleculeSet, write_molecules

ATOM_CARDINALITIES = (16, 4, 6, 6, 5, 4, 3, 2, 2)
BOND_CARDINALITIES = (4, 6, 2)

_DIAG_ADJ = ("chronic", "acute", "recurrent", "mild", "severe", "congenital", "secondary",
             "essential")
_ORGANS = ("cardiac", "renal", "hepatic", "pulmonary", "gastric", "neural", "vascular",
           "dermal", "skeletal", "thyroid")
_PROBLEMS = ("insufficiency", "inflammation", "obstruction", "hypertrophy", "degeneration",
             "infection", "dysfunction", "stenosis", "edema", "lesion")
_PROC_MODES = ("endoscopic", "laparoscopic", "percutaneous", "open", "robotic-assisted",
               "ultrasound-guided")
_PROC_ACTS = ("resection", "bypass", "ablation", "drainage", "biopsy", "repair",
              "replacement", "imaging", "stenting")
_SYMP_ADJ = ("persistent", "intermittent", "acute", "nocturnal", "exertional", "postprandial")
_SYMPTOMS = ("chest pain", "fatigue", "dyspnea", "nausea", "dizziness", "fever", "headache",
             "palpitations", "cough", "lower limb edema")
_MED_PRE = ("cardi", "neuro", "gastro", "pulmo", "reno", "hepa", "derma", "vaso", "lipo",
            "gluco", "oste", "thyro")
_MED_MID = ("zol", "pril", "statin", "micin", "phyllin", "parin", "olol", "azide", "mab",
            "triptan")
_MED_END = ("e", "ol", "ide", "ate", "an", "il")
_MED_FORMS = ("tablet", "capsule", "injection", "oral solution")

MARKER_DIAGNOSIS_TEXT = "long-term medication therapy dependence"


@dataclass
class SynthConfig:
    seed: int = 0
    n_patients: int = 30
    n_diagnoses: int = 24
    n_procedures: int = 10
    n_symptoms: int = 12
    n_medications: int = 40
    max_visits: int = 3
    avg_meds: int = 6
    diag_jitter: float = 0.2
    chronic_fraction: float = 0.5
    templates_per_cluster: int = 4
    ddi_fraction: float = 0.15
    include_ddi: bool = True

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if min(self.n_diagnoses, self.n_symptoms, self.n_medications) < 4 or self.n_procedures < 1:
            raise ValueError("vocabulary sizes too small to plant cluster structure")
        if self.max_visits < 1:
            raise ValueError("max_visits must be >= 1")


@dataclass
class SynthCorpus:
    dataset: Dataset
    molecules: MoleculeSet
    config: SynthConfig = field(repr=False, default=None)


def _distinct_phrases(rng: np.random.Generator, parts: tuple[tuple[str, ...], ...], n: int):
    total = int(np.prod([len(p) for p in parts]))
    if n > total:
        raise ValueError(f"cannot generate {n} distinct phrases from {total} combinations")
    picks = rng.choice(total, size=n, replace=False)
    phrases = []
    for flat in picks:
        words = []
        for options in reversed(parts):
            flat, idx = divmod(flat, len(options))
            words.append(options[idx])
        phrases.append(" ".join(reversed(words)))
    return phrases


def _make_vocab(kind: str, prefix: str, texts) -> Vocabulary:
    codes = tuple(f"{prefix}{i:03d}" for i in range(len(texts)))
    return Vocabulary(kind=kind, codes=codes, texts=tuple(texts))


def _random_molecule(rng: np.random.Generator, n_atoms: int) -> MoleculeGraph:
    atoms = tuple(
        tuple(int(rng.integers(card)) for card in ATOM_CARDINALITIES) for _ in range(n_atoms))
    bonds = []
    seen = set()
    for j in range(1, n_atoms):
        i = int(rng.integers(j))
        feats = tuple(int(rng.integers(card)) for card in BOND_CARDINALITIES)
        bonds.append((i, j, feats))
        seen.add((i, j))
    extra = rng.integers(0, max(1, n_atoms // 3) + 1)
    for _ in range(extra):
        i, j = sorted(rng.choice(n_atoms, size=2, replace=False).tolist())
        if (i, j) in seen:
            continue
        seen.add((i, j))
        feats = tuple(int(rng.integers(card)) for card in BOND_CARDINALITIES)
        bonds.append((i, j, feats))
    return MoleculeGraph(atom_features=atoms, bonds=tuple(bonds))


def _partition(indices, k):
    groups = [[] for _ in range(k)]
    for pos, idx in enumerate(indices):
        groups[pos % k].append(idx)
    return groups


def gen_synthetic(cfg: SynthConfig) -> SynthCorpus:
    rng = np.random.default_rng(cfg.seed)

    diag_texts = [MARKER_DIAGNOSIS_TEXT] + _distinct_phrases(
        rng, (_DIAG_ADJ, _ORGANS, _PROBLEMS), cfg.n_diagnoses - 1)
    proc_texts = _distinct_phrases(rng, (_PROC_MODES, _ORGANS, _PROC_ACTS), cfg.n_procedures)
    symp_texts = _distinct_phrases(rng, (_SYMP_ADJ, _SYMPTOMS), cfg.n_symptoms)

    n_med = cfg.n_medications
    k = max(2, min(4, n_med // 4))
    med_names = _distinct_phrases(rng, (_MED_PRE, _MED_MID, _MED_END), n_med)
    med_names = ["".join(name.split()).capitalize() for name in med_names]

    diag_vocab = _make_vocab("diagnosis", "D", diag_texts)
    proc_vocab = _make_vocab("procedure", "P", proc_texts)
    symp_vocab = _make_vocab("symptom", "S", symp_texts)

    # Cluster pools over the non-marker diagnosis codes.
    diag_pools = _partition(range(1, cfg.n_diagnoses), k)
    proc_pools = _partition(range(cfg.n_procedures), k)
    symp_pools = _partition(range(cfg.n_symptoms), k)
    chronic_meds = list(range(k))
    core_pools = _partition(range(k, n_med), k)

    med_texts = []
    for m in range(n_med):
        cluster = m % k if m < k else next(c for c, pool in enumerate(core_pools) if m in pool)
        pool = diag_pools[cluster]
        conds = [diag_texts[pool[int(rng.integers(len(pool)))]] for _ in range(2)]
        form = _MED_FORMS[int(rng.integers(len(_MED_FORMS)))]
        if m < k:
            text = (f"{med_names[m]} ({form}) is used for long-term maintenance therapy "
                    f"of {conds[0]}.")
        else:
            text = f"{med_names[m]} ({form}) is used to treat {conds[0]} and {conds[1]}."
        med_texts.append(text)
    med_vocab = _make_vocab("medication", "M", med_texts)
    vocabs = {"diagnosis": diag_vocab, "procedure": proc_vocab,
              "symptom": symp_vocab, "medication": med_vocab}

    # Visit templates: fixed (codes -> medications) patterns per cluster.
    base_size = max(1, min(len(core_pools[0]), round(cfg.avg_meds / 2)))
    extras_target = max(1, cfg.avg_meds - base_size - 1)
    templates = []
    for c in range(k):
        pool = core_pools[c]
        base = pool[:base_size]
        rest = pool[base_size:] or pool
        cluster_templates = []
        for _ in range(cfg.templates_per_cluster):
            diag = rng.choice(diag_pools[c], size=min(3, len(diag_pools[c])), replace=False)
            symp = rng.choice(symp_pools[c], size=min(2, len(symp_pools[c])), replace=False)
            n_proc = int(rng.integers(0, min(2, len(proc_pools[c])) + 1))
            proc = rng.choice(proc_pools[c], size=n_proc, replace=False)
            extras = rng.choice(rest, size=min(extras_target, len(rest)), replace=False)
            cluster_templates.append({
                "diag": sorted(int(x) for x in diag),
                "proc": sorted(int(x) for x in proc),
                "symp": sorted(int(x) for x in symp),
                "meds": sorted(set(base) | {int(x) for x in extras}),
            })
        templates.append(cluster_templates)

    patients = []
    for p in range(cfg.n_patients):
        cluster = int(rng.integers(k))
        chronic = bool(rng.random() < cfg.chronic_fraction)
        if cfg.max_visits >= 2:
            n_visits = int(rng.integers(2, cfg.max_visits + 1)) if rng.random() > 0.1 else 1
        else:
            n_visits = 1
        visits = []
        for t in range(n_visits):
            template = templates[cluster][int(rng.integers(cfg.templates_per_cluster))]
            diag = set(template["diag"])
            if chronic and t == 0:
                diag.add(0)  # marker diagnosis: only the first visit reveals chronic status
            if rng.random() < cfg.diag_jitter:
                diag.add(int(rng.choice(diag_pools[cluster])))
            meds = set(template["meds"])
            if chronic:
                meds.add(chronic_meds[cluster])
            raw = {
                "diag": [diag_vocab.codes[i] for i in sorted(diag)],
                "proc": [proc_vocab.codes[i] for i in template["proc"]],
                "symp": [symp_vocab.codes[i] for i in template["symp"]],
                "med": [med_vocab.codes[i] for i in sorted(meds)],
            }
            visits.append(build_visit(raw, vocabs, where=f"synthetic patient {p} visit {t}"))
        patients.append(PatientRecord(patient_id=f"pt{p:04d}", visits=tuple(visits)))

    # Molecule structures are shared between medication pairs (i, i + pool).
    n_structures = (n_med + 1) // 2
    structures = [_random_molecule(rng, int(rng.integers(4, 11))) for _ in range(n_structures)]
    molecules = {med_vocab.codes[m]: structures[m % n_structures] for m in range(n_med)}
    molset = MoleculeSet(ATOM_CARDINALITIES, BOND_CARDINALITIES, molecules)

    ddi = None
    if cfg.include_ddi:
        all_pairs = [(med_vocab.codes[i], med_vocab.codes[j])
                     for i in range(n_med) for j in range(i + 1, n_med)]
        n_pairs = int(round(cfg.ddi_fraction * len(all_pairs)))
        chosen = rng.choice(len(all_pairs), size=n_pairs, replace=False) if n_pairs else []
        ddi = frozenset(all_pairs[int(i)] for i in chosen)

    dataset = Dataset(patients=tuple(patients), vocabularies=vocabs, ddi_pairs=ddi)
    return SynthCorpus(dataset=dataset, molecules=molset, config=cfg)


def write_corpus(corpus: SynthCorpus, out_dir: str | Path) -> dict[str, str]:
    """Write every corpus artifact; returns a name -> path map."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "ehr": str(out / "ehr.jsonl"),
        "vocab_diagnosis": str(out / "vocab_diagnosis.jsonl"),
        "vocab_procedure": str(out / "vocab_procedure.jsonl"),
        "vocab_symptom": str(out / "vocab_symptom.jsonl"),
        "vocab_medication": str(out / "vocab_medication.jsonl"),
        "molecules": str(out / "molecules.json"),
    }
    write_ehr_jsonl(corpus.dataset.patients, paths["ehr"])
    for kind, vocab in corpus.dataset.vocabularies.items():
        write_vocabulary(vocab, paths[f"vocab_{kind}"])
    write_molecules(corpus.molecules, paths["molecules"])
    if corpus.dataset.ddi_pairs is not None:
        paths["ddi"] = str(out / "ddi.jsonl")
        write_ddi(corpus.dataset.ddi_pairs, paths["ddi"])
    return paths
