import numpy as np
import pytest

from medalign.ehr import Dataset, PatientRecord, Vocabulary, build_visit
from medalign.embeddings import PseudoEmbeddings
from medalign.model import Model, ModelConfig
from medalign.synth import SynthConfig, gen_synthetic

ATOM_CARDS = (16, 4, 6, 6, 5, 4, 3, 2, 2)
BOND_CARDS = (4, 6, 2)


def build_setup(n_patients=6, n_meds=8, **model_kw):
    corpus = gen_synthetic(SynthConfig(seed=2, n_patients=n_patients, n_medications=n_meds))
    cfg = ModelConfig(n_meds=n_meds,
                      atom_cardinalities=corpus.molecules.atom_cardinalities,
                      bond_cardinalities=corpus.molecules.bond_cardinalities,
                      text_dim=20, joint_dim=10, struct_dim=6, gin_layers=2,
                      dropout=0.0, **model_kw)
    table = PseudoEmbeddings(20, seed=31)
    return corpus, cfg, table


class TestNoLabelLeakage:
    def test_current_visit_medications_do_not_affect_its_feature(self):
        corpus, cfg, table = build_setup()
        model = Model.build(cfg, corpus.dataset, corpus.molecules, table, seed=4)
        vocabs = corpus.dataset.vocabularies
        med_codes = vocabs["medication"].codes

        base = corpus.dataset.patients[0]
        assert len(base.visits) >= 2
        t = len(base.visits) - 1
        raw = {"diag": list(base.visits[t].diag_codes),
               "proc": list(base.visits[t].proc_codes),
               "symp": list(base.visits[t].symp_codes),
               "med": [med_codes[0]]}
        swapped_visit = build_visit({**raw, "med": [med_codes[-1]]}, vocabs)
        original_visit = build_visit(raw, vocabs)

        a = PatientRecord(base.patient_id, base.visits[:t] + (original_visit,))
        b = PatientRecord(base.patient_id, base.visits[:t] + (swapped_visit,))
        feat_a = model.visit_feature(a, t, table)
        feat_b = model.visit_feature(b, t, table)
        np.testing.assert_array_equal(feat_a.data, feat_b.data)

    def test_changing_past_prescriptions_does_affect_later_features(self):
        corpus, cfg, table = build_setup()
        model = Model.build(cfg, corpus.dataset, corpus.molecules, table, seed=4)
        vocabs = corpus.dataset.vocabularies
        med_codes = vocabs["medication"].codes

        base = next(p for p in corpus.dataset.patients if len(p.visits) >= 2)
        first = base.visits[0]
        altered_first = build_visit(
            {"diag": list(first.diag_codes), "proc": list(first.proc_codes),
             "symp": list(first.symp_codes),
             "med": [med_codes[0] if first.med_codes[0] != med_codes[0] else med_codes[1]]},
            vocabs)
        altered = PatientRecord(base.patient_id, (altered_first,) + base.visits[1:])
        feat_base = model.visit_feature(base, 1, table)
        feat_alt = model.visit_feature(altered, 1, table)
        assert not np.allclose(feat_base.data, feat_alt.data)


class TestAblationWiring:
    def test_no_history_model_has_no_history_parameters(self):
        corpus, cfg, table = build_setup(use_history=False)
        model = Model.build(cfg, corpus.dataset, corpus.molecules, table, seed=1)
        names = {n for n, _ in model.params.named_parameters()}
        assert not any(n.startswith("history.") for n in names)
        feat = model.visit_feature(corpus.dataset.patients[0], 0, table)
        assert feat.shape == (cfg.joint_dim,)

    def test_no_struct_model_has_no_gin_parameters(self):
        corpus, cfg, table = build_setup(use_med_struct=False)
        model = Model.build(cfg, corpus.dataset, corpus.molecules, table, seed=1)
        names = {n for n, _ in model.params.named_parameters()}
        assert not any(n.startswith("gin.") for n in names)
        assert model.medication_features().shape == (cfg.n_meds, cfg.joint_dim)

    def test_no_text_model_uses_structure_only(self):
        corpus, cfg, table = build_setup(use_med_text=False)
        model = Model.build(cfg, corpus.dataset, corpus.molecules, table, seed=1)
        assert model.med_text_matrix is None
        assert cfg.med_in_dim == cfg.struct_dim
        assert model.medication_features().shape == (cfg.n_meds, cfg.joint_dim)

    def test_both_branches_disabled_rejected(self):
        with pytest.raises(ValueError, match="medication branch"):
            ModelConfig(n_meds=4, atom_cardinalities=ATOM_CARDS,
                        bond_cardinalities=BOND_CARDS,
                        use_med_text=False, use_med_struct=False)


class TestBuildValidation:
    def test_missing_molecule_rejected(self):
        corpus, cfg, table = build_setup()
        molecules = corpus.molecules.__class__(
            corpus.molecules.atom_cardinalities, corpus.molecules.bond_cardinalities,
            dict(list(corpus.molecules.molecules.items())[:-1]))
        with pytest.raises(ValueError, match="no molecule"):
            Model.build(cfg, corpus.dataset, molecules, table, seed=1)

    def test_n_meds_mismatch_rejected(self):
        corpus, cfg, table = build_setup()
        bad_cfg = ModelConfig(n_meds=cfg.n_meds + 1,
                              atom_cardinalities=cfg.atom_cardinalities,
                              bond_cardinalities=cfg.bond_cardinalities,
                              text_dim=cfg.text_dim, joint_dim=cfg.joint_dim,
                              struct_dim=cfg.struct_dim, gin_layers=cfg.gin_layers,
                              dropout=0.0)
        with pytest.raises(ValueError, match="vocabulary size"):
            Model.build(bad_cfg, corpus.dataset, corpus.molecules, table, seed=1)


class TestHistoryWindow:
    def test_window_one_sees_only_last_prescription(self):
        corpus, cfg_all, table = build_setup()
        cfg_one = ModelConfig(n_meds=cfg_all.n_meds,
                              atom_cardinalities=cfg_all.atom_cardinalities,
                              bond_cardinalities=cfg_all.bond_cardinalities,
                              text_dim=cfg_all.text_dim, joint_dim=cfg_all.joint_dim,
                              struct_dim=cfg_all.struct_dim, gin_layers=cfg_all.gin_layers,
                              dropout=0.0, history_window=1)
        patient = next(p for p in corpus.dataset.patients if len(p.visits) >= 3)

        model = Model.build(cfg_one, corpus.dataset, corpus.molecules, table, seed=6)
        t = 2
        full = model.visit_feature(patient, t, table)
        # Dropping the oldest visit must not change a window-1 feature.
        shortened = PatientRecord(patient.patient_id, patient.visits[1:])
        short = model.visit_feature(shortened, t - 1, table)
        np.testing.assert_allclose(full.data, short.data, atol=1e-12)
