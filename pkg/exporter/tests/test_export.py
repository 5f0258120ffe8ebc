import logging

import numpy as np
import pytest
import torch
from transformers import AutoModel, AutoTokenizer

from plm_export.corpus import CorpusError, load_corpus_keys, load_vocab
from plm_export.export import ExportManifest, embed_texts, export_embeddings, pool_tokens
from plm_export.writer import FormatError, read_nlaemb, write_nlaemb


@pytest.fixture(scope="module")
def exported(corpus_dir, vocab_paths, model_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("out") / "embeddings.nlaemb"
    manifest = export_embeddings(corpus_dir / "ehr.jsonl", vocab_paths, out,
                                 ExportManifest(model_id=model_dir, batch_size=4))
    return out, manifest


class TestKeyDerivation:
    def test_keys_cover_visits_and_medications(self, corpus_dir, vocab_paths):
        keys = load_corpus_keys(corpus_dir / "ehr.jsonl", vocab_paths)
        assert "chronic cardiac stenosis" in keys
        assert ("chronic cardiac stenosis ; open cardiac repair ; "
                "exertional chest pain") in keys
        med = load_vocab(vocab_paths["medication"])
        assert set(med.texts) <= keys
        assert "" not in keys

    def test_unknown_code_rejected(self, tmp_path, vocab_paths):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"patient_id": "x", "visits": [{"diag": ["NOPE"], "proc": [], '
                       '"symp": [], "med": []}]}\n')
        with pytest.raises(CorpusError, match="NOPE"):
            load_corpus_keys(bad, vocab_paths)


class TestWriter:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = {f"k{i}": rng.normal(size=8).astype(np.float32) for i in range(5)}
        path = tmp_path / "t.nlaemb"
        write_nlaemb(entries, 8, path)
        dim, loaded = read_nlaemb(path)
        assert dim == 8
        for key, vec in entries.items():
            np.testing.assert_array_equal(loaded[key], vec)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"WRONG!!!" + bytes(8))
        with pytest.raises(FormatError, match="magic"):
            read_nlaemb(path)


class TestAcceptance:
    def test_output_validates_as_nlaemb1_with_dim_768(self, exported):
        out, manifest = exported
        dim, entries = read_nlaemb(out)
        assert dim == 768
        assert len(entries) == len(manifest.keys) == len(set(manifest.keys))
        # The training-side package must accept the file as-is.
        from medalign.embeddings import load_embeddings

        table = load_embeddings(out)
        assert table.dim == 768
        assert len(table) == len(manifest.keys)
        print("\nACCEPTANCE exporter-format: PASS "
              f"(NLAEMB1, dim 768, {len(entries)} entries, loads in consumer)")

    def test_sampled_vector_equals_manual_mean_pooling(self, exported, model_dir):
        out, manifest = exported
        _, entries = read_nlaemb(out)
        key = "chronic cardiac stenosis ; open cardiac repair ; exertional chest pain"
        assert key in entries

        tokenizer = AutoTokenizer.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        model.eval()
        enc = tokenizer(key, return_tensors="pt")
        with torch.no_grad():
            hidden = model(**enc).last_hidden_state[0]
        manual = hidden.mean(dim=0).numpy()
        err = float(np.abs(entries[key] - manual).max())
        assert err < 1e-5, f"pooling mismatch {err:.2e}"
        print(f"\nACCEPTANCE exporter-pooling: PASS (max deviation {err:.2e})")

    def test_duplicate_texts_deduplicated(self, exported, corpus_dir, vocab_paths):
        out, manifest = exported
        # Patients p0 and p1 share an identical first visit; every key is unique.
        keys = load_corpus_keys(corpus_dir / "ehr.jsonl", vocab_paths)
        _, entries = read_nlaemb(out)
        assert sorted(keys) == sorted(entries)
        print(f"\nACCEPTANCE exporter-dedup: PASS ({len(entries)} unique keys)")


class TestExportBehavior:
    def test_idempotent_rerun(self, exported, corpus_dir, vocab_paths, model_dir, tmp_path):
        out, _ = exported
        again = tmp_path / "again.nlaemb"
        export_embeddings(corpus_dir / "ehr.jsonl", vocab_paths, again,
                          ExportManifest(model_id=model_dir, batch_size=4))
        dim_a, a = read_nlaemb(out)
        dim_b, b = read_nlaemb(again)
        assert dim_a == dim_b and sorted(a) == sorted(b)
        for key in a:
            np.testing.assert_allclose(a[key], b[key], atol=1e-6)

    def test_truncation_is_logged(self, corpus_dir, vocab_paths, model_dir, tmp_path, caplog):
        out = tmp_path / "t.nlaemb"
        with caplog.at_level(logging.WARNING, logger="plm_export"):
            export_embeddings(corpus_dir / "ehr.jsonl", vocab_paths, out,
                              ExportManifest(model_id=model_dir, batch_size=4))
        assert any("truncated" in rec.message for rec in caplog.records)

    def test_batching_does_not_change_vectors(self, model_dir):
        tokenizer = AutoTokenizer.from_pretrained(model_dir)
        model = AutoModel.from_pretrained(model_dir)
        texts = ["chronic cardiac stenosis", "persistent nausea",
                 "open cardiac repair", "acute renal edema"]
        one = embed_texts(texts, model, tokenizer, batch_size=1)
        four = embed_texts(texts, model, tokenizer, batch_size=4)
        np.testing.assert_allclose(one, four, atol=1e-5)

    def test_pool_tokens_ignores_padding(self):
        hidden = torch.tensor([[[1.0, 1.0], [3.0, 3.0], [99.0, 99.0]]])
        mask = torch.tensor([[1, 1, 0]])
        np.testing.assert_allclose(pool_tokens(hidden, mask).numpy(), [[2.0, 2.0]])


class TestCli:
    def test_end_to_end(self, corpus_dir, model_dir, tmp_path, capsys):
        from plm_export.cli import main

        out = tmp_path / "cli.nlaemb"
        code = main(["--ehr", str(corpus_dir / "ehr.jsonl"),
                     "--vocab-diagnosis", str(corpus_dir / "vocab_diagnosis.jsonl"),
                     "--vocab-procedure", str(corpus_dir / "vocab_procedure.jsonl"),
                     "--vocab-symptom", str(corpus_dir / "vocab_symptom.jsonl"),
                     "--vocab-medication", str(corpus_dir / "vocab_medication.jsonl"),
                     "--model", model_dir, "--out", str(out)])
        assert code == 0
        dim, entries = read_nlaemb(out)
        assert dim == 768 and entries
        assert "exported" in capsys.readouterr().out

    def test_missing_paths_exit_2(self, tmp_path, capsys):
        from plm_export.cli import main

        assert main(["--out", str(tmp_path / "x.bin")]) == 2
        assert "missing corpus path" in capsys.readouterr().err
