import json

import numpy as np
import pytest

from medalign import cli
from medalign.ehr import load_dataset, split_dataset
from medalign.embeddings import EmbeddingTable, write_embeddings
from medalign.metrics import jaccard


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    code = cli.main(["gen-synth", "--out-dir", str(out), "--seed", "3",
                     "--n-patients", "18", "--n-medications", "10"])
    assert code == 0
    return out


def train_args(corpus_dir, out_dir, *extra):
    return ["train", "--config", str(corpus_dir / "corpus_config.json"),
            "--out-dir", str(out_dir), "--pseudo-embeddings", "9",
            "--text-dim", "32", "--joint-dim", "16", "--struct-dim", "8",
            "--gin-layers", "2", "--epochs", "6", "--lr", "5e-3",
            "--batch-size", "4", "--seed", "1", *extra]


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(train_args(corpus_dir, out)) == 0
    return out


class TestGenSynth:
    def test_rerun_is_byte_identical(self, corpus_dir, tmp_path):
        other = tmp_path / "again"
        assert cli.main(["gen-synth", "--out-dir", str(other), "--seed", "3",
                         "--n-patients", "18", "--n-medications", "10"]) == 0
        for name in ("ehr.jsonl", "vocab_medication.jsonl", "molecules.json", "ddi.jsonl"):
            assert (other / name).read_bytes() == (corpus_dir / name).read_bytes()

    def test_zero_patients_rejected(self, tmp_path, capsys):
        code = cli.main(["gen-synth", "--out-dir", str(tmp_path / "x"), "--n-patients", "0"])
        assert code == cli.EXIT_VALIDATION
        assert "n_patients" in capsys.readouterr().err

    def test_generated_corpus_parses(self, corpus_dir):
        cfg = json.loads((corpus_dir / "corpus_config.json").read_text())
        dataset = load_dataset(cfg["ehr"], {
            "diagnosis": cfg["vocab_diagnosis"], "procedure": cfg["vocab_procedure"],
            "symptom": cfg["vocab_symptom"], "medication": cfg["vocab_medication"]},
            ddi_path=cfg.get("ddi"))
        assert len(dataset.patients) == 18


class TestTrain:
    def test_zero_epochs_emits_checkpoint(self, corpus_dir, tmp_path):
        out = tmp_path / "zero"
        args = train_args(corpus_dir, out)
        args[args.index("--epochs") + 1] = "0"
        assert cli.main(args) == 0
        assert (out / "checkpoint.nlackpt").exists()
        assert (out / "training_log.csv").read_text().strip() == \
            "epoch,lr,train_loss,val_jaccard,val_f1,val_prauc"

    def test_deterministic_checkpoints(self, corpus_dir, tmp_path):
        out = tmp_path / "det"
        assert cli.main(train_args(corpus_dir, out)) == 0
        first_ckpt = (out / "checkpoint.nlackpt").read_bytes()
        first_log = (out / "training_log.csv").read_bytes()
        assert cli.main(train_args(corpus_dir, out)) == 0
        assert (out / "checkpoint.nlackpt").read_bytes() == first_ckpt
        assert (out / "training_log.csv").read_bytes() == first_log

    def test_missing_embedding_key_is_named(self, corpus_dir, tmp_path, capsys):
        table = EmbeddingTable(32, {"not the right key": np.zeros(32)})
        emb_path = tmp_path / "partial.nlaemb"
        write_embeddings(table, emb_path)
        args = train_args(corpus_dir, tmp_path / "x")
        i = args.index("--pseudo-embeddings")
        args[i:i + 2] = ["--embeddings", str(emb_path)]
        code = cli.main(args)
        assert code == cli.EXIT_VALIDATION
        assert "no embedding stored" in capsys.readouterr().err

    def test_pseudo_and_file_embeddings_conflict(self, corpus_dir, tmp_path, capsys):
        args = train_args(corpus_dir, tmp_path / "x", "--embeddings", "whatever.bin")
        assert cli.main(args) == cli.EXIT_VALIDATION
        assert "mutually exclusive" in capsys.readouterr().err

    def test_stop_train_jaccard_reaches_target_and_eval_confirms(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "early"
        args = train_args(corpus_dir, out, "--stop-train-jaccard", "0.9",
                          "--text-dim", "64", "--joint-dim", "32")
        args[args.index("--epochs") + 1] = "300"
        assert cli.main(args) == 0
        log_lines = (out / "training_log.csv").read_text().strip().splitlines()
        assert len(log_lines) - 1 < 300
        capsys.readouterr()

        # The emitted checkpoint must reproduce the target on the train split.
        report_path = tmp_path / "train_report.json"
        assert cli.main(["eval", "--config", str(corpus_dir / "corpus_config.json"),
                         "--checkpoint", str(out / "checkpoint.nlackpt"),
                         "--pseudo-embeddings", "9", "--split", "train", "--seed", "1",
                         "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())
        assert report["jaccard"]["mean"] >= 0.9

    def test_missing_corpus_file_is_io_error(self, tmp_path):
        code = cli.main(["train", "--ehr", str(tmp_path / "nope.jsonl"),
                         "--vocab-diagnosis", "x", "--vocab-procedure", "x",
                         "--vocab-symptom", "x", "--vocab-medication", "x",
                         "--molecules", "x", "--pseudo-embeddings", "1",
                         "--out-dir", str(tmp_path)])
        assert code == cli.EXIT_IO


class TestEval:
    def eval_args(self, corpus_dir, trained, report, split="val", *extra):
        return ["eval", "--config", str(corpus_dir / "corpus_config.json"),
                "--checkpoint", str(trained / "checkpoint.nlackpt"),
                "--pseudo-embeddings", "9", "--split", split, "--seed", "1",
                "--report", str(report), *extra]

    def test_eval_twice_identical_reports(self, corpus_dir, trained, tmp_path):
        r1, r2 = tmp_path / "r1.json", tmp_path / "r2.json"
        assert cli.main(self.eval_args(corpus_dir, trained, r1)) == 0
        assert cli.main(self.eval_args(corpus_dir, trained, r2)) == 0
        assert r1.read_bytes() == r2.read_bytes()

    def test_missing_ddi_omits_fields(self, corpus_dir, trained, tmp_path):
        # Point the config at the same corpus but drop the DDI file.
        cfg = json.loads((corpus_dir / "corpus_config.json").read_text())
        cfg.pop("ddi", None)
        cfg_path = tmp_path / "no_ddi.json"
        cfg_path.write_text(json.dumps(cfg))
        report_path = tmp_path / "r.json"
        code = cli.main(["eval", "--config", str(cfg_path),
                         "--checkpoint", str(trained / "checkpoint.nlackpt"),
                         "--pseudo-embeddings", "9", "--split", "val", "--seed", "1",
                         "--report", str(report_path)])
        assert code == 0
        report = json.loads(report_path.read_text())
        assert "ddi_rate" not in report and "delta_ddi" not in report

    def test_corrupt_checkpoint_is_io_error(self, corpus_dir, trained, tmp_path, capsys):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage!" + (trained / "checkpoint.nlackpt").read_bytes()[8:])
        code = cli.main(["eval", "--config", str(corpus_dir / "corpus_config.json"),
                         "--checkpoint", str(bad), "--pseudo-embeddings", "9",
                         "--report", str(tmp_path / "r.json")])
        assert code == cli.EXIT_IO
        assert "magic" in capsys.readouterr().err

    def test_report_echoes_config(self, corpus_dir, trained, tmp_path):
        report_path = tmp_path / "r.json"
        assert cli.main(self.eval_args(corpus_dir, trained, report_path)) == 0
        report = json.loads(report_path.read_text())
        assert report["config"]["split"] == "val"
        assert report["config"]["model"]["text_dim"] == 32


class TestPredict:
    def predict_args(self, corpus_dir, trained, out, *extra):
        return ["predict", "--config", str(corpus_dir / "corpus_config.json"),
                "--checkpoint", str(trained / "checkpoint.nlackpt"),
                "--pseudo-embeddings", "9", "--out", str(out), *extra]

    def read_rows(self, path):
        return [json.loads(line) for line in path.read_text().splitlines()]

    def test_higher_threshold_shrinks_sets(self, corpus_dir, trained, tmp_path):
        lo, hi = tmp_path / "lo.jsonl", tmp_path / "hi.jsonl"
        assert cli.main(self.predict_args(corpus_dir, trained, lo, "--threshold", "0.5")) == 0
        assert cli.main(self.predict_args(corpus_dir, trained, hi, "--threshold", "0.99")) == 0
        for row_lo, row_hi in zip(self.read_rows(lo), self.read_rows(hi)):
            assert set(row_hi["predicted"]) <= set(row_lo["predicted"])

    def test_predict_is_deterministic(self, corpus_dir, trained, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert cli.main(self.predict_args(corpus_dir, trained, a)) == 0
        assert cli.main(self.predict_args(corpus_dir, trained, b)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_predicted_codes_in_vocabulary(self, corpus_dir, trained, tmp_path):
        out = tmp_path / "p.jsonl"
        assert cli.main(self.predict_args(corpus_dir, trained, out)) == 0
        vocab_codes = {json.loads(line)["code"]
                       for line in (corpus_dir / "vocab_medication.jsonl").read_text().splitlines()}
        for row in self.read_rows(out):
            assert set(row["predicted"]) <= vocab_codes
            assert len(row["scores"]) == len(vocab_codes)

    def test_scores_consistent_with_eval_report(self, corpus_dir, trained, tmp_path):
        out = tmp_path / "p.jsonl"
        report_path = tmp_path / "r.json"
        assert cli.main(self.predict_args(corpus_dir, trained, out)) == 0
        assert cli.main(["eval", "--config", str(corpus_dir / "corpus_config.json"),
                         "--checkpoint", str(trained / "checkpoint.nlackpt"),
                         "--pseudo-embeddings", "9", "--split", "val", "--seed", "1",
                         "--report", str(report_path)]) == 0
        report = json.loads(report_path.read_text())

        cfg = json.loads((corpus_dir / "corpus_config.json").read_text())
        dataset = load_dataset(cfg["ehr"], {
            "diagnosis": cfg["vocab_diagnosis"], "procedure": cfg["vocab_procedure"],
            "symptom": cfg["vocab_symptom"], "medication": cfg["vocab_medication"]})
        _, val_split, _ = split_dataset(dataset, seed=1)
        by_key = {(r["patient_id"], r["visit_idx"]): r for r in self.read_rows(out)}
        per_visit = [jaccard(set(by_key[(p.patient_id, t)]["predicted"]),
                             set(by_key[(p.patient_id, t)]["truth"]))
                     for p in val_split for t in range(len(p.visits))]
        assert report["jaccard"]["mean"] == pytest.approx(np.mean(per_visit), abs=1e-12)
