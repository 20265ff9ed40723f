"""End-to-end exercises of the command-line pipeline on a tiny run.

One module-scoped fixture drives gen-data -> train-teacher -> distill ->
train-student -> translate -> evaluate with a deliberately small config;
the tests then pick over the artifacts.  Error paths get their own tiny
invocations.
"""

import json
import shutil

import pytest
import yaml

from narlab.checkpoint import checkpoint_digest, load_checkpoint
from narlab.cli import main
from narlab.config import OUTPUT_ROOT_ENV
from narlab.corpora import read_sentences
from narlab.lengths import LengthPolicy, candidate_lengths
from narlab.nar import NARTransformer

# small enough that the whole pipeline runs in a few seconds
TINY = [
    "task.n_content=8", "task.min_len=3", "task.max_len=6",
    "model.num_layers=1", "model.num_heads=2", "model.model_dim=16",
    "model.hidden_dim=32", "model.max_len=32",
    "train.max_epochs=2", "train.batch_tokens=512", "train.warmup_steps=50",
    "train.average_last_k=2",
    "data.n_pairs=200", "data.mono_ratio=1.0",
]


def opts(out, extra=()):
    flat = []
    for v in [f"output_dir={out}", *TINY, *extra]:
        flat += ["-O", v]
    return flat


def run_ok(*argv):
    assert main(list(argv)) == 0


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "run"
    o = opts(out)
    run_ok("gen-data", *o)
    run_ok("train-teacher", *o)
    run_ok("distill", *o)
    run_ok("train-student", *o, "--teacher", str(out / "teacher.ckpt"))
    run_ok("translate", *o, "-i", str(out / "distill" / "test.src"),
           "-o", str(out / "hyp.txt"), "--half-width", "1")
    run_ok("translate", *o, "-i", str(out / "distill" / "test.src"),
           "-o", str(out / "hyp_gold.txt"),
           "--gold-lengths", str(out / "distill" / "test.tgt"))
    run_ok("evaluate", "--hyp", str(out / "hyp_gold.txt"),
           "--ref", str(out / "distill" / "test.tgt"),
           "-o", str(out / "bleu.json"))
    return out


class TestPipelineArtifacts:
    def test_expected_files(self, run):
        for rel in [
            "resolved.yaml", "data/meta.json", "data/mono.txt",
            "teacher.ckpt", "teacher_curves.jsonl",
            "distill/meta.json", "student.ckpt", "student_curves.jsonl",
            "student_eval.json", "hyp.txt", "hyp_gold.txt", "bleu.json",
        ]:
            assert (run / rel).exists(), rel
        for split in ("train", "valid", "test"):
            for ext in ("src", "tgt"):
                assert (run / "data" / f"{split}.{ext}").exists()
                assert (run / "distill" / f"{split}.{ext}").exists()
        assert not (run / ".lock").exists()

    def test_meta_counts_match_files(self, run):
        meta = json.loads((run / "data" / "meta.json").read_text())
        assert sum(meta["sizes"].values()) == 200
        for split, n in meta["sizes"].items():
            assert len(read_sentences(run / "data" / f"{split}.src")) == n
        assert len(read_sentences(run / "data" / "mono.txt")) == meta["mono_size"]
        assert meta["vocab_size"] == 12

    def test_resolved_snapshot_reflects_overrides(self, run):
        d = yaml.safe_load((run / "resolved.yaml").read_text())
        assert d["task"]["n_content"] == 8
        assert d["model"]["model_dim"] == 16
        assert d["data"]["n_pairs"] == 200

    def test_curves_are_jsonl_with_one_line_per_epoch(self, run):
        _, _, extra = load_checkpoint(run / "teacher.ckpt")
        lines = (run / "teacher_curves.jsonl").read_text().splitlines()
        assert len(lines) == extra["epochs"] == 2
        for line in lines:
            rec = json.loads(line)
            assert {"epoch", "train_loss", "valid_loss", "lr",
                    "wall_seconds"} <= set(rec)

    def test_distill_meta_binds_teacher_digest(self, run):
        meta = json.loads((run / "distill" / "meta.json").read_text())
        assert meta["teacher_digest"] == checkpoint_digest(run / "teacher.ckpt")
        data_meta = json.loads((run / "data" / "meta.json").read_text())
        for split in ("train", "valid", "test"):
            kept, dropped = meta["counts"][split], meta["dropped"][split]
            assert kept + dropped == data_meta["sizes"][split]
            assert len(read_sentences(run / "distill" / f"{split}.src")) == kept

    def test_student_checkpoint_extras(self, run):
        _, _, extra = load_checkpoint(run / "student.ckpt")
        assert extra["role"] == "student"
        assert extra["mono_fraction"] == 1.0
        assert isinstance(extra["length_offset"], int)
        report = json.loads((run / "student_eval.json").read_text())
        assert {"train_loss", "valid_loss", "test_loss", "mono_fraction",
                "epochs"} <= set(report)

    def test_translate_line_counts_and_tokens(self, run):
        srcs = read_sentences(run / "distill" / "test.src")
        hyps = read_sentences(run / "hyp.txt")
        assert len(hyps) == len(srcs)
        assert all(isinstance(t, int) and 0 <= t < 12 for h in hyps for t in h)

    def test_gold_lengths_are_exact(self, run):
        refs = read_sentences(run / "distill" / "test.tgt")
        hyps = read_sentences(run / "hyp_gold.txt")
        assert [len(h) for h in hyps] == [len(r) for r in refs]

    def test_evaluate_json_report(self, run):
        report = json.loads((run / "bleu.json").read_text())
        assert {"bleu", "precisions", "brevity_penalty", "hyp_tokens",
                "ref_tokens", "smooth"} <= set(report)
        assert 0.0 <= report["bleu"] <= 100.0
        assert report["smooth"] is False

    def test_gen_data_rerun_is_byte_identical(self, run):
        before = {p.name: p.read_bytes()
                  for p in sorted((run / "data").iterdir())}
        run_ok("gen-data", *opts(run))
        after = {p.name: p.read_bytes()
                 for p in sorted((run / "data").iterdir())}
        assert before == after

    def test_half_width_zero_no_dedup_is_raw_greedy(self, run, tmp_path):
        hyp = tmp_path / "b0.txt"
        run_ok("translate", *opts(run), "-i", str(run / "distill" / "test.src"),
               "-o", str(hyp), "--half-width", "0", "--no-dedup")
        cfg, params, extra = load_checkpoint(run / "student.ckpt")
        student = NARTransformer(cfg, params)
        policy = LengthPolicy(C=extra["length_offset"], B=0)
        want = []
        for s in read_sentences(run / "distill" / "test.src"):
            (L,) = candidate_lengths(len(s), policy)
            want.append(student.nar_greedy_emit(s, L))
        assert read_sentences(hyp) == want

    def test_translate_snapshot_records_folded_flags(self, run, tmp_path):
        run_ok("translate", *opts(run), "-i", str(run / "distill" / "test.src"),
               "-o", str(tmp_path / "h.txt"), "--half-width", "2",
               "--rank-mode", "mean_logprob", "--dedup")
        d = yaml.safe_load((run / "resolved.yaml").read_text())
        assert d["length"]["B"] == 2
        assert d["length"]["rank_mode"] == "mean_logprob"
        assert d["length"]["dedup"] is True


class TestAnalyzeCommands:
    def test_buckets(self, run, tmp_path, capsys):
        out = tmp_path / "buckets.txt"
        run_ok("analyze", "buckets", "--hyp", str(run / "hyp_gold.txt"),
               "--ref", str(run / "distill" / "test.tgt"),
               "--src", str(run / "distill" / "test.src"),
               "--edges", "1-4,5-6", "-o", str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "# lo hi count bleu"
        assert len(lines) == 3
        assert "total" in capsys.readouterr().out

    def test_b_sweep(self, run, tmp_path):
        out = tmp_path / "sweep.txt"
        run_ok("analyze", "b-sweep",
               "--student", f"tiny={run / 'student.ckpt'}",
               "--teacher", str(run / "teacher.ckpt"),
               "--data", str(run / "distill"), "--b-values", "0,1",
               "--length-offset", "0", "-o", str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "# variant B bleu"
        assert [ln.split()[1] for ln in lines[1:]] == ["0", "1", "gold"]

    def test_loss_gap(self, run, tmp_path):
        out = tmp_path / "gap.txt"
        run_ok("analyze", "loss-gap", "--run", f"0.0={run}",
               "--run", f"0.25={run}", "--run", f"0.5={run}",
               "--run", f"1.0={run}", "-o", str(out))
        lines = out.read_text().splitlines()
        assert lines[0] == "# fraction train_loss test_loss gap"
        assert len(lines) == 5
        assert out.with_suffix(".dat").exists()

    def test_loss_gap_missing_fraction_named(self, run, tmp_path, capsys):
        assert main(["analyze", "loss-gap", "--run", f"1.0={run}",
                     "-o", str(tmp_path / "gap.txt")]) == 2
        assert "0.5" in capsys.readouterr().err


class TestErrorPaths:
    def test_translate_without_student(self, tmp_path, capsys):
        assert main(["translate", *opts(tmp_path / "empty"),
                     "-i", "x.txt", "-o", "y.txt"]) == 2
        assert "missing input" in capsys.readouterr().err

    def test_train_student_requires_teacher(self, tmp_path, capsys):
        assert main(["train-student", *opts(tmp_path / "empty")]) == 2
        assert "--teacher" in capsys.readouterr().err

    def test_distill_refuses_foreign_corpus(self, run, tmp_path, capsys):
        out = tmp_path / "clone"
        shutil.copytree(run / "data", out / "data")
        shutil.copy(run / "teacher.ckpt", out / "teacher.ckpt")
        (out / "distill").mkdir()
        (out / "distill" / "meta.json").write_text(
            json.dumps({"teacher_digest": "beef"}))
        assert main(["distill", *opts(out)]) == 2
        assert "different" in capsys.readouterr().err

    def test_gold_lengths_line_count_mismatch(self, run, tmp_path, capsys):
        short = tmp_path / "short.txt"
        short.write_text("4 5\n")
        assert main(["translate", *opts(run),
                     "-i", str(run / "distill" / "test.src"),
                     "-o", str(tmp_path / "h.txt"),
                     "--gold-lengths", str(short)]) == 2
        assert "lines" in capsys.readouterr().err

    def test_locked_run_dir(self, tmp_path, capsys):
        out = tmp_path / "busy"
        out.mkdir()
        (out / ".lock").write_text("123\n")
        assert main(["gen-data", *opts(out)]) == 2
        assert "locked" in capsys.readouterr().err

    def test_unknown_override_section(self, tmp_path, capsys):
        assert main(["gen-data", *opts(tmp_path / "r", ["nope.x=1"])]) == 2
        assert "unknown config sections" in capsys.readouterr().err

    def test_unknown_command_exits(self):
        with pytest.raises(SystemExit):
            main(["frobnicate"])

    def test_evaluate_missing_file(self, tmp_path, capsys):
        assert main(["evaluate", "--hyp", str(tmp_path / "no.txt"),
                     "--ref", str(tmp_path / "no.txt")]) == 2
        assert "missing input" in capsys.readouterr().err

    def test_wrong_flavor_checkpoint(self, run, tmp_path, capsys):
        assert main(["translate", *opts(run),
                     "-i", str(run / "distill" / "test.src"),
                     "-o", str(tmp_path / "h.txt"),
                     "--student", str(run / "teacher.ckpt")]) == 2
        assert "expected NAR" in capsys.readouterr().err


def test_env_var_roots_relative_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
    flat = []
    for v in ["output_dir=envrun", *TINY]:
        flat += ["-O", v]
    run_ok("gen-data", *flat)
    assert (tmp_path / "envrun" / "data" / "train.src").exists()


def test_evaluate_stdout_line(run, capsys):
    run_ok("evaluate", "--hyp", str(run / "hyp_gold.txt"),
           "--ref", str(run / "distill" / "test.tgt"))
    out = capsys.readouterr().out
    assert out.startswith("BLEU ")
    assert "BP" in out and "P4" in out
