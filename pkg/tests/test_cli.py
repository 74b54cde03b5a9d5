import json
import os
import subprocess
import sys

import pytest

from goracle.cli import main
from goracle.corpus import CorpusManifest
from goracle.events import Verdict

FAST = ["--steps", "3", "--batch-size", "4", "--seq-len", "128",
        "--embed-dim", "8", "--layers", "1", "--heads", "1"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("corpus"))
    rc = main(["synth", "--out", out, "--projects", "2",
               "--traces-per-project", "6", "--events-min", "3",
               "--events-max", "6", "--seed", "5"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def manifest_path(corpus_dir):
    return os.path.join(corpus_dir, "corpus.manifest.jsonl")


@pytest.fixture(scope="module")
def ckpt_path(tmp_path_factory, manifest_path):
    path = str(tmp_path_factory.mktemp("model") / "tiny.ckpt")
    rc = main(["train", "--manifest", manifest_path, "--out", path] + FAST)
    assert rc == 0
    return path


def _trace_files(corpus_dir, n=2):
    manifest = CorpusManifest.load(
        os.path.join(corpus_dir, "corpus.manifest.jsonl"))
    return [os.path.join(corpus_dir, e.path) for e in manifest.entries[:n]]


def test_no_arguments_is_usage_error(capsys):
    assert main([]) == 64
    assert "error" in capsys.readouterr().err


def test_unknown_subcommand_is_usage_error(capsys):
    assert main(["frobnicate"]) == 64


def test_unknown_flag_is_usage_error(capsys):
    assert main(["parse", "x", "--no-such-flag"]) == 64


def test_bad_fields_value_is_usage_error(capsys):
    assert main(["train", "--manifest", "m", "--out", "o",
                 "--fields", "Type,Bogus"]) == 64


def test_bad_steps_value_is_usage_error(manifest_path, capsys):
    assert main(["train", "--manifest", manifest_path, "--out", "o",
                 "--steps", "0"]) == 64
    assert "steps" in capsys.readouterr().err


def test_indivisible_heads_is_usage_error(manifest_path, capsys):
    assert main(["train", "--manifest", manifest_path, "--out", "o",
                 "--embed-dim", "8", "--heads", "3"]) == 64


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "goracle" in capsys.readouterr().out


def test_parse_prints_json(corpus_dir, capsys):
    path = _trace_files(corpus_dir, 1)[0]
    assert main(["parse", path]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert "Events" in doc


def test_parse_missing_file_exits_one(capsys):
    assert main(["parse", "/nonexistent/trace.gotrace"]) == 1
    assert "parse error" in capsys.readouterr().err


def test_parse_garbage_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.gotrace"
    bad.write_bytes(b"definitely not a trace")
    assert main(["parse", str(bad)]) == 1


def test_parse_validate_flags_bad_trace(tmp_path, capsys):
    doc = {"Events": [{"Type": 12, "Ts": 5, "P": -5, "G": 1}]}
    path = tmp_path / "bad.trace.json"
    path.write_text(json.dumps(doc))
    assert main(["parse", str(path), "--validate"]) == 2
    err = capsys.readouterr().err
    assert "violation" in err


def test_parse_validate_ok_trace(corpus_dir, capsys):
    path = _trace_files(corpus_dir, 1)[0]
    assert main(["parse", path, "--validate"]) == 0


def test_convert_roundtrip_is_bit_identical(corpus_dir, tmp_path, capsys):
    src = next(p for p in _trace_files(corpus_dir, 12)
               if p.endswith(".gotrace"))
    as_json = str(tmp_path / "t.trace.json")
    back = str(tmp_path / "t.gotrace")
    assert main(["convert", src, "--to", "json", "-o", as_json]) == 0
    assert main(["convert", as_json, "--to", "binary", "-o", back]) == 0
    with open(src, "rb") as fh:
        original = fh.read()
    with open(back, "rb") as fh:
        rebuilt = fh.read()
    assert original == rebuilt


def test_convert_bad_input_exits_one(tmp_path, capsys):
    bad = tmp_path / "bad.gotrace"
    bad.write_bytes(b"\x00\x01")
    assert main(["convert", str(bad), "--to", "json",
                 "-o", str(tmp_path / "out")]) == 1


def test_synth_prints_manifest_path(tmp_path, capsys):
    out = str(tmp_path / "corpus")
    assert main(["synth", "--out", out, "--projects", "1",
                 "--traces-per-project", "2", "--seed", "3"]) == 0
    printed = capsys.readouterr().out.strip()
    assert printed == os.path.join(out, "corpus.manifest.jsonl")
    assert os.path.exists(printed)


def test_synth_bug_filter(tmp_path):
    out = str(tmp_path / "corpus")
    assert main(["synth", "--out", out, "--projects", "1",
                 "--traces-per-project", "8", "--seed", "3",
                 "--bugs", "DoubleCreate"]) == 0
    manifest = CorpusManifest.load(os.path.join(out, "corpus.manifest.jsonl"))
    causes = {e.label.cause for e in manifest.entries
              if e.label.verdict is Verdict.Fail}
    assert causes == {"DoubleCreate"}


def test_synth_unknown_bug_is_usage_error(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "c"),
                 "--bugs", "NoSuchBug"]) == 64
    assert "unknown signatures" in capsys.readouterr().err


def test_synth_bad_fraction_is_usage_error(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "c"),
                 "--pass-fraction", "1.5"]) == 64


def test_train_writes_checkpoint_and_logs(manifest_path, tmp_path, capsys):
    out = str(tmp_path / "model.ckpt")
    assert main(["train", "--manifest", manifest_path, "--out", out]
                + FAST) == 0
    assert os.path.exists(out)
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0].startswith("train: steps=3 batch=4 ")
    assert "fields=Off,Type,Ts,P,G,StkID,Stk,Args,SArgs" in lines[0]
    # one loss line per step plus the final checkpoint note
    assert sum("loss" in ln for ln in lines) == 3
    assert lines[-1] == f"checkpoint written to {out}"


def test_train_missing_manifest_exits_one(capsys):
    assert main(["train", "--manifest", "/nope/corpus.manifest.jsonl",
                 "--out", "x"] + FAST) == 1


def test_train_respects_field_subset(manifest_path, tmp_path, capsys):
    out = str(tmp_path / "sub.ckpt")
    assert main(["train", "--manifest", manifest_path, "--out", out,
                 "--fields", "Type,Ts"] + FAST) == 0
    capsys.readouterr()
    assert main(["inspect", out]) == 0
    assert "fields: Type,Ts" in capsys.readouterr().out


def test_classify_lines(ckpt_path, corpus_dir, capsys):
    paths = _trace_files(corpus_dir, 3)
    assert main(["classify", "--checkpoint", ckpt_path] + paths) == 0
    out_lines = capsys.readouterr().out.strip().split("\n")
    assert len(out_lines) == 3
    for path, line in zip(paths, out_lines):
        head, verdict, p_fail = line.rsplit(" ", 2)
        assert head == path
        assert verdict in ("Pass", "Fail")
        assert 0.0 <= float(p_fail) <= 1.0


def test_classify_partial_failure(ckpt_path, corpus_dir, tmp_path, capsys):
    good = _trace_files(corpus_dir, 1)[0]
    bad = tmp_path / "bad.gotrace"
    bad.write_bytes(b"junk")
    assert main(["classify", "--checkpoint", ckpt_path, good,
                 str(bad)]) == 3
    captured = capsys.readouterr()
    assert len(captured.out.strip().split("\n")) == 1
    assert "error" in captured.err


def test_classify_missing_checkpoint_exits_one(corpus_dir, capsys):
    good = _trace_files(corpus_dir, 1)[0]
    assert main(["classify", "--checkpoint", "/nope.ckpt", good]) == 1


def test_classify_needs_traces(ckpt_path):
    assert main(["classify", "--checkpoint", ckpt_path]) == 64


def test_crossval_writes_reports(manifest_path, tmp_path, capsys):
    out = str(tmp_path / "reports")
    assert main(["crossval", "--manifest", manifest_path, "--out", out]
                + FAST) == 0
    stdout = capsys.readouterr().out
    assert stdout.startswith("fold")
    table = open(os.path.join(out, "crossval.txt")).read()
    assert table == stdout
    records = open(os.path.join(out, "crossval.jsonl")).read()
    assert len(records.strip().split("\n")) == 2


def test_crossval_is_deterministic(manifest_path, tmp_path):
    out_a, out_b = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["crossval", "--manifest", manifest_path, "--out", out_a]
                + FAST) == 0
    assert main(["crossval", "--manifest", manifest_path, "--out", out_b]
                + FAST) == 0
    rec_a = open(os.path.join(out_a, "crossval.jsonl"), "rb").read()
    rec_b = open(os.path.join(out_b, "crossval.jsonl"), "rb").read()
    assert rec_a == rec_b


def test_crossval_holdout(manifest_path, tmp_path, capsys):
    manifest = CorpusManifest.load(manifest_path)
    project = manifest.projects()[0]
    out = str(tmp_path / "reports")
    assert main(["crossval", "--manifest", manifest_path, "--out", out,
                 "--hold-out", project] + FAST) == 0
    records = open(os.path.join(out, "crossval.jsonl")).read()
    lines = records.strip().split("\n")
    assert len(lines) == 1
    assert json.loads(lines[0])["fold"] == project


def test_crossval_unknown_holdout_exits_one(manifest_path, tmp_path, capsys):
    assert main(["crossval", "--manifest", manifest_path,
                 "--out", str(tmp_path / "r"), "--hold-out", "zzz"]
                + FAST) == 1


def test_ablate_writes_reports(manifest_path, tmp_path, capsys):
    out = str(tmp_path / "reports")
    assert main(["ablate", "--manifest", manifest_path, "--out", out,
                 "--fields-to-ablate", "P"] + FAST) == 0
    stdout = capsys.readouterr().out
    assert "-P" in stdout and "baseline" in stdout
    records = open(os.path.join(out, "ablation.jsonl")).read()
    lines = [json.loads(ln) for ln in records.strip().split("\n")]
    assert [r["field"] for r in lines] == ["baseline", "P"]


def test_ablate_rejects_unablatable_field(manifest_path, tmp_path, capsys):
    assert main(["ablate", "--manifest", manifest_path,
                 "--out", str(tmp_path / "r"),
                 "--fields-to-ablate", "Args"] + FAST) == 64
    assert "not ablatable" in capsys.readouterr().err


def test_inspect_manifest(manifest_path, capsys):
    assert main(["inspect", manifest_path]) == 0
    out = capsys.readouterr().out
    assert out.startswith("corpus: 12 traces, 2 projects")
    assert out.count("passing") == 2


def test_inspect_trace(corpus_dir, capsys):
    path = _trace_files(corpus_dir, 1)[0]
    assert main(["inspect", path]) == 0
    out = capsys.readouterr().out
    assert out.startswith("trace: ")
    assert "signature" in out


def test_inspect_checkpoint(ckpt_path, capsys):
    assert main(["inspect", ckpt_path]) == 0
    out = capsys.readouterr().out
    assert out.startswith("checkpoint: ")
    assert "embed-dim=8" in out


def test_inspect_invalid_trace_exits_two(tmp_path, capsys):
    doc = {"Events": [{"Type": 12, "Ts": 5, "P": -5, "G": 1}]}
    path = tmp_path / "bad.trace.json"
    path.write_text(json.dumps(doc))
    assert main(["inspect", str(path)]) == 2
    assert "violation" in capsys.readouterr().out


def test_env_seed_default(manifest_path, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GORACLE_SEED", "123")
    out = str(tmp_path / "model.ckpt")
    assert main(["train", "--manifest", manifest_path, "--out", out]
                + FAST) == 0
    assert "seed=123" in capsys.readouterr().out.split("\n")[0]


def test_env_seed_overridden_by_flag(manifest_path, tmp_path, monkeypatch,
                                     capsys):
    monkeypatch.setenv("GORACLE_SEED", "123")
    out = str(tmp_path / "model.ckpt")
    assert main(["train", "--manifest", manifest_path, "--out", out,
                 "--seed", "9"] + FAST) == 0
    assert "seed=9" in capsys.readouterr().out.split("\n")[0]


def test_env_seed_garbage_warns_and_uses_zero(manifest_path, tmp_path,
                                              monkeypatch, capsys):
    monkeypatch.setenv("GORACLE_SEED", "not-a-number")
    out = str(tmp_path / "model.ckpt")
    assert main(["train", "--manifest", manifest_path, "--out", out]
                + FAST) == 0
    captured = capsys.readouterr()
    assert "seed=0" in captured.out.split("\n")[0]
    assert "GORACLE_SEED" in captured.err


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "goracle", "--help"],
                         capture_output=True, text=True)
    assert out.returncode == 0
    assert "goracle" in out.stdout
