import json

import pytest

from covgen import config as C
from covgen.cli import main
from covgen.evaluation import repetition_stats
from covgen.synthetic import KINDS, SyntheticSpec, content_tokens, gen_synthetic
from covgen.text import read_corpus


def run(*argv):
    return main([str(a) for a in argv])


# -- config --------------------------------------------------------------------


def test_defaults_match_stated_hyperparameters():
    cfg = C.load_config()
    m, t, d = C.model_config(cfg), C.train_config(cfg), C.decode_config(cfg)
    assert (m.hidden_dim, m.emb_dim, m.vocab_size, m.max_enc, m.max_dec) == (256, 128, 50_000, 400, 100)
    assert (t.learning_rate, t.init_accumulator, t.max_grad_norm, t.batch_size, t.lam) == (0.15, 0.1, 2.0, 16, 1.0)
    assert (d.beam_size, d.max_steps) == (4, 120)


def test_config_file_and_override_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train.lam": 2.0, "decode.beam_size": 2}))
    cfg = C.load_config(path, ["decode.beam_size=6", "paths.train=x.jsonl"])
    assert cfg["train.lam"] == 2.0 and cfg["decode.beam_size"] == 6 and cfg["paths.train"] == "x.jsonl"


def test_config_errors(tmp_path):
    with pytest.raises(C.ConfigError):
        C.load_config(None, ["nope.key=1"])
    with pytest.raises(C.ConfigError):
        C.load_config(None, ["train.patience=0"])
    with pytest.raises(C.ConfigError):
        C.load_config(None, ["mode=\"other\""])
    with pytest.raises(C.ConfigError):
        C.load_config(None, ["no-equals-sign"])


# -- synthetic corpora ---------------------------------------------------------


def test_copy_task_oov_rate_zero():
    for rec in gen_synthetic(SyntheticSpec("copy-task", 50, seed=1, vocab_size=20, oov_rate=0.0)):
        assert all(t.startswith("w") or t == "." for s in rec["abstract_sentences"] for t in s.split())


def test_copy_task_oov_rate_one():
    for rec in gen_synthetic(SyntheticSpec("copy-task", 50, seed=1, vocab_size=20, oov_rate=1.0)):
        art = rec["article"].split()
        for s in rec["abstract_sentences"]:
            for t in content_tokens(s):
                assert t.startswith("oov") and t in art


def test_copy_task_abstract_is_article_run():
    for rec in gen_synthetic(SyntheticSpec("copy-task", 30, seed=2, oov_rate=0.3)):
        assert rec["article"].startswith(rec["abstract_sentences"][0])


def test_template_summary_shape():
    for rec in gen_synthetic(SyntheticSpec("template-summary", 30, seed=0)):
        (fact,) = rec["abstract_sentences"]
        toks = fact.split()
        assert toks[1] == "beat" and toks[4] == "on" and toks[-1] == "."
        assert fact in rec["article"]


def test_repetition_trap_reference_has_no_duplicate_trigrams():
    for rec in gen_synthetic(SyntheticSpec("repetition-trap", 100, seed=0, vocab_size=40)):
        sents = [s.split() for s in rec["abstract_sentences"]]
        assert repetition_stats(sents).ngram[3] == 0.0
        assert len(sents) >= 2
        assert len({tuple(s[:2]) for s in sents}) == 1  # shared opening


@pytest.mark.parametrize("kind", KINDS)
def test_generators_deterministic(kind):
    spec = SyntheticSpec(kind, 20, seed=5, oov_rate=0.2)
    assert gen_synthetic(spec) == gen_synthetic(spec)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec("nonsense")
    with pytest.raises(ValueError):
        SyntheticSpec(oov_rate=1.5)


# -- command line ----------------------------------------------------------------


def test_count_params(capsys):
    assert run("count-params", "--mode", "baseline") == 0
    out = capsys.readouterr().out
    assert "total: 21,499,600" in out and "input_feed" in out
    assert run("count-params", "--mode", "coverage") == 0
    assert "total: 21,501,265" in capsys.readouterr().out


def test_gradcheck(capsys):
    assert run("gradcheck", "--mode", "pointer") == 0
    out = capsys.readouterr().out
    assert "pointer: max relative error" in out and "PASS at 0.0001" in out


def test_gen_synthetic_seed7_twice(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen-synthetic", "--kind", "copy-task", "--seed", 7, "--out", a) == 0
    assert run("gen-synthetic", "--kind", "copy-task", "--seed", 7, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(read_corpus(a)) == 200


def test_usage_errors(capsys):
    assert run("frobnicate") == 1
    assert run("count-params", "--no-such-flag") == 1
    assert run() == 1
    assert run("count-params", "--set", "bogus=1") == 1
    assert "usage" in capsys.readouterr().err


def test_runtime_failure_exit_code(tmp_path):
    assert run("build-vocab", "--corpus", tmp_path / "missing.jsonl", "--out", tmp_path / "v.txt") == 2


def test_coverage_needs_source_checkpoint(tmp_path, capsys):
    corpus = tmp_path / "c.jsonl"
    run("gen-synthetic", "--kind", "copy-task", "--count", 4, "--out", corpus)
    code = run("train", "--mode", "coverage", "--set", f"paths.train={corpus}",
               "--set", f"paths.checkpoint_dir={tmp_path / 'ck'}")
    assert code == 1
    assert "source_checkpoint" in capsys.readouterr().err


def _pipeline(tmp_path, mode="pointer", extra=()):
    corpus = tmp_path / "c.jsonl"
    if not corpus.exists():
        assert run("gen-synthetic", "--kind", "copy-task", "--count", 12, "--oov-rate", 0.3, "--lexicon-size", 10,
                   "--seed", 3, "--out", corpus) == 0
    common = ["--mode", mode,
              "--set", f"paths.train={corpus}", "--set", f"paths.valid={corpus}", "--set", f"paths.test={corpus}",
              "--set", f"paths.checkpoint_dir={tmp_path / mode}", "--set", f"paths.report_dir={tmp_path / mode / 'rep'}",
              "--set", "model.hidden_dim=4", "--set", "model.emb_dim=3", "--set", "model.vocab_size=20",
              "--set", "train.max_steps=6", "--set", "train.eval_every=3", "--set", "decode.max_steps=6",
              *extra]
    for cmd in ("train", "decode", "evaluate", "inspect"):
        assert run(cmd, *common) == 0, cmd
    return tmp_path / mode


def test_full_pipeline(tmp_path):
    out = _pipeline(tmp_path)
    for name in ("best.ckpt", "final.ckpt", "train_log.csv", "vocab.txt", "run_config.json"):
        assert (out / name).exists(), name
    rep = out / "rep"
    report = json.loads((rep / "report.json").read_text())
    assert report["config"]["mode"] == "pointer" and report["count"] == 12
    assert "lead3" in report
    assert json.loads((rep / "run_config.json").read_text())["model.hidden_dim"] == 4
    stats = json.loads((rep / "pgen_stats.json").read_text())
    assert 0.0 <= stats["mean"] <= 1.0
    dumps = [json.loads(line) for line in (rep / "inspect.jsonl").read_text().splitlines()]
    assert len(dumps) == 12 and "p_gen" in dumps[0]
    rows = [json.loads(line) for line in (rep / "decoded.jsonl").read_text().splitlines()]
    assert set(rows[0]) == {"article", "reference", "decoded"}


def test_coverage_phase_from_pointer_checkpoint(tmp_path):
    ptr = _pipeline(tmp_path)
    out = _pipeline(tmp_path, "coverage", ["--set", f"paths.source_checkpoint={ptr / 'final.ckpt'}",
                                           "--set", f"paths.vocab={ptr / 'vocab.txt'}",
                                           "--set", "train.coverage_steps=3"])
    from covgen.checkpoint import load_checkpoint
    ck = load_checkpoint(out / "final.ckpt")
    assert ck.config.use_coverage and ck.meta["step"] == 9 and ck.meta["run_config"]["mode"] == "coverage"


def test_baseline_inspect_has_no_pgen_stats(tmp_path):
    out = _pipeline(tmp_path, "baseline")
    assert not (out / "rep" / "pgen_stats.json").exists()
