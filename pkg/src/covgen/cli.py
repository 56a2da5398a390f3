"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from covgen import config as C
from covgen.beam import beam_search, inspect_decode
from covgen.checkpoint import load_checkpoint, save_checkpoint
from covgen.evaluation import evaluate_corpus, lead3, pgen_stats, write_report
from covgen.model import ModelConfig, count_params, init_params
from covgen.synthetic import KINDS, SyntheticSpec, gen_synthetic
from covgen.text import (
    Vocabulary,
    build_vocab,
    corpus_tokens,
    encode_records,
    read_corpus,
    split_sentences,
    write_corpus,
)
from covgen.trainer import Trainer, enable_coverage

log = logging.getLogger("covgen")

GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _require(cfg, key):
    if not cfg.get(key):
        raise UsageError(f"config key {key!r} is required for this command (use --set {key}=...)")
    return cfg[key]


def _vocab(cfg, train_records=None) -> Vocabulary:
    path = cfg["paths.vocab"] or str(Path(cfg["paths.checkpoint_dir"]) / "vocab.txt")
    cap = cfg["model.vocab_size"]
    if Path(path).exists():
        return Vocabulary.load(path, cap)
    if train_records is None:
        raise UsageError(f"vocabulary file {path} not found")
    vocab = build_vocab(corpus_tokens(train_records), cap)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    return vocab


def _checkpoint_path(cfg, args) -> Path:
    if getattr(args, "checkpoint", None):
        return Path(args.checkpoint)
    return Path(cfg["paths.checkpoint_dir"]) / "best.ckpt"


# -- subcommands -------------------------------------------------------------


def cmd_count_params(cfg, args) -> int:
    total, breakdown = count_params(C.model_config(cfg))
    print(f"mode: {cfg['mode']}")
    for group, n in breakdown.items():
        print(f"  {group:<16} {n:>12,}")
    print(f"total: {total:,}")
    return 0


def cmd_gradcheck(cfg, args) -> int:
    from covgen.checks import model_grad_check

    modes = C.MODES if args.all_modes else (cfg["mode"],)
    ok = True
    for mode in modes:
        err = model_grad_check(mode, seed=cfg["seed"])
        passed = err < GRADCHECK_TOL
        ok &= passed
        print(f"{mode}: max relative error {err:.3e} ({'PASS' if passed else 'FAIL'} at {GRADCHECK_TOL:g})")
    return 0 if ok else 2


def cmd_gen_synthetic(cfg, args) -> int:
    spec = SyntheticSpec(kind=args.kind, count=args.count, seed=args.seed if args.seed is not None else cfg["seed"],
                         vocab_size=args.lexicon_size, oov_rate=args.oov_rate)
    write_corpus(args.out, gen_synthetic(spec))
    print(f"wrote {spec.count} {spec.kind} examples to {args.out}")
    return 0


def cmd_build_vocab(cfg, args) -> int:
    records = read_corpus(args.corpus)
    vocab = build_vocab(corpus_tokens(records), args.cap or cfg["model.vocab_size"])
    vocab.save(args.out)
    print(f"wrote {vocab.size - 4} words (+4 reserved) to {args.out}")
    return 0


def cmd_train(cfg, args) -> int:
    train_records = read_corpus(_require(cfg, "paths.train"))
    valid_records = read_corpus(cfg["paths.valid"]) if cfg["paths.valid"] else []
    vocab = _vocab(cfg, train_records)
    ckdir = Path(cfg["paths.checkpoint_dir"])
    ckdir.mkdir(parents=True, exist_ok=True)
    _write_json(ckdir / "run_config.json", cfg)
    tcfg = C.train_config(cfg)
    mcfg = C.model_config(cfg, vocab_size=vocab.size)
    train = encode_records(train_records, vocab, mcfg.max_enc, mcfg.max_dec)
    valid = encode_records(valid_records, vocab, mcfg.max_enc, mcfg.max_dec)
    log_path = ckdir / "train_log.csv"
    if log_path.exists():
        log_path.unlink()

    step, accum, max_steps = 0, None, tcfg.max_steps
    if cfg["mode"] == "coverage" and not cfg["train.coverage_from_scratch"]:
        src = cfg["paths.source_checkpoint"]
        if not src:
            raise UsageError("coverage mode needs paths.source_checkpoint (a pointer-mode checkpoint) "
                             "or train.coverage_from_scratch=true")
        base = load_checkpoint(src)
        if base.config.vocab_size != vocab.size:
            raise ValueError("source checkpoint vocabulary size differs from the active vocabulary")
        ck = enable_coverage(base, tcfg.init_accumulator)
        params, accum, step = ck.params, ck.accumulators, int(ck.meta.get("step", 0))
        max_steps = step + cfg["train.coverage_steps"]
    else:
        params = init_params(mcfg, cfg["seed"])

    trainer = Trainer(params, train, valid, tcfg, accumulators=accum, step=step, vocab=vocab,
                      log_path=log_path, checkpoint_path=ckdir / "best.ckpt", run_config=cfg)
    t0 = time.time()
    result = trainer.run(max_steps)
    save_checkpoint(ckdir / "final.ckpt", trainer.checkpoint(best_valid=result.best_valid))
    if not result.evaluations:
        save_checkpoint(ckdir / "best.ckpt", trainer.checkpoint(best_valid=None))
    last = result.log[-1] if result.log else {}
    print(f"trained {result.steps - step} steps in {time.time() - t0:.1f}s; last loss {last.get('loss', float('nan')):.4f}; "
          f"best validation {result.best_valid:.4f}; early stop: {result.stopped_early}")
    return 0


def _test_examples(cfg, vocab, mcfg: ModelConfig):
    records = read_corpus(_require(cfg, "paths.test"))
    return records, encode_records(records, vocab, mcfg.max_enc, cfg["decode.max_steps"])


def cmd_decode(cfg, args) -> int:
    ck = load_checkpoint(_checkpoint_path(cfg, args))
    vocab = _vocab(cfg)
    records, examples = _test_examples(cfg, vocab, ck.config)
    dcfg = C.decode_config(cfg)
    rows = []
    for rec, ex in zip(records, examples):
        out = beam_search(ck.params, ex, vocab, dcfg)
        rows.append({"article": " ".join(ex.article_tokens), "reference": rec["abstract_sentences"],
                     "decoded": " ".join(out.words)})
    out_dir = Path(cfg["paths.report_dir"])
    _write_jsonl(out_dir / "decoded.jsonl", rows)
    _write_json(out_dir / "run_config.json", cfg)
    print(f"decoded {len(rows)} examples to {out_dir / 'decoded.jsonl'}")
    return 0


def cmd_evaluate(cfg, args) -> int:
    out_dir = Path(cfg["paths.report_dir"])
    items = _read_jsonl(args.decoded or out_dir / "decoded.jsonl")
    report = evaluate_corpus(items, config=cfg)
    lead_items = [{"article": it["article"], "reference": it["reference"],
                   "decoded": lead3(split_sentences(it["article"].split()))} for it in items]
    report["lead3"] = evaluate_corpus(lead_items)["means"]
    write_report(report, out_dir / "report.json", out_dir / "figures.csv")
    m = report["means"]
    print(f"ROUGE-1 {m['rouge1']:.4f}  ROUGE-2 {m['rouge2']:.4f}  ROUGE-L {m['rougeL']:.4f}  "
          f"(lead-3: {report['lead3']['rouge1']:.4f} / {report['lead3']['rouge2']:.4f} / {report['lead3']['rougeL']:.4f})")
    return 0


def cmd_inspect(cfg, args) -> int:
    ck = load_checkpoint(_checkpoint_path(cfg, args))
    vocab = _vocab(cfg)
    _, examples = _test_examples(cfg, vocab, ck.config)
    dcfg = C.decode_config(cfg)
    dumps = [inspect_decode(ck.params, ex, vocab, dcfg) for ex in examples]
    out_dir = Path(cfg["paths.report_dir"])
    _write_jsonl(out_dir / "inspect.jsonl", dumps)
    _write_json(out_dir / "run_config.json", cfg)
    if ck.config.use_pointer:
        stats = pgen_stats(dumps)
        stats["config"] = cfg
        _write_json(out_dir / "pgen_stats.json", stats)
        print(f"p_gen mean {stats['mean']:.4f} (sentence-initial {stats['sentence_initial_mean']}, "
              f"other {stats['other_mean']})")
    print(f"wrote {len(dumps)} inspection records to {out_dir / 'inspect.jsonl'}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
    "count-params": cmd_count_params,
    "gradcheck": cmd_gradcheck,
    "gen-synthetic": cmd_gen_synthetic,
    "build-vocab": cmd_build_vocab,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file of flat dotted keys")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable; wins over --config)")
    common.add_argument("--mode", choices=C.MODES)
    common.add_argument("--seed", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="covgen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True
    for name in ("train", "count-params"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("gradcheck", parents=[common])
    p.add_argument("--all-modes", action="store_true")
    for name in ("decode", "inspect"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--checkpoint")
    p = sub.add_parser("evaluate", parents=[common])
    p.add_argument("--decoded", help="decoded JSONL (default: <report_dir>/decoded.jsonl)")
    p = sub.add_parser("gen-synthetic", parents=[common])
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--lexicon-size", type=int, default=30)
    p.add_argument("--oov-rate", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p = sub.add_parser("build-vocab", parents=[common])
    p.add_argument("--corpus", required=True)
    p.add_argument("--cap", type=int)
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = list(args.set)
        if args.mode:
            overrides.append(f"mode={json.dumps(args.mode)}")
        if args.seed is not None and args.command != "gen-synthetic":
            overrides.append(f"seed={args.seed}")
        cfg = C.load_config(args.config, overrides)
    except (UsageError, C.ConfigError) as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](cfg, args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        log.debug("failure", exc_info=True)
        print(f"covgen {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
