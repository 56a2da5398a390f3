"""Beam search over the per-example extended vocabulary."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from covgen.autodiff import LOG_FLOOR, Tape
from covgen.model import ModelParams, decoder_step, encode
from covgen.text import START_ID, STOP_ID, UNK_ID, Example, Vocabulary, ext_ids_to_words


@dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 4
    max_steps: int = 120
    min_steps: int = 0
    length_norm: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if not 0 <= self.min_steps <= self.max_steps:
            raise ValueError("need 0 <= min_steps <= max_steps")


@dataclass
class Hypothesis:
    tokens: list[int]
    log_prob: float
    state: tuple[np.ndarray, np.ndarray]
    context: np.ndarray
    coverage: Optional[np.ndarray]
    attn: list = field(default_factory=list)
    p_gens: list = field(default_factory=list)
    step_log_probs: list = field(default_factory=list)

    @property
    def latest(self) -> int:
        return self.tokens[-1]

    @property
    def n_generated(self) -> int:
        return len(self.tokens) - 1

    def score(self, length_norm: bool = True) -> float:
        if length_norm and self.n_generated:
            return self.log_prob / self.n_generated
        return self.log_prob

    def extend(self, token, logp, state, context, coverage, attn, p_gen) -> "Hypothesis":
        return Hypothesis(
            tokens=self.tokens + [int(token)],
            log_prob=self.log_prob + float(logp),
            state=state,
            context=context,
            coverage=coverage,
            attn=self.attn + [attn],
            p_gens=self.p_gens + ([float(p_gen)] if p_gen is not None else []),
            step_log_probs=self.step_log_probs + [float(logp)],
        )


@dataclass
class DecodeResult:
    tokens: list[int]  # extended ids, START and STOP stripped
    words: list[str]
    hypothesis: Hypothesis
    finished: bool


def beam_search(params: ModelParams, example: Example, vocab: Vocabulary,
                config: DecodeConfig = DecodeConfig()) -> DecodeResult:
    """Decode one example; returns the best hypothesis mapped back to words.

    Each live hypothesis proposes its top ``2 * beam_size`` continuations;
    STOP moves a hypothesis to the finished pool once ``min_steps`` tokens
    precede it.  The final pick is by length-normalized log probability
    unless ``config.length_norm`` is off.
    """
    cfg = params.config
    V = cfg.vocab_size
    beam = config.beam_size
    tape = Tape(record=False)
    P = params.on(tape)
    ids = np.asarray(example.article_ids, dtype=np.int64)[None, :]
    mask = np.ones(ids.shape)
    enc = encode(P, cfg, ids, mask)
    L = ids.shape[1]
    max_oov = len(example.article_oovs) if cfg.use_pointer else 0
    ext = np.asarray(example.article_ext_ids, dtype=np.int64)[None, :]

    c0, h0 = (x.value[0] for x in enc.init_state)
    hyps = [Hypothesis([START_ID], 0.0, (c0, h0), np.zeros(cfg.attn_dim),
                       np.zeros(L) if cfg.use_coverage else None)]
    results: list[Hypothesis] = []
    step = 0
    while step < config.max_steps and len(results) < beam:
        k = len(hyps)
        # decoder inputs never carry extended ids
        prev = [t if t < V else UNK_ID for t in (h.latest for h in hyps)]
        state = (tape.const(np.stack([h.state[0] for h in hyps])), tape.const(np.stack([h.state[1] for h in hyps])))
        ctx = tape.const(np.stack([h.context for h in hyps]))
        cov = tape.const(np.stack([h.coverage for h in hyps])) if cfg.use_coverage else None
        out = decoder_step(P, cfg, prev, ctx, state, enc, np.repeat(ext, k, axis=0), max_oov, cov)
        logd = np.log(np.maximum(out.final_dist.value, LOG_FLOOR))
        new_c, new_h = (x.value for x in out.new_state)
        candidates = []
        for i, hyp in enumerate(hyps):
            top = np.argsort(-logd[i], kind="stable")[: 2 * beam]
            for w in top:
                candidates.append(hyp.extend(
                    w, logd[i, w], (new_c[i], new_h[i]), out.context.value[i],
                    out.new_coverage.value[i] if cov is not None else None,
                    out.attn.value[i], out.p_gen.value[i] if out.p_gen is not None else None))
        candidates.sort(key=lambda h: -h.log_prob)
        hyps = []
        for hyp in candidates:
            if hyp.latest == STOP_ID:
                if step >= config.min_steps:
                    results.append(hyp)
            else:
                hyps.append(hyp)
            if len(hyps) == beam or len(results) == beam:
                break
        step += 1
    finished = bool(results)
    pool = results or hyps
    best = max(pool, key=lambda h: h.score(config.length_norm))
    tokens = [t for t in best.tokens[1:] if t != STOP_ID]
    words = ext_ids_to_words(tokens, vocab, example.article_oovs)
    return DecodeResult(tokens, words, best, finished)


def inspect_decode(params: ModelParams, example: Example, vocab: Vocabulary,
                   config: DecodeConfig = DecodeConfig()) -> dict:
    """Per-step record of the winning hypothesis.

    ``p_gen`` is present in pointer modes and ``coverage`` (the sum of all
    recorded attention vectors) whenever the model can point; both are
    omitted for the baseline.
    """
    result = beam_search(params, example, vocab, config)
    hyp = result.hypothesis
    chosen = ext_ids_to_words(hyp.tokens[1:], vocab, example.article_oovs)
    record = {
        "article": list(example.article_tokens),
        "tokens": chosen,
        "attn": [a.tolist() for a in hyp.attn],
    }
    if params.config.use_pointer:
        record["p_gen"] = list(hyp.p_gens)
        if hyp.coverage is not None:
            cov = hyp.coverage
        else:
            cov = np.sum(hyp.attn, axis=0) if hyp.attn else np.zeros(len(example.article_ids))
        record["coverage"] = np.asarray(cov).tolist()
    return record
