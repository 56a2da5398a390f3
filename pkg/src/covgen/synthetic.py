"""Synthetic corpora that stand in for a real news corpus.

copy-task
    The abstract is the article's lead sentence, with OOV words injected
    into content positions so that pointing is the only way to reproduce it.
template-summary
    "X beat Y S on D ." pairs buried in filler sentences.
repetition-trap
    Articles hold several near-identical salient sentences; the reference
    states each of them once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("copy-task", "template-summary", "repetition-trap")
DAYS = ("monday", "tuesday", "wednesday", "thursday", "friday", "saturday", "sunday")


@dataclass(frozen=True)
class SyntheticSpec:
    kind: str = "copy-task"
    count: int = 200
    seed: int = 0
    vocab_size: int = 30
    oov_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; choose from {KINDS}")
        if self.count < 1 or self.vocab_size < 8:
            raise ValueError("count must be >= 1 and vocab_size >= 8")
        if not 0.0 <= self.oov_rate <= 1.0:
            raise ValueError("oov_rate must lie in [0, 1]")


def lexicon(n: int) -> list[str]:
    return [f"w{i}" for i in range(n)]


class _Oovs:
    """Fresh out-of-lexicon words, one per (example, slot) request."""

    def __init__(self, example: int):
        self.example = example
        self.n = 0

    def __call__(self) -> str:
        self.n += 1
        return f"oov{self.example}x{self.n}"


def _inject(tokens, rng, rate, fresh, mapping):
    out = []
    for t in tokens:
        if t != "." and (t in mapping or rng.random() < rate):
            if t not in mapping:
                mapping[t] = fresh()
            out.append(mapping[t])
        else:
            out.append(t)
    return out


def _sentence(rng, words, lo, hi):
    k = int(rng.integers(lo, hi + 1))
    return [str(w) for w in rng.choice(words, size=k, replace=False)] + ["."]


def _copy_task(spec: SyntheticSpec, rng, i: int) -> dict:
    words = lexicon(spec.vocab_size)
    lead = _sentence(rng, words, 3, 5)
    rest = [_sentence(rng, words, 3, 5) for _ in range(int(rng.integers(1, 3)))]
    mapping: dict = {}
    fresh = _Oovs(i)
    lead = _inject(lead, rng, spec.oov_rate, fresh, mapping)
    rest = [_inject(s, rng, spec.oov_rate, fresh, mapping) for s in rest]
    article = lead + [t for s in rest for t in s]
    return {"article": " ".join(article), "abstract_sentences": [" ".join(lead)]}


def _template(spec: SyntheticSpec, rng, i: int) -> dict:
    words = lexicon(spec.vocab_size)
    teams = words[: max(4, spec.vocab_size // 3)]
    fillers = words[len(teams):]
    x, y = (str(t) for t in rng.choice(teams, size=2, replace=False))
    score = f"{int(rng.integers(1, 6))}-{int(rng.integers(0, 3))}"
    day = str(rng.choice(DAYS))
    mapping: dict = {}
    fresh = _Oovs(i)
    x, y = _inject([x, y], rng, spec.oov_rate, fresh, mapping)
    fact = [x, "beat", y, score, "on", day, "."]
    pre = [_sentence(rng, fillers, 3, 5) for _ in range(int(rng.integers(0, 2)))]
    post = [_sentence(rng, fillers, 3, 5) for _ in range(int(rng.integers(1, 3)))]
    article = [t for s in pre for t in s] + fact + [t for s in post for t in s]
    return {"article": " ".join(article), "abstract_sentences": [" ".join(fact)]}


def _repetition_trap(spec: SyntheticSpec, rng, i: int) -> dict:
    """Two to four salient facts sharing one two-word opening, plus fillers.

    Facts read "P Q x y ." with the same (P, Q) throughout an article, so an
    attention model without memory of where it has been is drawn back into
    a sentence it already copied.  The reference lists every fact once, in
    article order; its 3-grams are all distinct.
    """
    words = lexicon(spec.vocab_size)
    n_facts = int(rng.integers(2, 5))
    pool = [str(w) for w in rng.permutation(words)]
    prefix, pool = pool[:2], pool[2:]
    facts = [prefix + pool[2 * k : 2 * k + 2] for k in range(n_facts)]
    fillers = pool[2 * n_facts :]
    mapping: dict = {}
    fresh = _Oovs(i)
    facts = [_inject(f, rng, spec.oov_rate, fresh, mapping) + ["."] for f in facts]
    article = []
    for f in facts:
        article += f
        if rng.random() < 0.5:
            article += _sentence(rng, fillers, 2, 3)
    return {"article": " ".join(article), "abstract_sentences": [" ".join(f) for f in facts]}


_GENERATORS = {"copy-task": _copy_task, "template-summary": _template, "repetition-trap": _repetition_trap}


def gen_synthetic(spec: SyntheticSpec) -> list[dict]:
    rng = np.random.default_rng(spec.seed)
    make = _GENERATORS[spec.kind]
    return [make(spec, rng, i) for i in range(spec.count)]


def content_tokens(sentence: str) -> list[str]:
    return [t for t in sentence.split() if t != "."]
