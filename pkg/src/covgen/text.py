"""Corpus IO, vocabulary, extended-vocabulary encoding and batching."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

PAD, UNK, START, STOP = "[PAD]", "[UNK]", "[START]", "[STOP]"
RESERVED = (PAD, UNK, START, STOP)
PAD_ID, UNK_ID, START_ID, STOP_ID = range(4)
DEFAULT_VOCAB_CAP = 50_000


class Vocabulary:
    """Fixed word/id maps; ids 0..3 are PAD, UNK, START, STOP."""

    def __init__(self, words: Sequence[str], counts: Sequence[int] | None = None):
        self.id_to_word = list(RESERVED) + list(words)
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        if len(self.word_to_id) != len(self.id_to_word):
            raise ValueError("duplicate or reserved word in vocabulary")
        self.counts = list(counts) if counts is not None else None

    def __len__(self):
        return len(self.id_to_word)

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def __contains__(self, word):
        return word in self.word_to_id

    def id(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def word(self, i: int) -> str:
        return self.id_to_word[i]

    def save(self, path) -> None:
        counts = self.counts or [0] * (self.size - 4)
        with open(path, "w", encoding="utf-8") as fh:
            for w, c in zip(self.id_to_word[4:], counts):
                fh.write(f"{w} {c}\n")

    @classmethod
    def load(cls, path, cap: int = DEFAULT_VOCAB_CAP) -> "Vocabulary":
        words, counts = [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                parts = line.split()
                if len(parts) != 2:
                    raise ValueError(f"bad vocab line: {line!r}")
                if parts[0] in RESERVED:
                    continue
                words.append(parts[0])
                counts.append(int(parts[1]))
                if len(words) >= cap - len(RESERVED):
                    break
        return cls(words, counts)


def build_vocab(corpus: Iterable[Sequence[str]], cap: int = DEFAULT_VOCAB_CAP) -> Vocabulary:
    """Keep the ``cap - 4`` most frequent words; ties go to the earlier-seen word."""
    if cap < 5:
        raise ValueError("vocabulary cap must be at least 5")
    counter: Counter = Counter()
    seen_any = False
    for tokens in corpus:
        seen_any = True
        counter.update(t for t in tokens if t not in RESERVED)
    if not seen_any:
        raise ValueError("empty corpus")
    # Counter preserves first-insertion order and sorted() is stable
    ranked = sorted(counter.items(), key=lambda kv: -kv[1])[: cap - len(RESERVED)]
    return Vocabulary([w for w, _ in ranked], [c for _, c in ranked])


@dataclass(frozen=True)
class Example:
    article_tokens: tuple[str, ...]
    abstract_sentences: tuple[str, ...]
    article_ids: tuple[int, ...]
    article_ext_ids: tuple[int, ...]
    article_oovs: tuple[str, ...]
    dec_input_ids: tuple[int, ...]
    target_ids: tuple[int, ...]

    @property
    def abstract_tokens(self) -> list[str]:
        return " ".join(self.abstract_sentences).split()

    @property
    def article_sentences(self) -> list[list[str]]:
        return split_sentences(self.article_tokens)


def split_sentences(tokens: Sequence[str], boundary: str = ".") -> list[list[str]]:
    """Split a token stream after every ``boundary`` token (kept in the sentence)."""
    sents, cur = [], []
    for t in tokens:
        cur.append(t)
        if t == boundary:
            sents.append(cur)
            cur = []
    if cur:
        sents.append(cur)
    return sents


def article_to_ext_ids(tokens: Sequence[str], vocab: Vocabulary) -> tuple[list[int], list[int], list[str]]:
    ids, ext, oovs = [], [], []
    oov_index: dict[str, int] = {}
    for t in tokens:
        i = vocab.id(t)
        ids.append(i)
        if i == UNK_ID and t not in vocab:
            if t not in oov_index:
                oov_index[t] = len(oovs)
                oovs.append(t)
            ext.append(vocab.size + oov_index[t])
        else:
            ext.append(i)
    return ids, ext, oovs


def abstract_to_ext_ids(tokens: Sequence[str], vocab: Vocabulary, oovs: Sequence[str]) -> list[int]:
    ext = []
    for t in tokens:
        i = vocab.id(t)
        if i == UNK_ID and t in oovs:
            i = vocab.size + oovs.index(t)
        ext.append(i)
    return ext


def encode_example(article_tokens: Sequence[str], abstract_tokens: Sequence[str], vocab: Vocabulary,
                   max_enc: int = 400, max_dec: int = 100,
                   abstract_sentences: Sequence[str] | None = None) -> Example:
    """Encode one pair in both fixed and per-example extended id spaces.

    ``abstract_sentences`` keeps sentence boundaries for evaluation; when
    omitted the whole abstract counts as one sentence.
    """
    article = tuple(article_tokens)[:max_enc]
    if not article:
        raise ValueError("empty source")
    abstract = list(abstract_tokens)
    if abstract_sentences is None:
        abstract_sentences = (" ".join(abstract),) if abstract else ()
    sentences = tuple(abstract_sentences)

    ids, ext, oovs = article_to_ext_ids(article, vocab)
    abs_ids = [vocab.id(t) for t in abstract]
    abs_ext = abstract_to_ext_ids(abstract, vocab, oovs)
    dec_in = [START_ID] + abs_ids
    target = abs_ext + [STOP_ID]
    if len(dec_in) > max_dec:
        dec_in, target = dec_in[:max_dec], target[:max_dec]
    return Example(article, sentences, tuple(ids), tuple(ext), tuple(oovs), tuple(dec_in), tuple(target))


def ext_ids_to_words(ids: Iterable[int], vocab: Vocabulary, oovs: Sequence[str]) -> list[str]:
    words = []
    for i in ids:
        if i < vocab.size:
            words.append(vocab.word(i))
        else:
            k = i - vocab.size
            if k >= len(oovs):
                raise ValueError(f"extended id {i} has no article OOV")
            words.append(oovs[k])
    return words


@dataclass
class Batch:
    enc_ids: np.ndarray
    enc_ext_ids: np.ndarray
    enc_mask: np.ndarray
    dec_inputs: np.ndarray
    targets: np.ndarray
    dec_mask: np.ndarray
    max_oov: int
    oov_counts: list[int]
    examples: list[Example] = field(repr=False)

    def __len__(self):
        return len(self.examples)


def _pad(rows, width):
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for r, row in enumerate(rows):
        out[r, : len(row)] = row
    return out


def collate(examples: Sequence[Example]) -> Batch:
    L = max(len(e.article_ids) for e in examples)
    T = max(len(e.dec_input_ids) for e in examples)
    enc_mask = np.zeros((len(examples), L))
    dec_mask = np.zeros((len(examples), T))
    for r, e in enumerate(examples):
        enc_mask[r, : len(e.article_ids)] = 1.0
        dec_mask[r, : len(e.dec_input_ids)] = 1.0
    oov_counts = [len(e.article_oovs) for e in examples]
    return Batch(
        enc_ids=_pad([e.article_ids for e in examples], L),
        enc_ext_ids=_pad([e.article_ext_ids for e in examples], L),
        enc_mask=enc_mask,
        dec_inputs=_pad([e.dec_input_ids for e in examples], T),
        targets=_pad([e.target_ids for e in examples], T),
        dec_mask=dec_mask,
        max_oov=max(oov_counts),
        oov_counts=oov_counts,
        examples=list(examples),
    )


def make_batches(examples: Sequence[Example], batch_size: int = 16,
                 shuffle_seed: int | None = None) -> Iterator[Batch]:
    """Yield padded batches; order is a deterministic function of the seed."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(examples))
    for start in range(0, len(order), batch_size):
        yield collate([examples[i] for i in order[start : start + batch_size]])


# -- corpus files -----------------------------------------------------------


def read_corpus(path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "article" not in rec or "abstract_sentences" not in rec:
                raise ValueError(f"{path}:{lineno}: missing article/abstract_sentences")
            records.append(rec)
    return records


def write_corpus(path, records: Iterable[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def corpus_tokens(records: Iterable[dict]) -> Iterator[list[str]]:
    for rec in records:
        yield rec["article"].split()
        for sent in rec["abstract_sentences"]:
            yield sent.split()


def encode_records(records: Iterable[dict], vocab: Vocabulary, max_enc: int = 400,
                   max_dec: int = 100) -> list[Example]:
    return [
        encode_example(rec["article"].split(), " ".join(rec["abstract_sentences"]).split(), vocab,
                       max_enc, max_dec, abstract_sentences=rec["abstract_sentences"])
        for rec in records
    ]
