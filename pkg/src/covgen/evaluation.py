"""ROUGE, lead-3, repetition, novelty and p_gen statistics."""

from __future__ import annotations

import csv
import json
import os
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from covgen import kernels
from covgen.text import split_sentences

NGRAM_SIZES = (1, 2, 3, 4)


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, p: float, r: float) -> "RougeScore":
        return cls(p, r, 2 * p * r / (p + r) if p + r > 0 else 0.0)


ZERO = RougeScore(0.0, 0.0, 0.0)


def ngrams(tokens: Sequence[str], n: int) -> list[tuple]:
    return [tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]


def rouge_n(candidate: Sequence[str], reference: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    cand, ref = Counter(ngrams(candidate, n)), Counter(ngrams(reference, n))
    if not cand or not ref:
        return ZERO
    overlap = sum((cand & ref).values())
    return RougeScore.from_pr(overlap / sum(cand.values()), overlap / sum(ref.values()))


def _encode_pair(a, b):
    ids: dict = {}
    ea = np.array([ids.setdefault(t, len(ids)) for t in a], dtype=np.int64)
    eb = np.array([ids.setdefault(t, len(ids)) for t in b], dtype=np.int64)
    return ea, eb


def lcs_positions(a: Sequence[str], b: Sequence[str]) -> set[int]:
    """Indices into ``a`` of one longest common subsequence with ``b``."""
    if not a or not b:
        return set()
    ea, eb = _encode_pair(a, b)
    table = kernels.lcs_table(ea, eb)
    i, j = len(a), len(b)
    hits = set()
    while i > 0 and j > 0:
        if ea[i - 1] == eb[j - 1]:
            hits.add(i - 1)
            i, j = i - 1, j - 1
        elif table[i - 1, j] >= table[i, j - 1]:
            i -= 1
        else:
            j -= 1
    return hits


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    ea, eb = _encode_pair(a, b)
    return int(kernels.lcs_table(ea, eb)[-1, -1])


def rouge_l(candidate: Sequence[Sequence[str]], reference: Sequence[Sequence[str]],
            union: bool = True) -> RougeScore:
    """Summary-level ROUGE-L over sentence lists.

    With ``union`` each reference sentence scores the union of its LCS hits
    against every candidate sentence; otherwise plain LCS of the flattened
    token streams is used.
    """
    cand_len = sum(len(s) for s in candidate)
    ref_len = sum(len(s) for s in reference)
    if cand_len == 0 or ref_len == 0:
        return ZERO
    if union:
        hits = 0
        for r in reference:
            covered: set[int] = set()
            for c in candidate:
                covered |= lcs_positions(r, c)
            hits += len(covered)
    else:
        hits = lcs_length([t for s in candidate for t in s], [t for s in reference for t in s])
    return RougeScore.from_pr(hits / cand_len, hits / ref_len)


def lead3(article_sentences: Sequence[Sequence[str]]) -> list[str]:
    return [t for s in article_sentences[:3] for t in s]


@dataclass(frozen=True)
class RepetitionReport:
    ngram: dict[int, float]
    sentence: float


@dataclass(frozen=True)
class NoveltyReport:
    ngram: dict[int, float]
    sentence_copy: float


def repetition_stats(sentences: Sequence[Sequence[str]], sizes=NGRAM_SIZES) -> RepetitionReport:
    """Share of n-gram occurrences (within sentences) already seen earlier in the summary."""
    fractions = {}
    for n in sizes:
        seen, total, dup = set(), 0, 0
        for s in sentences:
            for g in ngrams(s, n):
                total += 1
                if g in seen:
                    dup += 1
                seen.add(g)
        fractions[n] = dup / total if total else 0.0
    seen_s, dup_s = set(), 0
    for s in sentences:
        key = tuple(s)
        dup_s += key in seen_s
        seen_s.add(key)
    return RepetitionReport(fractions, dup_s / len(sentences) if sentences else 0.0)


def _contains_run(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return False
    needle = list(needle)
    return any(list(haystack[i : i + n]) == needle for i in range(len(haystack) - n + 1))


def novelty_stats(sentences: Sequence[Sequence[str]], article: Sequence[str], sizes=NGRAM_SIZES) -> NoveltyReport:
    """Share of summary n-grams absent from the article, and of sentences copied verbatim."""
    fractions = {}
    for n in sizes:
        source = set(ngrams(article, n))
        grams = [g for s in sentences for g in ngrams(s, n)]
        fractions[n] = sum(g not in source for g in grams) / len(grams) if grams else 0.0
    nonempty = [s for s in sentences if s]
    copied = sum(_contains_run(article, s) for s in nonempty)
    return NoveltyReport(fractions, copied / len(nonempty) if nonempty else 0.0)


def pgen_stats(dumps: Iterable[dict]) -> dict:
    """Aggregate p_gen over every decoded step of every dump.

    A step is sentence-initial when the token chosen just before it was a
    period.
    """
    values, initial, other = [], [], []
    for d in dumps:
        if "p_gen" not in d:
            raise ValueError("no p_gen recorded")
        tokens = d["tokens"]
        for i, p in enumerate(d["p_gen"]):
            values.append(p)
            (initial if i > 0 and tokens[i - 1] == "." else other).append(p)
    if not values:
        raise ValueError("no p_gen recorded")

    def mean(xs):
        return float(np.mean(xs)) if xs else None

    return {
        "mean": mean(values),
        "min": float(min(values)),
        "max": float(max(values)),
        "count": len(values),
        "sentence_initial_mean": mean(initial),
        "sentence_initial_count": len(initial),
        "other_mean": mean(other),
        "other_count": len(other),
    }


# -- corpus-level ------------------------------------------------------------


@dataclass
class ExampleEval:
    rouge1: float
    rouge2: float
    rougeL: float
    repetition: RepetitionReport
    novelty: NoveltyReport
    ref_repetition: RepetitionReport
    ref_novelty: NoveltyReport


def evaluate_example(decoded: Sequence[str], reference_sentences: Sequence[str], article: Sequence[str]) -> ExampleEval:
    cand_sents = split_sentences(list(decoded))
    ref_sents = [s.split() for s in reference_sentences]
    ref_tokens = [t for s in ref_sents for t in s]
    return ExampleEval(
        rouge1=rouge_n(decoded, ref_tokens, 1).f1,
        rouge2=rouge_n(decoded, ref_tokens, 2).f1,
        rougeL=rouge_l(cand_sents, ref_sents).f1,
        repetition=repetition_stats(cand_sents),
        novelty=novelty_stats(cand_sents, article),
        ref_repetition=repetition_stats(ref_sents),
        ref_novelty=novelty_stats(ref_sents, article),
    )


def _threads() -> int:
    value = os.environ.get("COVGEN_THREADS")
    return max(1, int(value)) if value else (os.cpu_count() or 1)


def evaluate_corpus(items: Sequence[dict], config: dict | None = None) -> dict:
    """Score decoded items (``article``, ``reference``, ``decoded`` fields).

    ``reference`` is a list of sentence strings; ``article`` and ``decoded``
    are token lists or whitespace-separated strings.  Means are plain
    arithmetic means of per-example values, reduced in input order.
    """
    def one(item):
        art = item["article"].split() if isinstance(item["article"], str) else list(item["article"])
        dec = item["decoded"].split() if isinstance(item["decoded"], str) else list(item["decoded"])
        return evaluate_example(dec, item["reference"], art)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(one, items))

    def col(f):
        return [f(r) for r in results]

    def mean(xs):
        return float(np.mean(xs)) if xs else 0.0

    per_example = {
        "rouge1": col(lambda r: r.rouge1),
        "rouge2": col(lambda r: r.rouge2),
        "rougeL": col(lambda r: r.rougeL),
    }
    for n in NGRAM_SIZES:
        per_example[f"dup{n}"] = col(lambda r, n=n: r.repetition.ngram[n])
        per_example[f"novel{n}"] = col(lambda r, n=n: r.novelty.ngram[n])
        per_example[f"ref_dup{n}"] = col(lambda r, n=n: r.ref_repetition.ngram[n])
        per_example[f"ref_novel{n}"] = col(lambda r, n=n: r.ref_novelty.ngram[n])
    per_example["dup_sentence"] = col(lambda r: r.repetition.sentence)
    per_example["ref_dup_sentence"] = col(lambda r: r.ref_repetition.sentence)
    per_example["sentence_copy"] = col(lambda r: r.novelty.sentence_copy)
    per_example["ref_sentence_copy"] = col(lambda r: r.ref_novelty.sentence_copy)
    return {
        "config": config or {},
        "count": len(results),
        "means": {k: mean(v) for k, v in per_example.items()},
        "per_example": per_example,
    }


def figure_rows(report: dict) -> list[dict]:
    """Plot-ready rows: % duplicate and % novel n-grams, model vs reference."""
    m = report["means"]
    rows = []
    for n in NGRAM_SIZES:
        rows.append({"unit": f"{n}-gram", "model_dup_pct": 100 * m[f"dup{n}"], "reference_dup_pct": 100 * m[f"ref_dup{n}"],
                     "model_novel_pct": 100 * m[f"novel{n}"], "reference_novel_pct": 100 * m[f"ref_novel{n}"]})
    rows.append({"unit": "sentence", "model_dup_pct": 100 * m["dup_sentence"],
                 "reference_dup_pct": 100 * m["ref_dup_sentence"],
                 "model_novel_pct": 100 * (1 - m["sentence_copy"]),
                 "reference_novel_pct": 100 * (1 - m["ref_sentence_copy"])})
    return rows


def write_report(report: dict, json_path, csv_path=None) -> None:
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    if csv_path is not None:
        rows = figure_rows(report)
        with open(csv_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
