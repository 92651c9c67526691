"""Corpus BLEU and CIDEr over tokenized candidate/reference sets."""

from __future__ import annotations

import math
from collections import Counter
from typing import Sequence

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
         max_n: int = 4) -> list[float]:
    """Corpus-level BLEU@1..max_n (percent), clipped counts, brevity penalty.

    Counts are clipped against the per-ngram maximum across each candidate's
    references; the brevity penalty uses the closest reference length.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    for refs in references:
        if not refs:
            raise ValueError("every candidate needs at least one reference")

    correct = [0] * max_n
    guess = [0] * max_n
    cand_len = 0
    ref_len = 0
    for cand, refs in zip(candidates, references):
        cand = list(cand)
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
        for n in range(1, max_n + 1):
            counts = _ngrams(cand, n)
            max_ref = Counter()
            for r in refs:
                for gram, c in _ngrams(list(r), n).items():
                    max_ref[gram] = max(max_ref[gram], c)
            correct[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            guess[n - 1] += max(0, len(cand) - n + 1)

    if cand_len == 0:
        return [0.0] * max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    scores = []
    for n in range(1, max_n + 1):
        log_sum = 0.0
        degenerate = False
        for k in range(n):
            if correct[k] == 0 or guess[k] == 0:
                degenerate = True
                break
            log_sum += math.log(correct[k] / guess[k])
        scores.append(0.0 if degenerate else 100.0 * bp * math.exp(log_sum / n))
    return scores


def cider(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
          max_n: int = 4) -> float:
    """TF-IDF weighted n-gram cosine similarity, averaged over n=1..4, x10.

    IDF uses corpus document frequency over reference sets (an n-gram counts
    once per video); per video the score averages the cosine against each
    reference.
    """
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates vs {len(references)} reference sets")
    num_videos = len(candidates)
    doc_freq = [Counter() for _ in range(max_n)]
    for refs in references:
        seen = [set() for _ in range(max_n)]
        for r in refs:
            for n in range(1, max_n + 1):
                seen[n - 1].update(_ngrams(list(r), n).keys())
        for n in range(max_n):
            for gram in seen[n]:
                doc_freq[n][gram] += 1

    def tfidf(tokens: Tokens, n: int) -> dict:
        vec = {}
        for gram, count in _ngrams(list(tokens), n).items():
            df = max(1.0, doc_freq[n - 1][gram])
            vec[gram] = count * (math.log(num_videos) - math.log(df))
        return vec

    def cosine(u: dict, v: dict) -> float:
        dot = sum(val * v[g] for g, val in u.items() if g in v)
        nu = math.sqrt(sum(val * val for val in u.values()))
        nv = math.sqrt(sum(val * val for val in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        return dot / (nu * nv)

    total = 0.0
    for cand, refs in zip(candidates, references):
        per_n = 0.0
        for n in range(1, max_n + 1):
            cand_vec = tfidf(cand, n)
            per_n += sum(cosine(cand_vec, tfidf(r, n)) for r in refs) / len(refs)
        total += per_n / max_n
    return 10.0 * total / num_videos
