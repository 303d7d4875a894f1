"""Corpus diversity and degeneration metrics for multi-branch outputs.

All metrics operate on token sequences (any hashable token type).  They
are desk-scale stand-ins for the usual n-gram and embedding metrics:
sentence embeddings are replaced by term-frequency bag-of-words vectors
and the unigram-overlap score uses exact matches only.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

# Smoothing for zero clipped n-gram counts: p_n = SMOOTHING_EPS / total.
SMOOTHING_EPS = 1e-3

# Unigram-overlap score constants (recall-weighted harmonic mean plus a
# fragmentation penalty gamma * (chunks / matches) ** penalty_exp).
OVERLAP_ALPHA = 0.9
OVERLAP_GAMMA = 0.5
OVERLAP_PENALTY_EXP = 3.0


@dataclass(frozen=True)
class DiversityReport:
    """Summary metrics for one multi-branch corpus."""

    self_bleu: float
    rouge_l_mean: float
    meteor_simple_mean: float
    distinct_1: float
    distinct_2: float
    pairwise_cosine: float
    degeneration: float

    def to_dict(self) -> dict:
        return {
            "self_bleu": self.self_bleu,
            "rouge_l_mean": self.rouge_l_mean,
            "meteor_simple_mean": self.meteor_simple_mean,
            "distinct_1": self.distinct_1,
            "distinct_2": self.distinct_2,
            "pairwise_cosine": self.pairwise_cosine,
            "degeneration": self.degeneration,
        }


def _lcs_length(a, b) -> int:
    # two-row dynamic program
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(a, b) -> float:
    """LCS-based F1: P = LCS/|b|, R = LCS/|a|, F = 2PR/(P+R)."""
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sequences must be nonempty")
    lcs = _lcs_length(a, b)
    if lcs == 0:
        return 0.0
    p = lcs / len(b)
    r = lcs / len(a)
    return 2.0 * p * r / (p + r)


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _bleu_against(hyp, refs, max_n: int) -> float:
    """Smoothed BLEU of one hypothesis against a reference set.

    Clipped n-gram precision per order; orders with no hypothesis n-grams
    are skipped; zero clipped counts are smoothed to SMOOTHING_EPS/total.
    Brevity penalty uses the reference length closest to the hypothesis
    (ties toward the shorter reference).
    """
    log_precisions = []
    for n in range(1, max_n + 1):
        hyp_counts = _ngram_counts(hyp, n)
        total = sum(hyp_counts.values())
        if total == 0:
            continue
        max_ref = Counter()
        for ref in refs:
            for gram, count in _ngram_counts(ref, n).items():
                if count > max_ref[gram]:
                    max_ref[gram] = count
        clipped = sum(min(count, max_ref[gram]) for gram, count in hyp_counts.items())
        p_n = clipped / total if clipped > 0 else SMOOTHING_EPS / total
        log_precisions.append(math.log(p_n))
    if not log_precisions:
        return 0.0
    c = len(hyp)
    r = min((len(ref) for ref in refs), key=lambda length: (abs(length - c), length))
    bp = 1.0 if c >= r else math.exp(1.0 - r / c)
    return bp * math.exp(sum(log_precisions) / len(log_precisions))


def self_bleu(corpus, max_n: int = 4) -> float:
    """Mean BLEU of each text against all others; lower is more diverse."""
    if len(corpus) < 2:
        raise ValueError("self-BLEU needs at least two texts")
    scores = []
    for i, hyp in enumerate(corpus):
        refs = [corpus[j] for j in range(len(corpus)) if j != i]
        scores.append(_bleu_against(hyp, refs, max_n))
    return float(np.mean(scores))


def _match_chunks(a, b) -> tuple[int, int]:
    """Greedy leftmost unigram alignment; returns (matches, chunks)."""
    available: dict = {}
    for pos, tok in enumerate(b):
        available.setdefault(tok, []).append(pos)
    mapped = []
    for tok in a:
        slots = available.get(tok)
        if slots:
            mapped.append(slots.pop(0))
    if not mapped:
        return 0, 0
    chunks = 1
    for prev, cur in zip(mapped, mapped[1:]):
        if cur != prev + 1:
            chunks += 1
    return len(mapped), chunks


def meteor_simple(a, b) -> float:
    """Exact-match unigram overlap with a fragmentation penalty.

    m = matched unigrams (multiplicity-aware), P = m/|a|, R = m/|b|,
    F = PR / (alpha P + (1-alpha) R), score = F * (1 - gamma *
    (chunks/m)^penalty_exp).  No stemming or synonym matching.
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sequences must be nonempty")
    m, chunks = _match_chunks(a, b)
    if m == 0:
        return 0.0
    p = m / len(a)
    r = m / len(b)
    f_mean = p * r / (OVERLAP_ALPHA * p + (1.0 - OVERLAP_ALPHA) * r)
    penalty = OVERLAP_GAMMA * (chunks / m) ** OVERLAP_PENALTY_EXP
    return f_mean * (1.0 - penalty)


def distinct_n(corpus, n: int) -> float:
    """Unique n-grams over total n-grams, pooled across the corpus."""
    total = 0
    unique = set()
    for text in corpus:
        grams = [tuple(text[i:i + n]) for i in range(len(text) - n + 1)]
        total += len(grams)
        unique.update(grams)
    if total == 0:
        raise ValueError(f"no {n}-grams in corpus")
    return len(unique) / total


def _tf_vector(text, vocab_index) -> np.ndarray:
    vec = np.zeros(len(vocab_index))
    for tok in text:
        vec[vocab_index[tok]] += 1.0
    return vec


def pairwise_cosine_bow(corpus) -> float:
    """Mean cosine over unordered pairs of term-frequency vectors."""
    if len(corpus) < 2:
        raise ValueError("need at least two texts")
    if any(len(text) == 0 for text in corpus):
        raise ValueError("texts must be nonempty")
    vocab_index = {}
    for text in corpus:
        for tok in text:
            vocab_index.setdefault(tok, len(vocab_index))
    vectors = [_tf_vector(text, vocab_index) for text in corpus]
    sims = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            vi, vj = vectors[i], vectors[j]
            sims.append(vi @ vj / (np.linalg.norm(vi) * np.linalg.norm(vj)))
    return float(np.mean(sims))


def mean_pairwise_cosine(vectors) -> float:
    """Mean cosine over unordered pairs of real vectors (latent diversity)."""
    if len(vectors) < 2:
        raise ValueError("need at least two vectors")
    arrs = [np.asarray(v, dtype=float) for v in vectors]
    sims = []
    for i in range(len(arrs)):
        for j in range(i + 1, len(arrs)):
            ni, nj = np.linalg.norm(arrs[i]), np.linalg.norm(arrs[j])
            if ni == 0.0 or nj == 0.0:
                raise ValueError("cosine undefined for zero-norm vector")
            sims.append(arrs[i] @ arrs[j] / (ni * nj))
    return float(np.mean(sims))


def repetition_degen(text, n: int = 2) -> float:
    """Repetitiveness of a single text: 1 - distinct_n; higher is worse."""
    if len(text) < n:
        raise ValueError(f"text shorter than {n}")
    return 1.0 - distinct_n([text], n)


def corpus_degeneration(corpus, n: int = 2) -> float:
    """Mean repetition over texts long enough to score; 0 if none are."""
    scores = [repetition_degen(text, n) for text in corpus if len(text) >= n]
    return float(np.mean(scores)) if scores else 0.0


def report_csv_rows(metrics: dict, config_id: str) -> list[tuple]:
    """(config, metric, value) rows for the flat CSV export."""
    return [(config_id, name, value) for name, value in sorted(metrics.items())]


def diversity_report(corpus, max_n: int = 4, degen_n: int = 2) -> DiversityReport:
    """Full metric summary for one corpus of token sequences."""
    if len(corpus) < 2:
        raise ValueError("report needs at least two texts")
    rouge_scores = []
    meteor_scores = []
    for i in range(len(corpus)):
        for j in range(len(corpus)):
            if i == j:
                continue
            meteor_scores.append(meteor_simple(corpus[i], corpus[j]))
            if i < j:
                rouge_scores.append(rouge_l(corpus[i], corpus[j]))
    return DiversityReport(
        self_bleu=self_bleu(corpus, max_n),
        rouge_l_mean=float(np.mean(rouge_scores)),
        meteor_simple_mean=float(np.mean(meteor_scores)),
        distinct_1=distinct_n(corpus, 1),
        distinct_2=distinct_n(corpus, 2),
        pairwise_cosine=pairwise_cosine_bow(corpus),
        degeneration=corpus_degeneration(corpus, degen_n),
    )
