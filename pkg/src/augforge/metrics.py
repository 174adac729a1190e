"""Tokenized WER and corpus BLEU, and the per-voice normalization report."""
from __future__ import annotations

import math
import unicodedata
from collections import Counter
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoredPair:
    hypothesis: tuple
    reference: tuple

    def __post_init__(self):
        object.__setattr__(self, "hypothesis", tuple(self.hypothesis))
        object.__setattr__(self, "reference", tuple(self.reference))


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def tokenize(text: str, lowercase: bool = False) -> list[str]:
    """Whitespace split after isolating every punctuation character as its own token."""
    if lowercase:
        text = text.lower()
    spaced = "".join(f" {ch} " if _is_punct(ch) else ch for ch in text)
    return spaced.split()


def edit_distance(hyp, ref) -> int:
    """Levenshtein distance with unit substitution, insertion and deletion costs."""
    hyp, ref = list(hyp), list(ref)
    prev = list(range(len(ref) + 1))
    for i, h in enumerate(hyp, start=1):
        cur = [i] + [0] * len(ref)
        for j, r in enumerate(ref, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (h != r))
        prev = cur
    return prev[-1]


def wer(pairs) -> float:
    """Corpus WER: summed edits over summed reference lengths."""
    pairs = list(pairs)
    edits = 0
    ref_len = 0
    for p in pairs:
        if not p.reference:
            raise ValueError("WER needs a non-empty reference for every pair")
        edits += edit_distance(p.hypothesis, p.reference)
        ref_len += len(p.reference)
    if ref_len == 0:
        raise ValueError("WER needs at least one pair")
    return edits / ref_len


def ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i: i + n]) for i in range(len(tokens) - n + 1))


@dataclass(frozen=True)
class BleuStats:
    matches: tuple
    totals: tuple
    hyp_len: int
    ref_len: int


def bleu_stats(pairs, max_n: int = 4) -> BleuStats:
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len = ref_len = 0
    for p in pairs:
        hyp_len += len(p.hypothesis)
        ref_len += len(p.reference)
        for n in range(1, max_n + 1):
            h = ngram_counts(p.hypothesis, n)
            r = ngram_counts(p.reference, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(0, len(p.hypothesis) - n + 1)
    return BleuStats(tuple(matches), tuple(totals), hyp_len, ref_len)


def bleu(pairs, max_n: int = 4, smoothing: str = "none") -> float:
    """Corpus BLEU in [0, 100], uniform weights, brevity penalty exp(min(0, 1 - r/h)).

    smoothing: "none" (any zero precision gives 0) or "add1" (add one to the
    counts of every order above unigrams).
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("BLEU needs at least one pair")
    if smoothing not in ("none", "add1"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    st = bleu_stats(pairs, max_n)
    if st.hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        m, t = st.matches[n], st.totals[n]
        if smoothing == "add1" and n > 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_p += math.log(m / t) / max_n
    bp = math.exp(min(0.0, 1.0 - st.ref_len / st.hyp_len))
    return 100.0 * bp * math.exp(log_p)


@dataclass(frozen=True)
class NormalizationReport:
    per_voice_scores: tuple
    mean: float
    std: float
    unmodified_score: float
    within_one_std: bool

    def to_lines(self) -> list[str]:
        lines = [f"voice_{i}={s:.6f}" for i, s in enumerate(self.per_voice_scores)]
        lines += [f"mean={self.mean:.6f}", f"std={self.std:.6f}",
                  f"unmodified={self.unmodified_score:.6f}",
                  f"within_one_std={str(self.within_one_std).lower()}"]
        return lines


def normalization_report(per_voice, unmodified: float, expected_count: int | None = 8
                         ) -> NormalizationReport:
    """Mean and population std over per-voice scores; flags |unmodified - mean| <= std."""
    scores = tuple(float(s) for s in per_voice)
    if len(scores) < 2:
        raise ValueError("need at least two per-voice scores for a standard deviation")
    if expected_count is not None and len(scores) != expected_count:
        raise ValueError(f"expected {expected_count} per-voice scores, got {len(scores)}")
    arr = np.array(scores)
    mean = float(arr.mean())
    std = float(arr.std())
    return NormalizationReport(scores, mean, std, float(unmodified),
                               bool(abs(unmodified - mean) <= std))
