import itertools
import math
from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augforge.metrics import (ScoredPair, bleu, edit_distance, normalization_report, tokenize, wer)


def brute_edit(a, b):
    """Plain recursive Levenshtein, memoized on suffix positions."""
    a, b = tuple(a), tuple(b)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == len(a):
            return len(b) - j
        if j == len(b):
            return len(a) - i
        return min(d(i + 1, j) + 1, d(i, j + 1) + 1, d(i + 1, j + 1) + (a[i] != b[j]))

    return d(0, 0)


def brute_bleu(pairs, max_n=4):
    """Independent corpus BLEU: counts every n-gram occurrence by explicit enumeration."""
    match = [0] * max_n
    total = [0] * max_n
    h_len = sum(len(h) for h, _ in pairs)
    r_len = sum(len(r) for _, r in pairs)
    for h, r in pairs:
        for n in range(1, max_n + 1):
            h_grams = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            r_grams = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            total[n - 1] += len(h_grams)
            for g in set(h_grams):
                match[n - 1] += min(h_grams.count(g), r_grams.count(g))
    if h_len == 0 or any(m == 0 for m in match):
        return 0.0
    prec = 1.0
    for m, t in zip(match, total):
        prec *= m / t
    bp = 1.0 if h_len > r_len else math.exp(1 - r_len / h_len)
    return 100 * bp * prec ** (1 / max_n)


def test_tokenize_isolates_punctuation():
    assert tokenize("Hello, world!") == ["Hello", ",", "world", "!"]
    assert tokenize("l'eau « claire »") == ["l", "'", "eau", "«", "claire", "»"]
    assert tokenize("ABC def", lowercase=True) == ["abc", "def"]


def test_wer_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    pairs = []
    for _ in range(1000):
        h = list(rng.integers(0, 5, rng.integers(0, 8)))
        r = list(rng.integers(0, 5, rng.integers(1, 8)))
        assert edit_distance(h, r) == brute_edit(h, r)
        pairs.append(ScoredPair(h, r))
    expected = sum(brute_edit(p.hypothesis, p.reference) for p in pairs) / sum(len(p.reference) for p in pairs)
    assert wer(pairs) == expected


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 3), max_size=6), st.lists(st.integers(0, 3), max_size=6))
def test_edit_distance_metric_properties(a, b):
    d = edit_distance(a, b)
    assert d == edit_distance(b, a)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
    assert (d == 0) == (a == b)


def test_identity_scores():
    pairs = [ScoredPair(tokenize(s), tokenize(s)) for s in ("the cat sat on the mat .", "a b c d e")]
    assert f"{bleu(pairs):.2f}" == "100.00"
    assert f"{100 * wer(pairs):.2f}" == "0.00"


def _all_sequences(max_len, vocab=("a", "b")):
    for n in range(max_len + 1):
        yield from itertools.product(vocab, repeat=n)


def test_bleu_exhaustive_single_pair_corpora():
    seqs = list(_all_sequences(5))
    for h in seqs:
        for r in seqs[::3]:
            assert abs(bleu([ScoredPair(h, r)]) - brute_bleu([(h, r)])) <= 1e-9


def test_bleu_two_pair_corpora():
    rng = np.random.default_rng(1)
    seqs = list(_all_sequences(5, ("a", "b", "c")))
    for _ in range(2000):
        pairs = [(seqs[rng.integers(len(seqs))], seqs[rng.integers(len(seqs))]) for _ in range(2)]
        got = bleu([ScoredPair(h, r) for h, r in pairs])
        assert abs(got - brute_bleu(pairs)) <= 1e-9


def test_bleu_hand_example():
    # 1-gram 5/6, 2-gram 3/5, 3-gram 2/4, 4-gram 1/3, equal lengths
    h = "the cat sat on a mat".split()
    r = "the cat sat on the mat".split()
    assert bleu([ScoredPair(h, r)]) == pytest.approx(100 * (1 / 12) ** 0.25, abs=1e-12)
    # no 4-gram survives the swap, so unsmoothed BLEU collapses
    h2 = "the cat on sat the mat".split()
    assert bleu([ScoredPair(h2, r)]) == 0.0
    assert bleu([ScoredPair(h2, r)], smoothing="add1") > 0
    assert bleu([ScoredPair(h2, r)], max_n=2) == pytest.approx(100 * math.sqrt(6 / 6 * 2 / 5))


def test_brevity_penalty():
    h = "a b c".split()
    r = "a b c d e f".split()
    assert bleu([ScoredPair(h, r)], max_n=1) == pytest.approx(100 * math.exp(1 - 2))


def test_normalization_report_one_to_eight():
    rep = normalization_report(range(1, 9), 4.5)
    assert rep.mean == 4.5
    assert abs(rep.std - math.sqrt(5.25)) <= 1e-9
    assert abs(rep.std - 2.2913) < 1e-4
    assert rep.within_one_std
    assert "std=2.291288" in rep.to_lines()


def test_normalization_report_outside_band_and_count():
    assert not normalization_report(range(1, 9), 8.0).within_one_std
    with pytest.raises(ValueError):
        normalization_report([1, 2, 3], 2.0)
    assert normalization_report([1, 2, 3], 2.0, expected_count=None).mean == 2.0
