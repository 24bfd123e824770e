import math

import pytest

from phrasecap.metrics import (
    bleu,
    caption_stats,
    corpus_rouge_l,
    evaluate,
    least_seen_words,
    rouge_l,
)
from phrasecap.nncore import make_rng


class TestBleu:
    def test_identity_scores_one_for_all_orders(self):
        cand = "a brown dog runs in the park".split()
        for n in range(1, 5):
            assert bleu([cand], [[cand]], n) == pytest.approx(1.0)

    def test_clipped_unigram_precision(self):
        cand = ["the", "the", "the"]
        ref = ["the", "cat"]
        assert bleu([cand], [[ref]], 1) == pytest.approx(1.0 / 3.0)

    def test_brevity_penalty_half_length(self):
        cand = ["a", "b"]
        ref = ["a", "b", "c", "d"]
        without = bleu([cand], [[ref]], 2, use_brevity_penalty=False)
        with_bp = bleu([cand], [[ref]], 2, use_brevity_penalty=True)
        assert with_bp == pytest.approx(without * math.exp(1.0 - 2.0))

    def test_brevity_penalty_never_increases(self):
        rng = make_rng(23)
        vocab = list("abcdefg")
        for _ in range(50):
            cand = [str(rng.choice(vocab)) for _ in range(int(rng.integers(1, 8)))]
            refs = [[str(rng.choice(vocab)) for _ in range(int(rng.integers(1, 8)))]]
            a = bleu([cand], [refs], 2, use_brevity_penalty=True)
            b = bleu([cand], [refs], 2, use_brevity_penalty=False)
            assert a <= b + 1e-12

    def test_corpus_aggregation_permutation_invariant(self):
        rng = make_rng(29)
        vocab = list("abcde")
        cands = [[str(rng.choice(vocab)) for _ in range(5)] for _ in range(8)]
        refs = [[[str(rng.choice(vocab)) for _ in range(5)]] for _ in range(8)]
        base = bleu(cands, refs, 3)
        order = rng.permutation(8)
        shuffled = bleu([cands[i] for i in order], [refs[i] for i in order], 3)
        assert shuffled == pytest.approx(base, abs=1e-12)

    def test_empty_candidate_contributes_zero(self):
        assert bleu([[]], [[["a", "b"]]], 1) == 0.0

    def test_no_match_is_zero(self):
        assert bleu([["x", "y"]], [[["a", "b"]]], 2) == 0.0

    def test_multiple_references_clip_to_max(self):
        cand = ["the", "the"]
        refs = [["the"], ["the", "the"]]
        assert bleu([cand], [refs], 1) == pytest.approx(1.0)

    def test_reference_count_contract(self):
        with pytest.raises(ValueError):
            bleu([["a"]], [])
        with pytest.raises(ValueError):
            bleu([["a"]], [[]])


class TestRougeL:
    def test_identical_is_one(self):
        tokens = "a small boat on the shore".split()
        assert rouge_l(tokens, [tokens]) == pytest.approx(1.0)

    def test_disjoint_is_zero(self):
        assert rouge_l(["a", "b"], [["x", "y"]]) == 0.0

    def test_hand_lcs_case(self):
        # LCS("a b c d", "a c d") = 3; P = 3/4, R = 1, F = 2PR/(P+R) = 6/7.
        got = rouge_l(["a", "b", "c", "d"], [["a", "c", "d"]])
        assert got == pytest.approx(6.0 / 7.0, abs=1e-12)

    def test_best_reference_wins(self):
        cand = ["a", "b", "c"]
        refs = [["x", "y"], ["a", "b", "c"]]
        assert rouge_l(cand, refs) == pytest.approx(1.0)

    def test_corpus_mean(self):
        cands = [["a", "b"], ["x"]]
        refs = [[["a", "b"]], [["y"]]]
        assert corpus_rouge_l(cands, refs) == pytest.approx(0.5)


class TestCaptionStats:
    def test_all_identical_unique_fraction(self):
        gen = [["a", "dog"]] * 4
        stats = caption_stats(gen, [["x"]])
        assert stats["pct_unique"] == pytest.approx(100.0 / 4)

    def test_none_seen_in_training(self):
        stats = caption_stats([["a", "dog"]], [["a", "cat"]])
        assert stats["pct_seen_in_training"] == 0.0

    def test_hand_tally(self):
        gen = [["a", "dog", "runs"], ["a", "cat"], ["a", "dog", "runs"]]
        train = [["a", "dog", "runs"], ["the", "bird"]]
        stats = caption_stats(gen, train)
        assert stats["pct_unique"] == pytest.approx(100.0 * 2 / 3)
        assert stats["pct_seen_in_training"] == pytest.approx(100.0 * 2 / 3)
        assert stats["avg_length"] == pytest.approx(8 / 3)
        assert stats["unique_word_count"] == 4  # a dog runs cat
        assert stats["within_vocab_word_count"] == 3  # a dog runs

    def test_empty_generation_rejected(self):
        with pytest.raises(ValueError):
            caption_stats([], [["a"]])


class TestLeastSeenWords:
    def test_k_zero(self):
        assert least_seen_words([["a"]], {"a": 3}, 0) == []

    def test_lexicographic_tie_break(self):
        gen = [["zebra", "apple", "mango"]]
        counts = {"zebra": 2, "apple": 2, "mango": 2}
        got = least_seen_words(gen, counts, 3)
        assert got == [("apple", 2), ("mango", 2), ("zebra", 2)]

    def test_fixture_ranking(self):
        gen = [["dog", "cat"], ["bird", "dog"]]
        counts = {"dog": 50, "cat": 7, "bird": 12, "unused": 1}
        got = least_seen_words(gen, counts, 2)
        assert got == [("cat", 7), ("bird", 12)]


class TestEvaluate:
    def test_full_report_on_identical_sets(self):
        caps = [["a", "dog", "runs", "fast"], ["the", "cat", "sits", "here"]]
        report = evaluate(caps, [[c] for c in caps], caps)
        assert report.bleu_4 == pytest.approx(1.0)
        assert report.rouge_l == pytest.approx(1.0)
        assert report.pct_seen_in_training == pytest.approx(100.0)
        assert report.pct_unique == pytest.approx(100.0)
        text = report.to_table()
        assert "BLEU-4" in text and "ROUGE-L" in text
        assert "bleu_4" in report.to_json()

    def test_report_fields_ranges(self):
        rng = make_rng(31)
        vocab = list("abcdef")
        caps = [[str(rng.choice(vocab)) for _ in range(5)] for _ in range(6)]
        refs = [[[str(rng.choice(vocab)) for _ in range(5)]] for _ in range(6)]
        report = evaluate(caps, refs, caps[:3])
        for v in (report.bleu_1, report.bleu_4, report.rouge_l):
            assert 0.0 <= v <= 1.0
        for v in (report.pct_unique, report.pct_seen_in_training):
            assert 0.0 <= v <= 100.0
