import math

import numpy as np
import pytest

from fedchat.evalmetrics import (
    MetricsReport,
    bleu,
    evaluate_model,
    format_report_table,
    metric_tokens,
    rouge_l,
    rouge_n,
    score_pairs,
)

from oracles import bleu_reference, lcs_recursive, rouge_n_counts


def random_tokens(rng, max_len=12, vocab=8):
    n = int(rng.integers(0, max_len + 1))
    return [f"w{int(i)}" for i in rng.integers(0, vocab, size=n)]


class TestRougeN:
    def test_identical(self):
        score = rouge_n("a b c".split(), "a b c".split(), 1)
        assert (score.precision, score.recall, score.f1) == (1.0, 1.0, 1.0)

    def test_disjoint(self):
        score = rouge_n("a b".split(), "x y".split(), 1)
        assert (score.precision, score.recall, score.f1) == (0.0, 0.0, 0.0)

    def test_clipped_hand_count(self):
        score = rouge_n("the cat".split(), "the cat sat on the mat".split(), 1)
        assert score.precision == 1.0
        assert score.recall == pytest.approx(2 / 6, abs=0)
        assert score.f1 == pytest.approx(0.5, abs=0)

    def test_empty_sides_zero(self):
        assert rouge_n([], "a".split(), 1).f1 == 0.0
        assert rouge_n("a".split(), [], 1).f1 == 0.0
        assert rouge_n([], [], 2).f1 == 0.0

    def test_n_too_large_for_inputs(self):
        assert rouge_n("a".split(), "a".split(), 2).f1 == 0.0

    @pytest.mark.parametrize("n", [1, 2])
    def test_matches_bruteforce_oracle_500_pairs(self, n):
        rng = np.random.default_rng(77 + n)
        for _ in range(500):
            cand = random_tokens(rng)
            ref = random_tokens(rng)
            got = rouge_n(cand, ref, n)
            p, r, f1 = rouge_n_counts(cand, ref, n)
            assert (got.precision, got.recall, got.f1) == (p, r, f1)

    def test_f1_definition(self):
        score = rouge_n("a b x".split(), "a b y z".split(), 1)
        expected = 2 * score.precision * score.recall / (score.precision + score.recall)
        assert score.f1 == expected

    def test_trigram_order_available(self):
        # Generic n covers n=3 as well.
        score = rouge_n("a b c d".split(), "a b c x".split(), 3)
        assert score.precision == pytest.approx(1 / 2, abs=0)
        assert score.recall == pytest.approx(1 / 2, abs=0)


class TestRougeL:
    def test_identical(self):
        assert rouge_l("x y z".split(), "x y z".split()).f1 == 1.0

    def test_hand_lcs(self):
        score = rouge_l("a c e".split(), "a b c d e".split())
        assert score.precision == 1.0
        assert score.recall == pytest.approx(0.6, abs=0)

    def test_empty_candidate(self):
        assert rouge_l([], "a b".split()).f1 == 0.0

    def test_matches_memoized_recursion_200_pairs(self):
        rng = np.random.default_rng(99)
        for _ in range(200):
            cand = random_tokens(rng, max_len=20)
            ref = random_tokens(rng, max_len=20)
            got = rouge_l(cand, ref)
            lcs = lcs_recursive(cand, ref)
            if cand and ref:
                assert got.precision == lcs / len(cand)
                assert got.recall == lcs / len(ref)
            else:
                assert got.f1 == 0.0


BLEU_HAND_CASES = [
    # (candidate, references, score from the independent scripted oracle)
    ("a b c d e", ["a b c d e"], 1.0),
    ("the the the the", ["the cat"], 0.31947155212313627),
    ("a b c", ["a b c d"], 0.71653131057378927),
    ("x y z", ["a b c"], 0.45180100180492239),
    ("the quick fox", ["the quick brown fox", "a quick fox"], 0.8408964152537145),
    ("the cat sat on a mat", ["the cat sat on the mat"], 0.537284965911771),
    ("hello", ["hello"], 1.0),
    ("hello", ["world"], 0.8408964152537145),
    ("go go go stop", ["go stop go"], 0.45180100180492233),
    ("a b c d e f g h", ["a b c d"], 0.345720784641941),
]


class TestBleu:
    @pytest.mark.parametrize("cand,refs,expected", BLEU_HAND_CASES)
    def test_hand_derived_cases(self, cand, refs, expected):
        got = bleu(cand.split(), [r.split() for r in refs])
        assert got.score == pytest.approx(expected, abs=1e-9)

    def test_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(31)
        for _ in range(200):
            cand = random_tokens(rng)
            refs = [random_tokens(rng) for _ in range(int(rng.integers(1, 3)))]
            got = bleu(cand, refs).score
            expected = bleu_reference(cand, refs)
            assert got == pytest.approx(expected, abs=1e-12)

    def test_identical_long_candidate_scores_one(self):
        toks = "one two three four five".split()
        assert bleu(toks, [toks]).score == pytest.approx(1.0, abs=0)

    def test_clipped_unigram_precision(self):
        got = bleu("the the the the".split(), ["the cat".split()])
        assert got.precisions[0] == pytest.approx(0.25, abs=0)

    def test_short_candidate_smoothed_in_unit_interval(self):
        got = bleu("a b c".split(), ["a b c d".split()])
        assert 0.0 < got.score < 1.0

    def test_empty_sides_zero(self):
        assert bleu([], ["a".split()]).score == 0.0
        assert bleu("a".split(), [[]]).score == 0.0

    def test_score_identity_with_components(self):
        got = bleu("a b c x".split(), ["a b c d".split()])
        recomputed = got.brevity_penalty * math.exp(
            sum(math.log(p) for p in got.precisions) / 4)
        assert got.score == pytest.approx(recomputed, abs=1e-15)

    def test_monotonicity_appending_nonmatching_token(self):
        # A token creating no new matching n-gram never increases any
        # per-n clipped match count.
        rng = np.random.default_rng(17)
        for _ in range(50):
            cand = random_tokens(rng, max_len=8)
            ref = random_tokens(rng, max_len=8)
            if not ref:
                continue
            for n in range(1, 5):
                raw_before = _raw_matches(cand, ref, n)
                raw_after = _raw_matches(cand + ["zzz-nomatch"], ref, n)
                assert raw_after <= raw_before


def _raw_matches(cand, ref, n):
    from collections import Counter
    cg = Counter(tuple(cand[i:i + n]) for i in range(len(cand) - n + 1))
    rg = Counter(tuple(ref[i:i + n]) for i in range(len(ref) - n + 1))
    return sum(min(c, rg[g]) for g, c in cg.items())


class TestScorePairs:
    def test_oracle_candidates_score_one(self):
        pairs = [("The ranked feed batches updates.", "The ranked feed batches updates."),
                 ("Nightly jobs compress snapshots deeply.", "Nightly jobs compress snapshots deeply.")]
        report = score_pairs(pairs)
        assert report.rouge1.f1 == 1.0
        assert report.rouge2.f1 == 1.0
        assert report.rougeL.f1 == 1.0
        assert report.bleu4.score == pytest.approx(1.0, abs=0)

    def test_single_pair_equals_per_pair_scores(self):
        cand, ref = "the cat", "the cat sat on the mat"
        report = score_pairs([(cand, ref)])
        direct = rouge_n(metric_tokens(cand), metric_tokens(ref), 1)
        assert report.rouge1 == direct

    def test_tokenization_lowercases(self):
        report = score_pairs([("The CAT", "the cat")])
        assert report.rouge1.f1 == 1.0

    def test_scores_within_unit_interval(self, rng):
        words = ["alpha", "beta", "gamma", "delta"]
        pairs = []
        for _ in range(20):
            cand = " ".join(rng.choice(words, size=rng.integers(0, 6)))
            ref = " ".join(rng.choice(words, size=rng.integers(1, 6)))
            pairs.append((cand, ref))
        report = score_pairs(pairs)
        for metric in (report.rouge1, report.rouge2, report.rougeL):
            assert 0.0 <= metric.f1 <= 1.0
        assert 0.0 <= report.bleu4.score <= 1.0


class TestEvaluateModel:
    def test_deterministic(self, params, config):
        pairs = [("the ranked feed", "batches updates nightly"),
                 ("a digest alert", "pings the cohort")]
        a = evaluate_model(params, config, pairs, max_new=12)
        b = evaluate_model(params, config, pairs, max_new=12)
        assert a == b

    def test_requires_pairs(self, params, config):
        with pytest.raises(ValueError):
            evaluate_model(params, config, [])


def test_format_report_table():
    report = score_pairs([("the cat", "the cat")])
    table = format_report_table({"Federated": report, "Client 1": report})
    lines = table.splitlines()
    assert lines[0].split() == ["Metric", "Federated", "Client", "1"]
    assert lines[1].startswith("Rouge-1")
    assert "100.000" in lines[1]
    assert len(lines) == 5
