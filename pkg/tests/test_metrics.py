import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bleu_oracle, cider_oracle, meteor_alignment_oracle, meteor_oracle, random_sentence, rouge_l_oracle
from uisum.errors import CoverageError
from uisum.metrics import (
    Cider,
    bleu,
    cider,
    evaluate_suite,
    format_table,
    lcs_length,
    meteor_alignment,
    meteor_lite,
    rouge_l,
    score_corpus,
    write_report,
)

VOCAB = ["a", "b", "c", "the", "cat", "cats", "run", "running", "page", "pages", "login", "menu"]

TOY_CORPUS = [
    ["login page of the app".split()] * 5,
    [s.split() for s in ["settings screen", "settings page with options", "page of settings", "settings menu",
                         "screen showing settings"]],
    [s.split() for s in ["search bar", "search results page", "page to search items", "search screen",
                         "results of search"]],
    [s.split() for s in ["profile page", "user profile", "profile screen with photo", "page of user profile",
                         "profile details"]],
    [s.split() for s in ["menu page", "navigation menu", "side menu", "menu options", "menu of the app"]],
]


def random_cases(seed, count=50):
    rng = np.random.default_rng(seed)
    cases = []
    for _ in range(count):
        cand = random_sentence(rng, VOCAB)
        refs = [random_sentence(rng, VOCAB) for _ in range(5)]
        cases.append((cand, refs))
    return cases


# BLEU

def test_bleu_identity():
    assert bleu(["a login page for the app"], [["a login page for the app"]]) == [1.0, 1.0, 1.0, 1.0]


def test_bleu_clipped_unigram_precision():
    # clipped count 1 over 3 candidate tokens; candidate longer than the reference, so no brevity penalty
    assert bleu([["the", "the", "the"]], [[["the", "cat"]]], max_n=1)[0] == pytest.approx(1 / 3, abs=1e-12)


def test_bleu_no_overlap():
    assert bleu(["x y z"], [["a b c"]])[0] == 0.0


def test_bleu_empty_reference_set_rejected():
    with pytest.raises(ValueError):
        bleu(["a"], [[]])


def test_bleu_smoothing_only_changes_higher_orders():
    plain = bleu(["a b c d"], [["a x c y"]])
    smooth = bleu(["a b c d"], [["a x c y"]], smooth=True)
    assert plain[0] == smooth[0]
    assert plain[1] == 0.0 and smooth[1] > 0.0


def test_bleu_matches_oracle_on_random_corpus():
    cases = random_cases(1)
    got = bleu([c for c, _ in cases], [r for _, r in cases])
    want = bleu_oracle([c for c, _ in cases], [r for _, r in cases])
    assert got == pytest.approx(want, abs=1e-6)


def test_sentence_bleu_matches_oracle_per_case():
    for cand, refs in random_cases(2):
        assert bleu([cand], [refs]) == pytest.approx(bleu_oracle([cand], [refs]), abs=1e-6)


# ROUGE-L

def test_rouge_identity():
    assert rouge_l("login page", ["login page"]) == pytest.approx(1.0)


def test_rouge_hand_example():
    assert rouge_l("a b c d", ["a c d"]) == pytest.approx(0.8798076923, abs=1e-9)


def test_rouge_disjoint_and_empty():
    assert rouge_l("a b", ["c d"]) == 0.0
    assert rouge_l("", ["c d"]) == 0.0


def test_rouge_matches_oracle():
    for cand, refs in random_cases(3):
        assert rouge_l(cand, refs) == pytest.approx(rouge_l_oracle(cand, refs), abs=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcd"), max_size=8), st.lists(st.sampled_from("abcd"), max_size=8))
def test_lcs_dp_equals_enumeration(a, b):
    from oracles import lcs_bruteforce

    assert lcs_length(a, b) == lcs_bruteforce(a, b)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from("abcd"), min_size=1, max_size=8), st.lists(st.sampled_from("abcd"), min_size=1, max_size=8))
def test_rouge_recall_monotone_when_appending_a_match(cand, ref):
    # appending the next unmatched reference token can only grow the LCS, hence recall
    nxt = ref[min(lcs_length(cand, ref), len(ref) - 1)]
    assert lcs_length(cand + [nxt], ref) >= lcs_length(cand, ref)


# CIDEr

def test_cider_no_shared_ngrams():
    assert Cider(TOY_CORPUS).score("zzz yyy", TOY_CORPUS[0]) == 0.0


def test_cider_single_screen_is_zero():
    with pytest.warns(RuntimeWarning):
        assert cider("login page", [["login", "page"]], [[["login", "page"]]]) == 0.0


def test_cider_toy_corpus_frozen_values():
    scorer = Cider(TOY_CORPUS)
    assert scorer.score("login page of the app".split(), TOY_CORPUS[0]) == pytest.approx(10.0, abs=1e-6)
    # frozen from the dense-vector oracle
    assert scorer.score("settings page".split(), TOY_CORPUS[1]) == pytest.approx(2.434188630375736, abs=1e-6)


def test_cider_matches_dense_oracle():
    cases = random_cases(4, count=50)
    refs = [r for _, r in cases]
    scorer = Cider(refs)
    for cand, r in cases:
        assert scorer.score(cand, r) == pytest.approx(cider_oracle(cand, r, refs), abs=1e-6)


# METEOR-lite

def test_meteor_identical_four_tokens():
    assert meteor_lite("a b c d", ["a b c d"]) == pytest.approx(1 - 0.5 * (1 / 4) ** 3)
    assert meteor_lite("a b c d", ["a b c d"]) == pytest.approx(0.9921875)


def test_meteor_swapped_pair():
    assert meteor_alignment(["b", "a"], ["a", "b"]) == (2, 2)
    assert meteor_lite("b a", ["a b"]) == pytest.approx(0.5)


def test_meteor_disjoint():
    assert meteor_lite("x y", ["a b"]) == 0.0


def test_meteor_stem_match():
    assert meteor_alignment(["cats", "running"], ["cat", "run"]) == (2, 1)


def test_meteor_matches_oracle():
    for cand, refs in random_cases(5):
        assert meteor_lite(cand, refs) == pytest.approx(meteor_oracle(cand, refs), abs=1e-6)


@settings(max_examples=150, deadline=None)
@given(st.lists(st.sampled_from(VOCAB), max_size=7), st.lists(st.sampled_from(VOCAB), max_size=7))
def test_meteor_alignment_equals_enumeration(cand, ref):
    assert meteor_alignment(cand, ref) == meteor_alignment_oracle(cand, ref)


# shared properties

@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_metrics_invariant_to_reference_order(seed):
    rng = np.random.default_rng(seed)
    cand = random_sentence(rng, VOCAB)
    refs = [random_sentence(rng, VOCAB) for _ in range(5)]
    shuffled = [refs[i] for i in rng.permutation(5)]
    corpus = [refs, [random_sentence(rng, VOCAB) for _ in range(5)]]
    assert bleu([cand], [refs]) == bleu([cand], [shuffled])
    assert rouge_l(cand, refs) == rouge_l(cand, shuffled)
    assert meteor_lite(cand, refs) == meteor_lite(cand, shuffled)
    assert Cider(corpus).score(cand, refs) == pytest.approx(Cider(corpus).score(cand, shuffled), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    cases = [(random_sentence(rng, VOCAB), [random_sentence(rng, VOCAB) for _ in range(5)]) for _ in range(3)]
    scorer = Cider([r for _, r in cases])
    for cand, refs in cases:
        assert all(0.0 <= b <= 1.0 for b in bleu([cand], [refs]))
        assert 0.0 <= rouge_l(cand, refs) <= 1.0
        assert 0.0 <= meteor_lite(cand, refs) <= 1.0
        assert 0.0 <= scorer.score(cand, refs) <= 10.0 + 1e-9


# suite

def test_score_corpus_identity_fixture():
    refs = {f"s{i}": ["login page of app number %d" % i] * 5 for i in range(4)}
    report = score_corpus({k: v[0] for k, v in refs.items()}, refs)
    for k in ("bleu1", "bleu2", "bleu3", "bleu4", "rouge_l"):
        assert report[k] == pytest.approx(100.0)
    assert report["cider"] > 0
    assert report["meteor"] == pytest.approx(100.0 * (1 - 0.5 * (1 / 6) ** 3))


def test_score_corpus_empty_predictions():
    refs = {f"s{i}": ["a b c", "b c d"] for i in range(3)}
    report = score_corpus({k: "" for k in refs}, refs)
    assert all(v == 0.0 for v in report.scores.values())


def test_score_corpus_missing_prediction():
    with pytest.raises(CoverageError) as err:
        score_corpus({"a": "x"}, {"a": ["x"], "b": ["y"]})
    assert err.value.missing == ["b"]


def test_score_corpus_parallel_equals_serial():
    cases = random_cases(6, count=8)
    refs = {f"s{i}": [" ".join(r) for r in rs] for i, (_, rs) in enumerate(cases)}
    cands = {f"s{i}": " ".join(c) for i, (c, _) in enumerate(cases)}
    assert score_corpus(cands, refs, jobs=2).scores == score_corpus(cands, refs).scores


def test_evaluate_suite_matches_oracles(fixture50, tmp_path):
    _, corpus = fixture50
    from uisum.corpus import load_stop_phrases, strip_stop_phrases
    from uisum.vocab import tokenize

    phrases = load_stop_phrases()
    test_view = corpus.view("test")
    assert len(test_view) == 10
    preds = {s.screen_id: s.summaries[1] for s in test_view}
    report = evaluate_suite(preds, corpus, "test", phrases)

    cands = [tokenize(preds[s.screen_id]) for s in test_view]
    refs = [[tokenize(strip_stop_phrases(t, phrases)) for t in s.summaries] for s in test_view]
    assert [report[f"bleu{n}"] for n in range(1, 5)] == pytest.approx([100 * b for b in bleu_oracle(cands, refs)], abs=1e-4)
    assert report["rouge_l"] == pytest.approx(100 * np.mean([rouge_l_oracle(c, r) for c, r in zip(cands, refs)]), abs=1e-4)
    assert report["meteor"] == pytest.approx(100 * np.mean([meteor_oracle(c, r) for c, r in zip(cands, refs)]), abs=1e-4)
    assert report["cider"] == pytest.approx(100 * np.mean([cider_oracle(c, r, refs) for c, r in zip(cands, refs)]), abs=1e-4)

    write_report(tmp_path / "m.csv", report)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "metric,score,range"
    header = format_table({"copy": report}).splitlines()[0].split()
    assert header == ["system", "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "CIDEr", "ROUGE-L", "METEOR-lite"]


def test_evaluate_suite_reads_prediction_csv(fixture50, tmp_path):
    from uisum.decode import write_predictions

    _, corpus = fixture50
    rows = [{"screenId": s.screen_id, "rank": 1, "score": 0.0, "summary": s.summaries[0]} for s in corpus.view("test")]
    write_predictions(tmp_path / "p.csv", rows[:-1])
    with pytest.raises(CoverageError):
        evaluate_suite(tmp_path / "p.csv", corpus, "test")
    write_predictions(tmp_path / "p.csv", rows)
    assert math.isfinite(evaluate_suite(tmp_path / "p.csv", corpus, "test")["bleu4"])
