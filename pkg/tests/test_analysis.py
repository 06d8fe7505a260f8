import itertools
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uisum.analysis import (
    agreement_counts,
    iou,
    length_distribution,
    sfa_stats,
    word_agreement,
    write_length_hist,
    write_word_agreement,
)
from uisum.corpus import Bounds, Screen, load_stop_phrases, parse_view_hierarchy

TREE = parse_view_hierarchy(json.dumps({"class": "FrameLayout", "bounds": [0, 0, 100, 200]}))


def screen(summaries, sid="s", boxes=(), size=(100, 200)):
    return Screen(sid, "app", TREE, list(summaries), screenshot_size=size, sfa_boxes=[Bounds(*b) for b in boxes])


def test_identical_summaries_full_agreement():
    table = word_agreement([screen(["login page"] * 5)])
    for w in ("login", "page"):
        assert table[w].precision == table[w].recall == 1.0
        assert (table[w].tp, table[w].fp, table[w].fn) == (5, 0, 0)


def test_word_in_one_summary_hand_trace():
    table = word_agreement([screen(["login page", "page", "page", "page", "page"])])
    login = table["login"]
    assert (login.tp, login.fp, login.fn) == (0, 1, 4)
    assert login.precision == login.recall == 0.0


def test_screens_without_five_summaries_excluded():
    table = word_agreement([screen(["a b"] * 5, "x"), screen(["a b"] * 4, "y")])
    assert table.screens_used == 1 and table.screens_excluded == 1
    assert table["a"].occurrences == 5


def brute_force_counts(summaries, per_token):
    """Literal loop over every (summary, word) check."""
    out = {}
    for i, s in enumerate(summaries):
        others = [o for j, o in enumerate(summaries) if j != i]
        checked = s if per_token else sorted(set(s))
        for w in checked:
            c = out.setdefault(w, [0, 0, 0])
            if any(w in o for o in others):
                c[0] += 1
            else:
                c[1] += 1
        missing = {w for o in others for w in o} - set(s)
        for w in missing:
            out.setdefault(w, [0, 0, 0])[2] += 1
    return out


summaries5 = st.lists(st.lists(st.sampled_from(list("abcdef")), min_size=1, max_size=5), min_size=5, max_size=5)


@settings(max_examples=200, deadline=None)
@given(summaries5, st.booleans())
def test_agreement_counts_match_brute_force(summaries, per_token):
    assert agreement_counts(summaries, per_token) == brute_force_counts(summaries, per_token)


@settings(max_examples=100, deadline=None)
@given(summaries5)
def test_conservation(summaries):
    counts = agreement_counts(summaries, per_token=True)
    occ = {w: sum(s.count(w) for s in summaries) for w in counts}
    assert all(tp + fp == occ[w] for w, (tp, fp, _) in counts.items())
    typed = agreement_counts(summaries)
    assert all(tp + fp == sum(w in s for s in summaries) for w, (tp, fp, _) in typed.items())


def test_report_threshold_and_coverage(fixture50):
    _, corpus = fixture50
    table = word_agreement(corpus, load_stop_phrases())
    assert all(s.occurrences >= 2 for s in table.words)
    assert [s.rank for s in table.words] == sorted(s.rank for s in table.words)
    assert 0 < table.coverage <= 1
    assert word_agreement(corpus, load_stop_phrases()).words == table.words


def test_iou_examples():
    assert iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1 / 7)
    assert iou((0, 0, 2, 2), (0, 0, 2, 2)) == 1.0
    assert iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0


boxes = st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 10), st.integers(1, 10)).map(
    lambda t: (t[0], t[1], t[0] + t[2], t[1] + t[3]))


@settings(max_examples=300, deadline=None)
@given(boxes, boxes)
def test_iou_properties(a, b):
    v = iou(a, b)
    assert v == iou(b, a)
    assert 0.0 <= v <= 1.0
    assert (v == 1.0) == (a == b)
    disjoint = a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]
    assert (v == 0.0) == disjoint


def test_sfa_stats_hand_case():
    s1 = screen(["x"], "a", boxes=[(0, 0, 50, 100), (0, 0, 50, 100), (0, 0, 100, 200)])
    s2 = screen(["x"], "b", boxes=[(0, 0, 100, 100)])
    stats = sfa_stats([s1, s2])
    assert stats.coverage == pytest.approx((0.25 + 0.25 + 1.0 + 0.5) / 4)
    # pairs in s1: 1, 0.25, 0.25; s2 has no pairs
    assert stats.iou == pytest.approx(1.5 / 3)
    assert (stats.boxes, stats.screens_with_boxes, stats.screens_with_pairs) == (4, 2, 1)


def test_sfa_stats_fixture_oracle(fixture50):
    _, corpus = fixture50
    stats = sfa_stats(corpus)
    covs, per_screen = [], []
    for s in corpus.screens.values():
        w, h = s.screenshot_size
        covs += [b.area / (w * h) for b in s.sfa_boxes]
        pairs = list(itertools.combinations(s.sfa_boxes, 2))
        if pairs:
            per_screen.append(sum(iou(a, b) for a, b in pairs) / len(pairs))
    assert stats.coverage == pytest.approx(sum(covs) / len(covs))
    assert stats.iou == pytest.approx(sum(per_screen) / len(per_screen))


def test_length_examples(tmp_path):
    dist = length_distribution([screen(["a b c d"])])
    assert dist.histogram == {4: 1} and dist.mean == 4
    empty = length_distribution([])
    assert empty.histogram == {} and empty.count == 0
    dist = length_distribution([screen(["login page in the app", "news feed."])], load_stop_phrases())
    assert dist.histogram == {2: 2}
    write_length_hist(tmp_path / "h.csv", dist)
    assert (tmp_path / "h.csv").read_text().splitlines() == ["length,count", "2,2", "mean,2.000000"]


def test_analyses_are_pure(fixture50, tmp_path):
    _, corpus = fixture50
    write_word_agreement(tmp_path / "a.csv", word_agreement(corpus))
    write_word_agreement(tmp_path / "b.csv", word_agreement(corpus))
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert sfa_stats(corpus) == sfa_stats(corpus)
    assert length_distribution(corpus) == length_distribution(corpus)
