import json
import shutil

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import count_json_nodes
from uisum.corpus import (
    Bounds,
    Corpus,
    Screen,
    assign_splits,
    load_corpus,
    load_stop_phrases,
    parse_view_hierarchy,
    read_split_lists,
    serialize_view_hierarchy,
    strip_stop_phrases,
)
from uisum.errors import DataError, ParseError, SchemaError, SplitError


def node(cls="View", bounds=(0, 0, 10, 10), children=None, **extra):
    d = {"class": cls, "bounds": list(bounds), **extra}
    if children is not None:
        d["children"] = children
    return d


def test_single_node():
    tree = parse_view_hierarchy(json.dumps(node("FrameLayout", (0, 0, 1440, 2560))))
    assert len(tree) == 1
    root = tree.root
    assert (root.pre_order, root.post_order, root.depth) == (0, 0, 0)
    assert root.text is None and root.clickable is False and root.visible_to_user is True


def test_canonical_orders():
    tree = parse_view_hierarchy(json.dumps(node("R", children=[node("A"), node("B")])))
    assert [e.class_name for e in tree] == ["R", "A", "B"]
    assert [e.pre_order for e in tree] == [0, 1, 2]
    assert {e.class_name: e.post_order for e in tree} == {"A": 0, "B": 1, "R": 2}
    assert tree.root.children == (1, 2)


def test_rico_wrapper_and_package():
    doc = {"activity_name": "com.x.app/.MainActivity", "activity": {"root": node(children=[node(text="Hi")])}}
    tree = parse_view_hierarchy(json.dumps(doc))
    assert tree.package == "com.x.app"
    assert tree[1].text == "Hi"


def test_malformed_json_reports_byte_offset():
    with pytest.raises(ParseError) as err:
        parse_view_hierarchy('{"class": "é", "bounds": [0,0,1,1],,}')
    # the offset counts the two UTF-8 bytes of é
    assert err.value.offset == 36
    assert "byte offset 36" in str(err.value)


def test_missing_bounds_names_node_path():
    doc = node(children=[node(), node(), {"class": "X"}])
    with pytest.raises(SchemaError) as err:
        parse_view_hierarchy(json.dumps(doc))
    assert "root.children[2]" in str(err.value)


def test_inverted_bounds_collapse():
    tree = parse_view_hierarchy(json.dumps(node(bounds=(10, 10, 5, 20))))
    b = tree.root.bounds
    assert b.left <= b.right and b.top <= b.bottom
    assert tree.root.degenerate


def test_fixture_node_counts_match_json_walk(fixture50):
    info, _ = fixture50
    for path in sorted((info.root / "hierarchies").glob("*.json"))[:15]:
        text = path.read_text()
        assert len(parse_view_hierarchy(text)) == count_json_nodes(text)


@st.composite
def trees(draw, depth=0):
    kids = [] if depth >= 3 else draw(st.lists(trees(depth + 1), max_size=3))
    l, t = draw(st.integers(0, 100)), draw(st.integers(0, 100))
    w, h = draw(st.integers(0, 50)), draw(st.integers(0, 50))
    d = {"class": draw(st.sampled_from(["A", "B", "C"])), "bounds": [l, t, l + w, t + h],
         "clickable": draw(st.booleans()), "visible-to-user": draw(st.booleans()), "children": kids}
    if draw(st.booleans()):
        d["text"] = draw(st.text(alphabet="abc xyz", min_size=1, max_size=6).filter(str.strip))
    return d


@settings(max_examples=100, deadline=None)
@given(trees())
def test_tree_invariants_and_roundtrip(doc):
    tree = parse_view_hierarchy(json.dumps(doc))
    n = len(tree)
    assert sorted(e.pre_order for e in tree) == list(range(n))
    assert sorted(e.post_order for e in tree) == list(range(n))
    assert tree.root.depth == 0
    for e in tree:
        assert e.bounds.left <= e.bounds.right and e.bounds.top <= e.bounds.bottom
        for c in e.children:
            assert tree[c].depth == e.depth + 1
            assert e.pre_order < tree[c].pre_order
            assert tree[c].post_order < e.post_order
    assert parse_view_hierarchy(serialize_view_hierarchy(tree)) == tree


def test_screen_rejects_blank_summaries():
    tree = parse_view_hierarchy(json.dumps(node()))
    with pytest.raises(DataError):
        Screen("s", "app", tree, ["  ", ""])
    assert Screen("s", "app", tree, [" a ", ""]).summaries == ["a"]


def test_load_fixture_counts(fixture50):
    info, corpus = fixture50
    assert len(corpus) == info.screens == 50
    assert corpus.num_summaries == info.summaries
    assert len(corpus.app_ids) == info.apps
    counts = corpus.split_counts()
    for split in ("train", "validation", "test"):
        assert counts[split].apps == info.split_apps[split]
        assert counts[split].screens == info.split_screens[split]
        assert counts[split].summaries == info.split_summaries[split]


def test_sfa_boxes_inside_screenshot(fixture50):
    _, corpus = fixture50
    for s in corpus.screens.values():
        w, h = s.screenshot_size
        assert len(s.sfa_boxes) <= 5
        for b in s.sfa_boxes:
            assert 0 <= b.left <= b.right <= w and 0 <= b.top <= b.bottom <= h


def test_empty_inputs(tmp_path):
    (tmp_path / "summaries.csv").write_text("")
    corpus = load_corpus(tmp_path, tmp_path / "summaries.csv")
    assert len(corpus) == 0 and corpus.num_summaries == 0


def test_missing_screenshot_is_skipped(tmp_path, fixture50):
    info, _ = fixture50
    for sub in ("hierarchies", "screenshots"):
        (tmp_path / sub).mkdir()
    ids = ["00000", "00001", "00002"]
    for sid in ids:
        shutil.copy(info.root / "hierarchies" / f"{sid}.json", tmp_path / "hierarchies")
    for sid in ids[:2]:
        shutil.copy(info.root / "screenshots" / f"{sid}.png", tmp_path / "screenshots")
    (tmp_path / "s.csv").write_text("screenId,summary\n" + "".join(f"{sid},page {sid}\n" for sid in ids))
    corpus = load_corpus(tmp_path, tmp_path / "s.csv")
    assert len(corpus) == 2
    assert [r.screen_id for r in corpus.skipped] == ["00002"]


def test_missing_column_is_data_error(tmp_path):
    (tmp_path / "s.csv").write_text("id,text\n1,a\n")
    with pytest.raises(DataError):
        load_corpus(tmp_path, tmp_path / "s.csv")


def test_split_disjointness_and_coverage(fixture50):
    info, corpus = fixture50
    lists = read_split_lists(info.root)
    for sid, s in corpus.screens.items():
        assert sum(s.app_id in corpus.splits[k] for k in corpus.splits) == 1
    bad = dict(lists, test=lists["test"] + [lists["train"][0]])
    with pytest.raises(SplitError, match=lists["train"][0]):
        assign_splits(corpus, bad)
    with pytest.raises(SplitError, match="not covered"):
        assign_splits(corpus, dict(lists, test=lists["test"][:-1]))


def test_single_app_all_train():
    tree = parse_view_hierarchy(json.dumps(node()))
    corpus = Corpus({"s1": Screen("s1", "app", tree, ["a"]), "s2": Screen("s2", "app", tree, ["b"])})
    split = assign_splits(corpus, {"train": ["app"]})
    counts = split.split_counts()
    assert counts["train"].screens == 2
    assert counts["validation"].screens == counts["test"].screens == 0


def test_corpus_is_read_only(fixture50):
    _, corpus = fixture50
    with pytest.raises(TypeError):
        corpus.screens["x"] = None


PHRASES = load_stop_phrases()


def test_default_stop_phrases():
    assert len(PHRASES) == 8 and "in the app" in PHRASES


def test_strip_examples():
    assert strip_stop_phrases("login page in the app", PHRASES) == "login page"
    assert strip_stop_phrases("login page", PHRASES) == "login page"
    assert strip_stop_phrases("Login  page IN THE APP now", PHRASES) == "Login page now"
    # whole phrases only
    assert strip_stop_phrases("sign in the apple store", PHRASES) == "sign in the apple store"


def test_strip_never_empties():
    text, flag = strip_stop_phrases("  in the app ", PHRASES, return_flag=True)
    assert text == "in the app" and flag


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(["in", "the", "app", "this", "of", "on", "a", "login", "page"]), max_size=10))
def test_strip_idempotent(words):
    once = strip_stop_phrases(" ".join(words), PHRASES)
    assert strip_stop_phrases(once, PHRASES) == once


def test_bounds_clip():
    assert Bounds(-5, 10, 500, 20).clip(100, 15) == Bounds(0, 10, 100, 15)
