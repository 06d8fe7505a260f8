import json
import math
from collections import deque

import numpy as np
import pytest

from uisum.corpus import Bounds, Screen, parse_view_hierarchy
from uisum.errors import FeaturizationError
from uisum.features import (
    CLASS_NONE,
    CLASS_OTHER,
    FeatureCache,
    FeatureConfig,
    bucketize_bounds,
    build_class_vocab,
    cache_key,
    crop_element_image,
    featurize_screen,
    flatten_bfs,
)
from uisum.vocab import EmbeddingTable, load_word_vectors

W, H = 1440, 2560


def tree_from(doc):
    return parse_view_hierarchy(json.dumps(doc))


def n(cls, children=(), bounds=(0, 0, 100, 100), **kw):
    return {"class": cls, "bounds": list(bounds), "children": list(children), **kw}


def random_tree_doc(rng, size):
    nodes = [n("N0")]
    for i in range(1, size):
        parent = nodes[int(rng.integers(0, len(nodes)))]
        child = n(f"N{i}")
        parent["children"].append(child)
        nodes.append(child)
    return nodes[0]


def bfs_oracle(doc):
    out, queue = [], deque([doc])
    while queue:
        node = queue.popleft()
        out.append(node["class"])
        queue.extend(node["children"])
    return out


def test_bfs_examples():
    tree = tree_from(n("root", [n("A", [n("C")]), n("B")]))
    assert [e.class_name for e in flatten_bfs(tree)] == ["root", "A", "B", "C"]
    assert [e.class_name for e in flatten_bfs(tree_from(n("x")))] == ["x"]


def test_bfs_matches_queue_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        doc = random_tree_doc(rng, 50)
        assert [e.class_name for e in flatten_bfs(tree_from(doc))] == bfs_oracle(doc)


def test_bfs_visibility_flag():
    tree = tree_from(n("root", [n("hidden", [n("kid")], **{"visible-to-user": False}), n("B")]))
    assert [e.class_name for e in flatten_bfs(tree)] == ["root", "B", "kid"]
    assert len(flatten_bfs(tree, include_invisible=True)) == 4


def test_bucketize_examples():
    assert bucketize_bounds(Bounds(0, 0, W, H), (W, H), 32) == (0, 0, 31, 31)
    assert bucketize_bounds(Bounds(W // 2, H // 2, W // 2, H // 2), (W, H), 32) == (16, 16, 16, 16)
    with pytest.raises(FeaturizationError):
        bucketize_bounds(Bounds(0, 0, 1, 1), (0, H), 32)


def test_bucketize_matches_scalar_quantizer():
    rng = np.random.default_rng(1)

    def quantize(v, dim, k=32):
        # linear scan over bucket edges
        for b in range(k):
            if v < dim * (b + 1) / k:
                return b
        return k - 1

    for _ in range(100):
        l, r = sorted(rng.integers(0, W + 1, size=2))
        t, b = sorted(rng.integers(0, H + 1, size=2))
        got = bucketize_bounds(Bounds(int(l), int(t), int(r), int(b)), (W, H), 32)
        assert got == (quantize(l, W), quantize(t, H), quantize(r, W), quantize(b, H))
        assert all(0 <= v < 32 for v in got)


def test_crop_constant_images():
    white = np.full((80, 60, 3), 255, np.uint8)
    crop, flag = crop_element_image(white, Bounds(5, 5, 30, 70))
    assert crop.shape == (64, 64, 1) and not flag
    assert np.all(crop == 1.0)
    crop, _ = crop_element_image(np.zeros_like(white), Bounds(5, 5, 30, 70))
    assert np.all(crop == 0.0)


def test_crop_checkerboard_mean():
    img = np.zeros((10, 10, 3), np.uint8)
    img[4, 4] = img[5, 5] = 255
    crop, _ = crop_element_image(img, Bounds(4, 4, 6, 6))
    assert crop.mean() == pytest.approx(0.5, abs=0.01)


def test_crop_degenerate_and_outside():
    img = np.full((20, 20, 3), 128, np.uint8)
    crop, flag = crop_element_image(img, Bounds(5, 5, 5, 9))
    assert flag and not crop.any()
    crop, flag = crop_element_image(img, Bounds(30, 30, 40, 40))
    assert flag
    crop, flag = crop_element_image(img, Bounds(10, 10, 40, 40))  # clipped, still valid
    assert not flag and 0 <= crop.min() <= crop.max() <= 1


def test_crop_scale_maps_device_frame():
    img = np.zeros((64, 36, 3), np.uint8)
    img[32:, :] = 255
    # lower half in a 360x640 device frame, screenshot downsampled 10x
    crop, _ = crop_element_image(img, Bounds(0, 320, 360, 640), scale=(0.1, 0.1))
    assert np.all(crop == 1.0)


def _screen(children, description=None, size=(W, H)):
    tree = tree_from(n("root", children, bounds=(0, 0, W, H)))
    shot = np.full((64, 36, 3), 200, np.uint8)
    return Screen("s", "app", tree, ["x"], screenshot_array=shot, app_description=description)


TABLE = EmbeddingTable.from_dict({"ok": [1.0, 0.0, 0.0], "go": [0.0, 2.0, 0.0], "app": [0.0, 0.0, 3.0]})


def test_featurize_row_count_and_app_row():
    screen = _screen([n("Button", text="OK", bounds=(0, 0, 10, 10)) for _ in range(4)])
    vocab = build_class_vocab([screen], 10)
    feats = featurize_screen(screen, TABLE, FeatureConfig(), vocab)
    assert feats.num_elements == 5 and feats.num_rows == 6
    assert np.all(feats.app_desc_embedding == 0)
    tags = feats.source_tags
    assert tags[:, 1].sum() == 1 and tags[-1, 1] == 1
    assert feats.crops.shape == (5, 64, 64, 1)
    np.testing.assert_array_equal(feats.text_embeddings[1], [1, 0, 0])


def test_featurize_app_description_and_classes():
    screen = _screen([n("Button"), n("Weird")], description="Go app")
    vocab = build_class_vocab([_screen([n("Button")])], 1)
    feats = featurize_screen(screen, TABLE, FeatureConfig(), vocab)
    np.testing.assert_array_equal(feats.app_desc_embedding, [0, 2, 3])
    assert CLASS_NONE not in feats.class_ids.tolist()
    assert feats.class_ids.tolist()[2] == CLASS_OTHER


def test_featurize_truncates_to_bfs_prefix():
    screen = _screen([n(f"C{i}") for i in range(199)])
    feats = featurize_screen(screen, TABLE, FeatureConfig(max_elements=128), build_class_vocab([screen], 300))
    assert feats.num_rows == 129
    names = [e.class_name for e in flatten_bfs(screen.root)][:128]
    vocab = build_class_vocab([screen], 300)
    assert feats.class_ids.tolist() == [vocab.id(c) for c in names]


def test_featurize_clamps_tree_positions():
    chain = n("leaf")
    for i in range(300):
        chain = n(f"L{i}", [chain])
    screen = _screen([chain])
    feats = featurize_screen(screen, TABLE, FeatureConfig(max_elements=400), build_class_vocab([screen]))
    assert feats.tree_positions.max() == 255


def test_featurize_deterministic_and_row_invariant(fixture50):
    info, corpus = fixture50
    table = load_word_vectors(info.glove)
    vocab = build_class_vocab(corpus.view("train"), 100)
    cfg = FeatureConfig()
    for s in list(corpus.screens.values())[:10]:
        a = featurize_screen(s, table, cfg, vocab)
        b = featurize_screen(s, table, cfg, vocab)
        for k, v in a.to_arrays().items():
            assert np.array_equal(v, b.to_arrays()[k]), k
        visible = sum(e.visible_to_user for e in s.root)
        assert a.num_rows == min(visible, cfg.max_elements) + 1
        assert 0 <= a.crops.min() and a.crops.max() <= 1
        assert a.spatial.max() < cfg.num_buckets


def test_element_error_context():
    screen = _screen([n("Button", text="ok")])
    # index points past the vector matrix, so the text lookup fails
    bad_table = EmbeddingTable({"ok": 7}, np.ones((1, 3), np.float32))
    with pytest.raises(FeaturizationError, match=r"screen s element 1 \(Button\)"):
        featurize_screen(screen, bad_table, FeatureConfig(), build_class_vocab([screen]))


def test_feature_cache_roundtrip_and_invalidation(tmp_path, fixture50):
    info, corpus = fixture50
    table = load_word_vectors(info.glove)
    vocab = build_class_vocab(corpus.view("train"))
    screen = corpus.screens["00000"]
    key = cache_key(FeatureConfig(), vocab, table)
    cache = FeatureCache(tmp_path, key)
    feats = cache.get_or_compute(screen, table, FeatureConfig(), vocab)
    again = FeatureCache(tmp_path, key).get("00000")
    assert np.array_equal(again.crops, feats.crops)
    other = cache_key(FeatureConfig(num_buckets=16), vocab, table)
    assert other != key
    assert FeatureCache(tmp_path, other).get("00000") is None


def test_spatial_uses_device_frame(fixture50):
    info, corpus = fixture50
    screen = corpus.screens["00000"]
    feats = featurize_screen(screen, load_word_vectors(info.glove), FeatureConfig(), build_class_vocab([screen]))
    # root covers the full device frame
    assert feats.spatial[0].tolist() == [0, 0, 31, 31]
    assert math.isclose(screen.screenshot_size[0] / screen.device_size[0], 0.25)
