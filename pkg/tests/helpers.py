"""Small builders shared by the model, decode and training tests."""

import numpy as np

from uisum.features import ScreenFeatures
from uisum.model import ModelConfig

TINY_FILTERS = (2, 2, 2, 2, 2, 2, 4)


def tiny_config(**kw):
    base = dict(vocab_size=11, hidden_size=8, num_layers=1, num_heads=1, ffn_size=16, image_encoding_size=8,
                cnn_filters=TINY_FILTERS, word_dim=6, feature_embedding_size=4, num_classes=6, num_buckets=8,
                max_position=16, max_decode_len=8, max_elements=4, dropout=0.0)
    base.update(kw)
    return ModelConfig(**base)


def random_features(rng, n, config, screen_id="s", app_desc=True):
    d, s = config.word_dim, config.crop_size
    return ScreenFeatures(
        screen_id=screen_id,
        class_ids=rng.integers(0, config.num_classes, size=n).astype(np.int64),
        clickable=rng.integers(0, 2, size=n).astype(np.int64),
        spatial=rng.integers(0, config.num_buckets, size=(n, 4)).astype(np.int64),
        tree_positions=rng.integers(0, config.max_position, size=(n, 3)).astype(np.int64),
        text_embeddings=rng.normal(size=(n, d)).astype(np.float32),
        crops=rng.uniform(size=(n, s, s, 1)).astype(np.float32),
        app_desc_embedding=(rng.normal(size=d) if app_desc else np.zeros(d)).astype(np.float32),
    )
