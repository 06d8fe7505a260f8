"""Turn screens into model-ready element features."""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter, deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .corpus import Bounds, Screen, UiElement, UiTree
from .errors import FeaturizationError
from .vocab import EmbeddingTable, embed_text_pooled, tokenize

CACHE_VERSION = 1
SOURCE_ELEMENT, SOURCE_APP = 0, 1
CLASS_NONE, CLASS_OTHER = 0, 1


@dataclass(frozen=True)
class FeatureConfig:
    num_buckets: int = 32
    max_position: int = 256
    max_elements: int = 128
    crop_size: int = 64
    num_classes: int = 100
    include_invisible: bool = False

    def fingerprint(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class ClassVocabulary:
    """Android class names -> categorical ids. 0 is reserved for the
    app-description row, 1 for classes outside the kept set."""

    def __init__(self, names: Sequence[str]):
        self.names = list(names)
        self._ids = {n: i + 2 for i, n in enumerate(self.names)}

    def __len__(self) -> int:
        return len(self.names) + 2

    def __eq__(self, other) -> bool:
        return isinstance(other, ClassVocabulary) and self.names == other.names

    def id(self, class_name: str) -> int:
        return self._ids.get(class_name, CLASS_OTHER)

    def save(self, path) -> None:
        Path(path).write_text("".join(n + "\n" for n in self.names), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "ClassVocabulary":
        return cls([ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln])


def build_class_vocab(screens: Iterable[Screen], k: int = 100) -> ClassVocabulary:
    counts = Counter(el.class_name for s in screens for el in s.root)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ClassVocabulary([n for n, _ in ranked[:k]])


def flatten_bfs(tree: UiTree, include_invisible: bool = False) -> list[UiElement]:
    """Level-order traversal; children keep their parent's ordering.

    Invisible nodes are dropped from the output unless requested, but their
    subtrees are still walked.
    """
    out = []
    queue = deque([tree.root.node_id])
    while queue:
        el = tree[queue.popleft()]
        if include_invisible or el.visible_to_user:
            out.append(el)
        queue.extend(el.children)
    return out


def bucketize_bounds(bounds: Bounds, screen_dims: tuple[float, float], num_buckets: int) -> tuple[int, int, int, int]:
    w, h = screen_dims
    if w <= 0 or h <= 0:
        raise FeaturizationError(f"zero screen dimension {screen_dims}")
    if num_buckets < 1:
        raise FeaturizationError(f"num_buckets must be >= 1, got {num_buckets}")

    def q(value, dim):
        return min(max(int(math.floor(value / dim * num_buckets)), 0), num_buckets - 1)

    return (q(bounds.left, w), q(bounds.top, h), q(bounds.right, w), q(bounds.bottom, h))


def to_grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma in [0, 255] as float32."""
    rgb = np.asarray(rgb, dtype=np.float32)
    if rgb.ndim == 2:
        return rgb
    return rgb[..., 0] * 0.299 + rgb[..., 1] * 0.587 + rgb[..., 2] * 0.114


def resize_gray(gray: np.ndarray, width: int, height: int) -> np.ndarray:
    img = Image.fromarray(np.ascontiguousarray(gray, dtype=np.float32), mode="F")
    return np.asarray(img.resize((width, height), Image.BILINEAR), dtype=np.float32)


def _pixel_box(bounds: Bounds, scale: tuple[float, float], width: int, height: int) -> tuple[int, int, int, int]:
    sx, sy = scale
    left = min(max(int(math.floor(bounds.left * sx)), 0), width)
    top = min(max(int(math.floor(bounds.top * sy)), 0), height)
    right = min(max(int(math.ceil(bounds.right * sx)), left), width)
    bottom = min(max(int(math.ceil(bounds.bottom * sy)), top), height)
    return left, top, right, bottom


def crop_gray(gray: np.ndarray, bounds: Bounds, scale=(1.0, 1.0), size: int = 64) -> tuple[np.ndarray, bool]:
    h, w = gray.shape
    left, top, right, bottom = _pixel_box(bounds, scale, w, h)
    if right <= left or bottom <= top:
        return np.zeros((size, size, 1), dtype=np.float32), True
    patch = resize_gray(gray[top:bottom, left:right], size, size) / 255.0
    return np.clip(patch, 0.0, 1.0)[..., None], False


def crop_element_image(screenshot: np.ndarray, bounds: Bounds, scale=(1.0, 1.0), size: int = 64) -> tuple[np.ndarray, bool]:
    """Crop ``bounds`` out of an RGB screenshot as a ``size x size x 1`` grayscale
    tensor in [0, 1].

    ``scale`` maps element coordinates onto screenshot pixels (RICO bounds
    are in device pixels, screenshots are usually downsampled). Returns the
    crop and a flag that is true when the clipped box has zero area, in
    which case the crop is all zeros.
    """
    return crop_gray(to_grayscale(screenshot), bounds, scale, size)


@dataclass
class ElementFeatures:
    class_id: int
    clickable: int
    spatial_buckets: tuple[int, int, int, int]
    pre_order: int
    post_order: int
    depth: int
    text_embedding: np.ndarray
    image_crop: np.ndarray


@dataclass
class ScreenFeatures:
    """Columnar per-element features for one screen.

    Element rows come first in BFS order; the app-description row is
    implicit and always last, so the model sees ``num_elements + 1`` rows.
    """

    screen_id: str
    class_ids: np.ndarray       # [n] int64
    clickable: np.ndarray       # [n] int64
    spatial: np.ndarray         # [n, 4] int64
    tree_positions: np.ndarray  # [n, 3] int64: pre, post, depth
    text_embeddings: np.ndarray  # [n, d] float32
    crops: np.ndarray           # [n, S, S, 1] float32
    app_desc_embedding: np.ndarray  # [d] float32
    degenerate: np.ndarray = field(default=None)  # [n] bool

    def __post_init__(self):
        if self.degenerate is None:
            self.degenerate = np.zeros(len(self.class_ids), dtype=bool)

    @property
    def num_elements(self) -> int:
        return int(len(self.class_ids))

    @property
    def num_rows(self) -> int:
        return self.num_elements + 1

    @property
    def source_tags(self) -> np.ndarray:
        tags = np.zeros((self.num_rows, 2), dtype=np.float32)
        tags[:-1, SOURCE_ELEMENT] = 1.0
        tags[-1, SOURCE_APP] = 1.0
        return tags

    def element(self, i: int) -> ElementFeatures:
        pre, post, depth = (int(v) for v in self.tree_positions[i])
        return ElementFeatures(
            class_id=int(self.class_ids[i]),
            clickable=int(self.clickable[i]),
            spatial_buckets=tuple(int(v) for v in self.spatial[i]),
            pre_order=pre,
            post_order=post,
            depth=depth,
            text_embedding=self.text_embeddings[i],
            image_crop=self.crops[i],
        )

    @property
    def elements(self) -> list[ElementFeatures]:
        return [self.element(i) for i in range(self.num_elements)]

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {
            "class_ids": self.class_ids,
            "clickable": self.clickable,
            "spatial": self.spatial,
            "tree_positions": self.tree_positions,
            "text_embeddings": self.text_embeddings,
            "crops": self.crops,
            "app_desc_embedding": self.app_desc_embedding,
            "degenerate": self.degenerate,
        }


def featurize_screen(
    screen: Screen,
    table: EmbeddingTable,
    config: FeatureConfig,
    class_vocab: ClassVocabulary,
) -> ScreenFeatures:
    elements = flatten_bfs(screen.root, config.include_invisible)[: config.max_elements]
    dev_w, dev_h = screen.device_size
    if dev_w <= 0 or dev_h <= 0:
        raise FeaturizationError(f"screen {screen.screen_id}: zero screen dimension ({dev_w}x{dev_h})")
    rgb = screen.load_screenshot()
    gray = to_grayscale(rgb)
    scale = (gray.shape[1] / dev_w, gray.shape[0] / dev_h)
    cap = config.max_position - 1

    n, d, s = len(elements), table.dimension, config.crop_size
    class_ids = np.zeros(n, dtype=np.int64)
    clickable = np.zeros(n, dtype=np.int64)
    spatial = np.zeros((n, 4), dtype=np.int64)
    positions = np.zeros((n, 3), dtype=np.int64)
    texts = np.zeros((n, d), dtype=np.float32)
    crops = np.zeros((n, s, s, 1), dtype=np.float32)
    degenerate = np.zeros(n, dtype=bool)
    for i, el in enumerate(elements):
        try:
            class_ids[i] = class_vocab.id(el.class_name)
            clickable[i] = int(el.clickable)
            spatial[i] = bucketize_bounds(el.bounds, (dev_w, dev_h), config.num_buckets)
            positions[i] = (min(el.pre_order, cap), min(el.post_order, cap), min(el.depth, cap))
            texts[i] = embed_text_pooled(tokenize(el.text), table)
            crops[i], degenerate[i] = crop_gray(gray, el.bounds, scale, s)
        except FeaturizationError as exc:
            raise FeaturizationError(f"screen {screen.screen_id} element {el.node_id} ({el.class_name}): {exc}") from exc
        except Exception as exc:
            raise FeaturizationError(
                f"screen {screen.screen_id} element {el.node_id} ({el.class_name}): {type(exc).__name__}: {exc}"
            ) from exc

    return ScreenFeatures(
        screen_id=screen.screen_id,
        class_ids=class_ids,
        clickable=clickable,
        spatial=spatial,
        tree_positions=positions,
        text_embeddings=texts,
        crops=crops,
        app_desc_embedding=embed_text_pooled(tokenize(screen.app_description), table),
        degenerate=degenerate,
    )


# --------------------------------------------------------------------------
# On-disk cache
# --------------------------------------------------------------------------


def cache_key(config: FeatureConfig, class_vocab: ClassVocabulary, table: EmbeddingTable) -> str:
    h = hashlib.sha256()
    h.update(config.fingerprint().encode())
    h.update("\n".join(class_vocab.names).encode())
    h.update(json.dumps(sorted(table.index.items())).encode())
    h.update(np.ascontiguousarray(table.vectors).tobytes())
    return h.hexdigest()


class FeatureCache:
    """Directory of ``<screen_id>.npz`` records. Each record carries a header
    with the cache format version and the featurization key; records whose
    header does not match are treated as missing."""

    def __init__(self, directory, key: str):
        self.directory = Path(directory)
        self.key = key

    def _path(self, screen_id: str) -> Path:
        return self.directory / f"{screen_id}.npz"

    def _header(self) -> np.ndarray:
        return np.frombuffer(json.dumps({"version": CACHE_VERSION, "key": self.key}).encode(), dtype=np.uint8)

    def put(self, feats: ScreenFeatures) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        with open(self._path(feats.screen_id), "wb") as fh:
            np.savez(fh, header=self._header(), **feats.to_arrays())

    def get(self, screen_id: str) -> ScreenFeatures | None:
        path = self._path(screen_id)
        if not path.exists():
            return None
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != CACHE_VERSION or header.get("key") != self.key:
                return None
            return ScreenFeatures(screen_id=screen_id, **{k: data[k] for k in data.files if k != "header"})

    def get_or_compute(self, screen: Screen, table, config, class_vocab) -> ScreenFeatures:
        feats = self.get(screen.screen_id)
        if feats is None:
            feats = featurize_screen(screen, table, config, class_vocab)
            self.put(feats)
        return feats
