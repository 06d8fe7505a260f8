"""Nearest-neighbour template baselines.

Each training screen is represented by a TF-IDF vector of its on-screen
text, a 100x100 grayscale pixel vector, and optionally an autoencoder
latent. A query screen borrows a summary from its most similar training
screen (cosine similarity, or the sum of two cosines for combined modes).
"""

from __future__ import annotations

import json
import logging
import math
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
from scipy import sparse
from torch import nn

from .corpus import Screen, strip_stop_phrases
from .errors import NumericFault, RetrievalError
from .features import flatten_bfs, resize_gray, to_grayscale
from .vocab import is_word, tokenize

logger = logging.getLogger(__name__)

INDEX_VERSION = 1
PIXEL_SIDE = 100
MODES = ("tfidf", "pixel", "pixel_dl", "tfidf+pixel", "tfidf+pixel+appdesc")


def canonical_mode(mode: str) -> str:
    """Accept ``pixel-dl`` as well as ``pixel_dl``."""
    m = mode.strip().lower().replace("-", "_")
    if m not in MODES:
        raise RetrievalError(f"unknown retrieval mode {mode!r}; choose from {', '.join(MODES)}")
    return m


def screen_terms(screen: Screen, include_app_desc: bool = False) -> list[str]:
    """Word tokens from visible element text, plus the app description if asked."""
    terms = [t for el in flatten_bfs(screen.root) for t in tokenize(el.text) if is_word(t)]
    if include_app_desc:
        terms += [t for t in tokenize(screen.app_description) if is_word(t)]
    return terms


# --------------------------------------------------------------------------
# TF-IDF
# --------------------------------------------------------------------------


@dataclass
class TfidfModel:
    """Raw-count tf, smoothed idf = ln((1+N)/(1+df)) + 1, L2-normalized rows."""

    vocabulary: dict[str, int]
    idf: np.ndarray

    @classmethod
    def fit(cls, documents: Sequence[Sequence[str]]) -> "TfidfModel":
        if not documents:
            raise RetrievalError("cannot fit TF-IDF on an empty corpus")
        df = Counter(t for doc in documents for t in set(doc))
        terms = sorted(df)
        n = len(documents)
        idf = np.array([math.log((1 + n) / (1 + df[t])) + 1.0 for t in terms], dtype=np.float64)
        return cls({t: i for i, t in enumerate(terms)}, idf)

    def transform(self, documents: Sequence[Sequence[str]]) -> sparse.csr_matrix:
        rows, cols, vals = [], [], []
        for r, doc in enumerate(documents):
            counts = Counter(self.vocabulary[t] for t in doc if t in self.vocabulary)
            if not counts:
                continue
            idx = np.fromiter(counts.keys(), dtype=np.int64)
            w = np.fromiter(counts.values(), dtype=np.float64) * self.idf[idx]
            w /= np.linalg.norm(w)
            rows.extend([r] * len(idx))
            cols.extend(idx.tolist())
            vals.extend(w.tolist())
        return sparse.csr_matrix((vals, (rows, cols)), shape=(len(documents), len(self.vocabulary)))


def tfidf_fit(train_screens: Sequence[Screen], include_app_desc: bool = False) -> tuple[TfidfModel, sparse.csr_matrix, np.ndarray]:
    """Fit on training screens; returns the model, their vectors and an
    ``empty`` flag per screen (no text at all)."""
    docs = [screen_terms(s, include_app_desc) for s in train_screens]
    model = TfidfModel.fit(docs)
    vectors = model.transform(docs)
    empty = np.asarray(vectors.getnnz(axis=1) == 0)
    return model, vectors, empty


# --------------------------------------------------------------------------
# Pixels
# --------------------------------------------------------------------------


def pixel_vectorize(screenshot: np.ndarray, side: int = PIXEL_SIDE) -> np.ndarray:
    """Grayscale, bilinear resize to side x side, row-major flatten, [0, 1]."""
    small = resize_gray(to_grayscale(screenshot), side, side) / 255.0
    return np.clip(small, 0.0, 1.0).reshape(-1).astype(np.float32)


@dataclass(frozen=True)
class AutoencoderConfig:
    input_size: int = 96
    filters: tuple[int, ...] = (128, 64, 32)
    latent_size: int = 100
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    max_steps: int | None = None


class PixelAutoencoder(nn.Module):
    """Three stride-2 3x3 convs down to a dense latent, mirrored back up with
    three stride-2 transposed convs; a final 3x3 conv maps to one channel."""

    def __init__(self, config: AutoencoderConfig):
        super().__init__()
        self.config = c = config
        f1, f2, f3 = c.filters
        if c.input_size % 8:
            raise RetrievalError("autoencoder input size must be divisible by 8")
        self.grid = c.input_size // 8
        self.encoder = nn.Sequential(
            nn.Conv2d(1, f1, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(f1, f2, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(f2, f3, 3, stride=2, padding=1), nn.ReLU(),
            nn.Flatten(),
            nn.Linear(f3 * self.grid * self.grid, c.latent_size),
        )
        self.expand = nn.Linear(c.latent_size, f3 * self.grid * self.grid)
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(f3, f3, 3, stride=2, padding=1, output_padding=1), nn.ReLU(),
            nn.ConvTranspose2d(f3, f2, 3, stride=2, padding=1, output_padding=1), nn.ReLU(),
            nn.ConvTranspose2d(f2, f1, 3, stride=2, padding=1, output_padding=1), nn.ReLU(),
            nn.Conv2d(f1, 1, 3, padding=1), nn.Sigmoid(),
        )

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        return self.encoder(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.expand(self.encode(x)).view(-1, self.config.filters[2], self.grid, self.grid)
        return self.decoder(torch.relu(z))


def autoencoder_input(screenshot: np.ndarray, size: int = 96) -> np.ndarray:
    return np.clip(resize_gray(to_grayscale(screenshot), size, size) / 255.0, 0.0, 1.0).astype(np.float32)


def train_pixel_autoencoder(images: Iterable[np.ndarray], config: AutoencoderConfig = AutoencoderConfig()) -> tuple[PixelAutoencoder, list[float]]:
    """Fit on RGB screenshots with mean-squared reconstruction loss.

    Returns the model (eval mode) and the per-step loss history.
    """
    torch.manual_seed(config.seed)
    data = torch.from_numpy(np.stack([autoencoder_input(im, config.input_size) for im in images]))[:, None]
    model = PixelAutoencoder(config)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    gen = torch.Generator().manual_seed(config.seed)
    history: list[float] = []
    model.train()
    for _ in range(config.epochs):
        for idx in torch.randperm(len(data), generator=gen).split(config.batch_size):
            loss = nn.functional.mse_loss(model(data[idx]), data[idx])
            if not torch.isfinite(loss):
                raise NumericFault(f"non-finite autoencoder loss at step {len(history)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            history.append(loss.item())
            if config.max_steps is not None and len(history) >= config.max_steps:
                model.eval()
                return model, history
    model.eval()
    return model, history


def encode_screens(model: PixelAutoencoder, images: Iterable[np.ndarray], batch_size: int = 64) -> np.ndarray:
    model.eval()
    arr = [autoencoder_input(im, model.config.input_size) for im in images]
    out = []
    with torch.no_grad():
        for i in range(0, len(arr), batch_size):
            x = torch.from_numpy(np.stack(arr[i : i + batch_size]))[:, None]
            out.append(model.encode(x).numpy())
    if not out:
        return np.zeros((0, model.config.latent_size), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


# --------------------------------------------------------------------------
# Index and retrieval
# --------------------------------------------------------------------------


def _l2_rows(m: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


@dataclass
class ScreenIndex:
    screen_ids: list[str]
    summaries: list[list[str]]
    tfidf: TfidfModel
    tfidf_vectors: sparse.csr_matrix
    tfidf_app: TfidfModel
    tfidf_app_vectors: sparse.csr_matrix
    pixels: np.ndarray                # [n, 10000], raw values in [0, 1]
    latents: np.ndarray | None = None  # [n, latent]
    empty_text: np.ndarray = field(default=None)
    empty_pixels: np.ndarray = field(default=None)

    def __post_init__(self):
        self._pixels_unit = _l2_rows(self.pixels.astype(np.float64))
        self._latents_unit = None if self.latents is None else _l2_rows(self.latents.astype(np.float64))
        if self.empty_text is None:
            self.empty_text = np.asarray(self.tfidf_vectors.getnnz(axis=1) == 0)
        if self.empty_pixels is None:
            self.empty_pixels = ~self.pixels.any(axis=1)

    def __len__(self) -> int:
        return len(self.screen_ids)

    def save(self, path) -> None:
        header = {
            "version": INDEX_VERSION,
            "screen_ids": self.screen_ids,
            "summaries": self.summaries,
            "tfidf_terms": sorted(self.tfidf.vocabulary, key=self.tfidf.vocabulary.get),
            "tfidf_app_terms": sorted(self.tfidf_app.vocabulary, key=self.tfidf_app.vocabulary.get),
        }
        arrays = dict(
            header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
            idf=self.tfidf.idf,
            idf_app=self.tfidf_app.idf,
            pixels=self.pixels,
        )
        for name, m in (("tv", self.tfidf_vectors), ("ta", self.tfidf_app_vectors)):
            arrays.update({f"{name}_data": m.data, f"{name}_indices": m.indices, f"{name}_indptr": m.indptr,
                           f"{name}_shape": np.array(m.shape)})
        if self.latents is not None:
            arrays["latents"] = self.latents
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)

    @classmethod
    def load(cls, path) -> "ScreenIndex":
        with np.load(path) as data:
            header = json.loads(bytes(data["header"]).decode())
            if header.get("version") != INDEX_VERSION:
                raise RetrievalError(f"unsupported index version {header.get('version')}")

            def csr(name):
                return sparse.csr_matrix((data[f"{name}_data"], data[f"{name}_indices"], data[f"{name}_indptr"]),
                                         shape=tuple(data[f"{name}_shape"]))

            return cls(
                screen_ids=header["screen_ids"],
                summaries=header["summaries"],
                tfidf=TfidfModel({t: i for i, t in enumerate(header["tfidf_terms"])}, data["idf"]),
                tfidf_vectors=csr("tv"),
                tfidf_app=TfidfModel({t: i for i, t in enumerate(header["tfidf_app_terms"])}, data["idf_app"]),
                tfidf_app_vectors=csr("ta"),
                pixels=data["pixels"],
                latents=data["latents"] if "latents" in data.files else None,
            )


def fit_index(
    train_screens: Iterable[Screen],
    stop_phrases: Sequence[str] = (),
    autoencoder: PixelAutoencoder | None = None,
) -> ScreenIndex:
    screens = sorted(train_screens, key=lambda s: s.screen_id)
    if not screens:
        raise RetrievalError("cannot build an index from zero screens")
    tf, tv, empty = tfidf_fit(screens)
    tfa, tva, _ = tfidf_fit(screens, include_app_desc=True)
    shots = [s.load_screenshot() for s in screens]
    return ScreenIndex(
        screen_ids=[s.screen_id for s in screens],
        summaries=[[strip_stop_phrases(t, stop_phrases) for t in s.summaries] for s in screens],
        tfidf=tf,
        tfidf_vectors=tv,
        tfidf_app=tfa,
        tfidf_app_vectors=tva,
        pixels=np.stack([pixel_vectorize(im) for im in shots]),
        latents=None if autoencoder is None else encode_screens(autoencoder, shots),
        empty_text=empty,
    )


@dataclass(frozen=True)
class Retrieval:
    query_id: str
    neighbor_id: str
    similarity: float
    summary: str


def similarity_scores(query: Screen, index: ScreenIndex, mode: str, autoencoder: PixelAutoencoder | None = None) -> np.ndarray:
    """Cosine (or summed cosines) between the query and every indexed screen."""
    mode = canonical_mode(mode)
    scores = np.zeros(len(index), dtype=np.float64)
    if mode in ("tfidf", "tfidf+pixel"):
        q = index.tfidf.transform([screen_terms(query)])
        scores += (index.tfidf_vectors @ q.T).toarray().ravel()
    if mode == "tfidf+pixel+appdesc":
        q = index.tfidf_app.transform([screen_terms(query, include_app_desc=True)])
        scores += (index.tfidf_app_vectors @ q.T).toarray().ravel()
    shot = None
    if "pixel" in mode and mode != "pixel_dl":
        shot = query.load_screenshot()
        q = pixel_vectorize(shot).astype(np.float64)
        norm = np.linalg.norm(q)
        if norm > 0:
            scores += index._pixels_unit @ (q / norm)
    if mode == "pixel_dl":
        if autoencoder is None or index._latents_unit is None:
            raise RetrievalError("pixel_dl mode needs a trained autoencoder and latent vectors in the index")
        q = encode_screens(autoencoder, [query.load_screenshot()])[0].astype(np.float64)
        norm = np.linalg.norm(q)
        if norm > 0:
            scores += index._latents_unit @ (q / norm)
    return scores


def _query_rng(seed: int, screen_id: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(screen_id.encode())])


def retrieve(
    query: Screen,
    index: ScreenIndex,
    mode: str,
    seed: int = 0,
    autoencoder: PixelAutoencoder | None = None,
) -> Retrieval:
    """Most similar indexed screen (ties -> smallest screen id) and one of its
    summaries, drawn with a generator seeded by ``seed`` and the query id."""
    if len(index) == 0:
        raise RetrievalError("empty index")
    scores = similarity_scores(query, index, mode, autoencoder)
    best = int(np.argmax(scores))  # ids are sorted, so the first max is the smallest id
    choices = index.summaries[best]
    summary = choices[int(_query_rng(seed, query.screen_id).integers(len(choices)))]
    return Retrieval(query.screen_id, index.screen_ids[best], float(scores[best]), summary)


def run_baseline(queries: Iterable[Screen], index: ScreenIndex, mode: str, seed: int = 0,
                 autoencoder: PixelAutoencoder | None = None) -> list[dict]:
    rows = []
    for q in queries:
        r = retrieve(q, index, mode, seed, autoencoder)
        rows.append({"screenId": r.query_id, "rank": 1, "score": r.similarity, "summary": r.summary})
    return rows
