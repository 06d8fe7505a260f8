"""Beam-search generation and prediction files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .errors import DataError
from .features import ScreenFeatures
from .model import ScreenSummarizer, collate
from .vocab import END_ID, PAD_ID, RESERVED, START_ID, Vocabulary

PREDICTION_FIELDS = ("screenId", "rank", "score", "summary")

StepFn = Callable[[list[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    logprob: float
    finished: bool

    @property
    def body(self) -> tuple[int, ...]:
        """Generated tokens without START and END."""
        toks = self.tokens[1:]
        return toks[:-1] if self.finished else toks

    def score(self, alpha: float = 0.0) -> float:
        if alpha == 0.0:
            return self.logprob
        return self.logprob / max(len(self.tokens) - 1, 1) ** alpha


def _rank_key(h: BeamHypothesis, alpha: float):
    return (-h.score(alpha), h.tokens)


def beam_search(
    step_fn: StepFn,
    beam_size: int,
    max_len: int,
    start_id: int = START_ID,
    end_id: int = END_ID,
    alpha: float = 0.0,
) -> list[BeamHypothesis]:
    """Return up to ``beam_size`` hypotheses, best first.

    ``step_fn`` maps a list of equal-length prefixes to a ``[k, V]`` array
    of next-token log-probabilities. ``max_len`` bounds the number of
    generated tokens (END included); alive hypotheses still open at that
    point are returned unfinished. Score ties are broken by token ids.
    """
    if beam_size < 1 or max_len < 1:
        raise ValueError("beam_size and max_len must be >= 1")
    alive = [BeamHypothesis((start_id,), 0.0, False)]
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        logp = np.asarray(step_fn([h.tokens for h in alive]), dtype=np.float64)
        candidates = []
        for h, row in zip(alive, logp):
            # beam_size + 1 per parent always covers the END candidate and a full beam
            order = sorted(range(len(row)), key=lambda t: (-row[t], t))[: beam_size + 1]
            for t in order:
                if row[t] == -math.inf or np.isnan(row[t]):
                    continue
                candidates.append(BeamHypothesis(h.tokens + (t,), h.logprob + float(row[t]), t == end_id))
        candidates.sort(key=lambda h: (-h.logprob, h.tokens))
        alive = []
        for cand in candidates:
            if cand.finished:
                finished.append(cand)
            else:
                alive.append(cand)
                if len(alive) == beam_size:
                    break
        if not alive:
            break
        if alpha == 0.0 and len(finished) >= beam_size:
            kth = sorted(h.logprob for h in finished)[-beam_size]
            if alive[0].logprob <= kth:
                alive = []
                break
    finished.extend(alive)
    finished.sort(key=lambda h: _rank_key(h, alpha))
    return finished[:beam_size]


def greedy_decode(step_fn: StepFn, max_len: int, start_id: int = START_ID, end_id: int = END_ID) -> BeamHypothesis:
    tokens, logprob = (start_id,), 0.0
    for _ in range(max_len):
        row = np.asarray(step_fn([tokens]), dtype=np.float64)[0]
        t = int(np.argmax(row))
        tokens, logprob = tokens + (t,), logprob + float(row[t])
        if t == end_id:
            return BeamHypothesis(tokens, logprob, True)
    return BeamHypothesis(tokens, logprob, False)


def model_step_fn(model: ScreenSummarizer, features: ScreenFeatures, banned: Sequence[int] = (PAD_ID, START_ID)) -> StepFn:
    """Step function over one screen; the encoder runs once up front."""
    model.eval()
    batch = collate([features], use_app_desc=model.config.use_app_desc)
    with torch.no_grad():
        fused, row_mask = model.encode(batch)

    def step(prefixes):
        ids = torch.tensor(prefixes, dtype=torch.long)
        k = ids.shape[0]
        with torch.no_grad():
            logits = model.decode_logits(fused.expand(k, -1, -1), ids, row_mask.expand(k, -1))[:, -1]
            logp = torch.log_softmax(logits.double(), dim=-1)
        logp[:, list(banned)] = -math.inf
        return logp.numpy()

    return step


def postprocess(tokens: Iterable, vocab: Vocabulary | None = None) -> str:
    """Drop reserved tokens and join with single spaces."""
    toks = list(tokens)
    if vocab is not None and toks and isinstance(toks[0], (int, np.integer)):
        toks = vocab.decode(int(t) for t in toks)
    return " ".join(t for t in toks if t not in RESERVED)


def predict(
    model: ScreenSummarizer,
    vocab: Vocabulary,
    features: Iterable[ScreenFeatures],
    beam_size: int = 5,
    max_len: int | None = None,
    alpha: float = 0.0,
) -> list[dict]:
    max_len = max_len or model.config.max_decode_len
    rows = []
    for feats in features:
        hyps = beam_search(model_step_fn(model, feats), beam_size, max_len, alpha=alpha)
        for rank, h in enumerate(hyps, start=1):
            rows.append(
                {"screenId": feats.screen_id, "rank": rank, "score": h.score(alpha), "summary": postprocess(h.tokens, vocab)}
            )
    return rows


def write_predictions(path, rows: Iterable[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=PREDICTION_FIELDS)
        writer.writeheader()
        for r in rows:
            writer.writerow({**r, "score": f"{float(r['score']):.6f}"})


def read_predictions(path) -> dict[str, list[tuple[int, float, str]]]:
    """screen id -> [(rank, score, summary)] sorted by rank."""
    out: dict[str, list[tuple[int, float, str]]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_FIELDS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        for row in reader:
            out.setdefault(row["screenId"], []).append((int(row["rank"]), float(row["score"]), row["summary"] or ""))
    for preds in out.values():
        preds.sort()
    return out
