"""Teacher-forced training loop."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .corpus import CorpusView, Screen, strip_stop_phrases
from .errors import ConfigError, NumericFault
from .features import ScreenFeatures
from .model import (
    ModelConfig,
    ScreenSummarizer,
    collate,
    decoder_io,
    init_word_embeddings,
    save_checkpoint,
    sequence_loss,
    token_accuracy,
)
from .vocab import EmbeddingTable, Vocabulary, tokenize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_steps: int = 1000
    max_epochs: int = 20
    max_steps: int | None = None
    patience: int = 5
    seed: int = 0
    deterministic: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr == 0 is accepted as a no-update run (useful for checking the loop)
        if not self.lr >= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.warmup_steps < 0 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("warmup_steps >= 0, max_epochs >= 1 and patience >= 1 required")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Example:
    """One training screen: its features and its cleaned summaries."""

    features: ScreenFeatures
    summaries: list[str]


@dataclass
class CurvePoint:
    step: int
    train_loss: float
    val_loss: float | None = None


@dataclass
class TrainResult:
    model: ScreenSummarizer
    curve: list[CurvePoint]
    best_val_loss: float | None
    steps: int
    checkpoint: Path | None = None


def sample_target(screen: Screen | Example | Sequence[str], rng: np.random.Generator) -> str:
    """Uniformly pick one of the screen's summaries."""
    summaries = screen if isinstance(screen, (list, tuple)) else screen.summaries
    return summaries[int(rng.integers(len(summaries)))]


def make_examples(
    view: CorpusView,
    feature_fn: Callable[[Screen], ScreenFeatures],
    stop_phrases: Sequence[str] = (),
) -> list[Example]:
    return [
        Example(feature_fn(s), [strip_stop_phrases(t, stop_phrases) for t in s.summaries])
        for s in view
    ]


def _encode(vocab: Vocabulary, summaries: Iterable[str]) -> list[list[int]]:
    return [vocab.encode(tokenize(s)) for s in summaries]


def evaluate_teacher_forced(model: ScreenSummarizer, vocab: Vocabulary, examples: Sequence[Example], batch_size: int = 64) -> tuple[float, float]:
    """Loss and token accuracy over every (screen, summary) pair, in eval mode."""
    model.eval()
    pairs = [(ex.features, s) for ex in examples for s in ex.summaries]
    total_loss, total_tokens, correct = 0.0, 0, 0
    with torch.no_grad():
        for i in range(0, len(pairs), batch_size):
            chunk = pairs[i : i + batch_size]
            batch = collate([f for f, _ in chunk], use_app_desc=model.config.use_app_desc)
            prefix, target = decoder_io(_encode(vocab, [s for _, s in chunk]), model.config.max_decode_len)
            logits = model(batch, prefix)
            total_loss += float(sequence_loss(logits, target)) * len(chunk)
            n = int((target != 0).sum())
            correct += round(token_accuracy(logits, target) * n)
            total_tokens += n
    return total_loss / max(len(pairs), 1), correct / max(total_tokens, 1)


def write_curve(path, curve: Sequence[CurvePoint]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "train_loss", "val_loss"])
        for p in curve:
            w.writerow([p.step, f"{p.train_loss:.6f}", "" if p.val_loss is None else f"{p.val_loss:.6f}"])


def read_curve(path) -> list[CurvePoint]:
    with open(path, newline="") as fh:
        return [
            CurvePoint(int(r["step"]), float(r["train_loss"]), float(r["val_loss"]) if r["val_loss"] else None)
            for r in csv.DictReader(fh)
        ]


def train(
    train_examples: Sequence[Example],
    vocab: Vocabulary,
    model_config: ModelConfig,
    train_config: TrainConfig,
    val_examples: Sequence[Example] = (),
    word_vectors: EmbeddingTable | None = None,
    out_dir=None,
    metadata: dict | None = None,
    log_every: int = 50,
) -> TrainResult:
    """Train end-to-end with Adam and linear warmup.

    A checkpoint is written to ``out_dir/checkpoint.pt`` whenever the
    validation loss improves (or at the end when there is no validation
    data), and the loss curve goes to ``out_dir/loss_curve.csv``.
    """
    if not train_examples:
        raise ConfigError("no training examples")
    tc = train_config
    if tc.deterministic:
        torch.set_num_threads(1)
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    model = ScreenSummarizer(model_config)
    init_word_embeddings(model, vocab, word_vectors)
    optimizer = torch.optim.Adam(model.parameters(), lr=tc.lr, betas=(tc.beta1, tc.beta2), eps=tc.eps)
    warmup = max(tc.warmup_steps, 1)
    scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda s: min(1.0, (s + 1) / warmup))

    meta = dict(metadata or {})
    meta.update(vocab=vocab.itos, train_config=asdict(tc))
    checkpoint = out_dir / "checkpoint.pt" if out_dir is not None else None
    curve: list[CurvePoint] = []
    best_val, bad_epochs, step = None, 0, 0
    n = len(train_examples)
    started = time.monotonic()

    for epoch in range(tc.max_epochs):
        model.train()
        order = rng.permutation(n)
        for batch_no, start in enumerate(range(0, n, tc.batch_size)):
            idx = order[start : start + tc.batch_size]
            chosen = [train_examples[i] for i in idx]
            targets = [sample_target(ex, rng) for ex in chosen]
            batch = collate([ex.features for ex in chosen], use_app_desc=model_config.use_app_desc)
            prefix, target = decoder_io(_encode(vocab, targets), model_config.max_decode_len)
            batch_id = f"epoch{epoch}-batch{batch_no}"
            try:
                loss = sequence_loss(model(batch, prefix), target)
            except NumericFault as exc:
                _dump_bad_batch(out_dir, batch_id, batch.screen_ids, targets)
                raise NumericFault(f"{exc} (batch {batch_id}, step {step})") from exc
            if not torch.isfinite(loss):
                _dump_bad_batch(out_dir, batch_id, batch.screen_ids, targets)
                raise NumericFault(f"non-finite loss at step {step} (batch {batch_id})")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            scheduler.step()
            curve.append(CurvePoint(step, loss.item()))
            step += 1
            if log_every and step % log_every == 0:
                logger.info("step %d epoch %d loss %.4f (%.0fs)", step, epoch, curve[-1].train_loss, time.monotonic() - started)
            if tc.max_steps is not None and step >= tc.max_steps:
                break

        if val_examples:
            val_loss, val_acc = evaluate_teacher_forced(model, vocab, val_examples)
            curve[-1].val_loss = val_loss
            logger.info("epoch %d val_loss %.4f val_token_acc %.3f", epoch, val_loss, val_acc)
            if best_val is None or val_loss < best_val:
                best_val, bad_epochs = val_loss, 0
                if checkpoint is not None:
                    save_checkpoint(checkpoint, model, meta)
            else:
                bad_epochs += 1
                if bad_epochs >= tc.patience:
                    logger.info("early stop after epoch %d", epoch)
                    break
        if tc.max_steps is not None and step >= tc.max_steps:
            break

    if checkpoint is not None and (best_val is None or not checkpoint.exists()):
        save_checkpoint(checkpoint, model, meta)
    if out_dir is not None:
        write_curve(out_dir / "loss_curve.csv", curve)
    model.eval()
    return TrainResult(model, curve, best_val, step, checkpoint)


def _dump_bad_batch(out_dir, batch_id, screen_ids, targets) -> None:
    if out_dir is None:
        return
    path = Path(out_dir) / f"nan_batch_{batch_id}.json"
    path.write_text(json.dumps({"batch": batch_id, "screen_ids": list(screen_ids), "targets": list(targets)}, indent=1))
    logger.error("wrote diagnostic dump %s", path)
