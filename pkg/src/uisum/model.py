"""Dual-encoder / Transformer-decoder summarization network.

Structural-textual rows (one per UI element plus one for the app
description) go through a Transformer encoder; each element's grayscale
crop goes through a residual CNN. The two encodings are concatenated per
row and a causal Transformer decoder attends over them.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import CheckpointError, ConfigError, LengthError, NumericFault
from .features import ScreenFeatures
from .vocab import END_ID, PAD_ID, START_ID, EmbeddingTable, Vocabulary

CHECKPOINT_FORMAT = "uisum.checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    hidden_size: int = 128
    num_layers: int = 6
    num_heads: int = 8
    ffn_size: int = 512
    image_encoding_size: int = 128
    # filters double per block; the last block's width is the flatten size
    # because the map is 1x1 by then
    cnn_filters: tuple[int, ...] = (8, 16, 32, 64, 128, 256, 256)
    crop_size: int = 64
    word_dim: int = 300
    feature_embedding_size: int = 32
    num_classes: int = 102
    num_buckets: int = 32
    max_position: int = 256
    max_decode_len: int = 20
    max_elements: int = 128
    dropout: float = 0.1
    use_layout: bool = True
    use_pixels: bool = True
    use_text: bool = True
    use_app_desc: bool = True

    def __post_init__(self):
        object.__setattr__(self, "cnn_filters", tuple(int(f) for f in self.cnn_filters))
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} not divisible by num_heads {self.num_heads}")
        if not (self.use_layout or self.use_pixels):
            raise ConfigError("at least one of use_layout / use_pixels must be enabled")
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must cover the 4 reserved tokens plus at least one word")

    @property
    def cnn_spatial_trace(self) -> list[int]:
        sizes = [self.crop_size]
        for _ in self.cnn_filters:
            sizes.append((sizes[-1] - 1) // 2 + 1)  # 3x3, pad 1, stride 2
        return sizes

    @property
    def cnn_flatten_size(self) -> int:
        return self.cnn_filters[-1] * self.cnn_spatial_trace[-1] ** 2

    @property
    def fused_size(self) -> int:
        return self.hidden_size * self.use_layout + self.image_encoding_size * self.use_pixels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cnn_filters"] = list(self.cnn_filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})

    @classmethod
    def variant(cls, name: str, **kw) -> "ModelConfig":
        """Input-ablation variants: pixel-only, layout-only, pixel+layout,
        pixel+layout+text, full."""
        flags = {
            "pixel-only": dict(use_layout=False, use_pixels=True, use_text=False, use_app_desc=False),
            "layout-only": dict(use_layout=True, use_pixels=False, use_text=False, use_app_desc=False),
            "pixel+layout": dict(use_layout=True, use_pixels=True, use_text=False, use_app_desc=False),
            "pixel+layout+text": dict(use_layout=True, use_pixels=True, use_text=True, use_app_desc=False),
            "full": dict(use_layout=True, use_pixels=True, use_text=True, use_app_desc=True),
        }
        if name not in flags:
            raise ConfigError(f"unknown model variant {name!r}; choose from {sorted(flags)}")
        return cls(**{**kw, **flags[name]})


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------


@dataclass
class Batch:
    """Padded element rows for B screens.

    Row ``n_i`` of screen ``i`` is its app-description row; rows after it
    are padding. ``crops`` holds only real element crops, in row-major
    order, and ``crop_rows``/``crop_batch`` say where each one goes.
    """

    screen_ids: list[str]
    class_ids: torch.Tensor      # [B, R]
    clickable: torch.Tensor      # [B, R]
    spatial: torch.Tensor        # [B, R, 4]
    positions: torch.Tensor      # [B, R, 3]
    text: torch.Tensor           # [B, R, d]
    source: torch.Tensor         # [B, R, 2]
    row_mask: torch.Tensor       # [B, R] True for rows that take part in attention
    crops: torch.Tensor          # [M, 1, S, S]
    crop_batch: torch.Tensor     # [M]
    crop_rows: torch.Tensor      # [M]

    def to(self, dtype) -> "Batch":
        return Batch(
            self.screen_ids, self.class_ids, self.clickable, self.spatial, self.positions,
            self.text.to(dtype), self.source.to(dtype), self.row_mask, self.crops.to(dtype),
            self.crop_batch, self.crop_rows,
        )


def collate(features: Sequence[ScreenFeatures], use_app_desc: bool = True) -> Batch:
    b = len(features)
    rows = max(f.num_rows for f in features)
    d = features[0].text_embeddings.shape[1] if features[0].num_elements else features[0].app_desc_embedding.shape[0]
    class_ids = torch.zeros(b, rows, dtype=torch.long)
    clickable = torch.zeros(b, rows, dtype=torch.long)
    spatial = torch.zeros(b, rows, 4, dtype=torch.long)
    positions = torch.zeros(b, rows, 3, dtype=torch.long)
    text = torch.zeros(b, rows, d)
    source = torch.zeros(b, rows, 2)
    row_mask = torch.zeros(b, rows, dtype=torch.bool)
    crops, crop_batch, crop_rows = [], [], []
    for i, f in enumerate(features):
        n = f.num_elements
        class_ids[i, :n] = torch.from_numpy(f.class_ids)
        clickable[i, :n] = torch.from_numpy(f.clickable)
        spatial[i, :n] = torch.from_numpy(f.spatial)
        positions[i, :n] = torch.from_numpy(f.tree_positions)
        if n:
            text[i, :n] = torch.from_numpy(f.text_embeddings)
        text[i, n] = torch.from_numpy(f.app_desc_embedding)
        source[i, : n + 1] = torch.from_numpy(f.source_tags)
        row_mask[i, :n] = True
        # a screen needs at least one attendable row
        row_mask[i, n] = use_app_desc or n == 0
        if n:
            crops.append(torch.from_numpy(f.crops).permute(0, 3, 1, 2))
            crop_batch.append(torch.full((n,), i, dtype=torch.long))
            crop_rows.append(torch.arange(n))
    s = features[0].crops.shape[1] if features[0].num_elements else 64
    return Batch(
        screen_ids=[f.screen_id for f in features],
        class_ids=class_ids,
        clickable=clickable,
        spatial=spatial,
        positions=positions,
        text=text,
        source=source,
        row_mask=row_mask,
        crops=torch.cat(crops) if crops else torch.zeros(0, 1, s, s),
        crop_batch=torch.cat(crop_batch) if crop_batch else torch.zeros(0, dtype=torch.long),
        crop_rows=torch.cat(crop_rows) if crop_rows else torch.zeros(0, dtype=torch.long),
    )


def decoder_io(token_ids: Sequence[Sequence[int]], max_decode_len: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Teacher-forcing inputs/targets: ``[START] + w`` and ``w + [END]``.

    Summaries are truncated so the input prefix fits ``max_decode_len``.
    """
    seqs = [list(t)[: max_decode_len - 1] for t in token_ids]
    length = max(len(s) for s in seqs) + 1
    prefix = torch.full((len(seqs), length), PAD_ID, dtype=torch.long)
    target = torch.full((len(seqs), length), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        prefix[i, : len(s) + 1] = torch.tensor([START_ID] + s, dtype=torch.long)
        target[i, : len(s) + 1] = torch.tensor(s + [END_ID], dtype=torch.long)
    return prefix, target


# --------------------------------------------------------------------------
# Network pieces
# --------------------------------------------------------------------------


class ResidualBlock(nn.Module):
    """Three 3x3 conv layers, each followed by batch norm and ReLU.

    The block input is added to the input of the third conv, which has
    stride 2. When the width grows, the shortcut zero-pads channels, so
    the block adds no extra conv layers.
    """

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_channels, out_channels, 3, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(out_channels)
        self.conv2 = nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(out_channels)
        self.conv3 = nn.Conv2d(out_channels, out_channels, 3, stride=2, padding=1, bias=False)
        self.bn3 = nn.BatchNorm2d(out_channels)
        self.extra_channels = out_channels - in_channels
        if self.extra_channels < 0:
            raise ConfigError("residual blocks may not shrink the channel count")

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = F.relu(self.bn2(self.conv2(h)))
        shortcut = F.pad(x, (0, 0, 0, 0, 0, self.extra_channels)) if self.extra_channels else x
        return F.relu(self.bn3(self.conv3(h + shortcut)))


class ImageEncoder(nn.Module):
    def __init__(self, filters: Sequence[int], flatten_size: int, out_size: int):
        super().__init__()
        widths = [1, *filters]
        self.blocks = nn.ModuleList(ResidualBlock(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.project = nn.Linear(flatten_size, out_size)

    def feature_map(self, x):
        for block in self.blocks:
            x = block(x)
        return x

    def forward(self, x):
        return self.project(self.feature_map(x).flatten(1))


def sinusoidal_positions(length: int, dim: int) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(angle)
    pe[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return pe


def causal_mask(length: int, device=None) -> torch.Tensor:
    return torch.triu(torch.ones(length, length, dtype=torch.bool, device=device), diagonal=1)


class ScreenSummarizer(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = c = config
        fe = c.feature_embedding_size

        # shared between element/app text on the encoder side and decoder inputs
        self.word_embedding = nn.Embedding(c.vocab_size, c.word_dim)
        self.word_projection = nn.Linear(c.word_dim, c.hidden_size, bias=False)

        self.class_embedding = nn.Embedding(c.num_classes, fe)
        self.clickable_embedding = nn.Embedding(2, fe)
        self.spatial_embeddings = nn.ModuleList(nn.Embedding(c.num_buckets, fe) for _ in range(4))
        self.position_embeddings = nn.ModuleList(nn.Embedding(c.max_position, fe) for _ in range(3))
        self.element_projection = nn.Linear(9 * fe + c.hidden_size + 2, c.hidden_size, bias=False)

        self.encoder_layers = nn.ModuleList(
            nn.TransformerEncoderLayer(c.hidden_size, c.num_heads, c.ffn_size, c.dropout, batch_first=True)
            for _ in range(c.num_layers)
        )
        self.image_encoder = ImageEncoder(c.cnn_filters, c.cnn_flatten_size, c.image_encoding_size)
        self.memory_projection = nn.Linear(c.fused_size, c.hidden_size)

        self.decoder_layers = nn.ModuleList(
            nn.TransformerDecoderLayer(c.hidden_size, c.num_heads, c.ffn_size, c.dropout, batch_first=True)
            for _ in range(c.num_layers)
        )
        self.decoder_dropout = nn.Dropout(c.dropout)
        self.output = nn.Linear(c.hidden_size, c.vocab_size)
        self.register_buffer("pos_table", sinusoidal_positions(c.max_decode_len, c.hidden_size).float(), persistent=False)

        nn.init.normal_(self.word_embedding.weight, std=0.3)

    # -- encoder side -----------------------------------------------------

    def embed_elements(self, batch: Batch) -> torch.Tensor:
        """[B, R, hidden]: concatenated categorical embeddings, projected text
        embedding and source one-hot, then the bias-free projection."""
        c = self.config
        parts = [self.class_embedding(batch.class_ids), self.clickable_embedding(batch.clickable)]
        parts += [emb(batch.spatial[..., k]) for k, emb in enumerate(self.spatial_embeddings)]
        parts += [emb(batch.positions[..., k]) for k, emb in enumerate(self.position_embeddings)]
        text = batch.text
        if not c.use_text:
            text = text.clone()
            text[batch.source[..., 0] > 0] = 0.0
        if not c.use_app_desc:
            text = text * batch.source[..., :1]
        parts.append(self.word_projection(text))
        parts.append(batch.source)
        return self.element_projection(torch.cat(parts, dim=-1))

    def encode_structure(self, embedded: torch.Tensor, row_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Transformer encoder over element rows; masked rows are ignored as keys."""
        squeeze = embedded.dim() == 2
        if squeeze:
            embedded = embedded[None]
            row_mask = None if row_mask is None else row_mask[None]
        padding = None if row_mask is None else ~row_mask
        h = embedded
        for i, layer in enumerate(self.encoder_layers):
            h = layer(h, src_key_padding_mask=padding)
            if not torch.isfinite(h).all():
                raise NumericFault(f"non-finite activation in encoder layer {i}")
        return h[0] if squeeze else h

    def encode_images(self, crops: torch.Tensor) -> torch.Tensor:
        """[M, 1, S, S] or [M, S, S, 1] crops -> [M, image_encoding_size]."""
        if crops.dim() == 4 and crops.shape[-1] == 1 and crops.shape[1] != 1:
            crops = crops.permute(0, 3, 1, 2)
        if crops.shape[0] == 0:
            return crops.new_zeros(0, self.config.image_encoding_size)
        out = self.image_encoder(crops)
        if not torch.isfinite(out).all():
            raise NumericFault("non-finite activation in image encoder")
        return out

    def scatter_images(self, image_enc: torch.Tensor, batch: Batch) -> torch.Tensor:
        """Place per-crop encodings on their rows; app and padding rows get zeros."""
        b, r = batch.row_mask.shape
        rows = image_enc.new_zeros(b, r, image_enc.shape[-1])
        rows = rows.index_put((batch.crop_batch, batch.crop_rows), image_enc)
        return rows

    @staticmethod
    def fuse(struct_enc: torch.Tensor | None, image_enc: torch.Tensor | None) -> torch.Tensor:
        if struct_enc is None:
            return image_enc
        if image_enc is None:
            return struct_enc
        if struct_enc.shape[:-1] != image_enc.shape[:-1]:
            raise ValueError(f"row mismatch: structural {tuple(struct_enc.shape)} vs image {tuple(image_enc.shape)}")
        return torch.cat([struct_enc, image_enc], dim=-1)

    def encode(self, batch: Batch) -> tuple[torch.Tensor, torch.Tensor]:
        """Fused per-row encodings [B, R, fused_size] and the row mask."""
        c = self.config
        row_mask = batch.row_mask
        if not c.use_layout:
            # pixel-only: the decoder sees element image rows only
            row_mask = batch.row_mask & (batch.source[..., 0] > 0)
            row_mask = row_mask | (~row_mask.any(dim=1, keepdim=True) & (batch.source[..., 1] > 0))
        struct = self.encode_structure(self.embed_elements(batch), row_mask) if c.use_layout else None
        images = self.scatter_images(self.encode_images(batch.crops), batch) if c.use_pixels else None
        return self.fuse(struct, images), row_mask

    # -- decoder side -----------------------------------------------------

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        return self.word_projection(self.word_embedding(ids))

    def decode_logits(self, fused: torch.Tensor, prefix: torch.Tensor, row_mask: torch.Tensor | None = None) -> torch.Tensor:
        """Causal decoder logits [B, L, V] for token prefixes [B, L]."""
        squeeze = fused.dim() == 2
        if squeeze:
            fused, prefix = fused[None], prefix[None] if prefix.dim() == 1 else prefix
            row_mask = None if row_mask is None else row_mask[None]
        length = prefix.shape[1]
        if length > self.config.max_decode_len:
            raise LengthError(f"prefix length {length} exceeds max_decode_len {self.config.max_decode_len}")
        memory = self.memory_projection(fused)
        h = self.embed_tokens(prefix) + self.pos_table[:length].to(memory.dtype)
        h = self.decoder_dropout(h)
        mask = causal_mask(length, device=prefix.device)
        padding = None if row_mask is None else ~row_mask
        for i, layer in enumerate(self.decoder_layers):
            h = layer(h, memory, tgt_mask=mask, memory_key_padding_mask=padding)
            if not torch.isfinite(h).all():
                raise NumericFault(f"non-finite activation in decoder layer {i}")
        logits = self.output(h)
        return logits[0] if squeeze else logits

    def forward(self, batch: Batch, prefix: torch.Tensor) -> torch.Tensor:
        fused, row_mask = self.encode(batch)
        return self.decode_logits(fused, prefix, row_mask)


def sequence_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean over screens of each screen's mean token cross-entropy.

    PAD targets are excluded, so each screen is averaged over its own
    summary length.
    """
    if logits.dim() == 2:
        logits, target = logits[None], target[None]
    vocab = logits.shape[-1]
    if (target >= vocab).any() or (target < 0).any():
        raise IndexError(f"target index out of range for vocabulary of size {vocab}")
    ce = F.cross_entropy(logits.transpose(1, 2), target, ignore_index=PAD_ID, reduction="none")
    valid = (target != PAD_ID).to(ce.dtype)
    counts = valid.sum(dim=1)
    per_screen = (ce * valid).sum(dim=1) / counts.clamp(min=1)
    has_tokens = counts > 0
    return per_screen[has_tokens].mean()


def token_accuracy(logits: torch.Tensor, target: torch.Tensor) -> float:
    valid = target != PAD_ID
    correct = (logits.argmax(dim=-1) == target) & valid
    return float(correct.sum()) / max(int(valid.sum()), 1)


def init_word_embeddings(model: ScreenSummarizer, vocab: Vocabulary, table: EmbeddingTable | None) -> int:
    """Copy pre-trained vectors into the word-embedding rows; returns how many
    rows were initialized from the table."""
    if table is None:
        return 0
    if table.dimension != model.config.word_dim:
        raise ConfigError(f"word vectors have dimension {table.dimension}, model expects {model.config.word_dim}")
    hits = 0
    with torch.no_grad():
        for i, tok in enumerate(vocab.itos):
            vec = table.get(tok)
            if vec is not None:
                model.word_embedding.weight[i] = torch.from_numpy(np.asarray(vec))
                hits += 1
    return hits


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, model: ScreenSummarizer, metadata: dict | None = None) -> None:
    state = {k: v.detach().cpu() for k, v in model.state_dict().items()}
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "model_config": model.config.to_dict(),
            "shapes": {k: list(v.shape) for k, v in state.items()},
            "tensors": state,
            "metadata": metadata or {},
        },
        path,
    )


def load_checkpoint(path, expected_config: ModelConfig | None = None) -> tuple[ScreenSummarizer, dict]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a model checkpoint")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {blob.get('version')}")
    config = ModelConfig.from_dict(blob["model_config"])
    if expected_config is not None and expected_config != config:
        diff = {k: (v, getattr(expected_config, k)) for k, v in config.to_dict().items()
                if expected_config.to_dict().get(k) != v}
        raise CheckpointError(f"checkpoint config differs from expected: {diff}")
    model = ScreenSummarizer(config)
    expected_shapes = {k: list(v.shape) for k, v in model.state_dict().items()}
    if expected_shapes != blob["shapes"]:
        raise CheckpointError("checkpoint tensor shapes do not match its own config")
    model.load_state_dict(blob["tensors"])
    model.eval()
    return model, blob.get("metadata", {})
