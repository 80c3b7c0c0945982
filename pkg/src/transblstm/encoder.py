"""Encoder blocks (TRANS, TRANS-BLSTM-1/2, pure BLSTM) and the N-layer stack."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

import numpy as np

from .autodiff import Tensor, ops
from .errors import ConfigError
from .nn import (
    BLSTM,
    Dropout,
    Embeddings,
    FeedForward,
    LayerNorm,
    Module,
    MultiHeadAttention,
)

BLSTM_MODES = ("none", "replace_ffn", "parallel_sum", "pure_blstm")
DECODER_MODES = ("linear", "blstm2")
SUM_POINTS = ("output", "attention")


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 2
    hidden: int = 16
    num_heads: int = 2
    ff_width: int = 64
    blstm_mode: str = "none"
    blstm_hidden: int = 16
    decoder_mode: str = "linear"
    vocab_size: int = 100
    max_positions: int = 32
    dropout: float = 0.1
    # where TRANS-BLSTM-2 adds its branch: before the final LayerNorm
    # ("output") or before the post-attention LayerNorm ("attention")
    sum_point: str = "output"
    layer_norm_eps: float = 1e-12
    init_std: float = 0.02

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.blstm_mode not in BLSTM_MODES:
            raise ConfigError(f"blstm_mode must be one of {BLSTM_MODES}, got {self.blstm_mode!r}")
        if self.decoder_mode not in DECODER_MODES:
            raise ConfigError(f"decoder_mode must be one of {DECODER_MODES}, got {self.decoder_mode!r}")
        if self.sum_point not in SUM_POINTS:
            raise ConfigError(f"sum_point must be one of {SUM_POINTS}, got {self.sum_point!r}")
        for field in ("hidden", "num_heads", "ff_width", "vocab_size", "max_positions", "blstm_hidden"):
            if getattr(self, field) <= 0:
                raise ConfigError(f"{field} must be positive")
        if self.num_layers < 0:
            raise ConfigError("num_layers must be non-negative")
        if self.blstm_mode != "pure_blstm" and self.hidden % self.num_heads:
            raise ConfigError(f"{self.num_heads} heads do not divide hidden size {self.hidden}")
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must leave room for the reserved tokens")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def uses_blstm(self) -> bool:
        return self.blstm_mode != "none"

    @property
    def has_projection(self) -> bool:
        """Whether each encoder BLSTM carries a 2H_b -> H projection."""
        return self.uses_blstm and 2 * self.blstm_hidden != self.hidden

    def replace(self, **changes: Any) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)


PRESETS: dict[str, dict[str, Any]] = {
    "toy": dict(num_layers=2, hidden=16, num_heads=2, ff_width=64, vocab_size=100, max_positions=32),
    "small": dict(num_layers=4, hidden=128, num_heads=4, ff_width=512, vocab_size=2000, max_positions=128),
    "base": dict(num_layers=12, hidden=768, num_heads=12, ff_width=3072, vocab_size=30000, max_positions=256),
    "large": dict(num_layers=24, hidden=1024, num_heads=16, ff_width=4096, vocab_size=30000, max_positions=256),
}


def preset(name: str, blstm_width: str = "full", **overrides: Any) -> ModelConfig:
    """Build a preset config. ``blstm_width`` is ``"full"`` (H) or ``"half"`` (H/2)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    fields = dict(PRESETS[name])
    hidden = overrides.get("hidden", fields["hidden"])
    if "blstm_hidden" not in overrides:
        fields["blstm_hidden"] = blstm_hidden_for(hidden, blstm_width)
    fields.update(overrides)
    return ModelConfig(**fields)


def blstm_hidden_for(hidden: int, width: str) -> int:
    if width == "full":
        return hidden
    if width == "half":
        if hidden % 2:
            raise ConfigError(f"half-width BLSTM needs an even hidden size, got {hidden}")
        return hidden // 2
    raise ConfigError(f"BLSTM width must be 'full' or 'half', got {width!r}")


class TransformerBlock(Module):
    """``y = LN(x + Attn(x))``; ``out = LN(y + FFN(y))``."""

    def __init__(self, cfg: ModelConfig):
        self.attention = MultiHeadAttention(cfg.hidden, cfg.num_heads, cfg.dropout)
        self.attention_norm = LayerNorm(cfg.hidden, cfg.layer_norm_eps)
        self.ffn = FeedForward(cfg.hidden, cfg.ff_width)
        self.output_norm = LayerNorm(cfg.hidden, cfg.layer_norm_eps)
        self.drop = Dropout(cfg.dropout)

    def attend(self, x: Tensor, pad_mask) -> Tensor:
        return self.attention_norm(x + self.drop(self.attention(x, pad_mask)))

    def forward(self, x: Tensor, pad_mask=None) -> Tensor:
        y = self.attend(x, pad_mask)
        return self.output_norm(y + self.drop(self.ffn(y)))


class TransBlstm1Block(TransformerBlock):
    """The feed-forward sublayer is replaced by a BLSTM (plus projection)."""

    def __init__(self, cfg: ModelConfig):
        self.attention = MultiHeadAttention(cfg.hidden, cfg.num_heads, cfg.dropout)
        self.attention_norm = LayerNorm(cfg.hidden, cfg.layer_norm_eps)
        self.blstm = BLSTM(cfg.hidden, cfg.blstm_hidden)
        self.output_norm = LayerNorm(cfg.hidden, cfg.layer_norm_eps)
        self.drop = Dropout(cfg.dropout)

    def forward(self, x: Tensor, pad_mask=None) -> Tensor:
        y = self.attend(x, pad_mask)
        return self.output_norm(y + self.drop(self.blstm(y, pad_mask)))


class TransBlstm2Block(TransformerBlock):
    """A parallel BLSTM reads the block input; its output joins a residual sum.

    With ``sum_point="output"`` (default) the branch is added before the
    final LayerNorm: ``LN(y + FFN(y) + BLSTM(x))``. With ``"attention"`` it
    is added before the post-attention LayerNorm instead.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__(cfg)
        self.blstm = BLSTM(cfg.hidden, cfg.blstm_hidden)
        self.sum_point = cfg.sum_point

    def forward(self, x: Tensor, pad_mask=None) -> Tensor:
        branch = self.blstm(x, pad_mask)
        if self.sum_point == "attention":
            y = self.attention_norm(x + self.drop(self.attention(x, pad_mask)) + branch)
            return self.output_norm(y + self.drop(self.ffn(y)))
        y = self.attend(x, pad_mask)
        return self.output_norm(y + self.drop(self.ffn(y)) + branch)


class PureBlstmLayer(Module):
    """``LN(x + BLSTM(x))``; one layer of the attention-free baseline."""

    def __init__(self, cfg: ModelConfig):
        self.blstm = BLSTM(cfg.hidden, cfg.blstm_hidden)
        self.output_norm = LayerNorm(cfg.hidden, cfg.layer_norm_eps)
        self.drop = Dropout(cfg.dropout)

    def forward(self, x: Tensor, pad_mask=None) -> Tensor:
        return self.output_norm(x + self.drop(self.blstm(x, pad_mask)))


BLOCK_TYPES = {
    "none": TransformerBlock,
    "replace_ffn": TransBlstm1Block,
    "parallel_sum": TransBlstm2Block,
    "pure_blstm": PureBlstmLayer,
}


def make_block(cfg: ModelConfig) -> Module:
    return BLOCK_TYPES[cfg.blstm_mode](cfg)


class Encoder(Module):
    """Embeddings followed by ``num_layers`` blocks of the configured type."""

    def __init__(self, cfg: ModelConfig):
        self.config = cfg
        self.embeddings = Embeddings(cfg.vocab_size, cfg.max_positions, cfg.hidden,
                                     cfg.dropout, cfg.layer_norm_eps)
        self.layers = [make_block(cfg) for _ in range(cfg.num_layers)]

    def forward(self, token_ids, segment_ids, pad_mask=None) -> Tensor:
        """Hidden states ``[B, S, H]``, or ``[S, H]`` for one unbatched sequence."""
        token_ids = np.asarray(token_ids)
        single = token_ids.ndim == 1
        if single:
            token_ids = token_ids[None]
            segment_ids = np.asarray(segment_ids)[None]
            if pad_mask is not None:
                pad_mask = np.asarray(pad_mask)[None]
        x = self.embeddings(token_ids, segment_ids)
        for layer in self.layers:
            x = layer(x, pad_mask)
        return ops.reshape(x, x.shape[1:]) if single else x


def encoder_stack_forward(token_ids, segment_ids, encoder: Encoder, pad_mask=None) -> Tensor:
    return encoder(token_ids, segment_ids, pad_mask)
