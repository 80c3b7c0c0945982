"""Closed-form parameter counts per configuration.

These formulas are written independently of the layer classes, so comparing
them against an instantiated model's element count checks both.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .encoder import PRESETS, ModelConfig
from .nn import Module

# Reported model sizes, in millions, keyed by (preset, variant).
REFERENCE_TOTALS_M = {
    ("base", "trans"): 108,
    ("base", "trans-blstm-small"): 152,
    ("base", "trans-blstm"): 237,
    ("large", "trans"): 334,
    ("large", "trans-blstm-small"): 487,
    ("large", "trans-blstm"): 789,
}


def linear_params(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def layer_norm_params(width: int) -> int:
    return 2 * width


def lstm_direction_params(n_in: int, n_hidden: int) -> int:
    return 4 * (n_in * n_hidden + n_hidden * n_hidden + n_hidden)


def blstm_params(n_in: int, n_hidden: int) -> int:
    return 2 * lstm_direction_params(n_in, n_hidden)


@dataclass
class ParamReport:
    config: dict[str, Any]
    embeddings: int
    attention: int          # per layer, including both sublayer LayerNorms
    ffn: int                # per layer
    blstm: int              # per layer
    projection: int         # per layer
    layer_norm: int         # per layer LayerNorms not folded into attention
    num_layers: int
    heads: int              # MLM transform + bias, pooler, NSP classifier
    components: dict[str, int] = field(default_factory=dict)

    @property
    def per_layer(self) -> int:
        return self.attention + self.ffn + self.blstm + self.projection + self.layer_norm

    @property
    def encoder_total(self) -> int:
        return self.embeddings + self.num_layers * self.per_layer

    @property
    def total(self) -> int:
        return self.encoder_total + self.heads

    def rows(self) -> list[tuple[str, int]]:
        n = self.num_layers
        return [
            ("embeddings", self.embeddings),
            ("attention", n * self.attention),
            ("ffn", n * self.ffn),
            ("blstm", n * self.blstm),
            ("projection", n * self.projection),
            ("layer_norm", n * self.layer_norm),
            ("heads", self.heads),
            ("encoder_total", self.encoder_total),
            ("total", self.total),
        ]

    def to_record(self) -> dict[str, Any]:
        rec = {k: v for k, v in self.rows()}
        rec["per_layer"] = {
            "attention": self.attention, "ffn": self.ffn, "blstm": self.blstm,
            "projection": self.projection, "layer_norm": self.layer_norm,
        }
        rec["config"] = self.config
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    def to_table(self) -> str:
        width = max(len(k) for k, _ in self.rows())
        lines = [f"{'component':<{width}}  {'parameters':>14}  {'millions':>9}"]
        for name, count in self.rows():
            lines.append(f"{name:<{width}}  {count:>14,d}  {count / 1e6:>9.2f}")
        return "\n".join(lines)


def count_params_analytic(cfg: ModelConfig) -> ParamReport:
    """Analytic counts for a pretraining model (encoder + MLM/NSP heads)."""
    cfg.validate()
    h, v, p = cfg.hidden, cfg.vocab_size, cfg.max_positions
    embeddings = v * h + p * h + 2 * h + layer_norm_params(h)
    attention = ffn = blstm = proj = extra_ln = 0
    if cfg.blstm_mode != "pure_blstm":
        attention = 4 * linear_params(h, h) + 2 * layer_norm_params(h)
    else:
        extra_ln = layer_norm_params(h)
    if cfg.blstm_mode in ("none", "parallel_sum"):
        ffn = linear_params(h, cfg.ff_width) + linear_params(cfg.ff_width, h)
    if cfg.uses_blstm:
        blstm = blstm_params(h, cfg.blstm_hidden)
        if cfg.has_projection:
            proj = linear_params(2 * cfg.blstm_hidden, h)
    # tied output projection: only the transform, its LayerNorm and the bias
    mlm = linear_params(h, h) + layer_norm_params(h) + v
    nsp = linear_params(h, h) + linear_params(h, 2)
    return ParamReport(
        config=cfg.to_dict(), embeddings=embeddings, attention=attention, ffn=ffn,
        blstm=blstm, projection=proj, layer_norm=extra_ln, num_layers=cfg.num_layers,
        heads=mlm + nsp, components={"mlm_head": mlm, "nsp_head": nsp},
    )


def count_params_model(model: Module) -> int:
    """Element count of all trainable tensors, shared tensors counted once."""
    return sum(p.size for p in model.parameters())


def reference_ratio_check(base: dict[str, int], large: dict[str, int]) -> dict[str, float]:
    """TRANS-BLSTM / TRANS size ratios, computed and as reported."""
    return {
        "base_computed": base["trans-blstm"] / base["trans"],
        "base_reported": REFERENCE_TOTALS_M[("base", "trans-blstm")] / REFERENCE_TOTALS_M[("base", "trans")],
        "large_computed": large["trans-blstm"] / large["trans"],
        "large_reported": REFERENCE_TOTALS_M[("large", "trans-blstm")] / REFERENCE_TOTALS_M[("large", "trans")],
    }


def reported_configs() -> dict[str, ModelConfig]:
    """The six reported model sizes, keyed ``"<preset>/<variant>"``."""
    configs = {}
    for size in ("base", "large"):
        base = ModelConfig(**PRESETS[size], blstm_hidden=PRESETS[size]["hidden"])
        configs[f"{size}/trans"] = base
        configs[f"{size}/trans-blstm-small"] = base.replace(blstm_mode="parallel_sum",
                                                            blstm_hidden=base.hidden // 2)
        configs[f"{size}/trans-blstm"] = base.replace(blstm_mode="parallel_sum")
    return configs
