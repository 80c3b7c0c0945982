"""Ready-made finite-difference checks for whole encoder blocks."""

from __future__ import annotations

import numpy as np

from .autodiff import GradCheckResult, Tensor, gradcheck, ops, precision
from .encoder import ModelConfig, make_block
from .nn import Module


def perturb_parameters(module: Module, rng: np.random.Generator, scale: float = 0.5) -> None:
    """Give every parameter generic random values.

    Zero biases and unit gains are special points where some gradient bugs
    cancel out, so checks should not run at the initial values.
    """
    for _, p in module.named_parameters():
        noise = rng.normal(size=p.shape)
        if p.kind == "gamma":
            p.data[...] = 1.0 + 0.1 * noise
        elif p.kind in ("bias", "beta"):
            p.data[...] = 0.1 * noise
        else:
            p.data[...] = scale * noise / np.sqrt(max(1, p.shape[0]))


def block_gradcheck(cfg: ModelConfig, batch: int = 2, seq_len: int = 4, seed: int = 0,
                    max_coords: int | None = 64, h: float = 1e-5) -> GradCheckResult:
    """Check input and parameter gradients of one block in 64-bit precision.

    The loss is a fixed random projection of the block output. Dropout is
    off, and when there is more than one row the last position of the second
    row is padding so the masking paths are exercised as well.
    """
    with precision("float64"):
        block = make_block(cfg.replace(dropout=0.0))
        rng = np.random.default_rng([seed, 3])
        perturb_parameters(block, rng)
        block.eval()
        x = Tensor(rng.normal(size=(batch, seq_len, cfg.hidden)), requires_grad=True)
        proj = rng.normal(size=(batch, seq_len, cfg.hidden))
        pad = np.ones((batch, seq_len), dtype=bool)
        if batch > 1 and seq_len > 1:
            pad[1, -1] = False
        params = {"input": x, **dict(block.named_parameters())}

        def loss():
            return ops.sum(block(x, pad) * proj)

        return gradcheck(loss, params, h=h, max_coords=max_coords, seed=seed)
