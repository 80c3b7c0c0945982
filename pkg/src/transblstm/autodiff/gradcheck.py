"""Central finite-difference gradient checking.

The numerical side only ever calls the forward function; it never touches
the tape, so it is an independent oracle for the backward rules.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward, no_record


def numerical_grad(fn: Callable[[], Tensor], t: Tensor, h: float = 1e-5,
                   coords: Sequence[int] | None = None) -> np.ndarray:
    """d fn() / d t by central differences, perturbing ``t.data`` in place.

    When ``coords`` is given only those flat positions are evaluated; the
    other entries of the result are NaN.
    """
    flat = t.data.reshape(-1)
    out = np.full(flat.shape, np.nan) if coords is not None else np.empty(flat.shape)
    idx = range(flat.size) if coords is None else coords
    with no_record():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2 * h)
    return out.reshape(t.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)``.

    The floor keeps gradients that are exactly zero in theory (a key bias
    under softmax, say) from turning finite-difference round-off into a
    relative error of one.
    """
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    keep = ~np.isnan(n)
    a, n = a[keep], n[keep]
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


@dataclass
class GradCheckResult:
    errors: dict[str, float]

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None


def gradcheck(fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
              max_coords: int | None = None, seed: int = 0) -> GradCheckResult:
    """Compare tape gradients of the scalar ``fn()`` with finite differences.

    ``params`` maps names to leaf tensors that ``fn`` reads. Run this in
    64-bit precision; 32-bit differences are too noisy to be meaningful.
    With ``max_coords`` a random subset of each tensor's entries is checked.
    """
    for p in params.values():
        p.grad = None
        p.requires_grad = True
    with Tape() as tape:
        loss = fn()
    backward(loss, tape)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, p in params.items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        coords = None
        if max_coords is not None and p.size > max_coords:
            coords = rng.choice(p.size, size=max_coords, replace=False)
        numeric = numerical_grad(fn, p, h=h, coords=coords)
        errors[name] = relative_error(analytic, numeric)
    return GradCheckResult(errors)
