"""Finite-difference gradient verification.

The numeric side only ever calls the forward function, so it stays
independent of the backward rules it is checking. Relative error uses a
floored denominator: below the floor the comparison is effectively
absolute, which is where central-difference noise (around ``eps/step``)
lives for near-zero gradients.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor
from .errors import ContractError

DEFAULT_STEP = 1e-5
DEFAULT_FLOOR = 1e-2


def numeric_gradient(f: Callable[[], Tensor], leaf: Tensor, step: float = DEFAULT_STEP) -> np.ndarray:
    """Central finite differences of the scalar ``f()`` w.r.t. ``leaf.data``."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f().item()
        flat[i] = keep - step
        down = f().item()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ContractError(f"gradient shapes differ: {analytic.shape} vs {numeric.shape}")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    f: Callable[[], Tensor],
    leaves: Sequence[Tensor] | dict[str, Tensor],
    step: float = DEFAULT_STEP,
    floor: float = DEFAULT_FLOOR,
) -> dict[str, float]:
    """Compare backward() gradients of ``f()`` against finite differences.

    Returns the max relative error per leaf. ``f`` must rebuild its tape
    from the leaves' current data on every call.
    """
    if isinstance(leaves, dict):
        named = list(leaves.items())
    else:
        named = [(f"leaf{i}", leaf) for i, leaf in enumerate(leaves)]
    for _, leaf in named:
        leaf.zero_grad()
    out = f()
    out.backward()
    analytic = {name: (np.zeros_like(leaf.data) if leaf.grad is None else leaf.grad.copy())
                for name, leaf in named}
    errors = {}
    for name, leaf in named:
        numeric = numeric_gradient(f, leaf, step=step)
        errors[name] = relative_error(analytic[name], numeric, floor=floor)
        leaf.zero_grad()
    return errors
