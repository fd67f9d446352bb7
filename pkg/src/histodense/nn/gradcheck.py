"""Central finite-difference gradient checking.

The numeric side always evaluates the function on float64 copies of the
point, so the comparison measures backward-pass logic rather than the
float32 forward's own quantization. Relative error uses a scale floor so
coordinates far below the gradient's magnitude are held to an absolute
bar instead of blowing up the ratio.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

Scalar = Callable[[np.ndarray], float]


def numeric_gradient(f: Scalar, x: np.ndarray, h: float = 1e-3) -> np.ndarray:
    """Central-difference gradient of scalar f at x, elementwise."""
    x64 = x.astype(np.float64)
    grad = np.zeros_like(x64)
    it = np.nditer(x64, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        grad[idx] = numeric_gradient_at(f, x64, idx, h)
    return grad


def numeric_gradient_at(f: Scalar, x: np.ndarray, idx, h: float = 1e-3) -> float:
    x64 = x.astype(np.float64)
    orig = x64[idx]
    x64[idx] = orig + h
    f_plus = f(x64)
    x64[idx] = orig - h
    f_minus = f(x64)
    x64[idx] = orig
    return (f_plus - f_minus) / (2.0 * h)


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray,
                  floor: float | None = None) -> float:
    """Max elementwise relative error with a magnitude floor.

    The floor defaults to 1% of the largest gradient magnitude, so
    near-zero coordinates are compared on an absolute scale.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0.0:
        return float(np.abs(a - n).max(initial=0.0))
    if floor is None:
        floor = 1e-2 * scale
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float((np.abs(a - n) / denom).max())


def rel_error_at(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def sample_coords(shape: tuple[int, ...], count: int,
                  rng: np.random.Generator) -> list[tuple[int, ...]]:
    """Up to count distinct random multi-indices into an array of `shape`."""
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(i, shape) for i in np.sort(flat)]
