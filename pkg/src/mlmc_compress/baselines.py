"""Reference compressors: Rand-k, QSGD, direct (biased) Top-k and EF21-SGDM."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .compressors import VALUE_BITS, magnitude_order
from .core import Rng, as_gradient, ceil_log2, norms


def rand_k(v, k: int, rng: Rng) -> np.ndarray:
    """Keep ``k`` uniformly chosen coordinates scaled by ``d/k`` (unbiased)."""
    v = as_gradient(v)
    d = v.size
    if not 1 <= k <= d:
        raise ValueError(f"k={k} outside [1, {d}]")
    keep = rng.generator.choice(d, size=k, replace=False)
    out = np.zeros(d)
    out[keep] = v[keep] * (d / k)
    return out


def rand_k_bits(d: int, k: int) -> int:
    # indices are regenerated by the server from a shared 64-bit seed
    return k * VALUE_BITS + VALUE_BITS


def rand_k_variance(v, k: int) -> float:
    """``E||C(v) - v||^2 = (d/k - 1) ||v||^2``."""
    v = as_gradient(v)
    return (v.size / k - 1.0) * norms(v)[1]


def qsgd_quantize(v, levels: int, rng: Rng):
    """Unbiased stochastic rounding of ``|v_j| / ||v||`` onto ``levels`` grid points.

    The grid is ``{0, 1/(levels-1), ..., 1}``; each entry rounds up with
    probability equal to its distance from the lower grid point. Returns
    ``(quantized, bits)``; bits are one sign bit plus ``ceil(log2 levels)``
    magnitude bits per entry and a 64-bit norm.
    """
    v = as_gradient(v)
    if levels < 2:
        raise ValueError("QSGD needs at least 2 grid points")
    d = v.size
    norm = float(np.sqrt(norms(v)[1]))
    if norm == 0.0:
        return np.zeros(d), VALUE_BITS
    s = levels - 1
    u = np.abs(v) / norm * s
    lo = np.floor(u)
    up = rng.random(d) < (u - lo)
    out = np.sign(v) * norm * (lo + up) / s
    return out, qsgd_bits(d, levels)


def qsgd_bits(d: int, levels: int) -> int:
    return d * (ceil_log2(levels) + 1) + VALUE_BITS


def top_k(v, k: int) -> np.ndarray:
    """Biased Top-k used directly, without any correction."""
    v = as_gradient(v)
    if not 1 <= k <= v.size:
        raise ValueError(f"k={k} outside [1, {v.size}]")
    out = np.zeros(v.size)
    keep = magnitude_order(v)[:k]
    out[keep] = v[keep]
    return out


def top_k_bits(d: int, k: int) -> int:
    return k * (VALUE_BITS + ceil_log2(d))


@dataclass
class ErrorFeedbackState:
    """Per-worker EF21-SGDM state.

    ``h`` is the worker's copy of what the server holds for it, ``m`` the
    momentum estimate. ``error`` (``m - h``) is what compression still owes.
    """

    h: np.ndarray
    m: np.ndarray
    beta: float = 0.9

    @classmethod
    def zeros(cls, d: int, beta: float = 0.9) -> "ErrorFeedbackState":
        return cls(np.zeros(d), np.zeros(d), beta)

    @property
    def error(self) -> np.ndarray:
        return self.m - self.h


def ef_momentum_step(
    state: ErrorFeedbackState,
    gradient,
    compress: Callable[[np.ndarray], tuple[np.ndarray, int]],
    lossless: bool = False,
):
    """One EF21-SGDM worker step; returns ``(new_state, message, bits)``.

    ``m <- (1 - beta) m + beta v``; the message is ``C(m - h)`` and
    ``h <- h + C(m - h)``. A lossless compressor sets ``h = m`` directly.
    """
    v = as_gradient(gradient)
    m = (1.0 - state.beta) * state.m + state.beta * v
    msg, bits = compress(m - state.h)
    h = m.copy() if lossless else state.h + msg
    return ErrorFeedbackState(h, m, state.beta), msg, bits
