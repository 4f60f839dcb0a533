"""Multilevel Monte Carlo estimator on top of a multilevel compressor.

Given a level distribution ``p``, a worker samples ``l ~ p`` and sends the
residual ``C^l(v) - C^{l-1}(v)``; the receiver forms

    g = C^0(v) + (C^l(v) - C^{l-1}(v)) / p^l

which is unbiased for ``v`` because the residuals telescope to
``C^L(v) - C^0(v)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .compressors import (
    FIXED_POINT_LEVELS,
    FLOAT_MANTISSA_BITS,
    FixedPoint,
    FloatingPoint,
    MultilevelCompressor,
    SegmentedTopK,
    alpha_profile,
)
from .core import ResidualMessage, Rng, ZeroMessage, as_gradient, norms, sample_categorical


@dataclass(frozen=True)
class LevelDistribution:
    """Probabilities ``p^1..p^L`` (stored 0-based)."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ValueError("level distribution must be a non-empty vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError("level probabilities must be finite and non-negative")
        if abs(math.fsum(p.tolist()) - 1.0) > 1e-12:
            raise ValueError(f"level probabilities sum to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @property
    def num_levels(self) -> int:
        return int(self.probs.size)

    def prob(self, level: int) -> float:
        return float(self.probs[level - 1])

    @classmethod
    def from_weights(cls, weights) -> "LevelDistribution":
        w = np.asarray(weights, dtype=np.float64)
        return cls(w / math.fsum(w.tolist()))


@dataclass(frozen=True)
class MlmcEstimate:
    estimate: np.ndarray
    sampled_level: int
    prob_used: float
    message: ResidualMessage


@dataclass(frozen=True)
class VarianceReport:
    analytic_second_moment: float
    analytic_comp_variance: float
    omega_hat: float
    empirical_second_moment: Optional[float] = None
    empirical_stderr: Optional[float] = None


# distributions ---------------------------------------------------------------


def _geometric(L: int) -> LevelDistribution:
    levels = np.arange(1, L + 1)
    return LevelDistribution(np.ldexp(1.0, -levels) / (1.0 - 2.0**-L))


def fixed_point_distribution() -> LevelDistribution:
    """``p^l = 2^-l / (1 - 2^-63)``, minimizing the bit-pattern worst-case variance."""
    return _geometric(FIXED_POINT_LEVELS)


def floating_point_distribution() -> LevelDistribution:
    """``p^l = 2^-l / (1 - 2^-52)``."""
    return _geometric(FLOAT_MANTISSA_BITS)


def uniform_distribution(L: int) -> LevelDistribution:
    return LevelDistribution(np.full(L, 1.0 / L))


def static_distribution(desc: MultilevelCompressor, d: int) -> LevelDistribution:
    """Non-adaptive distribution used by the static MLMC loop.

    Bit-wise compressors get their optimal geometric law; the others (Top-k,
    s-Top-k, RTN) have no data-independent optimum and use the uniform law.
    """
    if isinstance(desc, FixedPoint):
        return fixed_point_distribution()
    if isinstance(desc, FloatingPoint):
        return floating_point_distribution()
    return uniform_distribution(desc.num_levels(d))


def adaptive_distribution(desc: MultilevelCompressor, v, deltas=None) -> LevelDistribution:
    """Variance-optimal per-vector law ``p^l = Delta^l / sum(Delta)``.

    Levels whose residual is exactly zero get probability 0. If every residual
    is zero but ``v`` is not (a float whose entries are powers of two), all
    mass goes to level 1.
    """
    v = as_gradient(v)
    if not np.any(v):
        raise ValueError("adaptive distribution undefined for the zero vector")
    delta = desc.residual_norms(v) if deltas is None else np.asarray(deltas, dtype=np.float64)
    total = math.fsum(delta.tolist())
    if total == 0.0:
        point = np.zeros(delta.size)
        point[0] = 1.0
        return LevelDistribution(point)
    return LevelDistribution(delta / total)


def adaptive_distribution_alpha(desc: SegmentedTopK, v) -> LevelDistribution:
    """Same law written through retained-energy fractions ``alpha^l`` (s-Top-k only)."""
    alpha = alpha_profile(desc, v)
    w = np.sqrt(np.maximum(np.diff(alpha), 0.0))
    return LevelDistribution.from_weights(w)


def check_support(dist: LevelDistribution, deltas: np.ndarray) -> None:
    if dist.num_levels != deltas.size:
        raise ValueError(f"distribution has {dist.num_levels} levels, compressor has {deltas.size}")
    bad = (dist.probs == 0) & (deltas > 0)
    if np.any(bad):
        raise ValueError(f"zero probability on levels with nonzero residual: {np.flatnonzero(bad) + 1}")


# estimator -------------------------------------------------------------------


def zero_message(desc: MultilevelCompressor, d: int) -> ResidualMessage:
    payload = ZeroMessage(d)
    return ResidualMessage(payload, level=0, prob=1.0, bit_cost=desc.encoded_bits(payload, d))


def estimate(desc: MultilevelCompressor, v, dist: LevelDistribution, rng: Rng) -> MlmcEstimate:
    v = as_gradient(v)
    L = desc.num_levels(v.size)
    if dist.num_levels != L:
        raise ValueError(f"distribution has {dist.num_levels} levels, compressor has {L}")
    if not np.any(v):
        return MlmcEstimate(np.zeros(v.size), 0, 1.0, zero_message(desc, v.size))
    level = sample_categorical(rng, dist.probs)
    p = dist.prob(level)
    payload = desc.residual(v, level)
    g = desc.base(v) + payload.densify() / p
    msg = ResidualMessage(payload, level, p, desc.encoded_bits(payload, v.size))
    return MlmcEstimate(g, level, p, msg)


def adaptive_estimate(desc: MultilevelCompressor, v, rng: Rng) -> MlmcEstimate:
    """Estimate with the per-vector optimal law; zero vectors send the zero message."""
    v = as_gradient(v)
    if not np.any(v):
        return MlmcEstimate(np.zeros(v.size), 0, 1.0, zero_message(desc, v.size))
    return estimate(desc, v, adaptive_distribution(desc, v), rng)


def enumerate_estimates(desc: MultilevelCompressor, v, dist: LevelDistribution):
    """All outcomes of the estimator: ``(probs, G)`` with ``G[l-1]`` the level-``l`` estimate.

    Levels of zero probability are dropped. Built from the compressor's own
    ``compress`` so it is independent of the residual payload code.
    """
    v = as_gradient(v)
    L = desc.num_levels(v.size)
    if dist.num_levels != L:
        raise ValueError(f"distribution has {dist.num_levels} levels, compressor has {L}")
    base = desc.compress(v, 0)
    levels = [l for l in range(1, L + 1) if dist.prob(l) > 0]
    prev = {l: desc.compress(v, l - 1) for l in levels}
    G = np.stack([base + (desc.compress(v, l) - prev[l]) / dist.prob(l) for l in levels])
    return dist.probs[np.array(levels) - 1], G


def expected_estimate(desc: MultilevelCompressor, v, dist: LevelDistribution) -> np.ndarray:
    """Exact ``E[g]`` by full enumeration over levels."""
    probs, G = enumerate_estimates(desc, v, dist)
    return np.array([math.fsum(col) for col in (probs[:, None] * G).T.tolist()])


def sample_levels(dist: LevelDistribution, n: int, rng: Rng) -> np.ndarray:
    """``n`` i.i.d. levels by inverse CDF (vectorized form of ``sample_categorical``)."""
    cdf = np.cumsum(dist.probs)
    idx = np.searchsorted(cdf, rng.random(n), side="right")
    last = int(np.flatnonzero(dist.probs > 0)[-1])
    return np.minimum(idx, last) + 1


def empirical_second_moment(desc: MultilevelCompressor, v, dist: LevelDistribution, n: int, rng: Rng):
    """Monte Carlo ``E||g - C^0(v)||^2`` from ``n`` draws; returns ``(mean, stderr)``.

    ``g`` is deterministic given the level, so each distinct sampled level is
    encoded once through ``residual`` and weighted by its count.
    """
    v = as_gradient(v)
    levels = sample_levels(dist, n, rng)
    uniq, counts = np.unique(levels, return_counts=True)
    sq = {}
    for l in uniq.tolist():
        r = desc.residual(v, l).densify() / dist.prob(l)
        sq[l] = float(np.dot(r, r))
    values = np.array([sq[l] for l in uniq.tolist()])
    mean = float(np.dot(values, counts)) / n
    var = float(np.dot((values - mean) ** 2, counts)) / (n - 1)
    return mean, math.sqrt(var / n)


def analytic_variance(desc: MultilevelCompressor, v, dist: LevelDistribution) -> VarianceReport:
    """Second moment ``sum Delta_l^2 / p_l`` and compression variance ``E||g - v||^2``."""
    v = as_gradient(v)
    delta_sq = desc.residual_sq_norms(v)
    check_support(dist, delta_sq)
    live = dist.probs > 0
    second = math.fsum((delta_sq[live] / dist.probs[live]).tolist())
    _, mean_sq = norms(v - desc.base(v))
    comp = second - mean_sq
    _, v_sq = norms(v)
    return VarianceReport(second, comp, comp / v_sq if v_sq > 0 else 0.0)


def optimal_comp_variance(desc: MultilevelCompressor, v) -> float:
    """Closed form at the adaptive optimum: ``(sum Delta)^2 - ||v - C^0(v)||^2``."""
    v = as_gradient(v)
    total = math.fsum(desc.residual_norms(v).tolist())
    return total * total - norms(v - desc.base(v))[1]


def fixed_point_comp_variance(v, scale: float | None = None) -> float:
    """``(1 - 2^-63) * scale * ||v||_1 - ||v||^2`` at the geometric law.

    With the normalized entries ``u = v / scale`` this is the
    ``(1 - 2^-63)||u||_1 - ||u||^2`` form multiplied back by ``scale^2``.
    """
    v = as_gradient(v)
    scale = FixedPoint(scale).scale_for(v)
    a = np.abs(v)
    # summed per entry as |v|(scale - |v|): the expanded form cancels when one entry dominates
    return math.fsum((a * (scale - a)).tolist()) - 2.0**-63 * scale * norms(v)[0]


def floating_point_comp_variance(v) -> float:
    """Compression variance of the floating-point estimator at the geometric law.

    Per entry with unit ``U = 2^(E-1023)`` and mantissa part ``m = |e| - U``
    the residual second moment is ``(1 - 2^-52) U m``, and the variance
    subtracts ``m^2`` (the sign/exponent part is sent exactly).
    """
    v = as_gradient(v)
    exps = ((v.view(np.uint64) >> np.uint64(52)) & np.uint64(0x7FF)).astype(np.int64)
    unit = np.ldexp(1.0, np.where(exps > 0, exps - 1023, -1022))
    mant = np.abs(v) - np.where(exps > 0, unit, 0.0)
    # m (U - m) is exact-ish where the expanded form cancels
    terms = mant * (unit - mant) - 2.0**-52 * unit * mant
    return math.fsum(terms.tolist())


def exp_decay_variance_prediction(r: float, s: int, v_norm_sq: float) -> float:
    """Large-``r d``, ``r s <= 1`` approximation ``||v||^2 (4 / (r s) - 1)``."""
    return v_norm_sq * (4.0 / (r * s) - 1.0)


def exp_decay_variance_exact(r: float, s: int, d: int, v_norm_sq: float) -> float:
    """Adaptive s-Top-k variance for an exactly exponential profile with ``s | d``."""
    a = -math.expm1(-r * s) / -math.expm1(-r * d)
    b = -math.expm1(-r * d / 2) / -math.expm1(-r * s / 2)
    return v_norm_sq * (a * b * b - 1.0)
