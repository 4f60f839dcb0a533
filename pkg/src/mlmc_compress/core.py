"""Numeric primitives, payload types and reproducible random streams.

Gradient vectors are plain 1-D float64 numpy arrays; :func:`as_gradient`
validates them. Payloads are the compact on-the-wire forms of a residual
``C^l(v) - C^{l-1}(v)`` and all know how to ``densify()`` themselves.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

# Random stream purposes. Separate streams keep the gradient noise of a run
# independent of how many uniforms the compressor consumes.
NOISE = 0
LEVEL = 1
BASELINE = 2


class DimensionError(ValueError):
    pass


def as_gradient(values) -> np.ndarray:
    """Return ``values`` as a finite, non-empty float64 vector."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("gradient contains NaN or Inf")
    return v


def dot(a, b) -> float:
    # fsum is correctly rounded, hence independent of summation order
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return math.fsum((a * b).tolist())


def norms(v) -> tuple[float, float]:
    """Return ``(||v||_1, ||v||_2^2)``."""
    v = np.asarray(v, dtype=np.float64)
    return math.fsum(np.abs(v).tolist()), math.fsum((v * v).tolist())


def ceil_log2(n: int) -> int:
    """Bits needed to address ``n`` distinct values (0 for n <= 1)."""
    return 0 if n <= 1 else (int(n) - 1).bit_length()


class Rng:
    """Counter-based random stream keyed by ``(seed, worker, iteration, purpose)``.

    Two ``Rng`` objects with the same key produce the same draws regardless of
    how many other streams were created before, so one worker's draw at one
    iteration can be replayed in isolation.
    """

    __slots__ = ("seed", "worker", "iteration", "purpose", "_gen")

    def __init__(self, seed: int, worker: int = 0, iteration: int = 0, purpose: int = LEVEL):
        self.seed = int(seed)
        self.worker = int(worker)
        self.iteration = int(iteration)
        self.purpose = int(purpose)
        bitgen = np.random.Philox(
            key=[self.seed & 0xFFFFFFFFFFFFFFFF, self.purpose],
            counter=[0, 0, self.worker, self.iteration],
        )
        self._gen = np.random.Generator(bitgen)

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def random(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        return self._gen.standard_normal(size)

    def __repr__(self):
        return f"Rng(seed={self.seed}, worker={self.worker}, iteration={self.iteration}, purpose={self.purpose})"


def sample_categorical(rng: Rng, probs) -> int:
    """Draw a 1-based level ``l`` with probability ``probs[l-1]``."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("probabilities must be a non-empty vector")
    if np.any(p < 0) or abs(math.fsum(p.tolist()) - 1.0) > 1e-12:
        raise ValueError("probabilities must be non-negative and sum to 1")
    cdf = np.cumsum(p)
    u = rng.random()
    # side="right" never lands on a zero-probability level inside the range
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx >= p.size:
        # cdf summed to 1 - eps and u fell in the gap
        idx = int(np.flatnonzero(p > 0)[-1])
    return idx + 1


# --------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class SparseDelta:
    """Nonzero entries of a residual, indices strictly increasing."""

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size and (np.any(np.diff(idx) <= 0) or idx[0] < 0 or idx[-1] >= self.dim):
            raise ValueError("indices must be strictly increasing and < dim")
        if np.any(val == 0) or not np.all(np.isfinite(val)):
            raise ValueError("values must be finite and nonzero")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "values", val)

    @classmethod
    def from_entries(cls, indices, values, dim: int) -> "SparseDelta":
        idx = np.asarray(indices, dtype=np.int64)
        val = np.asarray(values, dtype=np.float64)
        keep = val != 0
        idx, val = idx[keep], val[keep]
        order = np.argsort(idx, kind="stable")
        return cls(idx[order], val[order], int(dim))

    @property
    def nnz(self) -> int:
        return int(self.indices.size)

    def densify(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True)
class BitPlane:
    """One fixed-point bit plane: per entry a sign bit and the level-``l`` bit."""

    level: int
    signs: np.ndarray  # bool, True means negative
    bits: np.ndarray  # bool
    scale: float

    @property
    def dim(self) -> int:
        return int(self.bits.size)

    def densify(self) -> np.ndarray:
        step = self.scale * 2.0 ** (-self.level)
        out = np.where(self.bits, step, 0.0)
        return np.where(self.signs, -out, out)

    def serialize(self, num_levels: int = 63) -> str:
        """Bit string ``[level][scale][sign, info]*`` in index order."""
        width = ceil_log2(num_levels)
        head = format(self.level, f"0{width}b") if width else ""
        scale_bits = format(np.float64(self.scale).view(np.uint64).item(), "064b")
        body = "".join(f"{int(s)}{int(b)}" for s, b in zip(self.signs, self.bits))
        return head + scale_bits + body


@dataclass(frozen=True)
class FloatPlane:
    """One mantissa bit plane with each entry's sign and biased exponent."""

    level: int
    signs: np.ndarray  # bool
    exponents: np.ndarray  # int, biased 11-bit exponent
    bits: np.ndarray  # bool

    @property
    def dim(self) -> int:
        return int(self.bits.size)

    def _unit(self) -> np.ndarray:
        # subnormals (biased exponent 0) carry an implicit 2^-1022 and no leading one
        e = np.where(self.exponents > 0, self.exponents - 1023, -1022)
        return np.ldexp(1.0, e.astype(np.int64))

    def base(self) -> np.ndarray:
        """Sign and exponent alone: the implicit leading one of normal numbers."""
        out = np.where(self.exponents > 0, self._unit(), 0.0)
        return np.where(self.signs, -out, out)

    def densify(self) -> np.ndarray:
        out = np.where(self.bits, np.ldexp(self._unit(), -self.level), 0.0)
        return np.where(self.signs, -out, out)


@dataclass(frozen=True)
class QuantizedGrid:
    """Round-to-nearest codes of levels ``l`` and ``l-1``."""

    level: int
    codes: np.ndarray
    step: float
    prev_codes: Optional[np.ndarray]
    prev_step: float

    @property
    def dim(self) -> int:
        return int(self.codes.size)

    def densify(self) -> np.ndarray:
        hi = self.step * self.codes.astype(np.float64)
        if self.prev_codes is None:
            return hi
        return hi - self.prev_step * self.prev_codes.astype(np.float64)


@dataclass(frozen=True)
class DenseDelta:
    """An uncompressed residual (identity levels)."""

    values: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def densify(self) -> np.ndarray:
        return np.array(self.values, dtype=np.float64)


@dataclass(frozen=True)
class ZeroMessage:
    """Designated message for an all-zero gradient."""

    dim: int

    def densify(self) -> np.ndarray:
        return np.zeros(self.dim)


Payload = Union[SparseDelta, BitPlane, FloatPlane, QuantizedGrid, DenseDelta, ZeroMessage]


@dataclass(frozen=True)
class ResidualMessage:
    payload: Payload
    level: int
    prob: float
    bit_cost: int = field(default=0)

    def __post_init__(self):
        if not (0.0 < self.prob <= 1.0):
            raise ValueError(f"prob must lie in (0, 1], got {self.prob}")
