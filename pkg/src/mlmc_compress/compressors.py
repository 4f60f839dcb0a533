"""Multilevel compressors.

A multilevel compressor maps ``(v, l)`` to ``C^l(v)`` for ``l = 0..L``; the top
level is the identity and higher levels distort less. Each compressor also
produces the residual ``C^l(v) - C^{l-1}(v)`` in a compact payload and
charges an exact bit cost for it.

``base(v)`` is ``C^0(v)``. It is the zero vector for every compressor except
the floating-point one, whose level 0 keeps sign and exponent (that part is
sent with every message anyway).
"""

from __future__ import annotations

import math

import numpy as np

from .core import (
    BitPlane,
    DenseDelta,
    FloatPlane,
    QuantizedGrid,
    SparseDelta,
    ZeroMessage,
    as_gradient,
    ceil_log2,
)

VALUE_BITS = 64

FIXED_POINT_LEVELS = 63
FLOAT_MANTISSA_BITS = 52

_MANTISSA_MASK = np.uint64((1 << 52) - 1)
_EXP_MASK = np.uint64(0x7FF)


class MultilevelCompressor:
    """Common contract. Subclasses override ``compress`` and ``residual``."""

    name = "abstract"
    lossless = False

    def num_levels(self, d: int) -> int:
        raise NotImplementedError

    def check_level(self, d: int, level: int, lowest: int = 0) -> int:
        L = self.num_levels(d)
        if not (lowest <= level <= L):
            raise ValueError(f"{self.name}: level {level} outside [{lowest}, {L}]")
        return int(level)

    def base(self, v) -> np.ndarray:
        return np.zeros(np.shape(v)[0])

    def compress(self, v, level: int) -> np.ndarray:
        raise NotImplementedError

    def residual(self, v, level: int):
        raise NotImplementedError

    def residual_matrix(self, v) -> np.ndarray:
        """Row ``l-1`` is the dense residual of level ``l``."""
        v = as_gradient(v)
        return np.stack([self.residual(v, l).densify() for l in range(1, self.num_levels(v.size) + 1)])

    def residual_norms(self, v) -> np.ndarray:
        """``Delta^l = ||C^l(v) - C^{l-1}(v)||`` for ``l = 1..L``."""
        R = self.residual_matrix(v)
        return np.sqrt(np.einsum("ij,ij->i", R, R))

    def residual_sq_norms(self, v) -> np.ndarray:
        """``(Delta^l)^2``; subclasses sum squares directly where they can."""
        return self.residual_norms(v) ** 2

    def encoded_bits(self, payload, d: int) -> int:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"name": self.name}

    def __repr__(self):
        params = ", ".join(f"{k}={v!r}" for k, v in self.describe().items() if k != "name")
        return f"{type(self).__name__}({params})"


class Identity(MultilevelCompressor):
    """Single-level compressor that sends ``v`` as is."""

    name = "identity"
    lossless = True

    def num_levels(self, d):
        return 1

    def compress(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level)
        return v.copy() if level == 1 else np.zeros(v.size)

    def residual(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level, lowest=1)
        return DenseDelta(v.copy())

    def residual_sq_norms(self, v):
        v = as_gradient(v)
        return np.array([math.fsum((v * v).tolist())])

    def encoded_bits(self, payload, d):
        return VALUE_BITS * d


def magnitude_order(v: np.ndarray) -> np.ndarray:
    """Indices by descending ``|v|``; ties go to the lower index."""
    return np.argsort(-np.abs(v), kind="stable")


class SegmentedTopK(MultilevelCompressor):
    """s-Top-k: sort by magnitude, cut into blocks of ``s``; level ``l`` keeps ``l`` blocks."""

    name = "stopk"

    def __init__(self, s: int):
        if int(s) < 1:
            raise ValueError("segment length must be >= 1")
        self.s = int(s)

    def describe(self):
        return {"name": self.name, "s": self.s}

    def num_levels(self, d):
        return -(-d // self.s)

    def _block(self, order, level):
        return order[(level - 1) * self.s : level * self.s]

    def compress(self, v, level):
        v = as_gradient(v)
        L = self.num_levels(v.size)
        self.check_level(v.size, level)
        if level == L:
            return v.copy()
        out = np.zeros(v.size)
        keep = magnitude_order(v)[: level * self.s]
        out[keep] = v[keep]
        return out

    def residual(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level, lowest=1)
        idx = self._block(magnitude_order(v), level)
        return SparseDelta.from_entries(idx, v[idx], v.size)

    def residual_matrix(self, v):
        v = as_gradient(v)
        order = magnitude_order(v)
        L = self.num_levels(v.size)
        R = np.zeros((L, v.size))
        rows = np.arange(v.size) // self.s
        R[rows, order] = v[order]
        return R

    def residual_sq_norms(self, v):
        v = as_gradient(v)
        sq = np.abs(v[magnitude_order(v)]) ** 2
        L = self.num_levels(v.size)
        pad = np.zeros(L * self.s)
        pad[: v.size] = sq
        return pad.reshape(L, self.s).sum(axis=1)

    def residual_norms(self, v):
        return np.sqrt(self.residual_sq_norms(v))

    def encoded_bits(self, payload, d):
        L = self.num_levels(d)
        if isinstance(payload, ZeroMessage):
            return ceil_log2(L) + 1
        # s values (a short last segment is padded) plus segment id and level
        return self.s * VALUE_BITS + 2 * ceil_log2(L)


class TopK(SegmentedTopK):
    """Top-k as a multilevel compressor: level ``l`` keeps the ``l`` largest entries."""

    name = "topk"

    def __init__(self):
        super().__init__(1)

    def describe(self):
        return {"name": self.name}

    def encoded_bits(self, payload, d):
        if isinstance(payload, ZeroMessage):
            return ceil_log2(d) + 1
        # value + index per entry, plus the level
        return VALUE_BITS + ceil_log2(d) + ceil_log2(self.num_levels(d))


class FixedPoint(MultilevelCompressor):
    """Truncation of max-normalized entries to ``l`` fractional bits.

    Entries are normalized by ``scale`` (default ``max|v|``) and written as a
    sign plus 63 fractional bits; the entry equal to the scale becomes all
    ones. Truncation is toward zero on the magnitude.
    """

    name = "fixed"

    def __init__(self, scale: float | None = None):
        if scale is not None and not scale > 0:
            raise ValueError("scale must be positive")
        self.scale = scale

    def describe(self):
        return {"name": self.name, "scale": self.scale}

    def num_levels(self, d):
        return FIXED_POINT_LEVELS

    def scale_for(self, v: np.ndarray) -> float:
        peak = float(np.max(np.abs(v)))
        if self.scale is None:
            return peak
        if peak > self.scale:
            raise ValueError(f"entry magnitude {peak} exceeds fixed scale {self.scale}")
        return float(self.scale)

    def codes(self, v):
        """Return ``(negative, q, scale)`` with ``|v| ~= scale * q / 2^63``."""
        v = as_gradient(v)
        scale = self.scale_for(v)
        neg = np.signbit(v)
        if scale == 0.0:
            return neg, np.zeros(v.size, dtype=np.uint64), 0.0
        u = np.abs(v) / scale
        q = np.floor(np.ldexp(u, FIXED_POINT_LEVELS)).astype(np.uint64)
        q = np.minimum(q, np.uint64((1 << FIXED_POINT_LEVELS) - 1))
        return neg, q, scale

    def compress(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level)
        neg, q, scale = self.codes(v)
        if level == 0 or scale == 0.0:
            return np.zeros(v.size)
        t = (q >> np.uint64(FIXED_POINT_LEVELS - level)).astype(np.float64)
        mag = scale * np.ldexp(t, -level)
        return np.where(neg, -mag, mag)

    def bit_planes(self, v) -> tuple[np.ndarray, np.ndarray, float]:
        """``(negative, B, scale)`` where ``B[l-1, j]`` is bit ``l`` of entry ``j``."""
        neg, q, scale = self.codes(v)
        shifts = np.arange(FIXED_POINT_LEVELS - 1, -1, -1, dtype=np.uint64)
        B = ((q[None, :] >> shifts[:, None]) & np.uint64(1)).astype(bool)
        return neg, B, scale

    def residual(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level, lowest=1)
        neg, q, scale = self.codes(v)
        bits = ((q >> np.uint64(FIXED_POINT_LEVELS - level)) & np.uint64(1)).astype(bool)
        return BitPlane(level=level, signs=neg, bits=bits, scale=scale)

    def residual_matrix(self, v):
        neg, B, scale = self.bit_planes(v)
        steps = scale * np.ldexp(1.0, -np.arange(1, FIXED_POINT_LEVELS + 1))
        R = B * steps[:, None]
        return np.where(neg[None, :], -R, R)

    def residual_norms(self, v):
        _, B, scale = self.bit_planes(v)
        counts = B.sum(axis=1)
        return scale * np.ldexp(1.0, -np.arange(1, FIXED_POINT_LEVELS + 1)) * np.sqrt(counts)

    def encoded_bits(self, payload, d):
        if isinstance(payload, ZeroMessage):
            return ceil_log2(FIXED_POINT_LEVELS) + 1
        return 2 * d + VALUE_BITS + ceil_log2(FIXED_POINT_LEVELS)


class FloatingPoint(MultilevelCompressor):
    """Truncation of the float64 mantissa to ``l`` bits; sign and exponent always kept."""

    name = "float"

    def num_levels(self, d):
        return FLOAT_MANTISSA_BITS

    @staticmethod
    def _mask(level: int) -> np.uint64:
        drop = FLOAT_MANTISSA_BITS - level
        return np.uint64(((1 << 64) - 1) ^ ((1 << drop) - 1))

    def compress(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level)
        return (v.view(np.uint64) & self._mask(level)).view(np.float64)

    def base(self, v):
        return self.compress(v, 0)

    def residual(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level, lowest=1)
        raw = v.view(np.uint64)
        bits = ((raw >> np.uint64(FLOAT_MANTISSA_BITS - level)) & np.uint64(1)).astype(bool)
        exps = ((raw >> np.uint64(52)) & _EXP_MASK).astype(np.int64)
        return FloatPlane(level=level, signs=np.signbit(v), exponents=exps, bits=bits)

    def residual_matrix(self, v):
        v = as_gradient(v)
        raw = v.view(np.uint64)
        shifts = np.arange(FLOAT_MANTISSA_BITS - 1, -1, -1, dtype=np.uint64)
        B = ((raw[None, :] >> shifts[:, None]) & np.uint64(1)).astype(bool)
        exps = ((raw >> np.uint64(52)) & _EXP_MASK).astype(np.int64)
        unit_exp = np.where(exps > 0, exps - 1023, -1022)
        levels = np.arange(1, FLOAT_MANTISSA_BITS + 1)
        R = np.where(B, np.ldexp(1.0, unit_exp[None, :] - levels[:, None]), 0.0)
        return np.where(np.signbit(v)[None, :], -R, R)

    def encoded_bits(self, payload, d):
        if isinstance(payload, ZeroMessage):
            return ceil_log2(FLOAT_MANTISSA_BITS) + 1
        # sign + 11 exponent bits + one mantissa bit per entry, plus the level
        return 13 * d + ceil_log2(FLOAT_MANTISSA_BITS)


class RoundToNearest(MultilevelCompressor):
    """RTN grids ``delta^l = 2c / (2^l - 1)`` for ``l < L``; level ``L`` is the identity.

    Codes are clipped to ``|m| <= 2^(l-1) - 1`` so quantized values stay in
    ``[-c, c]`` and fit in ``l`` bits. Rounding is half-to-even.
    """

    name = "rtn"

    def __init__(self, c: float = 1.0, num_levels: int = 8):
        if not c > 0:
            raise ValueError("clip bound c must be positive")
        if int(num_levels) < 2:
            raise ValueError("RTN needs at least one grid level below the identity")
        self.c = float(c)
        self.levels = int(num_levels)

    def describe(self):
        return {"name": self.name, "c": self.c, "num_levels": self.levels}

    def num_levels(self, d):
        return self.levels

    def step(self, level: int) -> float:
        return 2.0 * self.c / (2.0**level - 1.0)

    def codes(self, v: np.ndarray, level: int) -> np.ndarray:
        bound = 2.0 ** (level - 1) - 1.0
        return np.clip(np.rint(v / self.step(level)), -bound, bound)

    def _grid(self, v, level):
        if level == 0:
            return np.zeros(v.size)
        return self.step(level) * self.codes(v, level)

    def compress(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level)
        if level == self.levels:
            return v.copy()
        return self._grid(v, level)

    def residual(self, v, level):
        v = as_gradient(v)
        self.check_level(v.size, level, lowest=1)
        if level == self.levels:
            return DenseDelta(v - self._grid(v, level - 1))
        prev = self.codes(v, level - 1).astype(np.int64) if level > 1 else None
        return QuantizedGrid(
            level=level,
            codes=self.codes(v, level).astype(np.int64),
            step=self.step(level),
            prev_codes=prev,
            prev_step=self.step(level - 1) if level > 1 else 0.0,
        )

    def encoded_bits(self, payload, d):
        lvl = ceil_log2(self.levels)
        if isinstance(payload, ZeroMessage):
            return lvl + 1
        if isinstance(payload, DenseDelta):
            # the raw vector; the receiver recomputes the level L-1 grid
            return VALUE_BITS * d + lvl
        # level-l and level-(l-1) codes are both needed: the grids are not nested
        return d * (2 * payload.level - 1) + VALUE_BITS + lvl


_REGISTRY = {
    "identity": Identity,
    "topk": TopK,
    "stopk": SegmentedTopK,
    "fixed": FixedPoint,
    "float": FloatingPoint,
    "rtn": RoundToNearest,
}

COMPRESSOR_NAMES = tuple(_REGISTRY)


def make_compressor(name: str, **params) -> MultilevelCompressor:
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown compressor {name!r}; expected one of {COMPRESSOR_NAMES}") from None
    return cls(**params)


# module-level surface -------------------------------------------------------


def compress(desc: MultilevelCompressor, v, level: int) -> np.ndarray:
    return desc.compress(v, level)


def residual(desc: MultilevelCompressor, v, level: int):
    return desc.residual(v, level)


def densify(payload) -> np.ndarray:
    return payload.densify()


def encoded_bits(desc: MultilevelCompressor, payload) -> int:
    return desc.encoded_bits(payload, payload.dim)


def uncompressed_bits(d: int) -> int:
    return VALUE_BITS * d


def alpha_profile(desc: SegmentedTopK, v) -> np.ndarray:
    """Retained energy fractions ``alpha^l = ||C^l(v)||^2 / ||v||^2``, ``l = 0..L``."""
    if not isinstance(desc, SegmentedTopK):
        raise TypeError("alpha profile is defined for Top-k and s-Top-k only")
    v = as_gradient(v)
    total = float(np.dot(v, v))
    if total == 0.0:
        raise ValueError("alpha profile undefined for the zero vector")
    block = desc.residual_norms(v) ** 2
    alpha = np.concatenate([[0.0], np.cumsum(block) / total])
    alpha[-1] = 1.0
    return np.minimum(alpha, 1.0)


def distortion(desc: MultilevelCompressor, v, level: int) -> float:
    v = as_gradient(v)
    diff = desc.compress(v, level) - v
    return float(math.fsum((diff * diff).tolist()))
