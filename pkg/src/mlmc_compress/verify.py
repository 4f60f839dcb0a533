"""Named property suites behind ``mlmc-compress verify <suite>``.

Each suite returns a list of :class:`Check` records with the measured value,
what it was compared against, and whether it passed.
"""

from __future__ import annotations

import math
from fractions import Fraction
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import problems, simulator
from .compressors import (
    FIXED_POINT_LEVELS,
    FLOAT_MANTISSA_BITS,
    FixedPoint,
    FloatingPoint,
    RoundToNearest,
    SegmentedTopK,
    TopK,
    uncompressed_bits,
)
from .core import Rng, ceil_log2, norms
from .mlmc import (
    adaptive_distribution,
    analytic_variance,
    empirical_second_moment,
    enumerate_estimates,
    exp_decay_variance_prediction,
    fixed_point_comp_variance,
    fixed_point_distribution,
    floating_point_distribution,
    optimal_comp_variance,
    static_distribution,
)
from .baselines import rand_k_variance


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    expected: str
    passed: bool

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] {self.name}: measured={self.measured:.6g} expected {self.expected}"


def random_vectors(n: int, max_dim: int, seed: int):
    """Mixed-scale test vectors: Gaussian, heavy-tailed and sparse shapes."""
    gen = np.random.default_rng(seed)
    out = []
    for i in range(n):
        d = int(gen.integers(2, max_dim + 1))
        kind = i % 3
        if kind == 0:
            v = gen.standard_normal(d)
        elif kind == 1:
            v = gen.standard_cauchy(d)
        else:
            v = gen.standard_normal(d) * (gen.random(d) < 0.4)
            v[gen.integers(d)] = 1.5
        out.append(v * 10.0 ** gen.uniform(-3, 3))
    return out


def default_compressors():
    return [TopK(), SegmentedTopK(3), FixedPoint(), FloatingPoint(), RoundToNearest(c=1.0, num_levels=6)]


def _rel(a: float, ref: float, v) -> float:
    # exact zero-variance cases (one nonzero entry) are measured against ||v||^2
    return abs(a - ref) / (ref if ref > 0 else norms(v)[1])


def _max_rel(pairs) -> float:
    return max(float(np.linalg.norm(a - b) / np.linalg.norm(b)) for a, b in pairs)


def suite_unbiasedness(n_vectors: int = 50, max_dim: int = 32, seed: int = 0) -> list[Check]:
    checks = []
    vecs = random_vectors(n_vectors, max_dim, seed)
    for comp in default_compressors():
        for mode in ("static", "adaptive"):
            pairs = []
            for v in vecs:
                dist = adaptive_distribution(comp, v) if mode == "adaptive" else static_distribution(comp, v.size)
                probs, G = enumerate_estimates(comp, v, dist)
                mean = np.array([math.fsum(c) for c in (probs[:, None] * G).T.tolist()])
                pairs.append((mean, v))
            err = _max_rel(pairs)
            checks.append(Check(f"E[g]=v {comp.name}/{mode}", err, "<= 1e-12 (relative)", err <= 1e-12))
    return checks


def _geometric_objective(p: np.ndarray) -> float:
    levels = np.arange(1, p.size + 1)
    return math.fsum((np.ldexp(1.0, -2 * levels) / p).tolist())


def perturb(p: np.ndarray, gen: np.random.Generator, eps: float) -> np.ndarray:
    q = p * np.exp(eps * gen.standard_normal(p.size))
    return q / q.sum()


def suite_optimal_probs(n_vectors: int = 50, n_perturb: int = 100, eps: float = 0.1, seed: int = 1) -> list[Check]:
    checks = []
    gen = np.random.default_rng(seed)
    for dist, L in ((fixed_point_distribution(), FIXED_POINT_LEVELS), (floating_point_distribution(), FLOAT_MANTISSA_BITS)):
        levels = np.arange(1, L + 1)
        ref = [2.0**-l / (1 - 2.0**-L) for l in levels.tolist()]
        err = max(abs(a - b) for a, b in zip(dist.probs.tolist(), ref))
        checks.append(Check(f"p^l = 2^-l/(1-2^-{L})", err, "<= 1e-15 (absolute)", err <= 1e-15))
        total = abs(math.fsum(dist.probs.tolist()) - 1.0)
        checks.append(Check(f"sum p^l = 1 (L={L})", total, "<= 1e-15", total <= 1e-15))
        base = _geometric_objective(dist.probs)
        beaten = sum(_geometric_objective(perturb(dist.probs, gen, eps)) < base for _ in range(n_perturb * n_vectors))
        checks.append(Check(f"worst-case objective beaten by perturbations (L={L})", beaten, "== 0", beaten == 0))

    vecs = random_vectors(n_vectors, 32, seed + 1)
    for comp, dist in ((FixedPoint(), fixed_point_distribution()), (FloatingPoint(), floating_point_distribution())):
        beaten = 0
        for v in vecs:
            base = analytic_variance(comp, v, dist).analytic_second_moment
            for _ in range(n_perturb):
                q = perturb(dist.probs, gen, eps)
                other = analytic_variance(comp, v, type(dist)(q)).analytic_second_moment
                beaten += other < base * (1 - 1e-12)
        checks.append(Check(f"per-vector variance beaten by perturbations ({comp.name})", beaten, "== 0", beaten == 0))
    return checks


def suite_variance_closed_forms(n_vectors: int = 50, n_samples: int = 100_000, seed: int = 2) -> list[Check]:
    checks = []
    vecs = random_vectors(n_vectors, 32, seed)

    def brute(comp, v, dist):
        # variance about the enumerated mean; the fixed-point top level is v to 63 bits only
        probs, G = enumerate_estimates(comp, v, dist)
        mean = np.array([math.fsum(c) for c in (probs[:, None] * G).T.tolist()])
        return math.fsum((probs * np.sum((G - mean) ** 2, axis=1)).tolist())

    for comp in (TopK(), SegmentedTopK(3), RoundToNearest(c=1.0, num_levels=6)):
        worst = 0.0
        for v in vecs:
            ref = brute(comp, v, adaptive_distribution(comp, v))
            worst = max(worst, _rel(optimal_comp_variance(comp, v), ref, v))
        checks.append(Check(f"(sum Delta)^2 - ||v||^2 vs enumeration ({comp.name})", worst, "<= 1e-9 (relative)", worst <= 1e-9))

    worst = 0.0
    for v in vecs:
        ref = fixed_point_variance_exact(v)
        worst = max(worst, _rel(fixed_point_comp_variance(v), ref, v))
    checks.append(Check("fixed-point (1-2^-63)||v||_1 - ||v||^2 vs enumeration", worst, "<= 1e-9 (relative)", worst <= 1e-9))

    worst_z = 0.0
    # static laws: at the adaptive optimum every draw has the same norm and se = 0
    for comp in (TopK(), SegmentedTopK(3), FixedPoint(), RoundToNearest(c=1.0, num_levels=6)):
        for j, v in enumerate(vecs[:10]):
            dist = static_distribution(comp, v.size)
            rep = analytic_variance(comp, v, dist)
            mean, se = empirical_second_moment(comp, v, dist, n_samples, Rng(seed, j, 0))
            gap = abs(mean - rep.analytic_second_moment)
            z = gap / se if se > 0 else (0.0 if gap <= 1e-12 * rep.analytic_second_moment else math.inf)
            worst_z = max(worst_z, z)
    checks.append(Check("empirical second moment (10^5 draws), worst |z|", worst_z, "<= 5", worst_z <= 5))
    return checks


def fixed_point_variance_exact(v) -> float:
    """Enumerate all 63 levels of the fixed-point estimator in exact rationals.

    Levels above the float64 mantissa cannot be decoded exactly in floating
    point, so the float enumeration carries a ``2^-53 scale^2`` floor that
    swamps vectors whose true variance is (near) zero.
    """
    scale = Fraction(float(np.max(np.abs(v))))
    L = FIXED_POINT_LEVELS
    probs = [Fraction(2**L, 2**L - 1) / 2**l for l in range(1, L + 1)]
    total = Fraction(0)
    for e in np.asarray(v, dtype=np.float64).tolist():
        q = min(int(Fraction(abs(e)) / scale * 2**L), 2**L - 1)
        mean = scale * Fraction(q, 2**L)
        for l, p in enumerate(probs, start=1):
            bit = (q >> (L - l)) & 1
            g = scale * Fraction(bit, 2**l) / p
            total += p * (g - mean) ** 2
    return float(total)


def exp_decay_vector(r: float, d: int, seed: int) -> np.ndarray:
    return problems.exp_decay_sample(problems.ExpDecayOracle(r, d), Rng(seed, 0, 0, purpose=7))


def suite_expdecay(d: int = 10_000, rates=(0.01, 0.05), products=(0.25, 0.5, 1.0), seed: int = 3,
                   n_samples: int = 20_000) -> list[Check]:
    checks = []
    for r in rates:
        v = exp_decay_vector(r, d, seed)
        _, vsq = norms(v)
        for rs in products:
            s = int(round(rs / r))
            comp = SegmentedTopK(s)
            dist = adaptive_distribution(comp, v)
            omega = analytic_variance(comp, v, dist).omega_hat
            pred = exp_decay_variance_prediction(r, s, vsq) / vsq
            ratio = omega / pred
            checks.append(Check(f"omega/(4/(rs)-1) r={r} s={s}", ratio, "in [0.5, 2]", 0.5 <= ratio <= 2.0))
            mean, se = empirical_second_moment(comp, v, dist, n_samples, Rng(seed, s, 0))
            emp = (mean - vsq) / vsq
            ratio = emp / pred
            checks.append(Check(f"sampled omega/(4/(rs)-1) r={r} s={s}", ratio, "in [0.5, 2]", 0.5 <= ratio <= 2.0))
            rk = rand_k_variance(v, s) / vsq
            if 1.0 / r < d:
                checks.append(Check(f"MLMC/Rand-k variance r={r} s={s}", omega / rk, "< 1", omega < rk))
    return checks


def suite_bits() -> list[Check]:
    checks = []
    fp = FixedPoint()
    v = np.linspace(-1.0, 1.0, 1000)
    bits = fp.encoded_bits(fp.residual(v, 5), v.size)
    checks.append(Check("fixed-point message, d=1000", bits, "== 2070", bits == 2070))
    wire = len(fp.residual(v, 5).serialize())
    checks.append(Check("fixed-point serialized length, d=1000", wire, "== 2070", wire == 2070))
    fl = FloatingPoint()
    for d in (1, 100, 1000):
        v = np.linspace(0.1, 3.0, d)
        bits = fl.encoded_bits(fl.residual(v, 7), d)
        target = 13 * d + ceil_log2(52)
        checks.append(Check(f"floating-point message, d={d}", bits, f"== {target}", bits == target))
    for d in (1, 1000):
        checks.append(Check(f"uncompressed, d={d}", uncompressed_bits(d), f"== {64 * d}", uncompressed_bits(d) == 64 * d))
    return checks


def suite_scaling(Ms=(1, 4, 16), d: int = 50, n_samples: int = 4000, seed: int = 4) -> list[Check]:
    checks = []
    prob = problems.make_quadratic(d, 1, sigma=1.0, seed=seed)
    x = prob.x_star + 0.5
    probes = {}
    for M in Ms:
        codec = simulator.MlmcCodec(SegmentedTopK(5), "adaptive")
        probes[M] = simulator.variance_probe(prob, codec, x, n_samples, seed=seed, M=M)
    base = probes[Ms[0]][0]
    for M in Ms[1:]:
        ratio = M * probes[M][0] / base
        checks.append(Check(f"M*probe(M)/probe(1), M={M}", ratio, "in [0.8, 1.2]", 0.8 <= ratio <= 1.2))
    return checks


SUITES: dict[str, Callable[[], list[Check]]] = {
    "unbiasedness": suite_unbiasedness,
    "optimal-probs": suite_optimal_probs,
    "variance-closed-forms": suite_variance_closed_forms,
    "expdecay": suite_expdecay,
    "bits": suite_bits,
    "scaling": suite_scaling,
}


def run_suite(name: str) -> list[Check]:
    if name not in SUITES:
        raise KeyError(name)
    return SUITES[name]()
