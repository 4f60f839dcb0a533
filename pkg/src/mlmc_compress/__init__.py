"""Multilevel Monte Carlo gradient compression and a distributed SGD simulator."""

from .compressors import (
    FixedPoint,
    FloatingPoint,
    Identity,
    MultilevelCompressor,
    RoundToNearest,
    SegmentedTopK,
    TopK,
    make_compressor,
)
from .core import Rng
from .mlmc import (
    LevelDistribution,
    adaptive_distribution,
    analytic_variance,
    estimate,
    fixed_point_distribution,
    floating_point_distribution,
)
from .simulator import RunRecord, run_baseline, run_mlmc_sgd, run_parallel_sgd, variance_probe

__all__ = [
    "FixedPoint",
    "FloatingPoint",
    "Identity",
    "LevelDistribution",
    "MultilevelCompressor",
    "Rng",
    "RoundToNearest",
    "RunRecord",
    "SegmentedTopK",
    "TopK",
    "adaptive_distribution",
    "analytic_variance",
    "estimate",
    "fixed_point_distribution",
    "floating_point_distribution",
    "make_compressor",
    "run_baseline",
    "run_mlmc_sgd",
    "run_parallel_sgd",
    "variance_probe",
]
