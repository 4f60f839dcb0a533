import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# magnitudes below 1e-150 are flushed to zero: their squares underflow, which
# no squared-norm computation in float64 survives
finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False).map(
    lambda x: 0.0 if abs(x) < 1e-150 else x
)


def vectors(min_size=1, max_size=24, elements=finite):
    return arrays(np.float64, st.integers(min_size, max_size), elements=elements)


nonzero_vectors = vectors().filter(lambda v: np.any(v != 0))


def exact_mean(probs, rows):
    """sum_l p_l * rows[l], each coordinate correctly rounded."""
    return np.array([math.fsum(p * r[j] for p, r in zip(probs, rows)) for j in range(len(rows[0]))])


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a))


def frac(x):
    return Fraction(float(x))


@pytest.fixture
def rng_vectors():
    gen = np.random.default_rng(12345)
    return [gen.standard_normal(int(gen.integers(2, 33))) * 10.0 ** gen.uniform(-3, 3) for _ in range(20)]
