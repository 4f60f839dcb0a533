import math
import warnings

import numpy as np
import pytest

from mlmc_compress.compressors import FixedPoint, Identity, SegmentedTopK, TopK
from mlmc_compress.core import NOISE, Rng
from mlmc_compress.mlmc import adaptive_distribution, analytic_variance, static_distribution
from mlmc_compress.problems import make_exp_decay_quadratic, make_quadratic, make_sign_conflict_problem
from mlmc_compress.simulator import (
    CSV_HEADER,
    DivergenceError,
    EfMomentum,
    MlmcCodec,
    RandK,
    Uncompressed,
    make_codec,
    read_csv,
    run_baseline,
    run_mlmc_sgd,
    run_parallel_sgd,
    simulate,
    step_size_grid,
    tune_step_size,
    variance_probe,
)


@pytest.fixture(autouse=True)
def quiet_eta_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def plain_sgd(problem, T, eta, seed):
    """Independent reference loop for uncompressed data-parallel SGD."""
    x = problem.x0.copy()
    gaps = []
    for t in range(1, T + 1):
        g = [problem.stochastic_gradient(x, i, Rng(seed, i, t, NOISE)) for i in range(problem.num_workers)]
        agg = g[0].copy()
        for gi in g[1:]:
            agg += gi
        x = x - eta * (agg / problem.num_workers)
        gaps.append(problem.f(x) - problem.f_star)
    return np.array(gaps)


def test_noiseless_gd_is_monotone_and_converges():
    p = make_quadratic(10, 1, L_target=1.0, seed=0)
    rec = run_parallel_sgd(p, 300, 1.0, seed=0)
    gaps = rec.column("gap")
    # f(x) - f* is computed by cancellation, so near the optimum it jitters by ulps
    assert np.all(np.diff(gaps) <= 8 * np.finfo(float).eps * (1 + abs(p.f_star)))
    assert gaps[-1] < 1e-6 * gaps[0]


def test_zero_iterations_keep_only_the_start():
    p = make_quadratic(3, 2, xi_target=1.0)
    rec = run_parallel_sgd(p, 0, 0.1, seed=0)
    assert len(rec.rows) == 1 and rec.rows[0].t == 0 and rec.total_bits == 0
    assert rec.csv_text() == CSV_HEADER + "\n"


def test_sgd_matches_independent_loop():
    p = make_quadratic(6, 3, xi_target=0.5, sigma=0.3, seed=2)
    rec = run_parallel_sgd(p, 50, 0.2, seed=11)
    assert np.array_equal(rec.column("gap")[1:], plain_sgd(p, 50, 0.2, 11))


def test_single_worker_matches_single_machine_sgd():
    p = make_quadratic(5, 1, sigma=0.2, seed=1)
    x = p.x0.copy()
    for t in range(1, 21):
        x = x - 0.3 * p.stochastic_gradient(x, 0, Rng(4, 0, t, NOISE))
    rec = run_parallel_sgd(p, 20, 0.3, seed=4)
    assert rec.final_gap == p.f(x) - p.f_star


def test_identity_mlmc_and_full_rand_k_reproduce_sgd_bitwise():
    p = make_quadratic(8, 4, xi_target=1.0, sigma=0.5, seed=3)
    ref = run_parallel_sgd(p, 40, 0.25, seed=5)
    for rec in (
        run_mlmc_sgd(p, Identity(), "adaptive", 40, 0.25, seed=5),
        run_baseline(p, "rand_k", 40, 0.25, seed=5, k=8),
    ):
        assert np.array_equal(rec.column("gap"), ref.column("gap"))


def test_lossless_ef_is_momentum_sgd():
    p = make_quadratic(4, 2, xi_target=1.0, sigma=0.1, seed=6)
    beta, eta, T = 0.9, 0.2, 30
    x = p.x0.copy()
    m = [np.zeros(4), np.zeros(4)]
    gaps = []
    for t in range(1, T + 1):
        for i in range(2):
            m[i] = (1 - beta) * m[i] + beta * p.stochastic_gradient(x, i, Rng(0, i, t, NOISE))
        x = x - eta * ((m[0] + m[1]) / 2)
        gaps.append(p.f(x) - p.f_star)
    rec = simulate(p, EfMomentum(k=None, beta=beta), T, eta, seed=0)
    assert np.array_equal(rec.column("gap")[1:], gaps)


def test_adaptive_level_frequencies_follow_residual_norms():
    v = np.array([3.0, -1.0])
    codec = MlmcCodec(TopK(), "adaptive")
    codec.reset(2, 1)
    n = 10**4
    levels = np.array([codec.encode(v, 0, t, 17)[2] for t in range(1, n + 1)])
    p = 3.0 / 4.0  # Delta = (3, 1)
    freq = np.mean(levels == 1)
    assert abs(freq - p) <= 5 * math.sqrt(p * (1 - p) / n)


def test_fixed_point_bits_are_exact():
    p = make_exp_decay_quadratic(1000, 4, r=0.01, sigma=0.1, seed=0)
    rec = run_mlmc_sgd(p, FixedPoint(), "static", 10, 0.1, seed=0)
    assert rec.total_bits == 4 * 10 * (2 * 1000 + 70)
    assert all(sum(r.level_hist.values()) == 4 for r in rec.rows[1:])


def test_uncompressed_bits():
    p = make_quadratic(7, 3, xi_target=1.0)
    assert run_parallel_sgd(p, 5, 0.1, seed=0).total_bits == 5 * 3 * 64 * 7


def test_parallel_workers_give_identical_output():
    p = make_quadratic(20, 4, xi_target=1.0, sigma=0.2, seed=1)
    a = simulate(p, MlmcCodec(SegmentedTopK(3), "adaptive"), 30, 0.2, seed=2)
    b = simulate(p, MlmcCodec(SegmentedTopK(3), "adaptive"), 30, 0.2, seed=2, parallel=True)
    assert a.csv_text() == b.csv_text()


def test_divergence_guard():
    p = make_quadratic(5, 1, seed=0)
    with pytest.raises(DivergenceError) as info:
        run_parallel_sgd(p, 500, 5.0, seed=0)
    assert info.value.record.diverged
    assert info.value.record.final_gap > 1e6 * info.value.record.rows[0].gap


def test_large_step_warns():
    p = make_quadratic(3, 1, seed=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        run_parallel_sgd(p, 1, 0.9, seed=0)
    assert any("exceeds" in str(w.message) for w in caught)


def test_worker_count_override():
    p = make_quadratic(4, 1, sigma=0.1, seed=0)
    rec = run_parallel_sgd(p, 3, 0.1, seed=0, M=16)
    assert rec.total_bits == 3 * 16 * 64 * 4
    with pytest.raises(ValueError):
        run_parallel_sgd(make_quadratic(4, 2, xi_target=1.0), 3, 0.1, seed=0, M=8)


# variance probe -----------------------------------------------------------------


def test_probe_is_zero_without_noise_or_compression():
    p = make_quadratic(6, 4, seed=0)
    mean, se = variance_probe(p, Uncompressed(), np.ones(6), 50)
    assert mean == 0 and se == 0
    rec = run_parallel_sgd(p, 5, 0.1, seed=0)
    assert np.all(rec.column("var_probe")[1:] == 0)


def test_probe_matches_noise_over_workers():
    sigma, M = 0.8, 4
    p = make_quadratic(5, M, sigma=sigma, seed=1)
    mean, se = variance_probe(p, Uncompressed(), np.zeros(5), 4000, seed=3)
    assert abs(mean - sigma**2 / M) <= 5 * se


def test_probe_matches_analytic_compression_variance():
    # noiseless heterogeneous workers, static law: E||g - grad||^2 = sum_i var_i / M^2
    p = make_quadratic(6, 2, xi_target=1.0, seed=4)
    x = np.full(6, 0.5)
    comp = TopK()
    dist = static_distribution(comp, 6)
    want = sum(analytic_variance(comp, p.grad_i(x, i), dist).analytic_comp_variance for i in range(2)) / 4
    mean, se = variance_probe(p, MlmcCodec(comp, "static", dist), x, 6000, seed=7)
    assert abs(mean - want) <= 5 * se


def test_adaptive_probe_matches_analytic_variance():
    # ||r/p||^2 is the same for every level here, but the error against grad f is not
    p = make_quadratic(6, 1, seed=4)
    x = np.full(6, 0.5)
    g = p.grad(x)
    want = analytic_variance(TopK(), g, adaptive_distribution(TopK(), g)).analytic_comp_variance
    mean, se = variance_probe(p, MlmcCodec(TopK(), "adaptive"), x, 4000)
    assert abs(mean - want) <= 5 * se


# output and tuning ----------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    p = make_sign_conflict_problem()
    rec = simulate(p, MlmcCodec(TopK(), "adaptive"), 25, 0.25, seed=1)
    path = tmp_path / "run.csv"
    rec.write_csv(path)
    rows = read_csv(path)
    assert [r["t"] for r in rows] == list(range(1, 26))
    for r, want in zip(rows, rec.rows[1:]):
        assert r["gap"] == want.gap and r["cum_bits"] == want.cum_bits
        assert r["var_probe"] == want.var_probe
    assert not list(tmp_path.glob(".tmp-*"))


def test_gap_at_bits():
    p = make_quadratic(3, 1, seed=0)
    rec = run_parallel_sgd(p, 10, 0.5, seed=0)
    per = 64 * 3
    assert rec.gap_at_bits(0) == rec.rows[0].gap
    assert rec.gap_at_bits(3 * per + 1) == rec.rows[3].gap
    assert rec.gap_at_bits(10**9) == rec.final_gap


def test_tune_step_size_skips_diverged_runs():
    p = make_quadratic(5, 1, seed=0)
    best, records = tune_step_size(lambda e: run_parallel_sgd(p, 200, e, seed=0), [0.01, 1.0, 50.0])
    assert best.eta == 1.0
    assert records[2].diverged
    with pytest.raises(RuntimeError):
        tune_step_size(lambda e: run_parallel_sgd(p, 200, e, seed=0), [50.0, 100.0])


def test_step_size_grid():
    assert step_size_grid(2.0) == [2.0**e / 2.0 for e in range(-8, 1)]


def test_make_codec_errors():
    with pytest.raises(ValueError, match="needs k"):
        make_codec("rand_k")
    with pytest.raises(ValueError, match="needs a compressor"):
        make_codec("mlmc")
    with pytest.raises(ValueError, match="unknown method kind"):
        make_codec("zip")
    assert isinstance(make_codec("rand_k", k=3), RandK)
    assert make_codec("mlmc", "stopk", "static", s=4).name == "mlmc-stopk-static"
