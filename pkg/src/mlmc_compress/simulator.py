"""Parameter-server SGD loops with compressed worker-to-server messages.

Every method is a *codec*: per worker and iteration it turns the stochastic
gradient into the vector the server averages, and reports the bits sent and
the sampled level (if any). One loop drives all of them, so the uncompressed,
MLMC and baseline runs share exactly the same arithmetic.
"""

from __future__ import annotations

import io
import math
import os
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import baselines
from .compressors import VALUE_BITS, MultilevelCompressor, make_compressor
from .core import BASELINE, LEVEL, NOISE, Rng
from .mlmc import LevelDistribution, adaptive_estimate, estimate, static_distribution

CSV_HEADER = "t,gap,grad_norm_sq,cum_bits,level_hist,var_probe"


class DivergenceError(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class Row:
    t: int
    gap: float
    grad_norm_sq: float
    cum_bits: int
    level_hist: dict
    var_probe: float

    def csv_line(self) -> str:
        hist = ";".join(f"{l}:{c}" for l, c in sorted(self.level_hist.items()))
        return f"{self.t},{self.gap!r},{self.grad_norm_sq!r},{self.cum_bits},{hist},{self.var_probe!r}"


@dataclass
class RunRecord:
    """Per-iteration metrics. ``rows[0]`` is the starting point (t = 0).

    Row ``t`` holds the gap and gradient norm after the ``t``-th update, the
    bits sent through iteration ``t``, that iteration's sampled levels and
    the one-draw estimate ``||g_t - grad f(x_t)||^2`` of the aggregate variance.
    """

    method: str
    seed: int
    eta: float
    rows: list = field(default_factory=list)
    diverged: bool = False

    @property
    def final_gap(self) -> float:
        return self.rows[-1].gap

    @property
    def total_bits(self) -> int:
        return self.rows[-1].cum_bits

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def csv_text(self) -> str:
        buf = io.StringIO()
        buf.write(CSV_HEADER + "\n")
        for r in self.rows[1:]:
            buf.write(r.csv_line() + "\n")
        return buf.getvalue()

    def write_csv(self, path) -> None:
        write_atomic(path, self.csv_text())

    def gap_at_bits(self, budget: float) -> float:
        """Gap of the last row whose cumulative bits do not exceed ``budget``."""
        best = self.rows[0].gap
        for r in self.rows:
            if r.cum_bits > budget:
                break
            best = r.gap
        return best


def write_atomic(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> list[dict]:
    rows = []
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rec = dict(zip(header, parts))
            rows.append(
                dict(
                    t=int(rec["t"]),
                    gap=float(rec["gap"]),
                    grad_norm_sq=float(rec["grad_norm_sq"]),
                    cum_bits=int(rec["cum_bits"]),
                    level_hist=rec["level_hist"],
                    var_probe=float(rec["var_probe"]),
                )
            )
    return rows


# codecs ----------------------------------------------------------------------


class Codec:
    """Turns one worker's gradient into ``(contribution, bits, level)``."""

    name = "codec"

    def reset(self, d: int, M: int) -> None:
        pass

    def encode(self, v: np.ndarray, worker: int, t: int, seed: int):
        raise NotImplementedError


class Uncompressed(Codec):
    name = "sgd"

    def encode(self, v, worker, t, seed):
        return v, VALUE_BITS * v.size, None


class MlmcCodec(Codec):
    """MLMC estimate with a fixed level law or the per-vector adaptive one."""

    def __init__(self, compressor: MultilevelCompressor, mode: str = "adaptive",
                 dist: Optional[LevelDistribution] = None):
        if mode not in ("static", "adaptive"):
            raise ValueError(f"unknown distribution mode {mode!r}")
        self.compressor = compressor
        self.mode = mode
        self.dist = dist
        self.name = f"mlmc-{compressor.name}-{mode}"

    def reset(self, d, M):
        if self.mode == "static" and self.dist is None:
            self.dist = static_distribution(self.compressor, d)

    def encode(self, v, worker, t, seed):
        rng = Rng(seed, worker, t, LEVEL)
        if self.mode == "adaptive":
            est = adaptive_estimate(self.compressor, v, rng)
        else:
            est = estimate(self.compressor, v, self.dist, rng)
        return est.estimate, est.message.bit_cost, est.sampled_level


class RandK(Codec):
    name = "rand_k"

    def __init__(self, k: int):
        self.k = int(k)

    def reset(self, d, M):
        if not 1 <= self.k <= d:
            raise ValueError(f"k={self.k} outside [1, {d}]")

    def encode(self, v, worker, t, seed):
        out = baselines.rand_k(v, self.k, Rng(seed, worker, t, BASELINE))
        return out, baselines.rand_k_bits(v.size, self.k), None


class Qsgd(Codec):
    name = "qsgd"

    def __init__(self, levels: int = 2):
        self.levels = int(levels)

    def encode(self, v, worker, t, seed):
        out, bits = baselines.qsgd_quantize(v, self.levels, Rng(seed, worker, t, BASELINE))
        return out, bits, None


class TopKDirect(Codec):
    name = "topk_direct"

    def __init__(self, k: int):
        self.k = int(k)

    def reset(self, d, M):
        if not 1 <= self.k <= d:
            raise ValueError(f"k={self.k} outside [1, {d}]")

    def encode(self, v, worker, t, seed):
        return baselines.top_k(v, self.k), baselines.top_k_bits(v.size, self.k), None


class EfMomentum(Codec):
    """EF21-SGDM; the server averages the workers' ``h_i``."""

    name = "ef_momentum"

    def __init__(self, k: Optional[int] = None, beta: float = 0.9):
        self.k = k
        self.beta = float(beta)
        self.states = []

    def reset(self, d, M):
        self.states = [baselines.ErrorFeedbackState.zeros(d, self.beta) for _ in range(M)]

    def _compress(self, u):
        if self.k is None:
            return u, VALUE_BITS * u.size
        return baselines.top_k(u, self.k), baselines.top_k_bits(u.size, self.k)

    def encode(self, v, worker, t, seed):
        state, _, bits = baselines.ef_momentum_step(self.states[worker], v, self._compress, lossless=self.k is None)
        self.states[worker] = state
        return state.h, bits, None


def make_codec(kind: str, compressor: Optional[str] = None, dist: str = "adaptive", **params) -> Codec:
    """Build a codec from a method description (as found in configs)."""
    if kind == "sgd":
        return Uncompressed()
    if kind == "mlmc":
        if compressor is None:
            raise ValueError("mlmc method needs a compressor")
        cparams = {k: params[k] for k in ("s", "scale", "c", "num_levels") if params.get(k) is not None}
        return MlmcCodec(make_compressor(compressor, **cparams), dist)
    if kind in ("rand_k", "topk_direct") and params.get("k") is None:
        raise ValueError(f"{kind} needs k")
    if kind == "rand_k":
        return RandK(params["k"])
    if kind == "qsgd":
        return Qsgd(params.get("levels") or 2)
    if kind == "topk_direct":
        return TopKDirect(params["k"])
    if kind == "ef_momentum":
        return EfMomentum(params.get("k"), params.get("beta") or 0.9)
    raise ValueError(f"unknown method kind {kind!r}")


# the loop --------------------------------------------------------------------


def _worker_objective(problem, M: Optional[int]):
    if M is None or M == problem.num_workers:
        return problem.num_workers, lambda i: i
    if not getattr(problem, "homogeneous", False):
        raise ValueError("changing the worker count requires a homogeneous problem")
    return int(M), lambda i: 0


def simulate(
    problem,
    codec: Codec,
    T: int,
    eta: float,
    seed: int,
    M: Optional[int] = None,
    divergence_factor: float = 1e6,
    parallel: bool = False,
    method: Optional[str] = None,
) -> RunRecord:
    """Run ``T`` iterations of server-averaged SGD with the given codec."""
    if not eta > 0:
        raise ValueError("step size must be positive")
    M, fi = _worker_objective(problem, M)
    L = getattr(problem, "smoothness", None)
    if L is not None and eta > 1.0 / (2.0 * L):
        warnings.warn(f"eta={eta} exceeds 1/(2L)={1 / (2 * L):.4g}", stacklevel=2)
    d = problem.dim
    codec.reset(d, M)
    x = np.array(problem.x0, dtype=np.float64)
    gap0 = problem.f(x) - problem.f_star
    g0 = problem.grad(x)
    record = RunRecord(method or codec.name, seed, eta)
    record.rows.append(Row(0, gap0, float(np.dot(g0, g0)), 0, {}, math.nan))
    limit = divergence_factor * max(gap0, np.finfo(float).tiny)
    cum_bits = 0
    pool = ThreadPoolExecutor(max_workers=M) if parallel and M > 1 else None

    def work(i, x, t):
        v = problem.stochastic_gradient(x, fi(i), Rng(seed, i, t, NOISE))
        return codec.encode(v, i, t, seed)

    try:
        for t in range(1, T + 1):
            if pool is not None:
                results = list(pool.map(lambda i: work(i, x, t), range(M)))
            else:
                results = [work(i, x, t) for i in range(M)]
            # merge strictly in worker order
            agg = np.array(results[0][0], dtype=np.float64)
            hist = {}
            for i, (g, bits, level) in enumerate(results):
                if i:
                    agg += g
                cum_bits += int(bits)
                if level is not None:
                    hist[level] = hist.get(level, 0) + 1
            agg /= M
            err = agg - problem.grad(x)
            probe = float(np.dot(err, err))
            x = x - eta * agg
            gap = problem.f(x) - problem.f_star
            gx = problem.grad(x)
            record.rows.append(Row(t, gap, float(np.dot(gx, gx)), cum_bits, hist, probe))
            if not math.isfinite(gap) or gap > limit:
                record.diverged = True
                raise DivergenceError(f"{record.method}: gap {gap:.3g} exceeded guard at t={t}", record)
    finally:
        if pool is not None:
            pool.shutdown()
    return record


def run_parallel_sgd(problem, T: int, eta: float, seed: int, M: Optional[int] = None, **kw) -> RunRecord:
    """Data-parallel SGD without compression."""
    return simulate(problem, Uncompressed(), T, eta, seed, M=M, **kw)


def run_mlmc_sgd(problem, compressor: MultilevelCompressor, dist_mode, T: int, eta: float, seed: int,
                 M: Optional[int] = None, **kw) -> RunRecord:
    """MLMC-compressed SGD.

    ``dist_mode`` is ``"adaptive"``, ``"static"`` (the compressor's default
    static law) or an explicit :class:`LevelDistribution`.
    """
    if isinstance(dist_mode, LevelDistribution):
        codec = MlmcCodec(compressor, "static", dist_mode)
    else:
        codec = MlmcCodec(compressor, dist_mode)
    return simulate(problem, codec, T, eta, seed, M=M, **kw)


def run_baseline(problem, baseline: str, T: int, eta: float, seed: int, M: Optional[int] = None,
                 k: Optional[int] = None, levels: int = 2, beta: float = 0.9, **kw) -> RunRecord:
    """``baseline`` is one of ``rand_k``, ``qsgd``, ``topk_direct``, ``ef_momentum``."""
    if baseline not in ("rand_k", "qsgd", "topk_direct", "ef_momentum"):
        raise ValueError(f"unknown baseline {baseline!r}")
    codec = make_codec(baseline, k=k, levels=levels, beta=beta)
    return simulate(problem, codec, T, eta, seed, M=M, **kw)


def variance_probe(problem, codec: Codec, x, n_samples: int, seed: int = 0, M: Optional[int] = None):
    """Monte Carlo ``E||g - grad f(x)||^2`` of the aggregate at a fixed point.

    Returns ``(mean, stderr)``. Sample ``n`` uses iteration index ``n + 1``
    of every random stream.
    """
    M, fi = _worker_objective(problem, M)
    x = np.asarray(x, dtype=np.float64)
    codec.reset(problem.dim, M)
    target = problem.grad(x)
    vals = np.empty(n_samples)
    for n in range(n_samples):
        agg = None
        for i in range(M):
            v = problem.stochastic_gradient(x, fi(i), Rng(seed, i, n + 1, NOISE))
            g = codec.encode(v, i, n + 1, seed)[0]
            agg = np.array(g, dtype=np.float64) if agg is None else agg + g
        agg /= M
        err = agg - target
        vals[n] = np.dot(err, err)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_samples))


def step_size_grid(L: float, lo: int = -8, hi: int = 0) -> list[float]:
    return [2.0**e / L for e in range(lo, hi + 1)]


def tune_step_size(run: Callable[[float], RunRecord], etas: Sequence[float]):
    """Run every step size and keep the lowest final gap; diverged runs lose.

    Returns ``(best_record, records)``.
    """
    records = []
    for eta in etas:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            try:
                rec = run(eta)
            except DivergenceError as err:
                rec = err.record
        records.append(rec)
    ok = [r for r in records if not r.diverged and math.isfinite(r.final_gap)]
    if not ok:
        raise RuntimeError("every step size diverged")
    return min(ok, key=lambda r: r.final_gap), records
