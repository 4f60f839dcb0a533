"""Declarative experiment configs, stored as YAML.

A config names one problem, a list of methods, the iteration budget, the
step size (fixed or a grid to tune over) and the seeds. Every field is a
plain scalar or list, so ``load(dump(c)) == c``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from typing import Optional

import yaml

from .compressors import COMPRESSOR_NAMES

PROBLEM_TYPES = ("quadratic", "exp_decay", "sign_conflict", "logistic")
METHOD_KINDS = ("sgd", "mlmc", "rand_k", "qsgd", "topk_direct", "ef_momentum")
DIST_MODES = ("static", "adaptive")


class ConfigError(ValueError):
    """Invalid config; ``field`` is the dotted path of the offending entry."""

    def __init__(self, field_path: str, message: str):
        super().__init__(f"{field_path}: {message}")
        self.field = field_path


@dataclass(frozen=True)
class ProblemSpec:
    type: str = "quadratic"
    d: int = 10
    M: int = 1
    sigma: float = 0.0
    xi: float = 0.0
    L: float = 1.0
    mu: Optional[float] = None
    r: Optional[float] = None
    a: float = 2.0
    seed: int = 0
    strict_noise: bool = False


@dataclass(frozen=True)
class MethodSpec:
    name: str
    kind: str
    compressor: Optional[str] = None
    dist: str = "adaptive"
    s: Optional[int] = None
    k: Optional[int] = None
    levels: Optional[int] = None
    beta: Optional[float] = None
    scale: Optional[float] = None
    c: Optional[float] = None
    num_levels: Optional[int] = None


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    problem: ProblemSpec
    methods: tuple
    T: int
    seeds: tuple = (0,)
    eta: Optional[float] = None
    eta_grid: Optional[tuple] = None
    output_dir: str = "runs"
    divergence_factor: float = 1e6
    parallel: bool = False

    def to_dict(self) -> dict:
        out = asdict(self)
        out["methods"] = [asdict(m) for m in self.methods]
        out["seeds"] = list(self.seeds)
        if self.eta_grid is not None:
            out["eta_grid"] = list(self.eta_grid)
        return out

    def etas(self, smoothness: float) -> list[float]:
        """Step sizes to try; ``eta_grid: auto`` expands to ``2^-8..2^0`` over ``L``."""
        if self.eta is not None:
            return [self.eta]
        if self.eta_grid == ("auto",):
            return [2.0**e / smoothness for e in range(-8, 1)]
        return list(self.eta_grid)


# coercion --------------------------------------------------------------------


def _int(path, value, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    try:
        out = int(value)
    except ValueError:
        raise ConfigError(path, f"expected an integer, got {value!r}") from None
    if out != float(value):
        raise ConfigError(path, f"expected an integer, got {value!r}")
    if minimum is not None and out < minimum:
        raise ConfigError(path, f"must be >= {minimum}, got {out}")
    return out


def _float(path, value, positive=False, nonneg=False):
    # YAML 1.1 reads "1e6" as a string, so numeric strings are accepted
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    try:
        out = float(value)
    except ValueError:
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if not math.isfinite(out):
        raise ConfigError(path, f"must be finite, got {value!r}")
    if positive and not out > 0:
        raise ConfigError(path, f"must be > 0, got {out}")
    if nonneg and out < 0:
        raise ConfigError(path, f"must be >= 0, got {out}")
    return out


def _bool(path, value):
    if not isinstance(value, bool):
        raise ConfigError(path, f"expected true/false, got {value!r}")
    return value


def _str(path, value):
    if not isinstance(value, str) or not value:
        raise ConfigError(path, f"expected a non-empty string, got {value!r}")
    return value


def _mapping(path, value):
    if not isinstance(value, dict):
        raise ConfigError(path, "expected a mapping")
    return value


def _unknown_keys(path, raw: dict, cls):
    allowed = {f.name for f in fields(cls)}
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}" if path else str(key), "unknown field")


def _problem(raw) -> ProblemSpec:
    raw = _mapping("problem", raw)
    _unknown_keys("problem", raw, ProblemSpec)
    kw = {}
    if "type" in raw:
        kw["type"] = _str("problem.type", raw["type"])
        if kw["type"] not in PROBLEM_TYPES:
            raise ConfigError("problem.type", f"unknown problem type {kw['type']!r} (expected one of {', '.join(PROBLEM_TYPES)})")
    for key in ("d", "M"):
        if key in raw:
            kw[key] = _int(f"problem.{key}", raw[key], minimum=1)
    if "seed" in raw:
        kw["seed"] = _int("problem.seed", raw["seed"], minimum=0)
    for key in ("sigma", "xi"):
        if key in raw:
            kw[key] = _float(f"problem.{key}", raw[key], nonneg=True)
    for key in ("L", "a"):
        if key in raw:
            kw[key] = _float(f"problem.{key}", raw[key], positive=True)
    for key in ("mu", "r"):
        if raw.get(key) is not None:
            kw[key] = _float(f"problem.{key}", raw[key], positive=True)
    if "strict_noise" in raw:
        kw["strict_noise"] = _bool("problem.strict_noise", raw["strict_noise"])
    spec = ProblemSpec(**kw)
    if spec.type == "exp_decay" and spec.r is None:
        raise ConfigError("problem.r", "exp_decay problems need a decay rate")
    if spec.type == "sign_conflict":
        if spec.d != 2 or spec.M != 2:
            raise ConfigError("problem.d", "sign_conflict is fixed at d=2, M=2")
        if not spec.a > 1:
            raise ConfigError("problem.a", "must be > 1")
    return spec


def _method(i, raw) -> MethodSpec:
    path = f"methods[{i}]"
    raw = _mapping(path, raw)
    _unknown_keys(path, raw, MethodSpec)
    if "kind" not in raw:
        raise ConfigError(f"{path}.kind", "missing")
    kind = _str(f"{path}.kind", raw["kind"])
    if kind not in METHOD_KINDS:
        raise ConfigError(f"{path}.kind", f"unknown method {kind!r} (expected one of {', '.join(METHOD_KINDS)})")
    kw = dict(kind=kind, name=_str(f"{path}.name", raw.get("name", kind)))
    if raw.get("compressor") is not None:
        comp = _str(f"{path}.compressor", raw["compressor"])
        if comp not in COMPRESSOR_NAMES:
            raise ConfigError(f"{path}.compressor", f"unknown compressor {comp!r} (expected one of {', '.join(COMPRESSOR_NAMES)})")
        kw["compressor"] = comp
    if "dist" in raw:
        dist = _str(f"{path}.dist", raw["dist"])
        if dist not in DIST_MODES:
            raise ConfigError(f"{path}.dist", f"unknown distribution mode {dist!r} (expected static or adaptive)")
        kw["dist"] = dist
    for key in ("s", "k", "num_levels"):
        if raw.get(key) is not None:
            kw[key] = _int(f"{path}.{key}", raw[key], minimum=1)
    if raw.get("levels") is not None:
        kw["levels"] = _int(f"{path}.levels", raw["levels"], minimum=2)
    for key in ("scale", "c"):
        if raw.get(key) is not None:
            kw[key] = _float(f"{path}.{key}", raw[key], positive=True)
    if raw.get("beta") is not None:
        kw["beta"] = _float(f"{path}.beta", raw["beta"], positive=True)
        if kw["beta"] > 1:
            raise ConfigError(f"{path}.beta", "must be in (0, 1]")
    m = MethodSpec(**kw)
    if m.kind == "mlmc" and m.compressor is None:
        raise ConfigError(f"{path}.compressor", "mlmc methods need a compressor")
    if m.kind != "mlmc" and m.compressor is not None:
        raise ConfigError(f"{path}.compressor", f"only mlmc methods take a compressor, not {m.kind}")
    if m.compressor == "stopk" and m.s is None:
        raise ConfigError(f"{path}.s", "stopk needs a segment size")
    if m.kind in ("rand_k", "topk_direct") and m.k is None:
        raise ConfigError(f"{path}.k", f"{m.kind} needs k")
    return m


def from_dict(raw) -> ExperimentConfig:
    raw = _mapping("<root>", raw)
    _unknown_keys("", raw, ExperimentConfig)
    for key in ("name", "problem", "methods", "T"):
        if key not in raw:
            raise ConfigError(key, "missing")
    name = _str("name", raw["name"])
    if any(ch in name for ch in "/\\") or name.startswith("."):
        raise ConfigError("name", "must be usable as a file name")
    problem = _problem(raw["problem"])
    if not isinstance(raw["methods"], list) or not raw["methods"]:
        raise ConfigError("methods", "expected a non-empty list")
    methods = tuple(_method(i, m) for i, m in enumerate(raw["methods"]))
    names = [m.name for m in methods]
    for i, n in enumerate(names):
        if names.index(n) != i:
            raise ConfigError(f"methods[{i}].name", f"duplicate method name {n!r}")
    T = _int("T", raw["T"], minimum=0)
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ConfigError("seeds", "expected a non-empty list")
    seeds = tuple(_int(f"seeds[{i}]", s, minimum=0) for i, s in enumerate(seeds))
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "duplicate seeds")
    eta = raw.get("eta")
    grid = raw.get("eta_grid")
    if (eta is None) == (grid is None):
        raise ConfigError("eta", "give exactly one of eta and eta_grid")
    if eta is not None:
        eta = _float("eta", eta, positive=True)
    if grid is not None:
        if grid == "auto":
            grid = ("auto",)
        elif isinstance(grid, list) and grid:
            grid = tuple(_float(f"eta_grid[{i}]", g, positive=True) for i, g in enumerate(grid))
        else:
            raise ConfigError("eta_grid", "expected a non-empty list or 'auto'")
    kw = dict(name=name, problem=problem, methods=methods, T=T, seeds=seeds, eta=eta, eta_grid=grid)
    if "output_dir" in raw:
        kw["output_dir"] = _str("output_dir", raw["output_dir"])
    if "divergence_factor" in raw:
        kw["divergence_factor"] = _float("divergence_factor", raw["divergence_factor"], positive=True)
    if "parallel" in raw:
        kw["parallel"] = _bool("parallel", raw["parallel"])
    return ExperimentConfig(**kw)


def loads(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as err:
        raise ConfigError("<root>", f"not valid YAML: {err}") from None
    return from_dict(raw)


def load(path) -> ExperimentConfig:
    with open(path) as fh:
        return loads(fh.read())


def dumps(config: ExperimentConfig) -> str:
    d = config.to_dict()
    if d["eta_grid"] == ["auto"]:
        d["eta_grid"] = "auto"
    return yaml.safe_dump(d, sort_keys=False)


def dump(config: ExperimentConfig, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(config))
