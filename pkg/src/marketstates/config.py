"""Run configuration, loaded from a TOML file.

Schema (every key optional except ``run.seed`` and ``input.prices``)::

    [input]
    prices = "prices.csv"        # wide or long CSV
    index = "index.csv"          # optional single-series index prices
    gap_policy = "drop"          # drop | strict
    return_kind = "log"          # log | simple

    [epochs]
    length = 20
    shift = 10
    on_degenerate = "raise"      # raise | drop

    [scan]
    epsilons = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    k_min = 4
    k_max = 10
    restarts = 1000
    init = "random"              # random | k-means++

    [mds]
    restarts = 8
    tol = 1e-9
    max_iter = 2000

    [surrogate]
    ensemble_factor = 3

    [run]
    seed = 2020
    output = "out"
    jobs = 1

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from marketstates.errors import ConfigError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

DEFAULT_EPSILONS = tuple(round(0.1 * i, 1) for i in range(10))

# section.key in the TOML file -> RunConfig field
_KEYS = {
    ("input", "prices"): "prices",
    ("input", "index"): "index",
    ("input", "gap_policy"): "gap_policy",
    ("input", "return_kind"): "return_kind",
    ("epochs", "length"): "epoch_length",
    ("epochs", "shift"): "shift",
    ("epochs", "on_degenerate"): "on_degenerate",
    ("scan", "epsilons"): "epsilons",
    ("scan", "k_min"): "k_min",
    ("scan", "k_max"): "k_max",
    ("scan", "restarts"): "restarts",
    ("scan", "init"): "kmeans_init",
    ("mds", "restarts"): "mds_restarts",
    ("mds", "tol"): "mds_tol",
    ("mds", "max_iter"): "mds_max_iter",
    ("surrogate", "ensemble_factor"): "ensemble_factor",
    ("run", "seed"): "seed",
    ("run", "output"): "output",
    ("run", "jobs"): "jobs",
}

# fields that do not influence numeric results
_NON_NUMERIC = {"output", "jobs"}


@dataclass(frozen=True)
class RunConfig:
    prices: str
    seed: int
    index: str | None = None
    gap_policy: str = "drop"
    return_kind: str = "log"
    epoch_length: int = 20
    shift: int = 10
    on_degenerate: str = "raise"
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    k_min: int = 4
    k_max: int = 10
    restarts: int = 1000
    kmeans_init: str = "random"
    mds_restarts: int = 8
    mds_tol: float = 1e-9
    mds_max_iter: int = 2000
    ensemble_factor: int = 3
    output: str = "out"
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        self.validate()

    def validate(self) -> None:
        if self.seed is None or isinstance(self.seed, bool) or not isinstance(self.seed, int):
            raise ConfigError("run.seed is mandatory and must be an integer")
        if not self.prices:
            raise ConfigError("input.prices is required")
        if self.gap_policy not in ("drop", "strict"):
            raise ConfigError(f"gap_policy must be drop or strict, got {self.gap_policy!r}")
        if self.return_kind not in ("log", "simple"):
            raise ConfigError(f"return_kind must be log or simple, got {self.return_kind!r}")
        if self.on_degenerate not in ("raise", "drop"):
            raise ConfigError(f"on_degenerate must be raise or drop, got {self.on_degenerate!r}")
        if self.epoch_length < 2 or not 1 <= self.shift <= self.epoch_length:
            raise ConfigError(f"invalid epochs: length={self.epoch_length} shift={self.shift}")
        if not self.epsilons:
            raise ConfigError("epsilon grid is empty")
        if any(not 0.0 <= e < 1.0 for e in self.epsilons):
            raise ConfigError(f"epsilons must lie in [0, 1): {self.epsilons}")
        if len(set(self.epsilons)) != len(self.epsilons):
            raise ConfigError("duplicate epsilons in grid")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ConfigError(f"empty k range [{self.k_min}, {self.k_max}]")
        for name in ("restarts", "mds_restarts", "mds_max_iter", "ensemble_factor", "jobs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.kmeans_init not in ("random", "k-means++"):
            raise ConfigError(f"unknown k-means init {self.kmeans_init!r}")

    @property
    def k_range(self) -> list[int]:
        return list(range(self.k_min, self.k_max + 1))

    def numeric_dict(self) -> dict:
        d = asdict(self)
        for k in _NON_NUMERIC:
            d.pop(k)
        d["epsilons"] = list(d["epsilons"])
        return d

    def hash(self) -> str:
        blob = json.dumps(self.numeric_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def with_overrides(self, **overrides) -> "RunConfig":
        clean = {k: v for k, v in overrides.items() if v is not None}
        try:
            return replace(self, **clean)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def from_mapping(data: dict, base_dir: str | Path | None = None) -> RunConfig:
    kwargs: dict = {}
    for section, body in data.items():
        if not isinstance(body, dict):
            raise ConfigError(f"top-level key {section!r} must be a table")
        for key, value in body.items():
            if (section, key) not in _KEYS:
                raise ConfigError(f"unknown config key {section}.{key}")
            kwargs[_KEYS[(section, key)]] = value
    if "seed" not in kwargs:
        raise ConfigError("run.seed is mandatory")
    if "prices" not in kwargs:
        raise ConfigError("input.prices is required")
    if base_dir is not None:
        for key in ("prices", "index", "output"):
            if kwargs.get(key) and not Path(kwargs[key]).is_absolute():
                kwargs[key] = str(Path(base_dir) / kwargs[key])
    names = {f.name for f in fields(RunConfig)}
    try:
        return RunConfig(**{k: v for k, v in kwargs.items() if k in names})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return from_mapping(data, path.parent)
