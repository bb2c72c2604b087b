"""Experiment configuration, read from an INI file.

Every section is optional; missing keys take the defaults below. Lists are
comma separated. Example::

    [experiment]
    seed = 7

    [dataset]
    kind = sift
    n_base = 100000

    [search]
    L_list = 10, 20, 50, 100
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .sim.config import SimConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSection:
    kind: str = "toy"           # toy | sift | glove | gaussian | files
    n_base: int = 1000
    n_query: int = 100
    base: str = ""              # paths when kind = files
    queries: str = ""
    metric: str = "euclidean"
    k: int = 10


@dataclass(frozen=True)
class PQSection:
    M: int = 32
    C: int = 256
    iters: int = 25
    max_train: int = 100_000
    beta_percentile: float = 0.99
    beta_sample: int = 1000


@dataclass(frozen=True)
class GraphSection:
    R: int = 64
    L_build: int = 100
    alpha: float = 1.2


@dataclass(frozen=True)
class SearchSection:
    L: int = 50                 # operating point
    L_list: tuple = (10, 20, 30, 50, 75, 100, 150, 200)
    k: int = 10
    T_step: int = 4
    r: int = 2
    beta: float = 0.0           # 0 = use the calibrated value
    et: bool = True
    rerank: bool = True
    parallelism: int = 1


@dataclass(frozen=True)
class MappingSection:
    trace_samples: int = 2000
    trace_L: int = 50
    hot_fraction: float = 0.03


@dataclass(frozen=True)
class SimSection:
    config: str = ""            # optional INI file with hardware settings
    trace_queries: int = 600
    trace_L: int = 200
    trace_et: bool = False
    calibrate_util: float = 17.9   # target utilization at 32 queues; 0 disables
    calibrate_windows: tuple = (2, 3, 4, 5, 6, 7, 8)
    queue_sizes: tuple = (32, 64, 128, 256)
    hot_percentages: tuple = (0.0, 0.01, 0.03, 0.05, 0.07)


@dataclass(frozen=True)
class ErrorSection:
    rbers: tuple = (0.0, 1e-5, 1e-4, 1e-3)
    seed: int = 0
    scope: tuple = ("pq", "index", "raw")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    pq: PQSection = field(default_factory=PQSection)
    graph: GraphSection = field(default_factory=GraphSection)
    search: SearchSection = field(default_factory=SearchSection)
    mapping: MappingSection = field(default_factory=MappingSection)
    sim: SimSection = field(default_factory=SimSection)
    errors: ErrorSection = field(default_factory=ErrorSection)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self, *sections: str) -> str:
        """Stable hash of the named sections (all when none given) plus the seed."""
        d = self.to_dict()
        keep = {k: d[k] for k in (sections or d)} | {"seed": self.seed}
        return hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).hexdigest()[:16]

    def sim_config(self, base_dir: Path | None = None) -> SimConfig:
        if not self.sim.config:
            return SimConfig()
        p = Path(self.sim.config)
        if not p.is_absolute() and base_dir is not None:
            p = base_dir / p
        if not p.exists():
            raise ConfigError(f"sim config {p} does not exist")
        return SimConfig.load(p)

    def validate(self) -> "ExperimentConfig":
        if self.dataset.kind not in ("toy", "sift", "glove", "gaussian", "files"):
            raise ConfigError(f"unknown dataset kind {self.dataset.kind!r}")
        if self.dataset.kind == "files":
            for p in (self.dataset.base, self.dataset.queries):
                if not p or not Path(p).exists():
                    raise ConfigError(f"dataset file {p!r} does not exist")
        if not self.search.L_list:
            raise ConfigError("search.L_list is empty")
        if not self.sim.queue_sizes or not self.sim.hot_percentages or not self.errors.rbers:
            raise ConfigError("sweep grids must be non-empty")
        return self


_SECTIONS = {"dataset": DatasetSection, "pq": PQSection, "graph": GraphSection,
             "search": SearchSection, "mapping": MappingSection, "sim": SimSection,
             "errors": ErrorSection}


def _parse(value: str, default):
    if isinstance(default, bool):
        v = value.strip().lower()
        if v not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
            raise ConfigError(f"not a boolean: {value!r}")
        return v in ("true", "yes", "1", "on")
    if isinstance(default, tuple):
        items = [x.strip() for x in value.split(",") if x.strip()]
        proto = default[0] if default else ""
        return tuple(_parse(x, proto) for x in items)
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value.strip()


def load_config(path) -> ExperimentConfig:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keep key case (M, C, R, L_build)
    if not cp.read(path):
        raise ConfigError(f"cannot read config {path}")
    base = Path(path).resolve().parent
    kw = {}
    if cp.has_section("experiment"):
        for key, raw in cp["experiment"].items():
            if key != "seed":
                raise ConfigError(f"unknown setting experiment.{key}")
            try:
                kw["seed"] = int(raw)
            except ValueError as exc:
                raise ConfigError(f"bad seed {raw!r}") from exc
    for name, cls in _SECTIONS.items():
        if not cp.has_section(name):
            continue
        defaults = cls()
        known = {f.name for f in fields(cls)}
        vals = {}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown setting {name}.{key}")
            try:
                vals[key] = _parse(raw, getattr(defaults, key))
            except ValueError as exc:
                raise ConfigError(f"bad value for {name}.{key}: {raw!r}") from exc
        # relative paths are resolved against the config file
        for key in ("base", "queries", "config"):
            if vals.get(key) and not Path(vals[key]).is_absolute():
                vals[key] = str(base / vals[key])
        kw[name] = cls(**vals)
    for extra in set(cp.sections()) - set(_SECTIONS) - {"experiment"}:
        raise ConfigError(f"unknown section [{extra}]")
    return ExperimentConfig(**kw).validate()
