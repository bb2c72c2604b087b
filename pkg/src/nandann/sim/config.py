"""Hardware configuration for the accelerator model, loadable from an INI file."""

from __future__ import annotations

import configparser
import math
from dataclasses import asdict, dataclass, fields


class SimError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    # storage geometry
    n_tiles: int = 16
    cores_per_tile: int = 32
    blocks_per_core: int = 64
    layers: int = 96
    ssl: int = 4
    n_bl: int = 36864
    granule_bytes: int = 128
    min_raw_cores: int = 32
    # timing
    core_read_ns: float = 300.0
    granule_ns: float = 25.0       # each extra granule behind one wordline setup
    core_hop_ns: float = 2.0       # per level of the in-tile H-tree
    tile_hop_ns: float = 4.0       # per level of the tile H-tree
    clock_ghz: float = 1.0
    n_queues: int = 256
    max_outstanding: int = 3       # fetches one queue keeps in flight
    sorter_width: int = 256
    adt_cycles_per_dim: dict | None = None
    bloom_cycles: int = 1          # per neighbor id checked
    # energy, pJ per event (storage column of the hardware table) and mW
    nand_read_pj: float = 4442.0
    core_bus_pj: float = 21.4
    tile_bus_pj: float = 198.6
    mac_pj_per_cycle: float = 1920.316 / 256   # queue dynamic power at 1 GHz
    sort_mw: float = 486.090
    pq_module_mw: float = 17.396
    bloom_pj: float = 4.579
    static_base_mw: float = 2141.752 - 2127.384
    static_per_queue_mw: float = 2127.384 / 256

    def __post_init__(self):
        ints = ("n_tiles", "cores_per_tile", "blocks_per_core", "layers", "ssl", "n_bl",
                "granule_bytes", "n_queues", "max_outstanding", "sorter_width")
        for name in ints:
            if getattr(self, name) < 1:
                raise SimError(f"{name} must be >= 1")
        if self.granule_bytes > self.n_bl // 8:
            raise SimError("read granularity exceeds the page")
        if self.core_read_ns <= 0 or self.clock_ghz <= 0:
            raise SimError("latencies and clock must be positive")
        if self.adt_cycles_per_dim is None:
            object.__setattr__(self, "adt_cycles_per_dim",
                               {"euclidean": 24, "angular": 8, "inner_product": 8})

    @property
    def n_cores(self) -> int:
        return self.n_tiles * self.cores_per_tile

    @property
    def pages_per_block(self) -> int:
        return self.layers * self.ssl

    @property
    def pages_per_core(self) -> int:
        return self.blocks_per_core * self.pages_per_block

    @property
    def core_bits(self) -> int:
        return self.pages_per_core * self.n_bl

    @property
    def capacity_bits(self) -> int:
        return self.n_cores * self.core_bits

    @property
    def granule_bits(self) -> int:
        return 8 * self.granule_bytes

    @property
    def bus_ns(self) -> float:
        """One-way H-tree latency between the engine and any core."""
        depth_core = math.ceil(math.log2(self.cores_per_tile)) if self.cores_per_tile > 1 else 0
        depth_tile = math.ceil(math.log2(self.n_tiles)) if self.n_tiles > 1 else 0
        return depth_core * self.core_hop_ns + depth_tile * self.tile_hop_ns

    @property
    def sort_cycles(self) -> int:
        return 2 * int(math.ceil(math.log2(self.sorter_width)))

    def cycles_ns(self, cycles: float) -> float:
        return cycles / self.clock_ghz

    def replace(self, **kw) -> "SimConfig":
        d = asdict(self)
        d.update(kw)
        return SimConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    # -- INI ----------------------------------------------------------------

    def save(self, path) -> None:
        cp = configparser.ConfigParser()
        cp["sim"] = {f.name: str(getattr(self, f.name)) for f in fields(self)
                     if f.name != "adt_cycles_per_dim"}
        cp["adt_cycles_per_dim"] = {k: str(v) for k, v in self.adt_cycles_per_dim.items()}
        with open(path, "w") as fh:
            cp.write(fh)

    @classmethod
    def load(cls, path) -> "SimConfig":
        cp = configparser.ConfigParser()
        if not cp.read(path):
            raise SimError(f"cannot read config {path}")
        return cls.from_parser(cp)

    @classmethod
    def from_parser(cls, cp: configparser.ConfigParser) -> "SimConfig":
        kinds = {f.name: f.type for f in fields(cls)}
        kw = {}
        if cp.has_section("sim"):
            for key, raw in cp["sim"].items():
                if key not in kinds or key == "adt_cycles_per_dim":
                    raise SimError(f"unknown sim setting {key!r}")
                kw[key] = float(raw) if kinds[key] == "float" else int(raw)
        if cp.has_section("adt_cycles_per_dim"):
            kw["adt_cycles_per_dim"] = {k: int(v) for k, v in cp["adt_cycles_per_dim"].items()}
        return cls(**kw)
