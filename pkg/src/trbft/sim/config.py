"""Simulation configuration, stored as JSON mirroring :class:`SimConfig` field for field."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional

from ..grouping import MIN_GROUP_SIZE, GroupingParams
from ..runtime import Timing


class ConfigInvalid(ValueError):
    pass


@dataclass
class NetworkModel:
    delay_min: int = 10
    delay_max: int = 10
    gst: int = 0
    pre_gst_delay_max: int = 50
    drop_rate: float = 0.0
    # ticks one message occupies a single shared medium; 0 disables contention
    tx_time: int = 0

    def validate(self):
        if not 1 <= self.delay_min <= self.delay_max:
            raise ConfigInvalid("need 1 <= delay_min <= delay_max")
        if self.pre_gst_delay_max < 1 or self.gst < 0:
            raise ConfigInvalid("pre_gst_delay_max must be positive and gst non-negative")
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigInvalid("drop_rate must lie in [0, 1)")
        if self.tx_time < 0:
            raise ConfigInvalid("tx_time must be non-negative")


@dataclass
class SimConfig:
    n_total: int
    k: int
    n: Optional[int] = None
    group_sizes: Optional[List[int]] = None
    grouping: str = "even"  # "even" contiguous blocks, or "hash" for the virtual-node ring
    seed: int = 0
    requests: int = 1
    batch_size: int = 1
    checkpoint_interval: int = 10
    network: NetworkModel = field(default_factory=NetworkModel)
    timing: Timing = field(default_factory=Timing)
    grouping_params: GroupingParams = field(default_factory=GroupingParams)
    faults: List[dict] = field(default_factory=list)
    non_tee: List[int] = field(default_factory=list)
    allow_out_of_bounds: bool = False
    strict_client_quorum: bool = False
    strict_safety: bool = False
    # keep simulating at least this long so timer-driven behavior can play out
    min_ticks: int = 0
    max_ticks: int = 2_000_000

    def __post_init__(self):
        if isinstance(self.network, dict):
            self.network = NetworkModel(**self.network)
        if isinstance(self.timing, dict):
            self.timing = Timing(**self.timing)
        if isinstance(self.grouping_params, dict):
            self.grouping_params = GroupingParams(**self.grouping_params)

    def sizes(self) -> List[int]:
        if self.group_sizes is not None:
            return list(self.group_sizes)
        n = self.n if self.n is not None else self.n_total // max(self.k, 1)
        return [n] * self.k

    def validate(self) -> "SimConfig":
        if self.k < 2:
            raise ConfigInvalid("need at least two groups")
        if self.grouping not in ("even", "hash"):
            raise ConfigInvalid(f"unknown grouping mode {self.grouping!r}")
        if self.grouping == "even":
            sizes = self.sizes()
            if len(sizes) != self.k:
                raise ConfigInvalid("group_sizes must list one size per group")
            if sum(sizes) != self.n_total:
                raise ConfigInvalid(f"group sizes sum to {sum(sizes)}, not N={self.n_total}")
            if self.n is not None and self.group_sizes is None and self.k * self.n != self.n_total:
                raise ConfigInvalid(f"N={self.n_total} != k*n = {self.k}*{self.n}")
            if min(sizes) < MIN_GROUP_SIZE:
                raise ConfigInvalid(f"every group needs at least {MIN_GROUP_SIZE} members")
        elif self.n_total < MIN_GROUP_SIZE * self.k:
            raise ConfigInvalid(f"{self.n_total} nodes cannot fill {self.k} groups")
        if self.requests < 0 or self.batch_size < 1 or self.checkpoint_interval < 1:
            raise ConfigInvalid("requests >= 0, batch_size >= 1 and checkpoint_interval >= 1 required")
        if any(not 0 <= i < self.n_total for i in self.non_tee):
            raise ConfigInvalid("non_tee ids must be replica ids")
        self.network.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data).validate()
        except ConfigInvalid:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str) -> "SimConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"bad JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigInvalid("config must be a JSON object")
        return cls.from_dict(data)


def load_config(path) -> SimConfig:
    return SimConfig.from_json(Path(path).read_text())


def save_config(cfg: SimConfig, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def overrides(cfg: SimConfig, **changes) -> SimConfig:
    data = cfg.to_dict()
    data.update(changes)
    return SimConfig.from_dict(data)


__all__ = ["ConfigInvalid", "NetworkModel", "SimConfig", "load_config", "save_config", "overrides"]
