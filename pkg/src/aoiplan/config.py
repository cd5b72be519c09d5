"""Scenario configuration: a commented YAML tree holding the default scenario."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from . import radio, traffic
from .marl import Hyperparams


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


DEFAULT_AOI_GRID = [float(a) for a in range(0, 101, 10)]
DEFAULT_DELTA_M = [5.0, 10.0, 15.0, 20.0]


@dataclass
class NetworkConfig:
    nx: int = 4
    ny: int = 4
    horizontal_length_m: float = 250.0
    vertical_length_m: float = 433.0
    horizontal_free_flow_s: float = 18.0
    vertical_free_flow_s: float = 31.0
    capacity_veh_h: float = 30.0
    total_demand_veh_h: float = 240.0
    alpha: float = traffic.BPR_ALPHA
    beta: float = traffic.BPR_BETA
    file: str | None = None  # optional network description overriding the grid

    def build(self) -> traffic.RoadNetwork:
        if self.file:
            return traffic.RoadNetwork.load(self.file)
        return traffic.grid_network(self.nx, self.ny, self.horizontal_length_m, self.vertical_length_m,
                                    self.horizontal_free_flow_s, self.vertical_free_flow_s,
                                    self.capacity_veh_h, self.total_demand_veh_h)


@dataclass
class SweepConfig:
    aoi_grid_ms: list = field(default_factory=lambda: list(DEFAULT_AOI_GRID))
    delta_m: list = field(default_factory=lambda: list(DEFAULT_DELTA_M))
    tolerance: float = 1e-4
    max_iterations: int = 500


@dataclass
class ScenarioConfig:
    seed: int = 0
    num_cvs: int = 20
    episodes: int = 2000
    eval_episodes: int = 20
    reposition: str = "uniform"
    out_dir: str = "runs/default"
    channel: radio.ChannelParams = field(default_factory=radio.ChannelParams)
    grid: radio.GridGeometry = field(default_factory=radio.GridGeometry)
    hyperparams: Hyperparams = field(default_factory=Hyperparams)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)

    # -- (de)serialisation ------------------------------------------------

    SECTIONS = {"channel": radio.ChannelParams, "grid": radio.GridGeometry,
                "hyperparams": Hyperparams, "network": NetworkConfig, "sweep": SweepConfig}

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name in self.SECTIONS:
                sec = {}
                for sf in fields(v):
                    x = getattr(v, sf.name)
                    sec[sf.name] = list(x) if isinstance(x, tuple) else copy.deepcopy(x)
                out[f.name] = sec
            else:
                out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        for key in data:
            if key not in known:
                raise ConfigError(key, "unknown configuration key")
        kwargs = {}
        for name, section_cls in cls.SECTIONS.items():
            raw = data.pop(name, None) or {}
            if not isinstance(raw, dict):
                raise ConfigError(name, "must be a mapping")
            allowed = {f.name for f in fields(section_cls)}
            for key in raw:
                if key not in allowed:
                    raise ConfigError(f"{name}.{key}", "unknown configuration key")
            try:
                kwargs[name] = section_cls(**raw)
            except (ValueError, TypeError) as exc:
                bad = _guess_field(str(exc), raw)
                raise ConfigError(f"{name}.{bad}" if bad else name, str(exc)) from exc
        cfg = cls(**data, **kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides=None):
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config not found: {path}")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be a mapping")
        for key, value in (overrides or {}).items():
            _set_dotted(data, key, value)
        return cls.from_dict(data)

    def with_overrides(self, overrides):
        data = self.to_dict()
        for key, value in (overrides or {}).items():
            _set_dotted(data, key, value)
        return ScenarioConfig.from_dict(data)

    def dump(self, path=None):
        text = DEFAULT_HEADER + yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)
        if path is not None:
            Path(path).write_text(text)
        return text

    # -- validation -------------------------------------------------------

    def validate(self):
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("seed", "must be a non-negative integer")
        if not isinstance(self.num_cvs, int) or self.num_cvs < 1:
            raise ConfigError("num_cvs", "must be an integer >= 1")
        if not isinstance(self.episodes, int) or self.episodes < 0:
            raise ConfigError("episodes", "must be an integer >= 0")
        if not isinstance(self.eval_episodes, int) or self.eval_episodes < 1:
            raise ConfigError("eval_episodes", "must be an integer >= 1")
        if self.reposition not in ("uniform", "mobility"):
            raise ConfigError("reposition", "must be 'uniform' or 'mobility'")
        g = self.grid
        if g.nx < 2 or g.ny < 2 or g.dx <= 0 or g.dy <= 0:
            raise ConfigError("grid", "needs nx, ny >= 2 and positive spacings")
        hp = self.hyperparams
        if hp.optimizer not in ("adam", "sgd"):
            raise ConfigError("hyperparams.optimizer", "must be 'adam' or 'sgd'")
        if hp.dtype not in ("float32", "float64"):
            raise ConfigError("hyperparams.dtype", "must be 'float32' or 'float64'")
        n = self.network
        for name in ("horizontal_length_m", "vertical_length_m", "horizontal_free_flow_s",
                     "vertical_free_flow_s", "capacity_veh_h"):
            if not getattr(n, name) > 0:
                raise ConfigError(f"network.{name}", "must be > 0")
        if n.total_demand_veh_h < 0:
            raise ConfigError("network.total_demand_veh_h", "must be >= 0")
        if n.alpha < 0 or n.beta < 0:
            raise ConfigError("network.alpha", "BPR parameters must be >= 0")
        s = self.sweep
        if not s.aoi_grid_ms:
            raise ConfigError("sweep.aoi_grid_ms", "must not be empty")
        for a in s.aoi_grid_ms:
            if not 0 <= float(a) <= self.channel.aoi_max_ms:
                raise ConfigError("sweep.aoi_grid_ms", f"value {a} outside [0, aoi_max_ms]")
        if not s.delta_m or any(float(d) < 0 for d in s.delta_m):
            raise ConfigError("sweep.delta_m", "needs at least one value, all >= 0")
        if s.tolerance <= 0:
            raise ConfigError("sweep.tolerance", "must be > 0")
        return self


def _guess_field(message, raw):
    for key in raw:
        if key in message:
            return key
    return None


def _set_dotted(data, key, value):
    parts = key.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(key, "cannot override inside a non-mapping value")
    node[parts[-1]] = value


DEFAULT_HEADER = """\
# Scenario configuration.
# channel:     radio link budget and AoI bookkeeping (carrier 2 GHz, 3 x 180 kHz subchannels,
#              -114 dBm noise, 30 dBm max power, 100 ms message budget, 1 ms slots).
#              rate_floor_bps is the minimum rate counted as a delivered update.
# grid:        road grid the CVs drive on; BS sits at its centre.
# hyperparams: learner settings (buffer 100000, batch 64, actor 1024/512, critics 1024/512/256,
#              lr 1e-4 / 1e-3, discount 0.99, soft update 0.0005).
# network:     urban assignment network (16 nodes, 48 roads, 30 veh/h, 240 veh/h demand,
#              BPR 0.15 / 4).
# sweep:       AoI grid [ms] and capacity-error magnitudes delta_m [veh/h].
"""
