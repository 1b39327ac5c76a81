"""Declarative experiment configuration in TOML."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..estimators import ALGORITHMS

SCENARIOS = ("german_households", "us_power_grid", "synthetic")
BUDGET_MODES = ("homogeneous", "heterogeneous_closed", "heterogeneous_decentralized")
GRAPH_KINDS = ("file", "geometric", "complete", "path", "cycle")
REGIMES = ("signal_dp", "network_dp")

# scenario defaults, overridden by anything set explicitly in the file
PRESETS = {
    "german_households": {
        "graph": {"kind": "geometric", "n": 969, "radius": 0.1, "weights": "mh"},
        "signal": {"family": "lognormal", "mu": 1.67, "sigma": 1.04},
    },
    "us_power_grid": {
        "graph": {"kind": "file", "weights": "mh"},
        "signal": {"family": "lognormal", "mu": 10.0, "sigma": 1.0},
    },
    "synthetic": {
        "graph": {"kind": "geometric", "n": 100, "radius": 0.3, "weights": "mh"},
        "signal": {"family": "lognormal", "mu": 1.67, "sigma": 1.04},
    },
}


@dataclass
class GraphSpec:
    kind: str = "geometric"
    n: int | None = None
    radius: float | None = None
    path: str | None = None
    weights: str = "mh"


@dataclass
class SignalSpec:
    family: str = "lognormal"
    mu: float = 0.0
    sigma: float = 1.0
    s_min: float = 0.0
    data: str | None = None  # cumulative meter readings; replaces the sampler when set
    divisor: float = 1e10


@dataclass
class ExperimentConfig:
    scenario: str = "synthetic"
    name: str = "experiment"
    algorithms: list[str] = field(default_factory=lambda: ["mvue_dp"])
    regimes: list[str] = field(default_factory=lambda: ["signal_dp"])
    epsilons: list[float] = field(default_factory=lambda: [0.1, 1.0, 10.0])
    delta: float = 0.01
    horizon: int = 100
    replicates: int = 200
    seed: int = 0
    eta: float = 0.001
    budget_mode: str = "homogeneous"
    cap_factor: float = 10.0
    sensitivities: list[float] | None = None  # explicit input for allocate-budget
    graph: GraphSpec = field(default_factory=GraphSpec)
    signal: SignalSpec = field(default_factory=SignalSpec)
    out: str = "results"
    base_dir: str = "."

    def validate(self) -> "ExperimentConfig":
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}; expected one of {SCENARIOS}")
        for a in self.algorithms:
            if a not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {a!r}")
        if "online_dynamic" in self.algorithms:
            raise ConfigError("online_dynamic needs a topology sequence and is only available through the library API")
        for r in self.regimes:
            if r not in REGIMES:
                raise ConfigError(f"unknown regime {r!r}")
        if not self.epsilons or any(not (e > 0) for e in self.epsilons):
            raise ConfigError("epsilon grid must be nonempty and strictly positive")
        if not 0 < self.delta < 1:
            raise ConfigError("delta must lie in (0, 1)")
        if self.horizon < 1 or self.replicates < 1:
            raise ConfigError("horizon and replicates must be positive")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.budget_mode not in BUDGET_MODES:
            raise ConfigError(f"unknown budget mode {self.budget_mode!r}")
        if self.cap_factor <= 0:
            raise ConfigError("cap_factor must be positive")
        g = self.graph
        if g.kind not in GRAPH_KINDS:
            raise ConfigError(f"unknown graph kind {g.kind!r}")
        if g.kind == "file":
            if not g.path:
                raise ConfigError("graph.kind = 'file' needs graph.path")
            if not self.resolve(g.path).is_file():
                raise ConfigError(f"graph file {g.path} does not exist")
        elif not g.n or g.n < 1:
            raise ConfigError(f"graph.kind = {g.kind!r} needs a positive graph.n")
        if g.kind == "geometric" and not (g.radius and g.radius > 0):
            raise ConfigError("geometric graphs need a positive graph.radius")
        if g.weights not in ("mh", "modified_mh", "uniform"):
            raise ConfigError(f"unknown weight rule {g.weights!r}")
        s = self.signal
        if s.family not in ("lognormal", "gaussian"):
            raise ConfigError(f"unknown signal family {s.family!r}")
        if s.sigma <= 0:
            raise ConfigError("signal.sigma must be positive")
        if s.data is not None and not self.resolve(s.data).is_file():
            raise ConfigError(f"signal data file {s.data} does not exist")
        if self.sensitivities is not None and any(not (d > 0) for d in self.sensitivities):
            raise ConfigError("sensitivities must be positive")
        return self

    def resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def with_overrides(self, **kw) -> "ExperimentConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw).validate()


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def config_from_dict(raw: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    scenario = raw.get("scenario", "synthetic")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    raw = _merge(PRESETS[scenario], raw)
    known = set(ExperimentConfig.__dataclass_fields__) - {"graph", "signal", "base_dir"}
    unknown = set(raw) - known - {"graph", "signal", "algorithm", "regime", "epsilon", "output", "budget"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    flat = {k: raw[k] for k in known if k in raw}
    # singular spellings are accepted for convenience
    if "algorithm" in raw:
        flat["algorithms"] = [raw["algorithm"]]
    if "regime" in raw:
        flat["regimes"] = [raw["regime"]] if isinstance(raw["regime"], str) else list(raw["regime"])
    if "epsilon" in raw:
        e = raw["epsilon"]
        flat["epsilons"] = [float(x) for x in (e if isinstance(e, list) else [e])]
    if "output" in raw:
        flat["out"] = raw["output"].get("dir", flat.get("out", "results"))
    if "budget" in raw:
        b = raw["budget"]
        flat["budget_mode"] = b.get("mode", flat.get("budget_mode", "homogeneous"))
        if "cap_factor" in b:
            flat["cap_factor"] = float(b["cap_factor"])
        if "sensitivities" in b:
            flat["sensitivities"] = [float(x) for x in b["sensitivities"]]
    try:
        graph = GraphSpec(**raw.get("graph", {}))
        signal = SignalSpec(**raw.get("signal", {}))
        if "epsilons" in flat:
            flat["epsilons"] = [float(x) for x in flat["epsilons"]]
        for key in ("algorithms", "regimes"):
            if key in flat and isinstance(flat[key], str):
                flat[key] = [flat[key]]
        cfg = ExperimentConfig(**flat, graph=graph, signal=signal, base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()


def read_toml(path: str | Path) -> dict:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file {path} not found") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def load_config(path: str | Path, edges: str | Path | None = None) -> ExperimentConfig:
    """Parse a TOML config; ``edges`` swaps in an edge-list graph before validation."""
    raw = read_toml(path)
    if edges is not None:
        g = dict(raw.get("graph", {}))
        raw["graph"] = {"kind": "file", "path": str(Path(edges).resolve()), "weights": g.get("weights", "mh")}
    return config_from_dict(raw, base_dir=Path(path).parent)
