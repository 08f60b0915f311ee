"""Run configuration: a strict YAML schema with dotted-key overrides."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from .errors import ConfigError
from .evolve import GaConfig
from .oracle import OracleSpec
from .seqspace import MutationSpace
from .surrogate import FitConfig

METHODS = ("boat-ehvi", "boat-qehvi", "boat-qnehvi", "boat-logei", "ga-sum", "nsga2", "random")
SEQUENTIAL = ("boat-ehvi", "boat-logei")
ENCODERS = ("onehot", "blosum", "bag", "external-file")
# per-position mutation probability when the config leaves it unset
DEFAULT_MUTATION_PROB = {"boat-qehvi": 0.1}
FALLBACK_MUTATION_PROB = 0.15

TOP_KEYS = {
    "space", "space_file", "oracles", "method", "q", "budget", "n_init", "init_max_mut",
    "count_init_in_budget", "encoder", "encoder_options", "reference", "seed", "ga",
    "acquisition", "surrogate",
}
ACQ_KEYS = {"mc_samples", "front_weight"}
SURROGATE_KEYS = {"signal_bounds", "noise_bounds", "grid_size", "max_evaluations", "jitter", "max_jitter"}
ENCODER_KEYS = {"n", "path"}
BENCHMARK_KEYS = {"seeds", "methods", "ground_truth", "reference", "window"}
METHOD_KEYS = {"name", "label", "q", "ga", "acquisition"}


@dataclass
class AcquisitionConfig:
    mc_samples: int = 128
    front_weight: float = 3.0

    def __post_init__(self):
        if self.mc_samples < 1:
            raise ConfigError("acquisition.mc_samples must be positive")
        if self.front_weight <= 0:
            raise ConfigError("acquisition.front_weight must be positive")


@dataclass
class RunConfig:
    space: MutationSpace
    oracles: list[OracleSpec]
    method: str = "boat-ehvi"
    q: int = 4
    budget: int = 1000
    n_init: int = 100
    init_max_mut: int = 2
    count_init_in_budget: bool = True
    encoder: str = "onehot"
    encoder_options: dict = field(default_factory=dict)
    reference: Any = "auto"
    seed: int = 0
    ga: GaConfig | None = None
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    surrogate: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {', '.join(METHODS)}; got {self.method!r}")
        if self.encoder not in ENCODERS:
            raise ConfigError(f"encoder must be one of {', '.join(ENCODERS)}; got {self.encoder!r}")
        if self.method in SEQUENTIAL or self.method in ("ga-sum", "nsga2", "random"):
            self.q = 1
        if self.q < 1:
            raise ConfigError("q must be at least 1")
        if self.budget < 0 or self.n_init < 1:
            raise ConfigError("budget must be non-negative and n_init positive")
        if self.count_init_in_budget and 0 < self.budget < self.n_init:
            raise ConfigError(f"budget {self.budget} is smaller than n_init {self.n_init}")
        if not self.oracles:
            raise ConfigError("at least one oracle is required")
        if isinstance(self.reference, str):
            if self.reference != "auto":
                raise ConfigError(f"reference must be 'auto' or a list of numbers, got {self.reference!r}")
        else:
            ref = np.asarray(self.reference, dtype=float).ravel()
            if ref.shape[0] != len(self.oracles):
                raise ConfigError(f"reference has {ref.shape[0]} entries for {len(self.oracles)} oracles")
            self.reference = [float(v) for v in ref]
        if self.ga is None:
            self.ga = GaConfig(mutation_prob=DEFAULT_MUTATION_PROB.get(self.method, FALLBACK_MUTATION_PROB))

    @property
    def k(self) -> int:
        return len(self.oracles)

    @property
    def total_budget(self) -> int:
        """Oracle calls available to the whole run, initial scores included."""
        return self.budget if self.count_init_in_budget else self.budget + self.n_init

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "oracles": [o.to_dict() for o in self.oracles],
            "method": self.method,
            "q": self.q,
            "budget": self.budget,
            "n_init": self.n_init,
            "init_max_mut": self.init_max_mut,
            "count_init_in_budget": self.count_init_in_budget,
            "encoder": self.encoder,
            "encoder_options": dict(self.encoder_options),
            "reference": self.reference,
            "seed": self.seed,
            "ga": {f.name: getattr(self.ga, f.name) for f in fields(GaConfig)},
            "acquisition": {"mc_samples": self.acquisition.mc_samples, "front_weight": self.acquisition.front_weight},
            "surrogate": {
                "signal_bounds": list(self.surrogate.signal_bounds),
                "noise_bounds": list(self.surrogate.noise_bounds),
                "grid_size": self.surrogate.grid_size,
                "max_evaluations": self.surrogate.max_evaluations,
                "jitter": self.surrogate.jitter,
                "max_jitter": self.surrogate.max_jitter,
            },
        }

    def replace(self, **changes) -> "RunConfig":
        data = self.to_dict()
        data.update(changes)
        if "method" in changes and "ga" not in changes:
            data.pop("ga")  # method-dependent defaults apply again
        return config_from_dict(data)


def _check_keys(section: str, data: Mapping, allowed: set) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(f"{section} must be a mapping")
    unknown = sorted(set(data) - allowed)
    if unknown:
        where = f" in {section}" if section else ""
        raise ConfigError(f"unknown configuration key(s){where}: {', '.join(unknown)}")


def config_from_dict(data: Mapping, base_dir: str | Path | None = None) -> RunConfig:
    """Build a :class:`RunConfig`, rejecting unknown keys at every level."""
    _check_keys("", data, TOP_KEYS)
    data = copy.deepcopy(dict(data))
    if ("space" in data) == ("space_file" in data):
        raise ConfigError("exactly one of space or space_file is required")
    try:
        if "space_file" in data:
            path = Path(data.pop("space_file"))
            if base_dir is not None and not path.is_absolute():
                path = Path(base_dir) / path
            with open(path) as fh:
                space = MutationSpace.from_dict(yaml.safe_load(fh))
        else:
            space = MutationSpace.from_dict(data.pop("space"))
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError(f"mutation space: {exc}") from exc
    oracles = [OracleSpec.from_dict(o) for o in data.pop("oracles", [])]
    for o in oracles:
        if o.cwd is not None and base_dir is not None and not Path(o.cwd).is_absolute():
            o.cwd = str(Path(base_dir) / o.cwd)
    kwargs: dict[str, Any] = {}
    if "ga" in data:
        g = data.pop("ga")
        _check_keys("ga", g, {f.name for f in fields(GaConfig)})
        g = dict(g)
        if g.get("mutation_prob") is None:
            g["mutation_prob"] = DEFAULT_MUTATION_PROB.get(data.get("method", "boat-ehvi"), FALLBACK_MUTATION_PROB)
        try:
            kwargs["ga"] = GaConfig(**g)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"ga: {exc}") from exc
    if "acquisition" in data:
        a = data.pop("acquisition")
        _check_keys("acquisition", a, ACQ_KEYS)
        kwargs["acquisition"] = AcquisitionConfig(**a)
    if "surrogate" in data:
        s = dict(data.pop("surrogate"))
        _check_keys("surrogate", s, SURROGATE_KEYS)
        for key in ("signal_bounds", "noise_bounds"):
            if key in s:
                s[key] = tuple(float(v) for v in s[key])
        kwargs["surrogate"] = FitConfig(**s)
    if "encoder_options" in data:
        _check_keys("encoder_options", data["encoder_options"], ENCODER_KEYS)
        opts = dict(data.pop("encoder_options"))
        if "path" in opts and base_dir is not None and not Path(opts["path"]).is_absolute():
            opts["path"] = str(Path(base_dir) / opts["path"])
        kwargs["encoder_options"] = opts
    kwargs.update(data)
    try:
        return RunConfig(space=space, oracles=oracles, **kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(data: dict, overrides: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values are parsed as YAML scalars."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        value = yaml.safe_load(raw)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-mapping")
        node[parts[-1]] = value
    return data


def read_yaml(path: str | Path) -> dict:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping")
    return data


def load_config(path: str | Path, overrides: list[str] | None = None) -> RunConfig:
    data = apply_overrides(read_yaml(path), overrides or [])
    return config_from_dict(data, base_dir=Path(path).parent)


@dataclass
class MethodEntry:
    name: str
    label: str
    overrides: dict


@dataclass
class BenchmarkConfig:
    base: dict
    base_dir: Path | None
    seeds: list[int]
    methods: list[MethodEntry]
    ground_truth: bool = False
    reference: Any = None
    window: int = 100

    def run_configs(self) -> list[tuple[str, int, RunConfig]]:
        out = []
        for m in self.methods:
            for seed in self.seeds:
                data = copy.deepcopy(self.base)
                data.update(copy.deepcopy(m.overrides))
                data["method"] = m.name
                data["seed"] = seed
                if self.reference is not None:
                    data["reference"] = self.reference
                out.append((m.label, seed, config_from_dict(data, base_dir=self.base_dir)))
        return out


def benchmark_from_dict(data: Mapping, base_dir: str | Path | None = None) -> BenchmarkConfig:
    """A run configuration plus a ``benchmark`` section listing seeds and methods."""
    data = dict(data)
    if "benchmark" not in data:
        raise ConfigError("benchmark configuration needs a benchmark section")
    bench = data.pop("benchmark")
    _check_keys("benchmark", bench, BENCHMARK_KEYS)
    _check_keys("", data, TOP_KEYS)
    seeds = [int(s) for s in bench.get("seeds", [0])]
    methods = []
    for entry in bench.get("methods", [data.get("method", "boat-ehvi")]):
        if isinstance(entry, str):
            entry = {"name": entry}
        _check_keys("benchmark.methods", entry, METHOD_KEYS)
        entry = dict(entry)
        name = entry.pop("name")
        label = entry.pop("label", name)
        methods.append(MethodEntry(name, label, entry))
    labels = [m.label for m in methods]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"method labels must be unique, got {labels}")
    cfg = BenchmarkConfig(data, Path(base_dir) if base_dir is not None else None, seeds, methods,
                          bool(bench.get("ground_truth", False)), bench.get("reference"), int(bench.get("window", 100)))
    cfg.run_configs()  # validate every combination up front
    return cfg


def load_benchmark(path: str | Path, overrides: list[str] | None = None) -> BenchmarkConfig:
    data = apply_overrides(read_yaml(path), overrides or [])
    return benchmark_from_dict(data, base_dir=Path(path).parent)
