"""Run configuration: one YAML file, validated against the dataclass schema,
with ``section.key=value`` overrides from the command line."""
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from mgplan.control import ControlConfig
from mgplan.errors import ConfigError
from mgplan.model import ModelConfig
from mgplan.planning_head import GranularityLayout
from mgplan.simulator import SimConfig
from mgplan.training.loop import TrainConfig
from mgplan.training.losses import LossWeights


@dataclass
class Paths:
    scenarios: str = "runs/scenarios"
    out: str = "runs/out"


@dataclass
class RunConfig:
    seed: int = 0
    n_scenarios: int = 8
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    paths: Paths = field(default_factory=Paths)

    def to_dict(self):
        return {
            "seed": self.seed,
            "n_scenarios": self.n_scenarios,
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "control": self.control.to_dict(),
            "sim": self.sim.to_dict(),
            "paths": dataclasses.asdict(self.paths),
        }

    @classmethod
    def from_dict(cls, d):
        return build(cls, d, "")

    def hash(self):
        """Short digest of the canonical config; stamped on every output."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


NESTED = {
    (RunConfig, "model"): ModelConfig,
    (RunConfig, "train"): TrainConfig,
    (RunConfig, "control"): ControlConfig,
    (RunConfig, "sim"): SimConfig,
    (RunConfig, "paths"): Paths,
    (ModelConfig, "layout"): GranularityLayout,
    (TrainConfig, "weights"): LossWeights,
}


def _coerce(value, default, where):
    """Check ``value`` against the type of the field's default and convert lists to tuples."""
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, str):
            # YAML 1.1 reads exponent forms without a dot (``1e9``) as strings
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{where}: expected a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {value!r}")
        return tuple(float(v) if isinstance(v, int) and not isinstance(v, bool) else v for v in value)
    return value


def build(cls, d, prefix):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(d).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - set(fields))
    if unknown:
        raise ConfigError(f"unknown key(s) {', '.join(prefix + k for k in unknown)}")
    defaults = cls()
    kwargs = {}
    for name, value in d.items():
        where = prefix + name
        sub = NESTED.get((cls, name))
        if sub is not None:
            kwargs[name] = build(sub, value, where + ".")
        else:
            kwargs[name] = _coerce(value, getattr(defaults, name), where)
    try:
        return cls(**kwargs)
    except ConfigError as e:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {e}") from None
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {e}") from None


def parse_override(text):
    """``a.b.c=value`` with the value parsed as YAML (so numbers, booleans and lists work)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"override {key}: {e}") from None
    return [k for k in key.strip().split(".") if k], value


def merge(base, keys, value):
    node = base
    for k in keys[:-1]:
        nxt = node.get(k)
        if not isinstance(nxt, dict):
            nxt = {}
            node[k] = nxt
        node = nxt
    node[keys[-1]] = value
    return base


def load_config(path=None, overrides=()):
    """Defaults, then the YAML file (if any), then each override in order."""
    raw = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        try:
            raw = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = f" (line {mark.line + 1})" if mark is not None else ""
            raise ConfigError(f"{path}{line}: invalid YAML") from None
    for text in overrides:
        keys, value = parse_override(text)
        merge(raw, keys, value)
    return RunConfig.from_dict(raw)


def dump_config(cfg, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
