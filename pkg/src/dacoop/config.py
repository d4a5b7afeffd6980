"""Run configuration: a sectioned key-value file mapped onto typed dataclasses.

Unknown keys, wrong types and out-of-range values are all reported as
:class:`ConfigError` with the offending line and field.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Any

from dacoop import kvfile
from dacoop.apf import ApfParams
from dacoop.baselines import METHODS
from dacoop.env import ScenarioParams
from dacoop.geometry import Arena, ArenaFormatError, load_arena
from dacoop.trainer import TrainConfig


class ConfigError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, field_name: str | None = None):
        where = []
        if lineno is not None:
            where.append(f"line {lineno}")
        if field_name:
            where.append(field_name)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.lineno = lineno
        self.field_name = field_name


@dataclass(frozen=True)
class BaselineConfig:
    d_ref: float = 2000.0
    lambda_min: float = 1.0
    grid_episodes: int = 50
    scheduled: bool = True

    def __post_init__(self):
        if self.d_ref <= 0 or self.lambda_min <= 0 or self.grid_episodes < 1:
            raise ValueError("d_ref, lambda_min and grid_episodes must be positive")


@dataclass(frozen=True)
class EvalConfig:
    final_episodes: int = 200

    def __post_init__(self):
        if self.final_episodes < 1:
            raise ValueError("final_episodes must be positive")


@dataclass(frozen=True)
class ApfDefaults:
    rho0: float = 500.0
    b_threshold: float = 1.0

    def __post_init__(self):
        ApfParams(0.0, 1.0, self.rho0, self.b_threshold)

    def params(self) -> ApfParams:
        return ApfParams(0.0, 1000.0, self.rho0, self.b_threshold)


SECTIONS: dict[str, type] = {
    "scenario": ScenarioParams,
    "apf": ApfDefaults,
    "train": TrainConfig,
    "baseline": BaselineConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    method: str = "dacoop"
    arena: str = "train_fig5a"
    output_dir: str = "runs/default"
    scenario: ScenarioParams = field(default_factory=ScenarioParams)
    apf: ApfDefaults = field(default_factory=ApfDefaults)
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    source: str = field(default="", compare=False)

    def load_arena(self) -> Arena:
        return resolve_arena(self.arena, Path(self.source).parent if self.source else None)

    def to_text(self) -> str:
        sections = {"": {"seed": self.seed, "method": self.method, "arena": self.arena,
                         "output_dir": self.output_dir}}
        for name in SECTIONS:
            sections[name] = dataclasses.asdict(getattr(self, name))
        return kvfile.dump(sections)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


def resolve_arena(spec: str, base_dir: Path | None = None) -> Arena:
    candidates = []
    if base_dir is not None:
        candidates.append(base_dir / spec)
    candidates.append(Path(spec))
    for path in candidates:
        if path.is_file():
            return load_arena(path)
    return load_arena(spec)


_TOP_LEVEL = {"seed": int, "method": str, "arena": str, "output_dir": str}


def _coerce(value: Any, kind: Any, lineno: int, name: str) -> Any:
    if kind is bool:
        if isinstance(value, bool):
            return value
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"expected {kind.__name__}, got {value!r}", lineno, name)


def parse_config(text: str, source: str = "") -> RunConfig:
    try:
        entries = kvfile.parse(text)
    except kvfile.KVSyntaxError as exc:
        raise ConfigError(str(exc).split(": ", 1)[1], exc.lineno) from exc

    hints = {name: typing.get_type_hints(cls) for name, cls in SECTIONS.items()}
    top: dict[str, Any] = {}
    sections: dict[str, dict[str, Any]] = {name: {} for name in SECTIONS}
    lines: dict[str, int] = {}
    for e in entries:
        name = e.qualified
        if name in lines:
            raise ConfigError("duplicate key", e.lineno, name)
        lines[name] = e.lineno
        if not e.section:
            if e.key not in _TOP_LEVEL:
                raise ConfigError("unknown key", e.lineno, name)
            top[e.key] = _coerce(e.value, _TOP_LEVEL[e.key], e.lineno, name)
        elif e.section in SECTIONS:
            allowed = {f.name for f in fields(SECTIONS[e.section])}
            if e.key not in allowed:
                raise ConfigError("unknown key", e.lineno, name)
            sections[e.section][e.key] = _coerce(e.value, hints[e.section][e.key], e.lineno, name)
        else:
            raise ConfigError(f"unknown section [{e.section}]", e.lineno, name)

    if "method" in top and top["method"] not in METHODS:
        raise ConfigError(f"method must be one of {', '.join(METHODS)}", lines["method"], "method")
    if "seed" in top and not 0 <= top["seed"] < 2 ** 64:
        raise ConfigError("seed must be a 64-bit unsigned value", lines["seed"], "seed")

    built = {}
    for name, cls in SECTIONS.items():
        try:
            built[name] = cls(**sections[name])
        except (TypeError, ValueError) as exc:
            first = min((lines[f"{name}.{k}"] for k in sections[name]), default=None)
            raise ConfigError(str(exc), first, f"[{name}]") from exc
    return RunConfig(**top, **built, source=source)


def load_config(path_or_name: str | Path) -> RunConfig:
    """Load a config file by path, or a bundled profile by name (``desk``, ``full``, ``sanity``)."""
    path = Path(path_or_name)
    if path.is_file():
        cfg = parse_config(path.read_text(), source=str(path))
    else:
        stem = path.name.removesuffix(".cfg")
        bundled = resources.files("dacoop.profiles") / f"{stem}.cfg"
        if not bundled.is_file():
            raise ConfigError(f"no config file {str(path_or_name)!r}")
        cfg = parse_config(bundled.read_text(), source="")
    try:
        cfg.load_arena()
    except FileNotFoundError as exc:
        raise ConfigError(str(exc), field_name="arena") from exc
    except ArenaFormatError as exc:
        raise ConfigError(f"arena file: {exc}", field_name="arena") from exc
    return cfg
