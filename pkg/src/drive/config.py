"""Flat ``section.key = value`` experiment configuration."""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .adaptation import VARIANTS, AdaptationConfig
from .data import ShiftSpec
from .perturbation import PgdConfig


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [32, 32])
    prior_hidden: int = 32
    prior_k: int = 16
    temperature: float = 0.5
    source_epochs: int = 20
    prior_epochs: int = 60
    lr: float = 0.05
    batch_size: int = 64


@dataclass
class DataConfig:
    spec: ShiftSpec = field(default_factory=ShiftSpec)
    source_csv: str | None = None
    target_csv: str | None = None
    broad_csv: str | None = None

    @property
    def from_files(self) -> bool:
        return self.target_csv is not None


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    adapt: AdaptationConfig = field(default_factory=AdaptationConfig)
    radius: float | None = None  # None: half the median pairwise target distance
    radius_scale: float = 1.0
    seeds: list[int] = field(default_factory=lambda: [0])
    variants: list[str] = field(default_factory=lambda: ["all-on"])
    out: str = "runs/default"

    def validate(self) -> None:
        if not self.seeds:
            raise ConfigError("run.seeds: at least one seed is required")
        for v in self.variants:
            if v not in VARIANTS:
                raise ConfigError(f"run.variants: unknown variant {v!r}")
        if not self.variants:
            raise ConfigError("run.variants: at least one variant is required")
        if self.radius is not None and self.radius <= 0:
            raise ConfigError("pgd.radius must be positive")
        if self.radius_scale <= 0:
            raise ConfigError("pgd.radius_scale must be positive")
        if self.data.from_files:
            if not (self.data.source_csv and self.data.broad_csv):
                raise ConfigError("data: source_csv, target_csv and broad_csv must be given together")
        else:
            try:
                self.data.spec.validate()
            except ValueError as e:
                raise ConfigError(str(e)) from None
        try:
            self.adapt.validate()
        except ValueError as e:
            raise ConfigError(str(e)) from None


# key -> (path of attribute names from the ExperimentConfig root)
_KEYS: dict[str, tuple[str, ...]] = {}


def _register(prefix: str, path: tuple[str, ...], cls, aliases: dict[str, str] | None = None,
              skip: tuple[str, ...] = ()):
    aliases = aliases or {}
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        _KEYS[f"{prefix}.{aliases.get(f.name, f.name)}"] = path + (f.name,)


_register("data", ("data", "spec"), ShiftSpec)
_register("data", ("data",), DataConfig, skip=("spec",))
_register("model", ("model",), ModelConfig)
_register("adapt", ("adapt",), AdaptationConfig, aliases={"lam": "lambda"}, skip=("pgd",))
_register("pgd", ("adapt", "pgd"), PgdConfig, skip=("radius",))
_KEYS["pgd.radius"] = ("radius",)
_KEYS["pgd.radius_scale"] = ("radius_scale",)
_KEYS["run.seeds"] = ("seeds",)
_KEYS["run.variants"] = ("variants",)
_KEYS["run.out"] = ("out",)
# single-flag shorthands mirroring the ablation switches
_FLAG_KEYS = {"run.entropy_off": "entropy_weighting", "run.perturb_off": "perturb",
              "run.dynamic_eta_off": "dynamic_eta"}


def known_keys() -> list[str]:
    return sorted(list(_KEYS) + list(_FLAG_KEYS))


def _coerce(raw: str, hint, key: str):
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin is typing.Union or (origin is not None and type(None) in args):
        inner = [a for a in args if a is not type(None)]
        if raw.lower() in ("none", "auto", ""):
            return None
        return _coerce(raw, inner[0], key)
    if origin in (list, tuple):
        items = [s.strip() for s in raw.split(",") if s.strip()]
        elem = args[0] if args else str
        vals = [_coerce(s, elem, key) for s in items]
        if origin is tuple:
            if len(args) == 2 and args[1] is not Ellipsis and len(vals) != 2:
                raise ConfigError(f"{key}: expected 2 comma-separated values")
            return tuple(vals)
        return vals
    if hint is bool:
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    if hint in (int, float):
        try:
            return hint(raw)
        except ValueError:
            raise ConfigError(f"{key}: expected {hint.__name__}, got {raw!r}") from None
    return raw


def _hint_for(obj, name: str):
    return typing.get_type_hints(type(obj))[name]


def set_key(cfg: ExperimentConfig, key: str, raw: str) -> None:
    if key in _FLAG_KEYS:
        off = _coerce(raw, bool, key)
        setattr(cfg.adapt, _FLAG_KEYS[key], not off)
        return
    if key not in _KEYS:
        raise ConfigError(f"unknown key {key!r}")
    path = _KEYS[key]
    target = cfg
    for attr in path[:-1]:
        target = getattr(target, attr)
    setattr(target, path[-1], _coerce(raw, _hint_for(target, path[-1]), key))


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    cfg = ExperimentConfig()
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{line_no}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            set_key(cfg, key, raw)
        except ConfigError as e:
            raise ConfigError(f"{source}:{line_no}: {e}") from None
    # re-run dataclass checks that __post_init__ performs on construction
    try:
        PgdConfig(**dataclasses.asdict(cfg.adapt.pgd))
    except ValueError as e:
        raise ConfigError(str(e)) from None
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """Inverse of ``parse_config`` over every registered key (sorted)."""
    lines = []
    for key in sorted(_KEYS):
        target = cfg
        for attr in _KEYS[key][:-1]:
            target = getattr(target, attr)
        val = getattr(target, _KEYS[key][-1])
        if val is None:
            s = "none"
        elif isinstance(val, (list, tuple)):
            s = ", ".join(str(v) for v in val)
        else:
            s = str(val)
        lines.append(f"{key} = {s}")
    return "\n".join(lines) + "\n"
