"""Plain-text ``section.key = value`` configuration.

Lines starting with ``#`` are comments. Every key must name a field of the
section's dataclass and every value is converted to that field's type.
"""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .dsp import StftConfig
from .duration import SDPConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.8
    beta2: float = 0.99
    weight_decay: float = 0.01
    eps: float = 1e-9
    lr_decay_per_epoch: float = 0.999 ** (1 / 8)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 1234
    batch_size: int = 8


@dataclass(frozen=True)
class PriorFlowConfig:
    channels: int = 2
    hidden: int = 16
    n_layers: int = 4
    kernel_size: int = 3


@dataclass(frozen=True)
class LossConfig:
    recon: float = 1.0
    kl: float = 1.0
    dur: float = 1.0
    adv_g: float = 1.0
    fm: float = 1.0
    recon_reduction: str = "mean"

    def weights(self) -> list[float]:
        return [self.recon, self.kl, self.dur, self.adv_g, self.fm]


@dataclass(frozen=True)
class Config:
    stft: StftConfig = field(default_factory=StftConfig)
    sdp: SDPConfig = field(default_factory=SDPConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    prior_flow: PriorFlowConfig = field(default_factory=PriorFlowConfig)
    loss: LossConfig = field(default_factory=LossConfig)


def _convert(raw: str, tp, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if type(None) in args and raw.lower() in ("none", "null", ""):
            return None
        (inner,) = [a for a in args if a is not type(None)]
        return _convert(raw, inner, where)
    try:
        if tp is bool:
            low = raw.lower()
            if low in ("true", "yes", "1"):
                return True
            if low in ("false", "no", "0"):
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        if tp is str:
            return raw.strip("\"'")
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {tp.__name__}") from None
    raise ConfigError(f"{where}: unsupported field type {tp}")


def parse_config(text: str, source: str = "<config>") -> Config:
    cfg = Config()
    updates: dict[str, dict] = {}
    sections = {f.name: f for f in fields(Config)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        if "=" not in line:
            raise ConfigError(f"{where}: expected 'section.key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if "." not in key:
            raise ConfigError(f"{where}: key {key!r} lacks a section prefix")
        section, name = key.split(".", 1)
        if section not in sections:
            raise ConfigError(f"{where}: unknown section {section!r}")
        cls = type(getattr(cfg, section))
        hints = typing.get_type_hints(cls)
        if name not in {f.name for f in fields(cls)}:
            raise ConfigError(f"{where}: unknown key {key!r}")
        updates.setdefault(section, {})[name] = _convert(value, hints[name], where)
    try:
        parts = {s: replace(getattr(cfg, s), **kv) for s, kv in updates.items()}
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return replace(cfg, **parts)


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {p} not found")
    return parse_config(p.read_text(), str(p))


def dump_config(cfg: Config) -> str:
    lines = []
    for section in fields(Config):
        for k, v in dataclasses.asdict(getattr(cfg, section.name)).items():
            lines.append(f"{section.name}.{k} = {v}")
    return "\n".join(lines) + "\n"
