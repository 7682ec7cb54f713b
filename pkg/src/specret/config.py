"""Run configuration: every stage's settings in one object, read from a
plain-text ``[section]`` / ``key = value`` file. Unknown keys are errors."""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .align import ContrastiveConfig
from .encoders import ModelConfig
from .genret import BeamConfig, GenConfig
from .index import IndexConfig
from .pretrain import PretrainConfig
from .tensor.params import OptimizerConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    contrastive: ContrastiveConfig = field(default_factory=ContrastiveConfig)
    index: IndexConfig = field(default_factory=IndexConfig)
    beam: BeamConfig = field(default_factory=BeamConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    gen: GenConfig = field(default_factory=GenConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    seed: int = 0

    @classmethod
    def full(cls) -> "RunConfig":
        """Full-scale settings: width 256, 4/6/4 layers, 512-token beams."""
        return cls(model=ModelConfig.full(), beam=BeamConfig.full())

    def to_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        out["run"] = {"seed": self.seed}
        return out

    def to_text(self) -> str:
        lines = []
        for section, values in self.to_dict().items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {v}" for k, v in values.items()]
            lines.append("")
        return "\n".join(lines)

    def replace(self, section: str, **changes) -> "RunConfig":
        if section == "run":
            return dataclasses.replace(self, **changes)
        return dataclasses.replace(self, **{section: dataclasses.replace(getattr(self, section), **changes)})


SECTIONS = ("model", "contrastive", "index", "beam", "optimizer", "gen", "pretrain")


def _coerce(raw: str, kind, where: str):
    kind_name = kind if isinstance(kind, str) else kind.__name__
    try:
        if kind_name == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        if kind_name == "int":
            return int(raw)
        if kind_name == "float":
            return float(raw)
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind_name}") from exc


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    cfg = base or RunConfig()
    for section in parser.sections():
        if section == "run":
            fields = {"seed": "int"}
        elif section in SECTIONS:
            fields = {f.name: f.type for f in dataclasses.fields(getattr(cfg, section))}
        else:
            raise ConfigError(f"unknown section [{section}]")
        changes = {}
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            changes[key] = _coerce(raw, fields[key], f"[{section}] {key}")
        try:
            cfg = cfg.replace(section, **changes)
        except ValueError as exc:
            raise ConfigError(f"[{section}]: {exc}") from exc
    return cfg


def load_config(path, preset: str = "desk") -> RunConfig:
    base = preset_config(preset)
    return parse_config(Path(path).read_text(), base) if path else base


def preset_config(name: str) -> RunConfig:
    if name == "full":
        return RunConfig.full()
    if name == "desk":
        return RunConfig()
    raise ConfigError(f"unknown preset {name!r}")
