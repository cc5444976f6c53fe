"""Run configuration: one JSON file with generation, model, training and decoding sections.

Example::

    {"version": 1, "seed": 7,
     "gen": {"n_passages": 500},
     "encoder": {"layers": 2, "heads": 4, "hidden": 64, "ffn_dim": 256},
     "training": {"lr_peak": 0.001},
     "decode": {}}

Every section is optional and filled with defaults; unknown keys are errors.
The top-level ``seed`` drives both generation and training.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpusgen import ConfigError, GenConfig, SlotCatalog, default_catalog
from .encoder import EncoderConfig
from .inference import DecodeConfig
from .training import TrainingConfig

CONFIG_VERSION = 1
_SECTIONS = {"gen": GenConfig, "encoder": EncoderConfig, "training": TrainingConfig,
             "decode": DecodeConfig, "catalog": SlotCatalog}
# fields owned by the top level rather than a section
_RESERVED = {"gen": {"seed"}, "training": {"seed"}, "encoder": {"vocab_size"}}


@dataclass
class RunConfig:
    seed: int = 7
    gen: GenConfig = field(default_factory=GenConfig)
    catalog: SlotCatalog = field(default_factory=default_catalog)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)

    def with_seed(self, seed: int) -> "RunConfig":
        self.seed = seed
        self.gen.seed = seed
        self.training.seed = seed
        return self

    def validate(self) -> None:
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        self.gen.validate()
        self.catalog.validate()
        self.training.validate()
        self.decode.validate()
        if self.encoder.hidden % self.encoder.heads:
            raise ConfigError("encoder.hidden must be divisible by encoder.heads")

    def to_dict(self) -> dict:
        out = {"version": CONFIG_VERSION, "seed": self.seed}
        for name in ("gen", "encoder", "training", "decode"):
            d = dataclasses.asdict(getattr(self, name))
            for key in _RESERVED.get(name, ()):
                d.pop(key, None)
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        out["catalog"] = dataclasses.asdict(self.catalog)
        return out


def _section(name: str, raw, cls):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be a JSON object")
    allowed = {f.name for f in dataclasses.fields(cls)} - _RESERVED.get(name, set())
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    if cls is SlotCatalog:
        merged = {**dataclasses.asdict(default_catalog()), **raw}
        return SlotCatalog.from_dict(merged)
    try:
        return cls(**raw)
    except TypeError as exc:
        raise ConfigError(f"section {name!r}: {exc}") from None


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "version" not in raw:
        raise ConfigError("config is missing the required 'version' field")
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw['version']!r} (expected {CONFIG_VERSION})")
    unknown = sorted(set(raw) - {"version", "seed", *_SECTIONS})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = RunConfig(**{name: _section(name, raw[name], cls) for name, cls in _SECTIONS.items() if name in raw})
    seed = raw.get("seed", cfg.seed)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer")
    cfg.with_seed(seed)
    cfg.validate()
    return cfg


def load(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: malformed JSON ({exc.msg})") from None
    return from_dict(raw)
