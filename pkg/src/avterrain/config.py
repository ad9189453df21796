"""Pipeline configuration in a flat ``dotted.key = value`` text format.

Blank lines and ``#`` comments are ignored. Every key is optional; unknown keys
and values of the wrong type are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .clustering import LINKAGES, MODES
from .encoder import STANDARDIZATIONS
from .mfcc import MfccConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "vae"
    hidden_dim: int = 64
    latent_dim: int = 4
    steps: int = 1500
    step_size: float = 1e-3
    batch_size: int = 32
    normalize_inputs: bool = True


@dataclass(frozen=True)
class EmConfig:
    max_iter: int = 200
    tol: float = 1e-6


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    mode: str = "switched"
    k_em: Optional[int] = None          # None: twice target_k
    target_k: Optional[int] = None      # None: number of ground-truth classes, when known
    linkage: str = "average"
    standardize: str = "global"         # dims | global | none
    window_seconds: float = 2.8
    nmi_average: str = "geometric"
    output_dir: str = "out"
    mfcc: MfccConfig = field(default_factory=MfccConfig)
    em: EmConfig = field(default_factory=EmConfig)
    audio: EncoderConfig = field(default_factory=EncoderConfig)
    # the visual code is wider, so after pooled scaling it carries more weight
    visual: EncoderConfig = field(default_factory=lambda: EncoderConfig(latent_dim=64, steps=300))

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.linkage not in LINKAGES:
            raise ConfigError(f"linkage must be one of {LINKAGES}, got {self.linkage!r}")
        if self.k_em is not None and self.k_em < 1:
            raise ConfigError(f"k_em must be a positive integer, got {self.k_em}")
        if self.target_k is not None and self.target_k < 1:
            raise ConfigError(f"target_k must be a positive integer, got {self.target_k}")
        if self.standardize not in STANDARDIZATIONS:
            raise ConfigError(f"standardize must be one of {STANDARDIZATIONS}, got {self.standardize!r}")
        if self.window_seconds <= 0:
            raise ConfigError("window_seconds must be positive")
        if self.nmi_average not in ("geometric", "arithmetic"):
            raise ConfigError(f"nmi_average must be geometric or arithmetic, got {self.nmi_average!r}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must fit in an unsigned 64-bit integer")
        for name in ("audio", "visual"):
            enc = getattr(self, name)
            if enc.kind not in ("vae", "pca"):
                raise ConfigError(f"{name}.kind must be vae or pca, got {enc.kind!r}")
            if min(enc.hidden_dim, enc.latent_dim, enc.batch_size) < 1 or enc.steps < 0 or enc.step_size <= 0:
                raise ConfigError(f"{name}: invalid encoder settings {enc}")

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


def derive_seed(root: int, tag: str) -> int:
    """Independent 32-bit seed for one named consumer of the root seed."""
    return int(np.random.SeedSequence([root, zlib.crc32(tag.encode())]).generate_state(1)[0])


def _flatten(obj, prefix="") -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        value = getattr(obj, f.name)
        key = prefix + f.name
        if dataclasses.is_dataclass(value):
            out.update(_flatten(value, key + "."))
        else:
            out[key] = value
    return out


def _field_types(cls, prefix="") -> dict:
    hints = typing.get_type_hints(cls)
    out = {}
    for f in dataclasses.fields(cls):
        key = prefix + f.name
        tp = hints[f.name]
        if dataclasses.is_dataclass(tp):
            out.update(_field_types(tp, key + "."))
        else:
            out[key] = tp
    return out


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _convert(key: str, text: str, tp):
    optional = typing.get_origin(tp) is typing.Union and type(None) in typing.get_args(tp)
    if optional:
        if text.lower() in ("none", "null", ""):
            return None
        tp = next(a for a in typing.get_args(tp) if a is not type(None))
    try:
        if tp is bool:
            low = text.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text, 10)
        if tp is float:
            return float(text)
        if tp is str:
            return text
    except ValueError:
        raise ConfigError(f"{key}: expected {tp.__name__}, got {text!r}") from None
    raise ConfigError(f"{key}: unsupported type {tp}")


def _build(default, values: dict, prefix=""):
    """Copy of ``default`` with the given dotted keys replaced, recursing into sections."""
    hints = typing.get_type_hints(type(default))
    changes = {}
    for f in dataclasses.fields(default):
        key = prefix + f.name
        if dataclasses.is_dataclass(hints[f.name]):
            changes[f.name] = _build(getattr(default, f.name), values, key + ".")
        elif key in values:
            changes[f.name] = values[key]
    try:
        return dataclasses.replace(default, **changes)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from None


def parse_config_text(text: str) -> PipelineConfig:
    types = _field_types(PipelineConfig)
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, value, types[key])
    return _build(PipelineConfig(), values)


def parse_config(path) -> PipelineConfig:
    return parse_config_text(Path(path).read_text())


def dump_config(cfg: PipelineConfig) -> str:
    return "".join(f"{k} = {_format(v)}\n" for k, v in _flatten(cfg).items())
