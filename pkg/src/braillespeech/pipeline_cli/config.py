"""Run configuration: TOML tables ``[i2t]``, ``[t2a]`` and ``[joint]``.

Missing keys take the defaults below; unknown keys are an error. The fully
resolved configuration is written back into every run directory.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace

import tomli
import tomli_w

from braillespeech.acoustic_t2a import T2AConfig
from braillespeech.contrastive_i2t import I2TConfig
from braillespeech.errors import ConfigError


@dataclass(frozen=True)
class JointConfig:
    lambda1: float = 0.5
    lambda2: float = 0.5
    epochs: int = 50
    batch_size: int = 64
    audio_batch_size: int = 16
    lr: float = 5e-4
    seed: int = 0
    clip_norm: float = 1.0
    freeze_i2t: bool = False

    def validate(self, force=False):
        """λ1 + λ2 = 1 always; both strictly inside (0, 1) unless ``force``."""
        l1, l2 = self.lambda1, self.lambda2
        if abs(l1 + l2 - 1.0) > 1e-9:
            raise ConfigError(f"lambda1 + lambda2 must equal 1, got {l1} + {l2}")
        lo_ok = (0.0 <= l1 <= 1.0) if force else (0.0 < l1 < 1.0)
        if not lo_ok:
            raise ConfigError(f"lambda1={l1} outside (0, 1); the endpoints need --force")
        if self.epochs < 1 or self.batch_size < 2 or self.audio_batch_size < 1:
            raise ConfigError("joint epochs and batch sizes must be positive")
        return self

    @classmethod
    def with_lambda1(cls, lambda1, **kw):
        return cls(lambda1=float(lambda1), lambda2=1.0 - float(lambda1), **kw)


@dataclass(frozen=True)
class RunConfig:
    i2t: I2TConfig = field(default_factory=I2TConfig)
    t2a: T2AConfig = field(default_factory=T2AConfig)
    joint: JointConfig = field(default_factory=JointConfig)

    def to_dict(self):
        return {"i2t": asdict(self.i2t), "t2a": asdict(self.t2a), "joint": asdict(self.joint)}


SECTIONS = {"i2t": I2TConfig, "t2a": T2AConfig, "joint": JointConfig}


def _section(cls, values, name):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"[{name}] unknown keys: {', '.join(unknown)}")
    out = {}
    for key, value in values.items():
        kind = type(getattr(cls(), key))
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise ConfigError(f"[{name}] {key} should be {kind.__name__}, got {value!r}")
        out[key] = value
    return cls(**out)


def parse_config(text):
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    unknown = sorted(set(raw) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config tables: {', '.join(unknown)}")
    parts = {name: _section(cls, raw.get(name, {}), name) for name, cls in SECTIONS.items()}
    return RunConfig(**parts)


def load_config(path=None):
    if path is None:
        return RunConfig()
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def dump_config(config):
    return tomli_w.dumps(config.to_dict())


def write_config(path, config):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_config(config))


def override(config, section, **changes):
    changes = {k: v for k, v in changes.items() if v is not None}
    if not changes:
        return config
    return replace(config, **{section: replace(getattr(config, section), **changes)})
