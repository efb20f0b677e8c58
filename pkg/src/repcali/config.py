"""Experiment configuration: flat INI-style files with a strict schema.

`[section]` headers, `key = value` lines, `#` comments. Unknown sections
or keys and duplicate keys are rejected with the offending line number;
missing keys fall back to the documented defaults. The canonical
serialization (sorted sections and keys) is echoed into every run's
output directory, and re-parsing that echo reproduces the config exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from typing import Any

from .calibration import SEED_MODES, CalibrationOptions
from .model import ModelConfig
from .tasks import TASK_KINDS, TaskSpec

METHOD_KINDS = ("full", "repcali", "adapter", "lora", "prefix", "prompt", "bitfit")


class ConfigError(ValueError):
    """Malformed config text or invalid key values."""


@dataclass
class ModelSection:
    L: int = 2
    d_h: int = 64
    heads: int = 4
    ffn_mult: int = 4
    vocab: int = 64
    n_max: int = 32
    dropout: float = 0.1


@dataclass
class CalibrationSection:
    enabled: bool = False
    lam: float = 1.0
    seed_mode: str = "positional"
    zero_init: bool = False


@dataclass
class MethodSection:
    kind: str = "full"
    d_m: int = 8
    prefix_len: int = 4
    prompt_len: int = 4
    freeze_decoder: bool = False
    arms: str = "adapter,bitfit,lora,prefix,prompt,repcali"

    def arms_list(self) -> list[str]:
        return [a.strip() for a in self.arms.split(",") if a.strip()]


@dataclass
class TaskSection:
    kind: str = "copy"
    vocab: int = 16
    len_min: int = 4
    len_max: int = 8
    sizes: str = "512/64/64"
    seed: int = 7

    def sizes_tuple(self) -> tuple[int, int, int]:
        parts = self.sizes.split("/")
        if len(parts) != 3:
            raise ConfigError(f"task.sizes must be train/dev/test, got {self.sizes!r}")
        try:
            a, b, c = (int(p) for p in parts)
        except ValueError as exc:
            raise ConfigError(f"task.sizes must be integers: {self.sizes!r}") from exc
        return a, b, c


@dataclass
class TrainSection:
    lr: float = 3e-4
    batch: int = 32
    epochs: int = 10
    patience: int = 5
    seed: int = 1234
    seeds_n: int = 1


@dataclass
class OutSection:
    dir: str = "out"


# INI key -> dataclass field where the two differ ("lambda" is reserved)
_KEY_TO_FIELD = {("calibration", "lambda"): "lam"}
_FIELD_TO_KEY = {v: k[1] for k, v in _KEY_TO_FIELD.items()}

_SECTIONS: dict[str, type] = {
    "model": ModelSection,
    "calibration": CalibrationSection,
    "method": MethodSection,
    "task": TaskSection,
    "train": TrainSection,
    "out": OutSection,
}


@dataclass
class ExperimentConfig:
    model: ModelSection = field(default_factory=ModelSection)
    calibration: CalibrationSection = field(default_factory=CalibrationSection)
    method: MethodSection = field(default_factory=MethodSection)
    task: TaskSection = field(default_factory=TaskSection)
    train: TrainSection = field(default_factory=TrainSection)
    out: OutSection = field(default_factory=OutSection)

    # ------------------------------------------------------------------
    def model_config(self) -> ModelConfig:
        m = self.model
        return ModelConfig(layers=m.L, d_h=m.d_h, heads=m.heads, ffn_mult=m.ffn_mult,
                           vocab=m.vocab, n_max=m.n_max, dropout=m.dropout)

    def task_spec(self) -> TaskSpec:
        t = self.task
        n_train, n_dev, n_test = t.sizes_tuple()
        return TaskSpec(kind=t.kind, vocab=t.vocab, len_min=t.len_min,
                        len_max=t.len_max, n_train=n_train, n_dev=n_dev,
                        n_test=n_test, seed=t.seed)

    def calibration_options(self) -> CalibrationOptions:
        c = self.calibration
        enabled = c.enabled or self.method.kind == "repcali"
        return CalibrationOptions(enabled=enabled, lam=c.lam,
                                  seed_mode=c.seed_mode, zero_init=c.zero_init)

    def validate(self) -> "ExperimentConfig":
        self.model_config()  # raises on bad model dimensions
        c, m, t = self.calibration, self.method, self.task
        if c.lam < 0:
            raise ConfigError("calibration.lambda must be nonnegative")
        if c.seed_mode not in SEED_MODES:
            raise ConfigError(f"calibration.seed_mode must be one of {SEED_MODES}")
        if m.kind not in METHOD_KINDS:
            raise ConfigError(f"method.kind must be one of {METHOD_KINDS}")
        if c.enabled and m.kind not in ("full", "repcali"):
            raise ConfigError(
                "calibration.enabled composes only with method.kind full or repcali")
        for arm in m.arms_list():
            if arm not in METHOD_KINDS:
                raise ConfigError(f"method.arms contains unknown kind {arm!r}")
        if m.kind in ("adapter", "lora", "prefix") and m.d_m >= self.model.d_h:
            raise ConfigError(f"method.d_m={m.d_m} must be smaller than model.d_h")
        if t.kind not in TASK_KINDS:
            raise ConfigError(f"task.kind must be one of {TASK_KINDS}")
        self.task_spec()  # raises on bad sizes/lengths
        if t.vocab > self.model.vocab:
            raise ConfigError("task.vocab cannot exceed model.vocab")
        if t.len_max + 1 > self.model.n_max:
            raise ConfigError("task.len_max + 1 (eos) must fit in model.n_max")
        if self.train.lr < 0 or self.train.batch < 1 or self.train.epochs < 0:
            raise ConfigError("train.lr must be >= 0, batch >= 1, epochs >= 0")
        if self.train.seeds_n < 1:
            raise ConfigError("train.seeds_n must be >= 1")
        return self


def _parse_value(raw: str, target_type, where: str):
    raw = raw.strip()
    if target_type is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
    try:
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{where}: expected {target_type.__name__}, got {raw!r}") from None
    return raw


def _raw_sections(text: str) -> dict[str, dict[str, tuple[str, int]]]:
    sections: dict[str, dict[str, tuple[str, int]]] = {}
    current: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split(" #", 1)[0].strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            current = stripped[1:-1].strip()
            if current not in _SECTIONS:
                raise ConfigError(f"line {lineno}: unknown section [{current}]")
            sections.setdefault(current, {})
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {stripped!r}")
        if current is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key in sections[current]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{current}]")
        sections[current][key] = (value, lineno)
    return sections


def _build(sections: dict[str, dict[str, tuple[str, int]]]) -> ExperimentConfig:
    built: dict[str, Any] = {}
    for sec_name, sec_type in _SECTIONS.items():
        values = {}
        known = {f.name: f.type for f in fields(sec_type)}
        for key, (raw, lineno) in sections.get(sec_name, {}).items():
            fname = _KEY_TO_FIELD.get((sec_name, key), key)
            if fname not in known:
                raise ConfigError(f"line {lineno}: unknown key {key!r} in [{sec_name}]")
            ftype = {"int": int, "float": float, "bool": bool, "str": str}[known[fname]]
            values[fname] = _parse_value(raw, ftype, f"line {lineno}: {sec_name}.{key}")
        built[sec_name] = sec_type(**values)
    return ExperimentConfig(**built)


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate config text; missing keys use the defaults."""
    return _build(_raw_sections(text)).validate()


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `--section.key=value` style overrides, then revalidate."""
    for item in overrides:
        body = item[2:] if item.startswith("--") else item
        if "=" not in body or "." not in body.split("=", 1)[0]:
            raise ConfigError(f"override must look like --section.key=value: {item!r}")
        target, raw = body.split("=", 1)
        sec_name, key = target.split(".", 1)
        if sec_name not in _SECTIONS:
            raise ConfigError(f"override names unknown section {sec_name!r}")
        section = getattr(config, sec_name)
        fname = _KEY_TO_FIELD.get((sec_name, key), key)
        known = {f.name: f.type for f in fields(type(section))}
        if fname not in known:
            raise ConfigError(f"override names unknown key {key!r} in [{sec_name}]")
        ftype = {"int": int, "float": float, "bool": bool, "str": str}[known[fname]]
        setattr(section, fname, _parse_value(raw, ftype, f"override {item}"))
    return config.validate()


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical echo: sorted sections, sorted keys, round-trip exact."""
    lines = []
    for sec_name in sorted(_SECTIONS):
        section = getattr(config, sec_name)
        lines.append(f"[{sec_name}]")
        for f in sorted(fields(type(section)), key=lambda f: _FIELD_TO_KEY.get(f.name, f.name)):
            key = _FIELD_TO_KEY.get(f.name, f.name)
            value = getattr(section, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            elif isinstance(value, float):
                value = repr(value)
            lines.append(f"{key} = {value}")
        lines.append("")
    return "\n".join(lines)


def config_digest(config: ExperimentConfig) -> str:
    return hashlib.sha256(serialize_config(config).encode("utf-8")).hexdigest()[:12]
