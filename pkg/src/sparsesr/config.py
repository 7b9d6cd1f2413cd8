"""Flat key=value run configuration with typed, all-at-once validation.

One namespace per command, auto-derived from the model and trainer
dataclasses so there is a single source of truth for names, types, and
defaults.  Values merge with strict precedence: command-line flag over
config-file entry over default.  A config file is either flat
``key=value`` text or a previously written run manifest (JSON), whose
resolved config block is reused verbatim; rerunning from a manifest
therefore reproduces the original run.
"""

from __future__ import annotations

import dataclasses
import json
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .trainer import TrainConfig


@dataclasses.dataclass(frozen=True)
class FieldSpec:
    name: str
    type: type
    default: object = None
    required: bool = False
    help: str = ""


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _dataclass_fields(cls) -> list[FieldSpec]:
    specs = []
    for f in dataclasses.fields(cls):
        if not isinstance(f.default, (bool, int, float, str)):
            raise ConfigError(f"{cls.__name__}.{f.name} has no scalar default")
        specs.append(FieldSpec(f.name, type(f.default), f.default))
    return specs


def model_fields() -> list[FieldSpec]:
    return _dataclass_fields(ModelConfig)


def train_fields() -> list[FieldSpec]:
    return _dataclass_fields(TrainConfig)


_RUN_COMMON = [
    FieldSpec("threads", int, 0, help="BLAS thread cap; 0 leaves the environment alone"),
    FieldSpec("f64", bool, False, help="run in float64 verification mode"),
]

SCHEMAS: dict[str, list[FieldSpec]] = {
    "train": [
        FieldSpec("data", str, required=True, help="directory of training PNGs"),
        FieldSpec("out", str, required=True, help="output directory"),
        FieldSpec("preset", str, "", help="named preset: '' or 'desk'"),
        FieldSpec("finetune", bool, False, help="run the fine-tune phase after training"),
        *model_fields(),
        *train_fields(),
        *_RUN_COMMON,
    ],
    "finetune": [
        FieldSpec("checkpoint", str, required=True, help="baseline checkpoint to continue"),
        FieldSpec("data", str, required=True),
        FieldSpec("out", str, required=True),
        *train_fields(),
        *_RUN_COMMON,
    ],
    "sample": [
        FieldSpec("checkpoint", str, required=True),
        FieldSpec("image", str, required=True, help="LR input PNG"),
        FieldSpec("out", str, required=True),
        FieldSpec("n_samples", int, 10),
        FieldSpec("seed", int, 0),
        FieldSpec("cem_iters", int, 0, help="projection iterations; 0 uses the model default"),
        FieldSpec("external_base", str, "", help="PNG with an externally produced deterministic part"),
        *_RUN_COMMON,
    ],
    "eval": [
        FieldSpec("checkpoint", str, required=True),
        FieldSpec("data", str, required=True, help="directory of HR reference PNGs"),
        FieldSpec("out", str, required=True),
        FieldSpec("n_samples", int, 10),
        FieldSpec("seed", int, 0),
        FieldSpec("cem_iters", int, 0),
        FieldSpec("map_dir", str, "", help="if set, dump per-sample distance maps here"),
        *_RUN_COMMON,
    ],
    "selfcheck": [
        *_RUN_COMMON,
    ],
}


def read_config_file(path: str | Path) -> dict[str, object]:
    """Raw key/value pairs from flat text or from a run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            payload = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON manifest: {exc}") from exc
        config = payload.get("config")
        if not isinstance(config, dict):
            raise ConfigError(f"{path}: manifest has no config block")
        return dict(config)
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


def _coerce(spec: FieldSpec, value: object) -> object:
    if isinstance(value, spec.type) and not (
            spec.type is int and isinstance(value, bool)):
        return value
    if isinstance(value, str):
        if spec.type is bool:
            return parse_bool(value)
        return spec.type(value)
    if spec.type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    raise ValueError(f"expected {spec.type.__name__}, got {value!r}")


def resolve(command: str, file_values: dict[str, object] | None = None,
            flag_values: dict[str, object] | None = None) -> dict[str, object]:
    """Merge defaults, file entries, and flags; report every problem at once."""
    if command not in SCHEMAS:
        raise ConfigError(f"unknown command: {command!r}")
    schema = {spec.name: spec for spec in SCHEMAS[command]}
    resolved = {name: spec.default for name, spec in schema.items()}
    problems: list[str] = []

    for source, values in (("config file", file_values or {}),
                           ("flag", flag_values or {})):
        for key, value in values.items():
            if value is None:
                continue
            spec = schema.get(key)
            if spec is None:
                problems.append(f"unknown {command} config key {key!r} ({source})")
                continue
            try:
                resolved[key] = _coerce(spec, value)
            except (ValueError, TypeError) as exc:
                problems.append(f"{key} ({source}): {exc}")

    for name, spec in schema.items():
        if spec.required and resolved[name] is None:
            problems.append(f"missing required value for {name!r}")
    if problems:
        raise ConfigError("; ".join(problems))
    return resolved


def split_model_config(resolved: dict[str, object]) -> ModelConfig:
    names = {f.name for f in dataclasses.fields(ModelConfig)}
    return ModelConfig.from_dict({k: v for k, v in resolved.items() if k in names})


def split_train_config(resolved: dict[str, object]) -> TrainConfig:
    names = {f.name for f in dataclasses.fields(TrainConfig)}
    return TrainConfig.from_dict({k: v for k, v in resolved.items() if k in names})


def apply_preset(resolved: dict[str, object],
                 file_values: dict[str, object],
                 flag_values: dict[str, object]) -> dict[str, object]:
    """Swap in a named preset's defaults, keeping explicit overrides."""
    name = resolved.get("preset", "")
    if not name:
        return resolved
    if name != "desk":
        raise ConfigError(f"unknown preset {name!r}; available: desk")
    from .trainer import desk_preset

    model_cfg, train_cfg = desk_preset()
    out = dict(resolved)
    explicit = set()
    for values in (file_values, flag_values):
        explicit.update(k for k, v in values.items() if v is not None)
    for k, v in {**model_cfg.to_dict(), **train_cfg.to_dict()}.items():
        if k not in explicit:
            out[k] = v
    return out
