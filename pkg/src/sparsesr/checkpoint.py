"""Checkpoint serialization: text header, tensor manifest, raw payloads.

Layout, all little-endian:

    SPARSESR-CKPT v1\\n
    [config]\\n
    key=value lines (model config, then training metadata)
    [tensors]\\n
    name shape-with-commas lines, in payload order
    [data]\\n
    concatenated float32 buffers

Writing the same state twice produces identical bytes, and a load followed
by a save reproduces the input file exactly; both properties are what make
bit-identical reruns checkable at the file level.
"""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .model import ModelConfig, SparseSRModel
from .numerics import AdamState, Tensor

_MAGIC = "SPARSESR-CKPT v1"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(raw: str):
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def save_checkpoint(path, model: SparseSRModel, adam: AdamState | None = None,
                    epoch: int = 0, step: int = 0) -> None:
    """Serialize model (and optionally optimizer) state to ``path``."""
    path = Path(path)
    header = io.StringIO()
    header.write(_MAGIC + "\n")
    header.write("[config]\n")
    for k, v in model.config.to_dict().items():
        header.write(f"{k}={_format_value(v)}\n")
    header.write(f"meta.epoch={epoch}\n")
    header.write(f"meta.step={step}\n")
    header.write(f"meta.has_adam={_format_value(adam is not None)}\n")
    if adam is not None:
        header.write(f"adam.lr={_format_value(adam.lr)}\n")
        header.write(f"adam.beta1={_format_value(adam.beta1)}\n")
        header.write(f"adam.beta2={_format_value(adam.beta2)}\n")
        header.write(f"adam.eps={_format_value(adam.eps)}\n")
        header.write(f"adam.step={adam.step}\n")

    tensors: list[tuple[str, np.ndarray]] = []
    for name, p in model.params.items():
        tensors.append((name, p.data))
    if adam is not None:
        for name in model.params:
            tensors.append((f"adam.m.{name}", adam.m[name]))
            tensors.append((f"adam.v.{name}", adam.v[name]))

    header.write("[tensors]\n")
    for name, arr in tensors:
        shape = ",".join(str(d) for d in arr.shape) if arr.ndim else "scalar"
        header.write(f"{name} {shape}\n")
    header.write("[data]\n")

    payload = io.BytesIO()
    payload.write(header.getvalue().encode())
    for _, arr in tensors:
        payload.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())

    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload.getvalue())
    tmp.replace(path)


def load_checkpoint(path) -> tuple[SparseSRModel, AdamState | None, dict]:
    """Rebuild model (and optimizer state if present) from ``path``.

    The tensor manifest is validated against the shapes implied by the
    stored config; any mismatch (edited fields, truncated payloads) is a
    configuration or data error rather than silent corruption.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint {path} does not exist")
    blob = path.read_bytes()
    marker = b"[data]\n"
    split = blob.find(marker)
    if not blob.startswith(_MAGIC.encode()) or split < 0:
        raise DataError(f"{path} is not a checkpoint file")
    head_lines = blob[:split].decode().splitlines()
    data = blob[split + len(marker):]

    config_kv: dict[str, object] = {}
    manifest: list[tuple[str, tuple[int, ...]]] = []
    section = None
    for line in head_lines[1:]:
        if line == "[config]":
            section = "config"
            continue
        if line == "[tensors]":
            section = "tensors"
            continue
        if section == "config":
            key, _, raw = line.partition("=")
            config_kv[key] = _parse_value(raw)
        elif section == "tensors":
            name, _, shape_txt = line.partition(" ")
            shape = () if shape_txt == "scalar" else tuple(
                int(d) for d in shape_txt.split(","))
            manifest.append((name, shape))

    meta = {k[5:]: v for k, v in config_kv.items() if k.startswith("meta.")}
    adam_kv = {k[5:]: v for k, v in config_kv.items() if k.startswith("adam.")}
    model_kv = {k: v for k, v in config_kv.items()
                if not k.startswith(("meta.", "adam."))}
    try:
        config = ModelConfig.from_dict(model_kv)
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"{path}: invalid stored config: {exc}") from exc

    rebuilt = SparseSRModel.initialize(config, seed=0)
    expected = {name: p.data.shape for name, p in rebuilt.params.items()}

    offset = 0
    loaded: dict[str, np.ndarray] = {}
    for name, shape in manifest:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 4
        if offset + nbytes > len(data):
            raise DataError(f"{path}: payload truncated at tensor {name!r}")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        loaded[name] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(data):
        raise DataError(f"{path}: {len(data) - offset} trailing payload bytes")

    param_names = [n for n, _ in manifest if not n.startswith("adam.")]
    if set(param_names) != set(expected):
        missing = set(expected) - set(param_names)
        extra = set(param_names) - set(expected)
        raise ConfigError(
            f"{path}: tensor manifest does not match config "
            f"(missing {sorted(missing)}, unexpected {sorted(extra)})")
    for name in param_names:
        if loaded[name].shape != expected[name]:
            raise ConfigError(
                f"{path}: tensor {name!r} has shape {loaded[name].shape}, "
                f"config implies {expected[name]}")

    params = {
        name: Tensor(loaded[name].astype(np.float32), requires_grad=True)
        for name in expected
    }
    model = SparseSRModel(config, params)

    adam = None
    if meta.get("has_adam"):
        adam = AdamState(
            lr=float(adam_kv["lr"]), beta1=float(adam_kv["beta1"]),
            beta2=float(adam_kv["beta2"]), eps=float(adam_kv["eps"]),
            step=int(adam_kv["step"]))
        for name in expected:
            m_key, v_key = f"adam.m.{name}", f"adam.v.{name}"
            if m_key not in loaded or v_key not in loaded:
                raise DataError(f"{path}: optimizer moments missing for {name!r}")
            adam.m[name] = loaded[m_key].astype(np.float32)
            adam.v[name] = loaded[v_key].astype(np.float32)
    meta.pop("has_adam", None)
    return model, adam, meta
