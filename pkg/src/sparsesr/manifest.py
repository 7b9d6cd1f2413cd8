"""Run manifests: the resolved configuration, environment facts, and
sha256 digests of every produced file, written atomically at run end.

The manifest doubles as a config file (see config.read_config_file), so
any finished run can be repeated with ``--config manifest.json`` and is
expected to reproduce the recorded digests exactly.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from pathlib import Path

from . import __version__
from .errors import DataError


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, out_dir: str | Path,
                   outputs: list[str | Path], started: float,
                   extra: dict | None = None) -> dict:
    """Assemble the manifest record for a finished command."""
    out_dir = Path(out_dir)
    digests = {}
    for item in outputs:
        p = Path(item)
        rel = str(p.relative_to(out_dir)) if p.is_relative_to(out_dir) else str(p)
        digests[rel] = file_digest(p)
    manifest = {
        "tool": "sparsesr",
        "version": __version__,
        "command": command,
        "config": dict(config),
        "threads": _thread_report(),
        "started": _stamp(started),
        "finished": _stamp(time.time()),
        "outputs": dict(sorted(digests.items())),
    }
    if extra:
        manifest["results"] = extra
    return manifest


def write_manifest(manifest: dict, out_dir: str | Path,
                   name: str = "manifest.json") -> Path:
    """Atomic write: the manifest appears complete or not at all."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    os.replace(tmp, path)
    return path


def verify_manifest(path: str | Path) -> list[str]:
    """Recompute output digests; return human-readable mismatch lines."""
    path = Path(path)
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    outputs = manifest.get("outputs")
    if not isinstance(outputs, dict):
        raise DataError(f"{path}: manifest has no outputs block")
    base = path.parent
    problems = []
    for rel, recorded in sorted(outputs.items()):
        target = base / rel
        if not target.is_file():
            problems.append(f"missing output file: {rel}")
            continue
        actual = file_digest(target)
        if actual != recorded:
            problems.append(f"digest mismatch for {rel}: "
                            f"recorded {recorded[:12]}.., found {actual[:12]}..")
    return problems


def _thread_report() -> dict:
    keys = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
    return {k: os.environ.get(k, "") for k in keys}


def _stamp(epoch_seconds: float) -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(epoch_seconds))
