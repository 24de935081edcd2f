"""Run manifests: config hash, seeds, versions, file digests and timestamps."""
from __future__ import annotations

import hashlib
import json
import os
import platform
import tempfile
from datetime import datetime, timezone
from pathlib import Path

from . import __version__


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def module_versions() -> dict[str, str]:
    import matplotlib
    import numpy
    import torch

    return {
        "masgan": __version__,
        "python": platform.python_version(),
        "numpy": numpy.__version__,
        "torch": torch.__version__,
        "matplotlib": matplotlib.__version__,
    }


def atomic_write_text(path, text: str) -> Path:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class Manifest:
    def __init__(self, command: str, config_hash: str, seeds=None):
        self.command = command
        self.config_hash = config_hash
        self.seeds = list(seeds or [])
        self.started = now_iso()
        self.inputs: dict[str, str] = {}
        self.artifacts: dict[str, str] = {}

    def add_inputs(self, paths, root) -> None:
        for p in paths:
            self.inputs[_rel(p, root)] = file_digest(p)

    def add_artifacts(self, paths, root) -> None:
        for p in paths:
            p = Path(p)
            if p.is_dir():
                for q in sorted(p.rglob("*")):
                    if q.is_file():
                        self.artifacts[_rel(q, root)] = file_digest(q)
            else:
                self.artifacts[_rel(p, root)] = file_digest(p)

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "versions": module_versions(),
            "inputs": dict(sorted(self.inputs.items())),
            "artifacts": dict(sorted(self.artifacts.items())),
            "started": self.started,
            "finished": now_iso(),
        }

    def write(self, root) -> Path:
        path = Path(root) / "manifests" / f"{self.command}.json"
        return atomic_write_text(path, json.dumps(self.to_dict(), indent=2) + "\n")


def _rel(p, root) -> str:
    p, root = Path(p).resolve(), Path(root).resolve()
    try:
        return p.relative_to(root).as_posix()
    except ValueError:
        return str(p)


def verify_manifest(path) -> list[str]:
    """Artifacts whose current digest differs from the recorded one (empty when all match)."""
    path = Path(path)
    root = path.parent.parent
    m = json.loads(path.read_text(encoding="utf-8"))
    bad = []
    for rel, digest in m["artifacts"].items():
        p = Path(rel) if Path(rel).is_absolute() else root / rel
        if not p.is_file() or file_digest(p) != digest:
            bad.append(rel)
    return bad
