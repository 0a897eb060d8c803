"""Reproducibility metadata and deterministic, atomic artifact writers.

Artifacts never carry timestamps or absolute paths, so two runs with the
same configuration, seed and inputs produce byte-identical files.
"""
from __future__ import annotations

import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__

TOOL = "undercrowd"


def _plain(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats to JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def canonical_json(obj) -> str:
    """Sorted keys, no whitespace, ASCII only: the form that gets hashed."""
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode("ascii")).hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class Provenance:
    subcommand: str
    config_hash: str
    seeds: dict
    threads: int
    inputs: dict = field(default_factory=dict)  # file name -> sha256
    tool: str = TOOL
    version: str = __version__

    def to_dict(self) -> dict:
        return asdict(self)

    def run_id(self) -> str:
        """Short stamp naming the run directory; changes with config, inputs or subcommand."""
        key = {"subcommand": self.subcommand, "config_hash": self.config_hash, "inputs": self.inputs}
        return config_hash(key)[:12]


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via a temporary file in the same directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def dump_json(obj) -> str:
    return json.dumps(_plain(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, obj, provenance: Provenance | None = None) -> None:
    """JSON artifact; dict payloads get a ``provenance`` block."""
    if provenance is not None and isinstance(obj, dict):
        obj = {**obj, "provenance": provenance.to_dict()}
    atomic_write_text(path, dump_json(obj))


def write_csv(path, df: pd.DataFrame) -> None:
    buf = io.StringIO()
    df.to_csv(buf, index=False, lineterminator="\n")
    atomic_write_text(path, buf.getvalue())


class ArtifactWriter:
    """Collects the artifacts of one run and finishes with a manifest of their hashes."""

    def __init__(self, directory, provenance: Provenance):
        self.directory = Path(directory)
        self.provenance = provenance
        self.files: list[str] = []

    def path(self, name: str) -> Path:
        return self.directory / name

    def _track(self, name: str):
        if name not in self.files:
            self.files.append(name)

    def json(self, name: str, obj) -> Path:
        p = self.path(name)
        write_json(p, obj, self.provenance)
        self._track(name)
        return p

    def csv(self, name: str, df: pd.DataFrame) -> Path:
        p = self.path(name)
        write_csv(p, df)
        self._track(name)
        return p

    def text(self, name: str, text: str) -> Path:
        p = self.path(name)
        atomic_write_text(p, text)
        self._track(name)
        return p

    def manifest(self) -> Path:
        entries = {name: file_sha256(self.path(name)) for name in sorted(self.files)}
        p = self.path("manifest.json")
        write_json(p, {"artifacts": entries}, self.provenance)
        return p
