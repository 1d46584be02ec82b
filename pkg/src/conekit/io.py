"""Config parsing, canonical JSON, CSV and the binary grid format."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import tomli

from .model_geometry import BaseMetric, ConeParams, DomainSpec, WEIGHT_CATALOG, weight_from_catalog

SCHEMA = 1
COMMANDS = ("metric", "symbolic-verify", "curvature-scan", "rate-fit", "holder", "solve", "sweep", "report")
SOURCE_CATALOG = ("zero", "constant", "cosine", "radial_bump")
GRID_MAGIC = b"CKGRID01"


class ConfigError(ValueError):
    """Raised for unreadable or inconsistent configuration files."""


# ---------------------------------------------------------------------------
# config


@dataclass
class RunConfig:
    command: str
    params: ConeParams
    domain: DomainSpec
    weight: str = "constant"
    weight_args: dict = field(default_factory=dict)
    base_diag: tuple = (1.0,)
    source: str = "zero"
    source_args: dict = field(default_factory=dict)
    output: str = "out"
    seed: int = 0
    run_id: str | None = None
    sections: dict = field(default_factory=dict)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def weight_object(self):
        return weight_from_catalog(self.weight, **self.weight_args)

    def base_object(self) -> BaseMetric:
        return BaseMetric.flat(list(self.base_diag))

    def to_json(self) -> dict:
        return {
            "command": self.command,
            "params": dict(self.params.__dict__),
            "domain": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.domain.__dict__.items()},
            "weight": {"name": self.weight, **self.weight_args},
            "base_diag": list(self.base_diag),
            "source": {"name": self.source, **self.source_args},
            "seed": self.seed,
            "sections": self.sections,
        }

    def derived_run_id(self) -> str:
        if self.run_id:
            return self.run_id
        digest = hashlib.sha256(canonical_json(self.to_json()).encode()).hexdigest()
        return f"{self.command}-{digest[:12]}"


def load_config(path: str | Path, command: str | None = None) -> RunConfig:
    """Parse a TOML run configuration.

    Raises
    ------
    ConfigError
        On syntax errors, unknown commands or catalog names, or invalid parameters.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomli.load(fh)
    except (OSError, tomli.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, command)


def config_from_dict(raw: dict, command: str | None = None) -> RunConfig:
    raw = dict(raw)
    cmd = command or raw.pop("command", None)
    raw.pop("command", None)
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command {cmd!r}; expected one of {', '.join(COMMANDS)}")
    try:
        params = ConeParams(**raw.pop("params", {"tau": 0.75}))
        dom = dict(raw.pop("domain", {}))
        for key in ("cone_taus", "resolution"):
            if key in dom:
                dom[key] = tuple(dom[key])
        domain = DomainSpec(**dom)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    weight = dict(raw.pop("weight", {"name": "constant"}))
    wname = weight.pop("name", "constant")
    if wname not in WEIGHT_CATALOG:
        raise ConfigError(f"unknown weight {wname!r}")
    source = dict(raw.pop("source", {"name": "zero"}))
    sname = source.pop("name", "zero")
    if sname not in SOURCE_CATALOG:
        raise ConfigError(f"unknown source {sname!r}")
    base = raw.pop("base", {})
    base_diag = tuple(float(v) for v in base.get("diag", [1.0] * domain.n))
    if len(base_diag) != domain.n:
        raise ConfigError("base.diag must have one entry per complex dimension")
    seed = raw.pop("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("seed must be an integer")
    output = raw.pop("output", "out")
    run_id = raw.pop("run_id", None)
    sections = {k: v for k, v in raw.items() if isinstance(v, dict)}
    leftover = [k for k, v in raw.items() if not isinstance(v, dict)]
    if leftover:
        raise ConfigError(f"unknown top-level keys: {', '.join(sorted(leftover))}")
    cfg = RunConfig(cmd, params, domain, wname, weight, base_diag, sname, source, output, seed, run_id, sections)
    try:
        cfg.weight_object()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"weight {wname!r}: {exc}") from exc
    return cfg


# ---------------------------------------------------------------------------
# JSON


def _encode(obj: Any) -> str:
    if obj is None or obj is True or obj is False:
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return '"nan"'
        if math.isinf(x):
            return '"inf"' if x > 0 else '"-inf"'
        return format(x, ".17g")
    if isinstance(obj, (complex, np.complexfloating)):
        return _encode([obj.real, obj.imag])
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ",".join(json.dumps(k) + ":" + _encode(v) for k, v in items) + "}"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ",".join(_encode(v) for v in obj) + "]"
    if hasattr(obj, "to_json"):
        return _encode(obj.to_json())
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Deterministic JSON: sorted keys, floats at 17 significant digits, no whitespace."""
    return _encode(obj)


def write_json(path: str | Path, obj: Any) -> None:
    Path(path).write_text(canonical_json(obj) + "\n", encoding="utf-8")


def read_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# CSV


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path: str | Path) -> tuple:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# binary grid


def write_grid(path: str | Path, values: np.ndarray, meta: dict | None = None) -> None:
    """Magic, little-endian ``uint32`` header length, JSON header, then float64 data (C order)."""
    arr = np.ascontiguousarray(values, dtype="<f8")
    header = canonical_json({"shape": list(arr.shape), "dtype": "<f8", "meta": meta or {}}).encode()
    with open(path, "wb") as fh:
        fh.write(GRID_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(arr.tobytes())


def read_grid(path: str | Path) -> tuple:
    """Inverse of ``write_grid``; returns ``(values, meta)``."""
    data = Path(path).read_bytes()
    if data[:8] != GRID_MAGIC:
        raise ValueError(f"{path}: not a grid file")
    (n,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12:12 + n])
    arr = np.frombuffer(data[12 + n:], dtype=header["dtype"]).reshape(header["shape"])
    return arr.copy(), header["meta"]
