"""CSV/JSON emission of metrics and curves, and run manifests."""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .engine import TRACE_NAMES, MetricsReport

__all__ = [
    "fmt",
    "dumps_json",
    "emit_metrics",
    "write_curve",
    "write_table",
    "read_trace_csv",
    "sha256_file",
    "RunManifest",
]

PER_USER_KEYS = ("mean_throughput_bps", "download_ratio", "pearson", "stall_count",
                 "scheduled_fraction")


def fmt(x) -> str:
    """Fixed numeric text: integers as-is, reals with 17 significant digits."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return format(x, ".17g")


def _json_value(x, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(x, dict):
        if not x:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_json_value(v, indent, level + 1)}"
                 for k, v in x.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(x, np.ndarray):
        x = x.tolist()
    if isinstance(x, (list, tuple)):
        if not x:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in x):
            return "[" + ", ".join(_json_value(v, indent, level + 1) for v in x) + "]"
        items = [pad + _json_value(v, indent, level + 1) for v in x]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if x is None:
        return "null"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "null" if not math.isfinite(float(x)) else format(float(x), ".17g")
    return json.dumps(x)


def dumps_json(obj: Any, indent: int = 1) -> str:
    """JSON text with reals at 17 significant digits and non-finite values as null."""
    return _json_value(obj, indent, 0) + "\n"


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(text)
    return path


def emit_metrics(report: MetricsReport, out_dir, formats: Sequence[str] = ("csv", "json"),
                 prefix: str = "") -> list[Path]:
    """Write ``traces.csv``, ``aggregates.csv``, ``summary.csv`` and/or
    ``metrics.json`` under ``out_dir``; returns the paths written."""
    out = Path(out_dir)
    written = []
    agg = report.aggregates
    if "csv" in formats:
        lines = [",".join(("slot", "user") + TRACE_NAMES)]
        n_slots = report.n_slots
        for t in range(n_slots):
            for u in range(report.n_users):
                vals = [fmt(report.traces[k][t, u]) for k in TRACE_NAMES]
                lines.append(",".join([str(t), str(u)] + vals))
        written.append(_write(out / f"{prefix}traces.csv", "\n".join(lines) + "\n"))

        lines = [",".join(("user",) + PER_USER_KEYS)]
        for u in range(report.n_users):
            lines.append(",".join([str(u)] + [fmt(agg[k][u]) for k in PER_USER_KEYS]))
        written.append(_write(out / f"{prefix}aggregates.csv", "\n".join(lines) + "\n"))

        lines = ["name,value"]
        for k, v in agg.items():
            if k not in PER_USER_KEYS and not isinstance(v, (list, tuple)):
                lines.append(f"{k},{fmt(v)}")
        written.append(_write(out / f"{prefix}summary.csv", "\n".join(lines) + "\n"))
    if "json" in formats:
        doc = {
            "n_users": report.n_users,
            "slot_duration_s": report.slot_duration_s,
            "traces": {k: report.traces[k] for k in TRACE_NAMES},
            "aggregates": agg,
        }
        written.append(_write(out / f"{prefix}metrics.json", dumps_json(doc)))
    unknown = set(formats) - {"csv", "json"}
    if unknown:
        raise ValueError(f"unknown formats {sorted(unknown)}")
    return written


def write_curve(path, x_name: str, y_name: str, x: Iterable, y: Iterable) -> Path:
    """Two-column plot data."""
    lines = [f"{x_name},{y_name}"]
    lines += [f"{fmt(a)},{fmt(b)}" for a, b in zip(x, y)]
    return _write(Path(path), "\n".join(lines) + "\n")


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    lines = [",".join(header)]
    lines += [",".join(fmt(v) if not isinstance(v, str) else v for v in row) for row in rows]
    return _write(Path(path), "\n".join(lines) + "\n")


def read_trace_csv(path) -> tuple[dict[str, np.ndarray], int]:
    """Traces back from ``traces.csv`` as ``(n_slots, n_users)`` arrays."""
    data = np.genfromtxt(path, delimiter=",", names=True, dtype=float)
    data = np.atleast_1d(data)
    if data.size == 0:
        return {k: np.zeros((0, 0)) for k in TRACE_NAMES}, 0
    n_users = int(data["user"].max()) + 1
    n_slots = int(data["slot"].max()) + 1
    out = {k: data[k].reshape(n_slots, n_users) for k in TRACE_NAMES}
    return out, n_users


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    """Everything needed to re-run a preset, plus checksums of its outputs."""

    config_path: Optional[str]
    preset: Optional[str]
    out_dir: str
    seeds: list[int]
    config_yaml: str
    overrides: list[str] = field(default_factory=list)
    checksums: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))

    def write(self, path=None) -> Path:
        path = Path(path) if path is not None else Path(self.out_dir) / "manifest.json"
        return _write(path, self.to_json())

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def record(self, paths: Iterable[os.PathLike]) -> None:
        base = Path(self.out_dir)
        for p in sorted(Path(x) for x in paths):
            self.checksums[str(p.relative_to(base))] = sha256_file(p)
