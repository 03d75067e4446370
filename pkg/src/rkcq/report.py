"""Convergence reports: per-level errors, empirical orders, CSV/JSON emission."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConvergenceReport", "eoc", "emit_report", "read_report_csv", "write_atomic"]

QUANTITIES = ("step", "integrated", "differentiated", "strong", "density", "antiderivative", "defect")


def eoc(levels) -> list[float]:
    """``log(e_{i-1}/e_i) / log(k_{i-1}/k_i)`` for consecutive levels."""
    out = []
    for (k0, e0), (k1, e1) in zip(levels, levels[1:]):
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(k0 / k1))
        else:
            out.append(math.nan)
    return out


@dataclass
class ConvergenceReport:
    levels: list[tuple[float, float]]
    eoc: list[float]
    quantity: str
    method: str
    valid: bool = True
    flagged: list[int] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if any(b[0] >= a[0] for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be sorted by decreasing step size")
        if len(self.eoc) != max(len(self.levels) - 1, 0):
            raise ValueError("need exactly one EOC value per consecutive level pair")

    @classmethod
    def from_levels(cls, levels, quantity: str, method: str, floor: float = 0.0, **kw) -> ConvergenceReport:
        levels = [(float(k), float(e)) for k, e in levels]
        flagged = [i for i, (_, e) in enumerate(levels) if e < floor]
        return cls(levels=levels, eoc=eoc(levels), quantity=quantity, method=method, flagged=flagged, **kw)

    @property
    def ks(self) -> np.ndarray:
        return np.array([k for k, _ in self.levels])

    @property
    def errors(self) -> np.ndarray:
        return np.array([e for _, e in self.levels])

    def usable_eoc(self) -> list[float]:
        """EOC values whose two levels are both above the roundoff floor."""
        bad = set(self.flagged)
        return [r for i, r in enumerate(self.eoc) if i not in bad and i + 1 not in bad and math.isfinite(r)]

    def median_eoc(self, last: int = 3) -> float:
        vals = self.usable_eoc()[-last:]
        return float(np.median(vals)) if vals else math.nan

    def monotone(self) -> bool:
        e = self.errors
        return bool(np.all(e[1:] < e[:-1]))

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "method": self.method,
            "valid": self.valid,
            "levels": [{"k": k, "error": e} for k, e in self.levels],
            "eoc": [None if not math.isfinite(r) else r for r in self.eoc],
            "median_eoc_last3": None if math.isnan(self.median_eoc()) else self.median_eoc(),
            "flagged_levels": self.flagged,
            "metadata": self.metadata,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "error", "eoc"])
        for i, (k, e) in enumerate(self.levels):
            r = "" if i == 0 else _fmt(self.eoc[i - 1])
            w.writerow([_fmt(k), _fmt(e), r])
        return buf.getvalue()


def _fmt(x: float) -> str:
    if not math.isfinite(x):
        return "nan"
    return f"{float(x):.16e}"


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(r: ConvergenceReport, path, manifest: dict | None = None) -> tuple[Path, Path]:
    """Write ``<path>`` (CSV ``k,error,eoc``) and ``<path minus .csv>.json``."""
    path = Path(path)
    if path.suffix != ".csv":
        path = path.with_suffix(".csv")
    json_path = path.with_suffix(".json")
    payload = r.to_dict()
    if manifest is not None:
        payload["manifest"] = manifest
    write_atomic(path, r.to_csv())
    write_atomic(json_path, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path, json_path


def read_report_csv(path) -> list[tuple[float, float, float | None]]:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["k", "error", "eoc"]:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        for row in reader:
            rows.append((float(row["k"]), float(row["error"]), float(row["eoc"]) if row["eoc"] else None))
    return rows
