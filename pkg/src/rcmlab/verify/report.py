"""Fit reports: fitted constants, declared tolerances, a pass flag and provenance."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import __version__


def _plain(obj):
    """JSON-safe copy (numpy scalars and arrays become Python numbers and lists)."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if hasattr(obj, "value") and type(obj).__module__.startswith("rcmlab"):
        return obj.value
    return obj


@dataclass
class FitReport:
    """Outcome of one desk-scale check.

    ``passed`` is computed from ``constants`` and ``tolerance`` by the producing
    routine; ``provenance`` records seeds, sizes and replica counts so the
    check can be re-run, and ``points`` holds the raw data behind the fit.
    """

    claim: str
    constants: dict
    tolerance: dict
    passed: bool
    provenance: dict
    points: list = field(default_factory=list)
    notes: str = ""
    version: str = __version__

    def __post_init__(self):
        self.constants = _plain(self.constants)
        self.tolerance = _plain(self.tolerance)
        self.provenance = _plain(self.provenance)
        self.points = _plain(self.points)
        self.passed = bool(self.passed)

    def to_dict(self):
        return _plain(asdict(self))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls(**data)

    def write_points_csv(self, path):
        cols = sorted({k for p in self.points for k in p})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for p in self.points:
                w.writerow([_plain(p.get(c, "")) for c in cols])

    def summary(self):
        status = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.constants.items() if not isinstance(v, (list, dict)))
        return f"{status} {self.claim}: {shown}"


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)
