"""Inequality verdicts and JSON-safe serialisation helpers."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, is_dataclass

import numpy as np


@dataclass(frozen=True)
class Verdict:
    """Outcome of checking ``lhs <= rhs`` (or an equality within tolerance)."""

    anchor: str
    lhs: float
    rhs: float
    slack: float
    passed: bool
    note: str = ""

    @classmethod
    def le(cls, anchor: str, lhs: float, rhs: float, tol: float = 0.0, note: str = "") -> "Verdict":
        lhs, rhs = float(lhs), float(rhs)
        slack = rhs - lhs
        return cls(anchor, lhs, rhs, slack, bool(slack >= -tol), note)

    @classmethod
    def close(cls, anchor: str, value: float, target: float, tol: float, note: str = "") -> "Verdict":
        value, target = float(value), float(target)
        slack = tol - abs(value - target)
        return cls(anchor, value, target, slack, bool(slack >= 0), note)

    @classmethod
    def flag(cls, anchor: str, ok: bool, note: str = "") -> "Verdict":
        return cls(anchor, 0.0 if ok else 1.0, 0.0, 0.0 if ok else -1.0, bool(ok), note)


def jsonable(obj):
    """Convert dataclasses, numpy values and non-finite floats into plain JSON types."""
    if is_dataclass(obj) and not isinstance(obj, type):
        return {k: jsonable(v) for k, v in asdict(obj).items()}
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj
