"""Structured verdict records shared by every check."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any

PASS, FAIL, SKIP = "pass", "fail", "skip"

# How an entry's estimate is compared to its target:
#   abs   |estimate - target| <= tolerance
#   le    estimate <= target + tolerance
#   ge    estimate >= target - tolerance
#   p_ge  p_value >= tolerance                (null not rejected at level tolerance)
#   p_lt  p_value < tolerance                 (null rejected; power controls)
#   true  estimate is truthy (1.0)            (exact identities, orderings)
COMPARISONS = ("abs", "le", "ge", "p_ge", "p_lt", "true")


def _clean(x):
    if x is None:
        return None
    if isinstance(x, bool):
        return float(x)
    x = float(x)
    return x if math.isfinite(x) else None


@dataclass
class Entry:
    name: str
    estimate: float | None
    target: float | None
    tolerance: float | None
    comparison: str
    sample_size: int
    seed: int | None
    standard_error: float | None = None
    p_value: float | None = None
    verdict: str = ""
    detail: str = ""

    def __post_init__(self):
        if self.comparison not in COMPARISONS:
            raise ValueError(f"unknown comparison {self.comparison!r}")
        self.estimate = _clean(self.estimate)
        self.target = _clean(self.target)
        self.tolerance = _clean(self.tolerance)
        self.standard_error = _clean(self.standard_error)
        self.p_value = _clean(self.p_value)
        self.sample_size = int(self.sample_size)
        if self.verdict != SKIP:
            self.verdict = self._decide()

    def _decide(self) -> str:
        c, est, tgt, tol = self.comparison, self.estimate, self.target, self.tolerance
        if c in ("p_ge", "p_lt"):
            if self.p_value is None:
                return FAIL
            ok = self.p_value >= tol if c == "p_ge" else self.p_value < tol
        elif c == "true":
            ok = bool(est)
        else:
            if est is None or tgt is None or tol is None:
                return FAIL
            if c == "abs":
                ok = abs(est - tgt) <= tol
            elif c == "le":
                ok = est <= tgt + tol
            else:
                ok = est >= tgt - tol
        return PASS if ok else FAIL

    @property
    def passed(self) -> bool:
        return self.verdict == PASS


def skipped(name: str, detail: str, sample_size: int = 0, seed=None) -> Entry:
    return Entry(name, None, None, None, "true", sample_size, seed, verdict=SKIP, detail=detail)


@dataclass
class StatReport:
    entries: list[Entry] = field(default_factory=list)
    config: dict[str, Any] = field(default_factory=dict)

    def add(self, *entries: Entry):
        self.entries.extend(entries)

    def extend(self, entries):
        self.entries.extend(entries)

    @property
    def failed(self) -> list[Entry]:
        return [e for e in self.entries if e.verdict == FAIL]

    @property
    def ok(self) -> bool:
        return not self.failed

    def to_dict(self) -> dict:
        return {"config": self.config, "entries": [asdict(e) for e in self.entries]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False, allow_nan=False) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "StatReport":
        entries = []
        for raw in data.get("entries", []):
            verdict = raw.get("verdict", "")
            e = Entry(**{k: v for k, v in raw.items() if k != "verdict"},
                      verdict=SKIP if verdict == SKIP else "")
            entries.append(e)
        return cls(entries, dict(data.get("config", {})))

    def table(self) -> str:
        rows = [("verdict", "name", "estimate", "target", "tol/alpha", "se", "p", "n")]
        for e in self.entries:
            rows.append((
                e.verdict.upper(),
                e.name,
                _fmt(e.estimate),
                _fmt(e.target),
                _fmt(e.tolerance),
                _fmt(e.standard_error),
                _fmt(e.p_value),
                str(e.sample_size),
            ))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        n_fail = len(self.failed)
        lines.append(f"{len(self.entries)} checks, {n_fail} failed")
        return "\n".join(lines)


def _fmt(x) -> str:
    return "-" if x is None else f"{x:.6g}"


@dataclass
class RateRow:
    epsilon: float
    reps: int
    sup_error_quantiles: dict[str, float]
    normalized_ratio_quantiles: dict[str, float]
    medians: dict[str, float]


@dataclass
class RateReport:
    """Per-epsilon sup-error quantiles, rows ordered by decreasing epsilon."""

    rows: list[RateRow]
    trend_verdict: str
    slack: float
    seed: int | None
    records: list[dict] = field(default_factory=list)

    def __post_init__(self):
        eps = [r.epsilon for r in self.rows]
        if eps != sorted(eps, reverse=True):
            raise ValueError("rate rows must be sorted by decreasing epsilon")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"
