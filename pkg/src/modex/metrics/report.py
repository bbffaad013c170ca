"""Per-instance metric reports and batch aggregation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class MetricReport:
    aopc_del: float | None = None
    aopc_ins: float | None = None
    l0: int | None = None
    spearman: float | None = None
    coverage: dict = field(default_factory=dict)
    fwd_calls: dict = field(default_factory=dict)
    wall_time_seconds: float | None = None
    alignment: dict | None = None
    coverage_definition: str = "fraction of the modality's units with nonzero importance"

    def to_dict(self, include_timing: bool = True) -> dict:
        out = asdict(self)
        if not include_timing:
            out.pop("wall_time_seconds")
        return out


def summarize(values) -> dict:
    """mean/std plus median and quartiles, ignoring missing/non-finite values."""
    v = np.asarray([x for x in values if x is not None], dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return {"n": 0}
    q25, med, q75 = np.percentile(v, [25, 50, 75])
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "std": float(v.std()),
        "median": float(med),
        "q25": float(q25),
        "q75": float(q75),
    }


def flatten_report(report: dict, prefix: str = "") -> dict:
    """Flatten nested numeric fields to ``a.b`` keys (booleans become 0/1)."""
    flat = {}
    for key, val in report.items():
        name = f"{prefix}{key}"
        if isinstance(val, dict):
            flat.update(flatten_report(val, name + "."))
        elif isinstance(val, bool):
            flat[name] = float(val)
        elif isinstance(val, (int, float)) and val is not None:
            flat[name] = float(val)
    return flat


def aggregate(rows: list[dict]) -> dict:
    """Summaries for every numeric column present in any row."""
    flats = [flatten_report(r) for r in rows]
    keys = sorted({k for f in flats for k in f})
    return {k: summarize([f.get(k) for f in flats]) for k in keys}
