"""Faithfulness, compactness, stability and coverage of an explanation."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.stats import rankdata

from ..attribution import Explanation
from ..blackbox import BlackBoxSession, TargetSelector
from ..errors import BadParams


def chunk_sizes(n_units: int, steps: int) -> np.ndarray:
    """Split ``n_units`` into ``steps`` chunks; the remainder goes one per chunk from the front."""
    if steps < 1:
        raise BadParams("steps must be >= 1")
    base, rem = divmod(n_units, steps)
    sizes = np.full(steps, base, dtype=int)
    sizes[:rem] += 1
    return sizes


def perturbation_path(ranking, n_units: int, steps: int, mode: str = "deletion") -> np.ndarray:
    """The ``steps + 1`` masks visited while deleting (or inserting) ranked units."""
    if mode not in ("deletion", "insertion"):
        raise BadParams(f"mode must be 'deletion' or 'insertion', got {mode!r}")
    ranking = np.asarray(ranking, dtype=int)
    if sorted(ranking.tolist()) != list(range(n_units)):
        raise BadParams("ranking must be a permutation of all units")
    start, flip = (1, 0) if mode == "deletion" else (0, 1)
    z = np.full(n_units, start, dtype=np.int8)
    path = [z.copy()]
    pos = 0
    for size in chunk_sizes(n_units, steps):
        z[ranking[pos:pos + size]] = flip
        pos += size
        path.append(z.copy())
    return np.asarray(path)


def aopc_curve(ranking, session: BlackBoxSession, selector: TargetSelector, steps: int = 20,
               mode: str = "deletion") -> np.ndarray:
    """Output curve along the perturbation path, relative to its start.

    Deletion points are ``y(start) - y(z_t)``; insertion points are
    ``y(z_t) - y(start)``. Uses ``steps + 1`` metric forward calls.
    """
    path = perturbation_path(ranking, session.spec.total_units, steps, mode)
    y = session.query_batch(path, selector, purpose="metric")
    return y[0] - y if mode == "deletion" else y - y[0]


def aopc(explanation, session: BlackBoxSession, selector: TargetSelector, steps: int = 20,
         mode: str = "deletion") -> float:
    """Area over the perturbation curve, averaged over the ``steps + 1`` points.

    ``explanation`` is an :class:`Explanation` (ranked by descending unit
    importance) or an explicit ranking of all unit indices.
    """
    ranking = explanation.global_ranking() if isinstance(explanation, Explanation) else explanation
    return float(aopc_curve(ranking, session, selector, steps, mode).mean())


def l0(explanation, threshold: float = 0.0) -> int:
    a = explanation.unit_importance if isinstance(explanation, Explanation) else np.abs(explanation)
    return int((np.asarray(a) > threshold).sum())


def coverage(explanation: Explanation, spec, modality) -> float:
    """Fraction of the modality's units with nonzero importance."""
    s = spec.slices()[spec.index_of(modality)]
    return float((explanation.unit_importance[s] > 0).mean())


@dataclass(frozen=True)
class StabilityResult:
    rho: float
    n_pairs: int
    n_excluded: int


def spearman(a, b) -> float:
    ra, rb = rankdata(a), rankdata(b)
    ra = ra - ra.mean()
    rb = rb - rb.mean()
    denom = np.sqrt((ra @ ra) * (rb @ rb))
    if denom == 0:
        return float("nan")
    return float(np.clip(ra @ rb / denom, -1.0, 1.0))


def spearman_stability(importance_runs) -> StabilityResult:
    """Mean pairwise Spearman correlation across repeated runs.

    Ties get average ranks. Pairs involving a constant vector have no
    defined correlation; they are left out of the mean and counted in
    ``n_excluded``.
    """
    runs = [np.asarray(r, dtype=float) for r in importance_runs]
    if len(runs) < 2:
        raise BadParams("need at least two runs")
    if len({r.shape for r in runs}) != 1:
        raise BadParams("all runs must have the same length")
    vals, excluded = [], 0
    for a, b in combinations(runs, 2):
        if np.ptp(a) == 0 or np.ptp(b) == 0:
            excluded += 1
            continue
        vals.append(spearman(a, b))
    rho = float(np.mean(vals)) if vals else float("nan")
    return StabilityResult(rho, len(vals), excluded)
