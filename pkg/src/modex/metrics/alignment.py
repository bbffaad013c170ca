"""Agreement between a positive-evidence heatmap and a ground-truth mask."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import AllZeroHeatmap, BadParams, DegenerateMask, RasterShapeMismatch

ROLL_EPS = 1e-12
DEFAULT_PERCENTILES = tuple(range(90, 100))


def _check_pair(H, G):
    H = np.asarray(H, dtype=float)
    G = np.asarray(G).astype(bool)
    if H.shape != G.shape:
        raise RasterShapeMismatch(f"heatmap {H.shape} and mask {G.shape} differ")
    return H, G


def contrast_heat(H, G) -> float:
    """Mean heat inside the mask minus mean heat outside it."""
    H = H - H.min()  # shift-invariant; keeps constant heat exactly at zero
    return float(H[G].mean() - H[~G].mean())


def roll_offsets(shape, rolls: int | None, seed) -> np.ndarray:
    """Non-zero circular shifts: ``rolls`` random ones, or all of them if ``None``."""
    h, w = shape
    if rolls is None:
        grid = np.array([(dy, dx) for dy in range(h) for dx in range(w) if dy or dx])
        return grid.reshape(-1, 2)
    if rolls < 2:
        raise BadParams("rolls must be >= 2")
    if h * w < 2:
        raise DegenerateMask("raster too small to shift")
    rng = np.random.default_rng(seed)
    out = np.empty((rolls, 2), dtype=int)
    for i in range(rolls):
        while True:
            dy, dx = int(rng.integers(h)), int(rng.integers(w))
            if dy or dx:
                break
        out[i] = dy, dx
    return out


def contrast_heat_z(H, G, rolls: int | None = 50, seed=0) -> tuple[float, float]:
    """Contrast of heat inside vs outside ``G``, z-scored against shifted masks.

    The null distribution comes from circular 2-D shifts of ``G`` (which
    preserve its shape and area). ``rolls=None`` enumerates every non-zero
    shift instead of sampling.

    Returns
    -------
    ch_z, ch_pos : float
    """
    H, G = _check_pair(H, G)
    if G.ndim != 2:
        raise RasterShapeMismatch("contrast_heat_z needs 2-D rasters")
    if G.all() or not G.any():
        raise DegenerateMask("ground-truth mask must contain both classes")
    ch = contrast_heat(H, G)
    null = np.array([contrast_heat(H, np.roll(G, (dy, dx), axis=(0, 1)))
                     for dy, dx in roll_offsets(G.shape, rolls, seed)])
    z = (ch - null.mean()) / (null.std() + ROLL_EPS)
    return float(z), ch


def pixel_ap(H, G) -> float:
    """Average precision of pixels ranked by heat, ties scored as one block."""
    H, G = _check_pair(H, G)
    scores, labels = H.ravel(), G.ravel()
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DegenerateMask("ground-truth mask has no positive pixels")
    order = np.argsort(-scores, kind="stable")
    s, l = scores[order], labels[order]
    # last index of every block of equal scores
    ends = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    tp = np.cumsum(l)[ends]
    precision = tp / (ends + 1)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def iou_curve(H, G, percentiles=DEFAULT_PERCENTILES, nonzero_only: bool = True) -> np.ndarray:
    H, G = _check_pair(H, G)
    if not len(percentiles):
        raise BadParams("percentile grid is empty")
    pool = H[H > 0] if nonzero_only else H.ravel()
    if pool.size == 0:
        raise AllZeroHeatmap("heatmap has no non-zero pixels")
    out = []
    for t in np.percentile(pool, percentiles):
        M = H >= t
        union = (M | G).sum()
        out.append((M & G).sum() / union if union else 0.0)
    return np.asarray(out, dtype=float)


def iou_auc(H, G, percentiles=DEFAULT_PERCENTILES, nonzero_only: bool = True):
    """Mean IoU between ``G`` and percentile-thresholded heatmaps.

    Returns ``(auc, curve)``.
    """
    curve = iou_curve(H, G, percentiles, nonzero_only)
    return float(curve.mean()), curve


@dataclass(frozen=True)
class OverlapResult:
    gt_cov: float
    mass_prec: float
    spg_hit: bool
    selected: tuple[int, ...]
    shortfall: int = 0
    degenerate: bool = False


def topk_overlap(unit_rasters, beta, G, k: int = 8, tau: float = 0.1) -> OverlapResult:
    """Coverage/precision of the top-``k`` positive units against ``G``.

    Units with positive coefficient are ranked by descending coefficient.
    With ``o_j = |S_j & G|`` and ``r_j = o_j / max(|S_j|, 1)``:

    * GT-Cov@K   = 100 * sum o_j / |G|
    * MassPrec@K = 100 * sum beta_j r_j / sum beta_j
    * SPG hit    = max r_j >= tau
    """
    if k < 1:
        raise BadParams("k must be >= 1")
    if not 0.0 < tau <= 1.0:
        raise BadParams("tau must lie in (0, 1]")
    S = np.asarray(unit_rasters).astype(bool)
    G = np.asarray(G).astype(bool)
    beta = np.asarray(beta, dtype=float)
    if S.ndim != 3 or S.shape[0] != beta.size or S.shape[1:] != G.shape:
        raise RasterShapeMismatch(
            f"unit rasters {S.shape}, coefficients {beta.shape} and mask {G.shape} do not line up"
        )
    n_gt = int(G.sum())
    if n_gt == 0:
        raise DegenerateMask("ground-truth mask has no positive pixels")
    positive = np.flatnonzero(beta > 0)
    if positive.size == 0:
        return OverlapResult(0.0, 0.0, False, (), shortfall=k, degenerate=True)
    top = positive[np.argsort(-beta[positive], kind="stable")][:k]
    o = np.array([(S[j] & G).sum() for j in top], dtype=float)
    area = np.array([S[j].sum() for j in top], dtype=float)
    r = o / np.maximum(area, 1.0)
    w = beta[top]
    return OverlapResult(
        gt_cov=float(100.0 * o.sum() / n_gt),
        mass_prec=float(100.0 * (w @ r) / w.sum()),
        spg_hit=bool(r.max() >= tau),
        selected=tuple(int(j) for j in top),
        shortfall=int(k - top.size),
    )
