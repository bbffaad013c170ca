"""Hierarchical attributions read off a fitted surrogate.

Unit importance is ``|beta_j|`` and modality importance the L2 norm of the
modality's coefficient block, both on the weighted-standardized
coefficients so that magnitudes are comparable across units. Modality
shares are the fraction of absolute coefficient mass per modality.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RasterShapeMismatch
from .sgl import SurrogateFit
from .space import InstanceSpec


@dataclass
class Explanation:
    modality_names: tuple[str, ...]
    unit_importance: np.ndarray
    signed_coefficients: np.ndarray
    modality_importance: np.ndarray
    modality_share: np.ndarray
    share_degenerate: bool
    unit_ranking: list[np.ndarray]  # per modality, global unit indices
    modality_ranking: np.ndarray
    coordinates: str = "standardized"

    def global_ranking(self) -> np.ndarray:
        """All units by descending importance (stable, index tie-break)."""
        return np.argsort(-self.unit_importance, kind="stable")

    def to_dict(self, spec: InstanceSpec | None = None, top: int | None = None) -> dict:
        out = {
            "coordinates": self.coordinates,
            "modalities": [],
            "modality_ranking": [self.modality_names[m] for m in self.modality_ranking],
            "share_degenerate": bool(self.share_degenerate),
            "unit_importance": self.unit_importance.tolist(),
            "signed_coefficients": self.signed_coefficients.tolist(),
        }
        for m, name in enumerate(self.modality_names):
            ranking = self.unit_ranking[m]
            if top is not None:
                ranking = ranking[:top]
            out["modalities"].append({
                "name": name,
                "importance": float(self.modality_importance[m]),
                "share": float(self.modality_share[m]),
                "top_units": [
                    {"unit": int(j), "local_index": int(j - (spec.offsets[m] if spec else 0)),
                     "coefficient": float(self.signed_coefficients[j])}
                    for j in ranking if self.unit_importance[j] > 0
                ],
            })
        return out


def explain(fit: SurrogateFit, spec: InstanceSpec, use_pre_refit: bool = False) -> Explanation:
    """Turn a surrogate fit into unit- and modality-level attributions.

    Examples
    --------
    Coefficients ``(3, 4 | 0)`` over groups of size 2 and 1 give modality
    importances ``(5, 0)`` and shares ``(1, 0)``.
    """
    source = fit.pre_refit if (use_pre_refit and fit.pre_refit is not None) else fit
    beta = np.asarray(source.beta_std, dtype=float)
    a = np.abs(beta)
    A = np.array([np.linalg.norm(beta[s]) for s in spec.slices()])
    mass = np.array([a[s].sum() for s in spec.slices()])
    total = mass.sum()
    degenerate = not total > 0
    share = np.zeros_like(mass) if degenerate else mass / total
    unit_ranking = [s.start + np.argsort(-a[s], kind="stable") for s in spec.slices()]
    modality_ranking = np.argsort(-A, kind="stable")
    return Explanation(
        spec.modality_names, a, beta, A, share, degenerate, unit_ranking, modality_ranking,
        coordinates="standardized-pre-refit" if source is not fit else "standardized",
    )


def positive_evidence_map(explanation: Explanation, spec: InstanceSpec, modality,
                          unit_pixel_masks) -> tuple[np.ndarray, bool]:
    """Heatmap of positive evidence for one raster modality.

    ``H = sum_j max(beta_j, 0) * mask_j``, divided by its maximum so the
    peak is 1. Returns ``(H, degenerate)``; with no positive mass ``H`` is
    all zero and ``degenerate`` is True.
    """
    m = spec.index_of(modality)
    rasters = np.asarray(unit_pixel_masks, dtype=float)
    if rasters.ndim != 3 or rasters.shape[0] != spec.unit_counts[m]:
        raise RasterShapeMismatch(
            f"expected {spec.unit_counts[m]} rasters of equal shape, got array of shape {rasters.shape}"
        )
    beta = explanation.signed_coefficients[spec.slices()[m]]
    H = np.tensordot(np.maximum(beta, 0.0), rasters, axes=(0, 0))
    peak = H.max() if H.size else 0.0
    if not peak > 0:
        return np.zeros(rasters.shape[1:]), True
    return H / peak, False
