"""Local weighted dataset around the explained instance.

Masks are sampled around the all-ones reference, the black box is queried
once per mask, and each sample gets a modality-aware locality weight:

    d_m(z)  = fraction of modality-m units switched off
    ~d_m(z) = d_m(z) / (IQR_i d_m(z_i) + eps_d)
    D(z)    = sum_m alpha_m ~d_m(z)
    sigma   = max(median_i D(z_i), eps)
    pi(z)   = exp(-D(z)^2 / sigma^2)

Percentiles use linear interpolation between order statistics (numpy's
default), and the reference row takes part in the IQR and median.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .blackbox import BlackBoxSession, TargetSelector
from .errors import BadParams
from .space import InstanceSpec, check_masks

# Smallest weight ever returned; keeps pi strictly positive when
# D/sigma is large enough for exp() to underflow.
WEIGHT_FLOOR = np.finfo(float).tiny


@dataclass(frozen=True)
class KernelConfig:
    alpha: tuple[float, ...] | None = None  # None means uniform 1/M
    eps_d: float = 1e-8
    eps_sigma: float = 1e-12

    def __post_init__(self):
        if self.eps_d <= 0 or self.eps_sigma <= 0:
            raise BadParams("eps_d and eps_sigma must be positive")
        if self.alpha is not None:
            a = np.asarray(self.alpha, dtype=float)
            if a.ndim != 1 or a.size == 0 or (a < 0).any() or a.sum() <= 0:
                raise BadParams(f"alpha must be non-negative with positive sum, got {self.alpha}")
            object.__setattr__(self, "alpha", tuple(float(v) for v in a / a.sum()))

    def resolve_alpha(self, n_modalities: int) -> np.ndarray:
        if self.alpha is None:
            return np.full(n_modalities, 1.0 / n_modalities)
        if len(self.alpha) != n_modalities:
            raise BadParams(f"alpha has {len(self.alpha)} entries for {n_modalities} modalities")
        return np.asarray(self.alpha)

    def with_alpha(self, alpha) -> "KernelConfig":
        return KernelConfig(alpha=tuple(alpha), eps_d=self.eps_d, eps_sigma=self.eps_sigma)


@dataclass
class LocalDataset:
    """Rows ``(z_i, y_i, pi_i)`` plus the raw per-modality distances."""

    masks: np.ndarray
    targets: np.ndarray
    weights: np.ndarray
    distances: np.ndarray | None = None
    sigma: float | None = None
    alpha: np.ndarray | None = None
    reference_output: float | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.masks = np.asarray(self.masks, dtype=np.int8)
        self.targets = np.asarray(self.targets, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = len(self.masks)
        if len(self.targets) != n or len(self.weights) != n:
            raise BadParams(
                f"masks/targets/weights lengths disagree: {n}, {len(self.targets)}, {len(self.weights)}"
            )
        if n and (self.weights <= 0).any():
            raise BadParams("locality weights must be strictly positive")

    def __len__(self):
        return len(self.masks)

    def subset(self, rows) -> "LocalDataset":
        rows = np.asarray(rows)
        return LocalDataset(
            self.masks[rows],
            self.targets[rows],
            self.weights[rows],
            None if self.distances is None else self.distances[rows],
            self.sigma,
            self.alpha,
        )

    def reweighted(self, weights) -> "LocalDataset":
        return LocalDataset(self.masks, self.targets, weights, self.distances, None, None,
                            self.reference_output, dict(self.meta))

    def to_dict(self) -> dict:
        out = {
            "masks": ["".join(map(str, row)) for row in self.masks.tolist()],
            "targets": self.targets.tolist(),
            "weights": self.weights.tolist(),
        }
        if self.sigma is not None:
            out["sigma"] = float(self.sigma)
        if self.alpha is not None:
            out["alpha"] = np.asarray(self.alpha).tolist()
        if self.reference_output is not None:
            out["reference_output"] = float(self.reference_output)
        if self.meta:
            out["meta"] = self.meta
        return out

    @classmethod
    def from_dict(cls, obj: dict, spec: InstanceSpec | None = None) -> "LocalDataset":
        masks = np.array([[int(c) for c in row] for row in obj["masks"]], dtype=np.int8)
        if spec is not None:
            masks = check_masks(masks, spec)
        ds = cls(
            masks,
            np.asarray(obj["targets"], dtype=float),
            np.asarray(obj["weights"], dtype=float),
            sigma=obj.get("sigma"),
            alpha=None if obj.get("alpha") is None else np.asarray(obj["alpha"]),
            reference_output=obj.get("reference_output"),
            meta=obj.get("meta", {}),
        )
        if spec is not None:
            ds.distances = per_modality_distance(masks, spec)
        return ds

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def sample_masks(spec: InstanceSpec, n: int, seed: int, p_keep: float = 0.5) -> np.ndarray:
    """``n`` masks; row 0 is the all-ones reference, the rest i.i.d. Bernoulli."""
    if n < 1:
        raise BadParams("n must be >= 1")
    if not 0.0 <= p_keep <= 1.0:
        raise BadParams("p_keep must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    masks = np.ones((n, spec.total_units), dtype=np.int8)
    if n > 1:
        masks[1:] = rng.random((n - 1, spec.total_units)) < p_keep
    return masks


def per_modality_distance(z, spec: InstanceSpec) -> np.ndarray:
    """Fraction of switched-off units per modality.

    Accepts one mask (returns shape ``(M,)``) or a stack of masks
    (returns ``(N, M)``).
    """
    z = np.asarray(z)
    single = z.ndim == 1
    Z = check_masks(z, spec)
    off = (Z != 1).astype(float)
    d = np.stack([off[:, s].mean(axis=1) for s in spec.slices()], axis=1)
    return d[0] if single else d


def iqr_scales(D_raw, eps_d: float = 1e-8) -> np.ndarray:
    """Per-column divisor ``IQR_m + eps_d``."""
    D_raw = np.atleast_2d(np.asarray(D_raw, dtype=float))
    q75, q25 = np.percentile(D_raw, [75, 25], axis=0)
    return (q75 - q25) + eps_d


def iqr_scaled_distances(D_raw, eps_d: float = 1e-8) -> np.ndarray:
    D_raw = np.atleast_2d(np.asarray(D_raw, dtype=float))
    return D_raw / iqr_scales(D_raw, eps_d)


def aggregate_distance(D_scaled, alpha) -> np.ndarray:
    return np.asarray(D_scaled, dtype=float) @ np.asarray(alpha, dtype=float)


def kernel_weights(D_scaled, cfg: KernelConfig) -> tuple[np.ndarray, float]:
    """Gaussian locality weights and the median-distance bandwidth.

    Returns
    -------
    weights : ndarray of shape (N,)
        Values in ``(0, 1]``; exactly 1 where the aggregate distance is 0.
    sigma : float
    """
    D_scaled = np.atleast_2d(np.asarray(D_scaled, dtype=float))
    alpha = cfg.resolve_alpha(D_scaled.shape[1])
    D = aggregate_distance(D_scaled, alpha)
    sigma = max(float(np.median(D)), cfg.eps_sigma)
    w = np.exp(-(D / sigma) ** 2)
    return np.maximum(w, WEIGHT_FLOOR), sigma


def weights_for(D_raw, cfg: KernelConfig) -> tuple[np.ndarray, float]:
    """Raw distances -> (weights, sigma) in one step."""
    return kernel_weights(iqr_scaled_distances(D_raw, cfg.eps_d), cfg)


def build_local_dataset(
    spec: InstanceSpec,
    session: BlackBoxSession,
    selector: TargetSelector,
    n: int,
    seed: int,
    cfg: KernelConfig | None = None,
    p_keep: float = 0.5,
    requery_reference: bool = False,
) -> LocalDataset:
    """Sample, query and weight ``n`` perturbations around the instance.

    Uses exactly ``n`` explanation forward calls, plus one more when
    ``requery_reference`` asks for a separate query of the unmasked input.
    """
    if n < 2:
        raise BadParams("need at least the reference and one perturbation (n >= 2)")
    cfg = cfg or KernelConfig()
    masks = sample_masks(spec, n, seed, p_keep)
    targets = session.query_batch(masks, selector, purpose="explanation")
    ref = None
    if requery_reference:
        ref = float(session.query_batch(masks[:1], selector, purpose="explanation")[0])
    D_raw = per_modality_distance(masks, spec)
    weights, sigma = weights_for(D_raw, cfg)
    return LocalDataset(
        masks, targets, weights, D_raw, sigma,
        cfg.resolve_alpha(spec.n_modalities), ref,
        {"seed": int(seed), "p_keep": float(p_keep), "percentile": "linear"},
    )
