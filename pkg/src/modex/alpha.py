"""Per-instance selection of the modality weights ``alpha``.

Starts from ``alpha_base_m ~ 1 / (IQR_m + eps_d)`` and scores a small
log-multiplicative grid around it. Each candidate's kernel is computed on
the full neighbourhood, a surrogate is fitted on a train split and scored
on the held-out split with

    J(alpha) = WR^2(alpha) - lambda_deg * [Neff(alpha) < N_min]

The reference row always stays in the train split. Candidates whose J is
within ``tie_tol`` of the best are tied; ties go to the candidate closest
to ``alpha_base`` in L1, then to the lexicographically smallest vector.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ._weighted import effective_sample_size, weighted_r2
from .errors import BadParams, DegenerateTargets, EmptyGrid
from .neighborhood import KernelConfig, LocalDataset, iqr_scales, weights_for
from .sgl import SglConfig, fit, group_penalty_weights
from .space import InstanceSpec

__all__ = [
    "AlphaSearchConfig",
    "base_alpha",
    "alpha_grid",
    "weighted_r2",
    "effective_sample_size",
    "degeneracy_objective",
    "split_rows",
    "select_alpha",
]

DEFAULT_MULTIPLIERS = (0.25, 0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class AlphaSearchConfig:
    grid_multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    n_min: float | None = None  # None means 0.1 * N
    lambda_deg: float = 1.0
    val_fraction: float = 0.25
    split_seed: int = 0
    tie_tol: float = 1e-6  # J values this close to the best count as ties

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise BadParams("val_fraction must lie in (0, 1)")
        if not self.grid_multipliers:
            raise EmptyGrid("grid_multipliers is empty")
        if any(m <= 0 for m in self.grid_multipliers):
            raise BadParams("grid multipliers must be positive")
        if self.lambda_deg < 0:
            raise BadParams("lambda_deg must be non-negative")
        if self.tie_tol < 0:
            raise BadParams("tie_tol must be non-negative")

    def to_dict(self) -> dict:
        return {
            "grid_multipliers": list(self.grid_multipliers),
            "n_min": self.n_min,
            "lambda_deg": self.lambda_deg,
            "val_fraction": self.val_fraction,
            "split_seed": self.split_seed,
            "tie_tol": self.tie_tol,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AlphaSearchConfig":
        obj = dict(obj)
        if "grid_multipliers" in obj:
            obj["grid_multipliers"] = tuple(obj["grid_multipliers"])
        return cls(**obj)


def base_alpha(D_raw, eps_d: float = 1e-8) -> np.ndarray:
    inv = 1.0 / iqr_scales(D_raw, eps_d)
    return inv / inv.sum()


def alpha_grid(alpha_base, multipliers=DEFAULT_MULTIPLIERS) -> list[np.ndarray]:
    """All per-modality multiplier combinations, renormalized and deduplicated.

    ``alpha_base`` itself is always the first candidate when 1 is among
    the multipliers.
    """
    alpha_base = np.asarray(alpha_base, dtype=float)
    if not len(multipliers):
        raise EmptyGrid("no grid multipliers")
    mults = sorted(set(float(m) for m in multipliers), key=lambda m: (m != 1.0, m))
    seen = set()
    grid = []
    for combo in itertools.product(mults, repeat=len(alpha_base)):
        a = alpha_base * np.asarray(combo)
        a = a / a.sum()
        key = tuple(np.round(a, 12))
        if key in seen:
            continue
        seen.add(key)
        grid.append(a)
    return grid


def degeneracy_objective(wr2: float, neff: float, n_min: float, lambda_deg: float) -> float:
    """``WR^2 - lambda_deg`` when ``Neff < N_min`` (strictly), else ``WR^2``."""
    return wr2 - lambda_deg * float(neff < n_min)


def split_rows(n: int, val_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Uniform random train/validation split; row 0 is always in train."""
    n_val = int(round(val_fraction * n))
    n_val = min(max(n_val, 2), n - 2)
    if n_val < 2:
        raise BadParams(f"dataset of {n} rows is too small to split")
    rng = np.random.default_rng(seed)
    perm = 1 + rng.permutation(n - 1)
    val = np.sort(perm[:n_val])
    train = np.sort(np.concatenate([[0], perm[n_val:]]))
    return train, val


def select_alpha(dataset: LocalDataset, spec: InstanceSpec, cfg: AlphaSearchConfig | None = None,
                 sgl_cfg: SglConfig | None = None, kernel: KernelConfig | None = None,
                 grid=None):
    """Grid-search the modality weights.

    Parameters
    ----------
    dataset : LocalDataset
        Needs ``masks``, ``targets`` and raw ``distances``; its weights are
        ignored.
    grid : list of arrays, optional
        Explicit candidates; defaults to :func:`alpha_grid` around the base.

    Returns
    -------
    alpha_star : ndarray
    diagnostics : dict
        ``alpha_base``, per-candidate ``alpha``/``wr2``/``neff``/``J``,
        the selected index and the bandwidth of the final kernel.
    """
    cfg = cfg or AlphaSearchConfig()
    sgl_cfg = sgl_cfg or SglConfig()
    kernel = kernel or KernelConfig()
    D_raw = dataset.distances
    if D_raw is None:
        from .neighborhood import per_modality_distance

        D_raw = per_modality_distance(dataset.masks, spec)
    N = len(dataset)
    a_base = base_alpha(D_raw, kernel.eps_d)
    if grid is None:
        grid = alpha_grid(a_base, cfg.grid_multipliers)
    grid = [np.asarray(a, dtype=float) / np.sum(a) for a in grid]
    if not grid:
        raise EmptyGrid("empty alpha grid")
    n_min = 0.1 * N if cfg.n_min is None else float(cfg.n_min)
    train, val = split_rows(N, cfg.val_fraction, cfg.split_seed)

    candidates = []
    for a in grid:
        w, sigma = weights_for(D_raw, kernel.with_alpha(a))
        full = dataset.reweighted(w)
        tr = full.subset(train)
        f = fit(tr, spec, sgl_cfg, tau=group_penalty_weights(tr, spec))
        yv, wv = dataset.targets[val], w[val]
        try:
            wr2 = weighted_r2(yv, f.predict(dataset.masks[val]), wv)
        except DegenerateTargets:
            wr2 = float("nan")
        neff = effective_sample_size(wv)
        J = degeneracy_objective(wr2, neff, n_min, cfg.lambda_deg)
        candidates.append({"alpha": a.tolist(), "wr2": wr2, "neff": neff, "J": J,
                           "sigma": sigma, "penalized": bool(neff < n_min)})

    Js = np.array([c["J"] for c in candidates], dtype=float)
    Js[~np.isfinite(Js)] = -np.inf
    top = Js.max()
    tied = [i for i in range(len(grid)) if Js[i] >= top - cfg.tie_tol] if np.isfinite(top) \
        else list(range(len(grid)))
    best = min(tied, key=lambda i: (round(float(np.abs(grid[i] - a_base).sum()), 12), tuple(grid[i])))
    alpha_star = grid[best]
    _, sigma_star = weights_for(D_raw, kernel.with_alpha(alpha_star))
    diagnostics = {
        "alpha_base": a_base.tolist(),
        "n_min": n_min,
        "lambda_deg": cfg.lambda_deg,
        "n_train": int(len(train)),
        "n_val": int(len(val)),
        "candidates": candidates,
        "selected": int(best),
        "tied": [int(i) for i in tied],
        "alpha_star": alpha_star.tolist(),
        "sigma_star": sigma_star,
        "surrogate_config": sgl_cfg.to_dict(),
        "note": "search fits reuse the final surrogate lambda and l1_ratio",
    }
    return alpha_star, diagnostics
