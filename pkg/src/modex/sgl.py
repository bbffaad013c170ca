"""Weighted sparse group lasso surrogate.

Solves, over columns standardized under the locality weights,

    min_{b0, b}  1/(2N) sum_i pi_i (y_i - b0 - x_i^T b)^2
                 + lam (1 - rho) sum_m tau_m ||b_{g_m}||_2
                 + lam rho ||b||_1

with cyclic block coordinate descent over modality groups. Each block
first checks whether the whole group can be zeroed (the group
soft-threshold condition); otherwise the block subproblem is solved by
proximal gradient steps whose prox is the exact SGL prox (soft-threshold,
then group shrink). The intercept is unpenalized and, because weighted
standardization centers every column, has the closed form ``b0 = ybar_w``.

The loss is divided by ``N`` (the row count), not by ``sum(pi)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from ._weighted import weighted_r2, weighted_std
from .errors import BadParams, DegenerateDesign, DegenerateTargets, NotConvergedWarning, SingularSystem
from .neighborhood import LocalDataset
from .space import InstanceSpec

CONSTANT_SCALE = 1e-12
GAMMA_CAP = 1e6


@dataclass(frozen=True)
class SglConfig:
    lam: float = 0.004
    l1_ratio: float = 0.9
    max_iters: int = 10000
    tol: float = 1e-7
    ridge_refit: bool = True
    ridge_lambda: float = 1e-4
    max_inner: int = 2000

    def __post_init__(self):
        if not self.lam > 0:
            raise BadParams("lambda must be positive")
        if not 0.0 <= self.l1_ratio <= 1.0:
            raise BadParams("l1_ratio must lie in [0, 1]")
        if self.max_iters < 1 or self.tol <= 0:
            raise BadParams("max_iters must be >= 1 and tol > 0")
        if self.ridge_lambda < 0:
            raise BadParams("ridge_lambda must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "l1_ratio": self.l1_ratio,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "ridge_refit": self.ridge_refit,
            "ridge_lambda": self.ridge_lambda,
            "max_inner": self.max_inner,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SglConfig":
        obj = dict(obj)
        if "lambda" in obj:
            obj["lam"] = obj.pop("lambda")
        return cls(**obj)


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    scale: np.ndarray
    constant: np.ndarray  # bool, True for frozen zero-variance columns

    def transform(self, masks) -> np.ndarray:
        X = (np.asarray(masks, dtype=float) - self.mean) / self.scale
        X[:, self.constant] = 0.0
        return X

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "scale": self.scale.tolist(),
            "constant": [int(c) for c in self.constant],
        }


@dataclass
class SurrogateFit:
    """Fitted surrogate ``g(z) = beta0 + z^T beta``.

    ``beta0``/``beta`` are in original mask coordinates; ``beta0_std`` and
    ``beta_std`` are on the weighted-standardized columns, which is where
    the penalty acts and where attributions are read off.
    """

    beta0: float
    beta: np.ndarray
    beta0_std: float
    beta_std: np.ndarray
    tau: np.ndarray
    standardization: Standardization
    config: SglConfig
    diagnostics: dict = field(default_factory=dict)
    pre_refit: "SurrogateFit | None" = None

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(j) for j in np.flatnonzero(self.beta_std != 0))

    def predict(self, masks) -> np.ndarray:
        return self.beta0 + np.asarray(masks, dtype=float) @ self.beta

    def to_dict(self) -> dict:
        diag = {k: v for k, v in self.diagnostics.items() if k != "objective_trace"}
        out = {
            "beta0": float(self.beta0),
            "beta": self.beta.tolist(),
            "beta0_std": float(self.beta0_std),
            "beta_std": self.beta_std.tolist(),
            "support": list(self.support),
            "tau": self.tau.tolist(),
            "standardization": self.standardization.to_dict(),
            "config": self.config.to_dict(),
            "diagnostics": _jsonable(diag),
        }
        if self.pre_refit is not None:
            out["pre_refit"] = {
                "beta0_std": float(self.pre_refit.beta0_std),
                "beta_std": self.pre_refit.beta_std.tolist(),
            }
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# ---------------------------------------------------------------------------
# preprocessing


def standardize_weighted(dataset: LocalDataset) -> tuple[np.ndarray, Standardization]:
    """Center and scale columns to weighted mean 0 and weighted variance 1.

    Columns whose weighted std is below ``1e-12`` are frozen: scale 1,
    flagged constant, and set to 0 in the returned design.
    """
    Z = np.asarray(dataset.masks, dtype=float)
    w = dataset.weights
    mu = w @ Z / w.sum()
    sd = weighted_std(Z, w)
    constant = sd < CONSTANT_SCALE
    scale = np.where(constant, 1.0, sd)
    std = Standardization(mu, scale, constant)
    return std.transform(Z), std


def group_penalty_weights(dataset: LocalDataset, spec: InstanceSpec) -> np.ndarray:
    """Size-and-variance corrected group weights ``tau_g = sqrt(p_g) * gamma_g``.

    ``gamma_g`` is inversely proportional to the mean weighted std of the
    group's columns (capped at 1e6 for zero-variance groups) and then
    rescaled to mean 1 across groups.
    """
    sd = weighted_std(np.asarray(dataset.masks, dtype=float), dataset.weights)
    gamma = np.empty(spec.n_modalities)
    for m, s in enumerate(spec.slices()):
        mean_sd = sd[s].mean()
        gamma[m] = GAMMA_CAP if mean_sd <= 1.0 / GAMMA_CAP else 1.0 / mean_sd
    gamma = gamma / gamma.mean()
    return np.sqrt(np.asarray(spec.unit_counts, dtype=float)) * gamma


# ---------------------------------------------------------------------------
# objective and optimality


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def sgl_prox(v, l1, l2):
    """Prox of ``l1 ||b||_1 + l2 ||b||_2`` evaluated at ``v``."""
    u = soft_threshold(v, l1)
    norm = np.linalg.norm(u)
    if norm <= l2:
        return np.zeros_like(u)
    return (1.0 - l2 / norm) * u


def penalty(beta, lam, rho, tau, groups) -> float:
    beta = np.asarray(beta, dtype=float)
    group_term = sum(t * np.linalg.norm(beta[list(g)]) for t, g in zip(tau, groups))
    return lam * (1.0 - rho) * group_term + lam * rho * np.abs(beta).sum()


def _objective(X, y, w, b0, beta, lam, rho, tau, groups) -> float:
    r = y - b0 - X @ beta
    return 0.5 * float(w @ r**2) / len(y) + penalty(beta, lam, rho, tau, groups)


def objective(dataset: LocalDataset, beta0, beta, cfg: SglConfig, tau, spec: InstanceSpec,
              standardized: bool = True) -> float:
    """Value of the SGL objective at ``(beta0, beta)``.

    With ``standardized=True`` the coefficients are read on the
    weighted-standardized design (the coordinates the solver works in);
    otherwise on the raw 0/1 masks.
    """
    if standardized:
        X, _ = standardize_weighted(dataset)
    else:
        X = np.asarray(dataset.masks, dtype=float)
    return _objective(X, dataset.targets, dataset.weights, float(beta0), np.asarray(beta, dtype=float),
                      cfg.lam, cfg.l1_ratio, np.asarray(tau), spec.groups)


def kkt_residual(X, y, w, b0, beta, lam, rho, tau, groups, free=None) -> float:
    """Largest violation of the SGL optimality conditions.

    ``free`` marks columns that take part in the fit; frozen columns are
    skipped.
    """
    X = np.asarray(X, dtype=float)
    N = len(y)
    r = y - b0 - X @ beta
    grad = -(X.T @ (w * r)) / N
    worst = abs(float(w @ r)) / N
    free = np.ones(X.shape[1], bool) if free is None else np.asarray(free, bool)
    l1 = lam * rho
    for t, g in zip(tau, groups):
        g = np.asarray(g)
        g = g[free[g]]
        if g.size == 0:
            continue
        bg = beta[g]
        norm = np.linalg.norm(bg)
        l2 = lam * (1.0 - rho) * t
        if norm == 0:
            worst = max(worst, np.linalg.norm(soft_threshold(-grad[g], l1)) - l2)
            continue
        act = bg != 0
        res_act = grad[g][act] + l1 * np.sign(bg[act]) + l2 * bg[act] / norm
        if res_act.size:
            worst = max(worst, np.abs(res_act).max())
        if (~act).any():
            worst = max(worst, (np.abs(grad[g][~act]) - l1).max())
    return max(float(worst), 0.0)


# ---------------------------------------------------------------------------
# solver


def _solve_block(H, c, b, l1, l2, L, tol, max_inner):
    """Minimize ``0.5 b'Hb - c'b + l1|b|_1 + l2|b|_2`` from warm start ``b``."""
    step = 1.0 / L
    for _ in range(max_inner):
        grad = H @ b - c
        b_new = sgl_prox(b - step * grad, step * l1, step * l2)
        delta = np.abs(b_new - b).max()
        b = b_new
        if delta < tol:
            break
    return b


def solve_sgl(X, y, w, groups, tau, lam, rho, free=None, tol=1e-7, max_iters=10000,
              max_inner=2000, beta_init=None):
    """Block coordinate descent on a prepared (standardized) design.

    Returns ``(b0, beta, info)`` where ``info`` holds iterations, the
    per-sweep objective trace and the converged flag.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    N, K = X.shape
    free = np.ones(K, bool) if free is None else np.asarray(free, bool)
    beta = np.zeros(K) if beta_init is None else np.array(beta_init, dtype=float)
    beta[~free] = 0.0

    blocks = []
    for t, g in zip(tau, groups):
        g = np.asarray(g, dtype=int)
        g = g[free[g]]
        if g.size == 0:
            continue
        Xg = X[:, g]
        H = (Xg.T * w) @ Xg / N
        L = float(np.linalg.eigvalsh(H)[-1])
        blocks.append((g, Xg, H, max(L, 1e-300), lam * (1.0 - rho) * t))
    l1 = lam * rho

    b0 = float(w @ (y - X @ beta) / w.sum())
    r = y - b0 - X @ beta
    trace = [_objective(X, y, w, b0, beta, lam, rho, tau, groups)]
    converged = False
    it = 0
    inner_tol = tol * 1e-2
    for it in range(1, max_iters + 1):
        max_delta = 0.0
        for g, Xg, H, L, l2 in blocks:
            old = beta[g]
            wr = w * r
            c = Xg.T @ wr / N + H @ old  # X_g' W (partial residual) / N
            if np.linalg.norm(soft_threshold(c, l1)) <= l2:
                new = np.zeros_like(old)
            else:
                new = _solve_block(H, c, old.copy(), l1, l2, L, inner_tol, max_inner)
            d = new - old
            if d.any():
                r -= Xg @ d
                beta[g] = new
                max_delta = max(max_delta, float(np.abs(d).max()))
        shift = float(w @ r / w.sum())
        if shift:
            b0 += shift
            r -= shift
        trace.append(_objective(X, y, w, b0, beta, lam, rho, tau, groups))
        if max_delta < tol:
            converged = True
            break
    info = {"iterations": it, "converged": converged, "objective_trace": trace,
            "objective": trace[-1]}
    return b0, beta, info


def _back_transform(b0_std, beta_std, std: Standardization):
    beta = np.where(std.constant, 0.0, beta_std / std.scale)
    b0 = b0_std - float(std.mean @ beta)
    return b0, beta


def _fit_r2(dataset, predictions) -> float:
    try:
        return weighted_r2(dataset.targets, predictions, dataset.weights)
    except DegenerateTargets:
        return float("nan")


def fit(dataset: LocalDataset, spec: InstanceSpec, cfg: SglConfig | None = None, tau=None) -> SurrogateFit:
    """Fit the weighted SGL surrogate (and optionally refit on its support).

    Raises
    ------
    DegenerateDesign
        If the dataset has fewer than two distinct masks.

    Warns
    -----
    NotConvergedWarning
        If ``max_iters`` sweeps did not reach ``tol``; the last iterate is
        returned with ``diagnostics["converged"] = False``.
    """
    cfg = cfg or SglConfig()
    if len(np.unique(dataset.masks, axis=0)) < 2:
        raise DegenerateDesign("need at least two distinct masks to fit a surrogate")
    if tau is None:
        tau = group_penalty_weights(dataset, spec)
    tau = np.asarray(tau, dtype=float)
    if tau.shape != (spec.n_modalities,):
        raise BadParams(f"tau must have length {spec.n_modalities}")

    X, std = standardize_weighted(dataset)
    free = ~std.constant
    b0_std, beta_std, info = solve_sgl(
        X, dataset.targets, dataset.weights, spec.groups, tau, cfg.lam, cfg.l1_ratio,
        free=free, tol=cfg.tol, max_iters=cfg.max_iters, max_inner=cfg.max_inner,
    )
    if not info["converged"]:
        warnings.warn(f"SGL did not converge in {cfg.max_iters} sweeps", NotConvergedWarning)
    b0, beta = _back_transform(b0_std, beta_std, std)
    info["kkt_residual"] = kkt_residual(X, dataset.targets, dataset.weights, b0_std, beta_std,
                                        cfg.lam, cfg.l1_ratio, tau, spec.groups, free)
    info["sum_weights"] = float(dataset.weights.sum())
    info["n_constant_columns"] = int(std.constant.sum())
    result = SurrogateFit(b0, beta, b0_std, beta_std, tau, std, cfg, info)
    info["weighted_r2"] = _fit_r2(dataset, result.predict(dataset.masks))
    if cfg.ridge_refit:
        result = ridge_refit(result, dataset, spec, cfg.ridge_lambda)
    return result


def ridge_refit(fit_: SurrogateFit, dataset: LocalDataset, spec: InstanceSpec,
                ridge_lambda: float = 1e-4) -> SurrogateFit:
    """Re-estimate the support coefficients with a small ridge penalty.

    Solves ``(X_S' W X_S + N ridge_lambda I) b = X_S' W (y - ybar_w)`` on
    the standardized support columns; everything off the support stays
    exactly zero. The refit is rejected (original fit returned, flagged)
    if it lowers the weighted R^2 on the dataset by more than 1e-9, or if
    the system is singular.
    """
    S = np.asarray(fit_.support, dtype=int)
    if S.size == 0:
        return fit_
    X = fit_.standardization.transform(dataset.masks)
    y, w = dataset.targets, dataset.weights
    N = len(y)
    XS = X[:, S]
    ybar = float(w @ y / w.sum())
    A = (XS.T * w) @ XS + N * ridge_lambda * np.eye(S.size)
    rhs = XS.T @ (w * (y - ybar))
    diag = dict(fit_.diagnostics)
    try:
        try:
            bS = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(str(exc)) from exc
        if not np.isfinite(bS).all():
            raise SingularSystem("non-finite ridge solution")
    except SingularSystem as exc:
        warnings.warn(f"ridge refit failed ({exc}); keeping the SGL fit", RuntimeWarning)
        diag["refit"] = "singular"
        return replace(fit_, diagnostics=diag)

    beta_std = np.zeros_like(fit_.beta_std)
    beta_std[S] = bS
    # a coefficient landing on exactly 0.0 would silently drop out of the support
    beta_std[S] = np.where(beta_std[S] == 0.0, np.finfo(float).tiny, beta_std[S])
    b0, beta = _back_transform(ybar, beta_std, fit_.standardization)
    refit = SurrogateFit(b0, beta, ybar, beta_std, fit_.tau, fit_.standardization,
                         fit_.config, diag, pre_refit=fit_)
    r2_before = fit_.diagnostics.get("weighted_r2", float("nan"))
    r2_after = _fit_r2(dataset, refit.predict(dataset.masks))
    if np.isfinite(r2_before) and np.isfinite(r2_after) and r2_after < r2_before - 1e-9:
        diag = dict(fit_.diagnostics, refit="rejected")
        return replace(fit_, diagnostics=diag)
    diag["refit"] = "applied"
    diag["weighted_r2_pre_refit"] = r2_before
    diag["weighted_r2"] = r2_after
    diag["ridge_lambda"] = ridge_lambda
    return refit
