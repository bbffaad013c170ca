"""End-to-end explanation runs: configuration, execution and reports."""
from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import metrics as M
from .alpha import AlphaSearchConfig, select_alpha
from .attribution import Explanation, explain, positive_evidence_map
from .blackbox import BlackBoxSession, HttpEndpoint, SubprocessEndpoint, TargetSelector, make_synthetic
from .errors import BadParams, ModexError
from .neighborhood import KernelConfig, LocalDataset, build_local_dataset, weights_for
from .sgl import SglConfig, SurrogateFit, fit
from .space import InstanceSpec


@dataclass(frozen=True)
class MetricsConfig:
    deletion: bool = True
    insertion: bool = False
    steps: int = 20
    k: int = 8
    tau: float = 0.1
    rolls: int = 50
    roll_seed: int = 0
    percentiles: tuple[int, ...] = M.DEFAULT_PERCENTILES

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricsConfig":
        obj = dict(obj)
        if "percentiles" in obj:
            obj["percentiles"] = tuple(obj["percentiles"])
        return cls(**obj)


@dataclass(frozen=True)
class AlignmentInputs:
    """Where to find unit rasters and the ground-truth mask (``.npy`` files)."""

    modality: str | None = None
    unit_rasters: str | None = None
    ground_truth: str | None = None


@dataclass(frozen=True)
class RunConfig:
    modalities: tuple[tuple[str, int], ...] = ()
    endpoint: str | None = None
    synthetic: str | None = None
    synthetic_params: dict = field(default_factory=dict)
    output_index: int = 0
    transform: str = "identity"
    n_perturbations: int = 800
    batch_size: int = 32
    max_workers: int = 1
    seed: int = 0
    p_keep: float = 0.5
    requery_reference: bool = False
    kernel: KernelConfig = KernelConfig()
    select_alpha: bool = False
    alpha_search: AlphaSearchConfig = AlphaSearchConfig()
    sgl: SglConfig = SglConfig()
    metrics: MetricsConfig = MetricsConfig()
    alignment: AlignmentInputs = AlignmentInputs()
    stability_runs: int = 5
    stability_seed_stride: int = 1  # repeat r uses seed + r * stride; 0 repeats the same seed
    out: str = "modex-out"
    name: str = "instance"

    def spec(self) -> InstanceSpec:
        if not self.modalities:
            raise BadParams("config lists no modalities")
        return InstanceSpec.from_dict({"modalities": [{"name": n, "units": k} for n, k in self.modalities]})

    def selector(self) -> TargetSelector:
        return TargetSelector(self.output_index, self.transform)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            val = getattr(self, f.name)
            if f.name == "modalities":
                out[f.name] = [{"name": n, "units": k} for n, k in val]
            elif isinstance(val, SglConfig):
                out[f.name] = val.to_dict()
            elif isinstance(val, AlphaSearchConfig):
                out[f.name] = val.to_dict()
            elif f.name in ("kernel", "metrics", "alignment"):
                d = asdict(val)
                out[f.name] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
            else:
                out[f.name] = val
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise BadParams(f"unknown config keys: {sorted(unknown)}")
        if "modalities" in obj:
            mods = obj["modalities"]
            obj["modalities"] = tuple(
                (m["name"], int(m["units"])) if isinstance(m, dict) else (m[0], int(m[1])) for m in mods
            )
        if "kernel" in obj:
            k = dict(obj["kernel"])
            if k.get("alpha") is not None:
                k["alpha"] = tuple(k["alpha"])
            obj["kernel"] = KernelConfig(**k)
        if "alpha_search" in obj:
            obj["alpha_search"] = AlphaSearchConfig.from_dict(obj["alpha_search"])
        if "sgl" in obj:
            obj["sgl"] = SglConfig.from_dict(obj["sgl"])
        if "metrics" in obj:
            obj["metrics"] = MetricsConfig.from_dict(obj["metrics"])
        if "alignment" in obj:
            obj["alignment"] = AlignmentInputs(**obj["alignment"])
        try:
            return cls(**obj)
        except TypeError as exc:
            raise BadParams(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def merged(self, overrides: dict) -> "RunConfig":
        base = self.to_dict()
        for key, val in overrides.items():
            if isinstance(val, dict) and isinstance(base.get(key), dict) and key != "synthetic_params":
                base[key] = {**base[key], **val}
            else:
                base[key] = val
        return RunConfig.from_dict(base)


@dataclass
class RunResult:
    config: RunConfig
    spec: InstanceSpec
    dataset: LocalDataset
    fit: SurrogateFit
    explanation: Explanation
    metrics: M.MetricReport
    ledger: dict
    alpha_search: dict | None = None
    heatmap: np.ndarray | None = None
    timing: dict = field(default_factory=dict)

    def report(self) -> dict:
        """Deterministic report (no wall-clock fields)."""
        return {
            "name": self.config.name,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "spec": self.spec.to_dict(),
            "target": self.config.selector().to_dict(),
            "kernel": {
                "alpha": np.asarray(self.dataset.alpha).tolist(),
                "sigma": self.dataset.sigma,
                "percentile_convention": "linear",
            },
            "ledger": self.ledger,
            "alpha_search": self.alpha_search,
            "fit": self.fit.to_dict(),
            "explanation": self.explanation.to_dict(self.spec),
            "metrics": self.metrics.to_dict(include_timing=False),
        }


def open_model(config: RunConfig, spec: InstanceSpec):
    """Instantiate the model described by the config (synthetic or endpoint)."""
    if config.synthetic:
        return make_synthetic(config.synthetic, spec, **dict(config.synthetic_params))
    if config.endpoint:
        if config.endpoint.startswith(("http://", "https://")):
            return HttpEndpoint(config.endpoint, max_workers=config.max_workers)
        return SubprocessEndpoint(config.endpoint)
    raise BadParams("config needs either 'synthetic' or 'endpoint'")


def validate(config: RunConfig) -> InstanceSpec:
    """Check everything that can be checked without querying the model."""
    spec = config.spec()
    config.selector()
    config.kernel.resolve_alpha(spec.n_modalities)
    if config.n_perturbations < 2:
        raise BadParams("n_perturbations must be >= 2")
    if config.batch_size < 1:
        raise BadParams("batch_size must be >= 1")
    if config.synthetic:
        make_synthetic(config.synthetic, spec, **dict(config.synthetic_params))
    elif not config.endpoint:
        raise BadParams("config needs either 'synthetic' or 'endpoint'")
    if config.alignment.ground_truth and not config.alignment.unit_rasters:
        raise BadParams("alignment needs unit_rasters alongside ground_truth")
    return spec


def fit_surrogate(dataset: LocalDataset, spec: InstanceSpec, config: RunConfig):
    """Optional alpha search, then the final SGL fit. Pure given the dataset."""
    alpha_diag = None
    if config.select_alpha and spec.n_modalities > 1:
        alpha_star, alpha_diag = select_alpha(dataset, spec, config.alpha_search, config.sgl, config.kernel)
        w, sigma = weights_for(dataset.distances, config.kernel.with_alpha(alpha_star))
        dataset = replace(dataset, weights=w, sigma=sigma, alpha=alpha_star)
    return dataset, fit(dataset, spec, config.sgl), alpha_diag


def _load_array(path):
    return None if path is None else np.load(path)


def run_explain(config: RunConfig, model=None, unit_rasters=None, ground_truth=None,
                compute_metrics: bool = True) -> RunResult:
    """Neighbourhood -> (alpha search) -> SGL fit -> attribution -> metrics."""
    spec = validate(config)
    owned = model is None
    if owned:
        model = open_model(config, spec)
    try:
        session = BlackBoxSession(model, spec, config.batch_size, config.max_workers)
        selector = config.selector()
        t0 = time.perf_counter()
        dataset = build_local_dataset(spec, session, selector, config.n_perturbations, config.seed,
                                      config.kernel, config.p_keep, config.requery_reference)
        dataset, fit_, alpha_diag = fit_surrogate(dataset, spec, config)
        expl = explain(fit_, spec)
        t_expl = time.perf_counter() - t0

        report = M.MetricReport(l0=M.l0(expl))
        report.coverage = {name: M.coverage(expl, spec, name) for name in spec.modality_names}
        t1 = time.perf_counter()
        if compute_metrics and config.metrics.deletion:
            report.aopc_del = M.aopc(expl, session, selector, config.metrics.steps, "deletion")
        if compute_metrics and config.metrics.insertion:
            report.aopc_ins = M.aopc(expl, session, selector, config.metrics.steps, "insertion")

        heatmap = None
        rasters = unit_rasters if unit_rasters is not None else _load_array(config.alignment.unit_rasters)
        gt = ground_truth if ground_truth is not None else _load_array(config.alignment.ground_truth)
        if rasters is not None:
            modality = config.alignment.modality or spec.modality_names[0]
            heatmap, degenerate = positive_evidence_map(expl, spec, modality, rasters)
            if gt is not None and compute_metrics:
                report.alignment = alignment_block(expl, spec, modality, rasters, heatmap, degenerate,
                                                   gt, config.metrics)
        t_metric = time.perf_counter() - t1
    finally:
        if owned and hasattr(model, "close"):
            model.close()
    ledger = session.ledger.snapshot()
    report.fwd_calls = dict(ledger)
    report.wall_time_seconds = t_expl
    return RunResult(config, spec, dataset, fit_, expl, report, ledger, alpha_diag, heatmap,
                     {"explanation_seconds": t_expl, "metric_seconds": t_metric})


def alignment_block(expl, spec, modality, rasters, heatmap, degenerate, gt, mcfg: MetricsConfig) -> dict:
    m = spec.index_of(modality)
    beta = expl.signed_coefficients[spec.slices()[m]]
    block = {"heatmap_degenerate": bool(degenerate)}
    try:
        block["ch_z"], block["ch_pos"] = M.contrast_heat_z(heatmap, gt, mcfg.rolls, mcfg.roll_seed)
        block["pixel_ap"] = M.pixel_ap(heatmap, gt)
    except ModexError as exc:
        block["error"] = f"{type(exc).__name__}: {exc}"
    try:
        block["iou_auc"], curve = M.iou_auc(heatmap, gt, mcfg.percentiles)
        block["iou_curve"] = curve.tolist()
    except ModexError as exc:
        block["iou_auc"] = None
        block["iou_error"] = f"{type(exc).__name__}: {exc}"
    ov = M.topk_overlap(rasters, beta, gt, mcfg.k, mcfg.tau)
    block.update(gt_cov_at_k=ov.gt_cov, mass_prec_at_k=ov.mass_prec, spg_hit=ov.spg_hit,
                 topk_units=list(ov.selected), topk_shortfall=ov.shortfall, k=mcfg.k, tau=mcfg.tau)
    return block


# ---------------------------------------------------------------------------
# output files


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False, default=_default) + "\n")


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _clean(obj):
    """Replace non-finite floats with None so reports stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not np.isfinite(obj):
        return None
    return obj


def write_pgm(path: Path, image: np.ndarray) -> None:
    """8-bit binary PGM of an image with values in [0, 1]."""
    img = np.clip(np.round(np.asarray(image, dtype=float) * 255), 0, 255).astype(np.uint8)
    h, w = img.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + img.tobytes())


def write_outputs(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = _clean(result.report())
    _dump(out / "report.json", report)
    _dump(out / "explanation.json", report["explanation"])
    _dump(out / "fit.json", report["fit"])
    _dump(out / "metrics.json", report["metrics"])
    ds = result.dataset.to_dict()
    ds["spec"] = result.spec.to_dict()
    ds["sgl"] = result.config.sgl.to_dict()
    _dump(out / "dataset.json", _clean(ds))
    _dump(out / "timing.json", result.timing)
    if result.heatmap is not None:
        np.save(out / "heatmap.npy", result.heatmap)
        write_pgm(out / "heatmap.pgm", result.heatmap)
    return out


def replay(dataset_path, out_dir=None, sgl_cfg: SglConfig | None = None):
    """Refit a serialized neighbourhood without querying any model."""
    obj = json.loads(Path(dataset_path).read_text())
    spec = InstanceSpec.from_dict(obj["spec"])
    dataset = LocalDataset.from_dict(obj, spec)
    cfg = sgl_cfg or SglConfig.from_dict(obj.get("sgl", {}))
    fit_ = fit(dataset, spec, cfg)
    expl = explain(fit_, spec)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _dump(out / "fit.json", _clean(fit_.to_dict()))
        _dump(out / "explanation.json", _clean(expl.to_dict(spec)))
    return fit_, expl


# ---------------------------------------------------------------------------
# batches


def _run_instance(config: RunConfig, stability: int, out_dir: Path) -> dict:
    runs = max(1, stability)
    row = {"name": config.name}
    try:
        first = run_explain(config)
        write_outputs(first, out_dir / config.name)
        importances = [first.explanation.unit_importance]
        for r in range(1, runs):
            rerun = run_explain(replace(config, seed=config.seed + r * config.stability_seed_stride),
                                compute_metrics=False)
            importances.append(rerun.explanation.unit_importance)
        rep = first.metrics.to_dict(include_timing=False)
        if runs >= 2:
            st = M.spearman_stability(importances)
            rep["spearman"] = st.rho
            row["spearman_excluded_pairs"] = st.n_excluded
        row.update(rep)
        row["explanation_runs"] = runs
        row["modality_share"] = dict(zip(first.spec.modality_names,
                                         first.explanation.modality_share.tolist()))
    except Exception as exc:  # recorded per instance; the batch continues
        row["error"] = f"{type(exc).__name__}: {exc}"
        row["explanation_runs"] = 0
    return row


TABLE_COLUMNS = ("name", "aopc_del", "aopc_ins", "l0", "spearman",
                 "fwd_calls.explanation_calls", "fwd_calls.metric_calls", "error")


def run_batch(config: RunConfig, instances: list[dict], stability: int = 0, workers: int = 1,
              out_dir=None) -> dict:
    """Run every instance (``stability`` repeats each) and aggregate the results."""
    if not instances:
        raise BadParams("instance list is empty")
    out = Path(out_dir or config.out)
    out.mkdir(parents=True, exist_ok=True)
    configs = []
    for i, inst in enumerate(instances):
        inst = dict(inst)
        inst.setdefault("name", f"instance_{i:03d}")
        configs.append(config.merged(inst))
    if len({c.name for c in configs}) != len(configs):
        raise BadParams("instance names must be unique")
    with ThreadPoolExecutor(max(1, workers)) as pool:
        rows = list(pool.map(lambda c: _run_instance(c, stability, out / "instances"), configs))
    rows = _clean(rows)
    ok = [r for r in rows if "error" not in r]
    summary = {
        "n_instances": len(rows),
        "n_failed": len(rows) - len(ok),
        "explanation_runs": sum(r["explanation_runs"] for r in rows),
        "stability_runs": stability,
        "aggregate": M.aggregate([{k: v for k, v in r.items() if k not in ("name", "explanation_runs")}
                                  for r in ok]),
        "rows": rows,
    }
    _dump(out / "batch.json", summary)
    flat_rows = [M.report.flatten_report(r) | {"name": r["name"], "error": r.get("error", "")} for r in rows]
    with open(out / "batch_table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE_COLUMNS)
        for fr in flat_rows:
            writer.writerow([fr.get(c, "") for c in TABLE_COLUMNS])
        for stat in ("mean", "std", "median", "q25", "q75"):
            writer.writerow([stat] + [summary["aggregate"].get(c, {}).get(stat, "")
                                      for c in TABLE_COLUMNS[1:-1]] + [""])
    return summary
