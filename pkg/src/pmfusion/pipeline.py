"""Three-stage orchestration from input CSVs to surface artifacts.

Stage 1 fits each source's downscaler under cross-validation and assembles
the out-of-sample component predictives. Stage 2 fits the ensemble weight
field to those held-out predictives. Stage 3 refits both downscalers on all
observations, kriges the weight field to the target grid, and combines
everything into a predictive surface.

Outputs land in <out_dir>/run_<confighash>/ so distinct configurations never
collide; an existing run directory is refused unless overwrite is set. Every
CSV artifact carries the seed and config hash; manifest.json records stage
status so partial runs are recognizable.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import io as pio
from .config import MCMCConfig
from .crossval import KFOLD, SPATIAL, EvalReport, evaluate, make_folds
from .downscaler import SourcePredictions, cv_predict, fit_downscaler, predict_at
from .ensemble import (
    MixtureDistribution,
    WeightFieldSamples,
    fit_joint,
    fit_two_stage,
    krige_weights,
    mixture_quantiles_arrays,
    predict_mixture,
)
from .errors import OverwriteError, StageError
from .geo import CTM, SAT, GridSpec, Location, distance_matrix
from .kernels import GaussianSummary
from .tables import ObservationTable, PredictiveTable

JOINT = "joint"
TWO_STAGE = "two_stage"
VARIANTS = (JOINT, TWO_STAGE)

ARTIFACT_NAMES = (
    "cv_predictive",
    "site_weights",
    "full_predictive",
    "weight_surface",
    "surface",
    "evaluation",
)


@dataclass(frozen=True)
class PipelineConfig:
    """Everything run_pipeline needs; loadable from one JSON file."""

    monitors: str
    obs: str
    grid_ctm: str
    ctm_grid: GridSpec
    out_dir: str
    grid_sat: str | None = None
    sat_grid: GridSpec | None = None
    covariates: str | None = None
    target_grid: GridSpec | None = None
    n_days: int | None = None
    variant: str = JOINT
    derivation: str = KFOLD
    n_folds: int = 10
    downscaler_mcmc: MCMCConfig = field(default_factory=lambda: MCMCConfig(n_iter=2000, burn_in=1000, thin=4))
    ensemble_mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    surface_days: tuple | None = None
    seed: int = 0
    overwrite: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.derivation not in (KFOLD, SPATIAL):
            raise ValueError(f"derivation must be '{KFOLD}' or '{SPATIAL}'")
        if self.n_folds < 2:
            raise ValueError("n_folds must be at least 2")
        if (self.grid_sat is None) != (self.sat_grid is None):
            raise ValueError("grid_sat path and sat_grid geometry go together")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ctm_grid"] = pio.grid_spec_to_dict(self.ctm_grid)
        for name in ("sat_grid", "target_grid"):
            g = getattr(self, name)
            d[name] = pio.grid_spec_to_dict(g) if g is not None else None
        if self.surface_days is not None:
            d["surface_days"] = [int(x) for x in self.surface_days]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        d["ctm_grid"] = pio.grid_spec_from_dict(d["ctm_grid"])
        for name in ("sat_grid", "target_grid"):
            if d.get(name) is not None:
                d[name] = pio.grid_spec_from_dict(d[name])
        for name in ("downscaler_mcmc", "ensemble_mcmc"):
            if isinstance(d.get(name), dict):
                d[name] = MCMCConfig(**d[name])
        if d.get("surface_days") is not None:
            d["surface_days"] = tuple(int(x) for x in d["surface_days"])
        d.pop("config_hash", None)
        return cls(**d)

    def digest(self) -> str:
        d = self.to_dict()
        d.pop("out_dir", None)
        d.pop("overwrite", None)
        return pio.config_hash(d)


def load_pipeline_config(path) -> PipelineConfig:
    return PipelineConfig.from_dict(pio.load_json(path))


def save_pipeline_config(path, cfg: PipelineConfig):
    d = cfg.to_dict()
    d["config_hash"] = cfg.digest()
    return pio.save_json(path, d)


@dataclass
class PipelineResult:
    run_dir: Path
    config: PipelineConfig
    paths: dict
    reports: list
    weights: WeightFieldSamples
    cv_inputs: PredictiveTable
    surface: pio.SurfaceOutput | None


def combine_predictions(
    data: ObservationTable,
    pred_ctm: SourcePredictions,
    pred_sat: SourcePredictions | None,
) -> PredictiveTable:
    """Stack per-source record-aligned predictions into one component table."""
    n = data.n_records
    mu = np.zeros((n, 2))
    var = np.ones((n, 2))
    avail = np.zeros((n, 2), dtype=bool)
    for k, pred in enumerate((pred_ctm, pred_sat)):
        if pred is None:
            continue
        ok = pred.available & np.isfinite(pred.mu)
        mu[ok, k] = pred.mu[ok]
        var[ok, k] = pred.var[ok]
        avail[:, k] = ok
    ids = np.array([data.sites[i].site_id for i in data.site_idx], dtype=object)
    return PredictiveTable(
        ids=ids,
        day=data.day.copy(),
        mu=mu,
        var=var,
        available=avail,
        locations={s.site_id: s for s in data.sites},
    )


def mixture_rows(inputs: PredictiveTable, w_of_row: np.ndarray) -> list[MixtureDistribution]:
    """Per-record mixtures; rows with one source collapse onto it."""
    out = []
    for i in range(inputs.ids.shape[0]):
        c1 = (inputs.mu[i, 0], inputs.var[i, 0]) if inputs.available[i, 0] else None
        c2 = (inputs.mu[i, 1], inputs.var[i, 1]) if inputs.available[i, 1] else None
        out.append(predict_mixture(float(w_of_row[i]), c1, c2))
    return out


def _load_inputs(cfg: PipelineConfig):
    monitors = pio.load_monitors(cfg.monitors)
    obs = pio.load_obs(cfg.obs)
    n_days = cfg.n_days if cfg.n_days is not None else int(obs[1].max())
    ctm = pio.load_grid(cfg.grid_ctm, cfg.ctm_grid, n_days)
    sat = pio.load_grid(cfg.grid_sat, cfg.sat_grid, n_days) if cfg.grid_sat else None
    cov = pio.load_covariates(cfg.covariates) if cfg.covariates else None
    data = pio.assemble_observations(
        monitors,
        obs,
        ctm,
        cfg.ctm_grid,
        sat,
        cfg.sat_grid,
        cov,
        n_days,
    )
    return data, ctm, sat, cov


def _source_view(data: ObservationTable, source: str):
    """Records usable for this source, with the mapping back to full rows."""
    mask = data.usable_mask(source)
    if mask.all():
        return data, np.arange(data.n_records)
    return data.subset(mask), np.flatnonzero(mask)


def _embed(pred_sub: SourcePredictions, rows: np.ndarray, n: int, data) -> SourcePredictions:
    mu = np.full(n, np.nan)
    var = np.full(n, np.nan)
    avail = np.zeros(n, dtype=bool)
    mu[rows] = pred_sub.mu
    var[rows] = pred_sub.var
    avail[rows] = pred_sub.available
    ids = np.array([data.sites[i].site_id for i in data.site_idx], dtype=object)
    return SourcePredictions(ids=ids, day=data.day.copy(), mu=mu, var=var, available=avail)


def cv_component_table(
    data: ObservationTable,
    derivation: str,
    n_folds: int,
    mcmc: MCMCConfig,
    fold_seed: int,
    seeds,
) -> PredictiveTable:
    """Held-out component predictives for both sources over one record table."""
    per_source = {}
    for k, source in enumerate((CTM, SAT)):
        if source == SAT and not data.usable_mask(SAT).any():
            per_source[source] = None
            continue
        view, rows = _source_view(data, source)
        plan = make_folds(view, derivation, n_folds, seed=fold_seed)
        source_mcmc = replace(mcmc, seed=int(seeds[k].generate_state(1)[0]))
        pred = cv_predict(view, plan.fold_of_record, source, source_mcmc)
        per_source[source] = _embed(pred, rows, data.n_records, data)
    return combine_predictions(data, per_source[CTM], per_source[SAT])


def _stage1(cfg: PipelineConfig, data: ObservationTable, seeds) -> PredictiveTable:
    return cv_component_table(
        data, cfg.derivation, cfg.n_folds, cfg.downscaler_mcmc, cfg.seed, seeds
    )


def _stage2(cfg: PipelineConfig, data, cv_inputs: PredictiveTable, seeds) -> WeightFieldSamples:
    mcmc = replace(cfg.ensemble_mcmc, seed=int(seeds[0].generate_state(1)[0]))
    fitter = fit_joint if cfg.variant == JOINT else fit_two_stage
    return fitter(data.y, cv_inputs, data.sites, mcmc)


def _stage3_fits(cfg: PipelineConfig, data, seeds):
    fits = {}
    for k, source in enumerate((CTM, SAT)):
        if source == SAT and not data.usable_mask(SAT).any():
            fits[source] = None
            continue
        view, _ = _source_view(data, source)
        mcmc = replace(cfg.downscaler_mcmc, seed=int(seeds[k].generate_state(1)[0]))
        fits[source] = fit_downscaler(view, source, mcmc)
    return fits


def _full_predictive(data, fits, seeds) -> PredictiveTable:
    preds = {}
    for k, source in enumerate((CTM, SAT)):
        fit = fits[source]
        if fit is None:
            preds[source] = None
            continue
        loc_of = {l.site_id: j for j, l in enumerate(fit.sites)}
        # sites absent from the source fit are predicted as new locations
        locations = list(fit.sites)
        loc_idx = np.empty(data.n_records, dtype=np.int64)
        for i in range(data.n_records):
            sid = data.sites[data.site_idx[i]].site_id
            if sid not in loc_of:
                loc_of[sid] = len(locations)
                locations.append(data.sites[data.site_idx[i]])
            loc_idx[i] = loc_of[sid]
        x = data.x_for(source)
        z = data.z if source == SAT else None
        preds[source] = predict_at(
            fit,
            locations,
            loc_idx,
            data.day,
            x,
            z,
            seed=int(seeds[2 + k].generate_state(1)[0]),
        )
    return combine_predictions(data, preds[CTM], preds[SAT])


def _nearest_site_rows(data: ObservationTable, targets: list[Location], day: int) -> np.ndarray:
    """Raw covariate rows for targets: the same-day row of the nearest monitor."""
    d = distance_matrix(data.sites, targets)
    nearest = d.argmin(axis=0)
    z_of_site = {}
    sel = np.flatnonzero(data.day == day)
    for i in sel:
        z_of_site.setdefault(int(data.site_idx[i]), data.z[i])
    any_day_of_site = {}
    for i in range(data.n_records):
        any_day_of_site.setdefault(int(data.site_idx[i]), data.z[i])
    out = np.zeros((len(targets), data.z.shape[1]))
    for j, s in enumerate(nearest):
        row = z_of_site.get(int(s))
        if row is None:
            row = any_day_of_site[int(s)]
        out[j] = row
    return out


def _surface_stage(cfg: PipelineConfig, data, fits, weights, ctm, sat, seeds):
    grid = cfg.target_grid
    days = (
        tuple(int(d) for d in cfg.surface_days)
        if cfg.surface_days is not None
        else tuple(range(1, data.n_days + 1))
    )
    for d in days:
        if not 1 <= d <= data.n_days:
            raise ValueError(f"surface day {d} outside horizon 1..{data.n_days}")
    centers = grid.all_centers()
    m = centers.shape[0]
    targets = [
        Location(f"r{i // grid.n_cols:03d}c{i % grid.n_cols:03d}", float(x), float(y))
        for i, (x, y) in enumerate(centers)
    ]
    kriged = krige_weights(weights, targets, seed=int(seeds[4].generate_state(1)[0]))

    # linked proxy values per target cell
    def linked(values_present, spec):
        if values_present is None or spec is None:
            return None
        values, _ = values_present
        cells = np.array(
            [
                spec.cell_of(x, y) if spec.contains(x, y) else (-1, -1)
                for x, y in centers
            ],
            dtype=np.int64,
        )
        inside = cells[:, 0] >= 0
        return values, cells, inside

    ctm_link = linked(ctm, cfg.ctm_grid)
    sat_link = linked(sat, cfg.sat_grid) if sat is not None else None

    rows_day = []
    rows_row = []
    rows_col = []
    rows_mean = []
    rows_sd = []
    rows_lo = []
    rows_hi = []
    rows_w = []
    rr = np.arange(m) // grid.n_cols
    cc = np.arange(m) % grid.n_cols
    pred_seed_ctm = int(seeds[5].generate_state(1)[0])
    pred_seed_sat = int(seeds[6].generate_state(1)[0])
    for d in days:
        day_vec = np.full(m, d, dtype=np.int64)
        comp = {}
        for source, link, fit, pseed in (
            (CTM, ctm_link, fits[CTM], pred_seed_ctm),
            (SAT, sat_link, fits[SAT] if SAT in fits else None, pred_seed_sat),
        ):
            if link is None or fit is None:
                comp[source] = None
                continue
            values, cells, inside = link
            x = np.full(m, np.nan)
            ok = inside.copy()
            x[ok] = values[d - 1, cells[ok, 0], cells[ok, 1]]
            z = _nearest_site_rows(data, targets, d) if source == SAT else None
            comp[source] = predict_at(
                fit, targets, np.arange(m), day_vec, x, z, seed=pseed + d
            )
        c1, c2 = comp[CTM], comp[SAT]
        a1 = c1.available if c1 is not None else np.zeros(m, dtype=bool)
        a2 = c2.available if c2 is not None else np.zeros(m, dtype=bool)
        usable = a1 | a2
        w_eff = np.where(a1 & a2, kriged["w_mean"], np.where(a1, 1.0, 0.0))
        mu1 = np.where(a1, c1.mu if c1 is not None else 0.0, 0.0)
        v1 = np.where(a1, c1.var if c1 is not None else 1.0, 1.0)
        mu2 = np.where(a2, c2.mu if c2 is not None else 0.0, 0.0)
        v2 = np.where(a2, c2.var if c2 is not None else 1.0, 1.0)
        mu2 = np.where(a2, mu2, mu1)
        v2 = np.where(a2, v2, v1)
        mu1 = np.where(a1, mu1, mu2)
        v1 = np.where(a1, v1, v2)
        mean = w_eff * mu1 + (1.0 - w_eff) * mu2
        second = w_eff * (v1 + mu1**2) + (1.0 - w_eff) * (v2 + mu2**2)
        sd = np.sqrt(np.maximum(second - mean**2, 0.0))
        lo = mixture_quantiles_arrays(w_eff, mu1, v1, mu2, v2, 0.025)
        hi = mixture_quantiles_arrays(w_eff, mu1, v1, mu2, v2, 0.975)
        rows_day.append(day_vec[usable])
        rows_row.append(rr[usable])
        rows_col.append(cc[usable])
        rows_mean.append(mean[usable])
        rows_sd.append(sd[usable])
        rows_lo.append(lo[usable])
        rows_hi.append(hi[usable])
        rows_w.append(w_eff[usable])

    surface = pio.SurfaceOutput(
        day=np.concatenate(rows_day),
        row=np.concatenate(rows_row),
        col=np.concatenate(rows_col),
        mean=np.concatenate(rows_mean),
        sd=np.concatenate(rows_sd),
        q025=np.concatenate(rows_lo),
        q975=np.concatenate(rows_hi),
        w=np.concatenate(rows_w),
    )
    target_ids = [t.site_id for t in targets]
    return surface, target_ids, kriged


def _reports(cfg, data, cv_inputs, weights) -> list:
    reps = []
    summ = weights.summary()
    site_of = {l.site_id: j for j, l in enumerate(weights.locations)}
    w_row = np.array([summ["w_mean"][site_of[data.sites[i].site_id]] for i in data.site_idx])
    for k, name in ((0, CTM), (1, SAT)):
        ok = cv_inputs.available[:, k]
        if not ok.any():
            continue
        preds = [
            GaussianSummary(float(cv_inputs.mu[i, k]), float(cv_inputs.var[i, k]))
            for i in np.flatnonzero(ok)
        ]
        rep = evaluate(data.y[ok], preds)
        reps.append(
            replace(rep, method=name, estimation="downscaler", input_derivation=cfg.derivation)
        )
    any_ok = cv_inputs.available.any(axis=1)
    mixes = mixture_rows(
        PredictiveTable(
            ids=cv_inputs.ids[any_ok],
            day=cv_inputs.day[any_ok],
            mu=cv_inputs.mu[any_ok],
            var=cv_inputs.var[any_ok],
            available=cv_inputs.available[any_ok],
            locations=cv_inputs.locations,
        ),
        w_row[any_ok],
    )
    rep = evaluate(data.y[any_ok], mixes)
    reps.append(
        replace(rep, method="ensemble", estimation=cfg.variant, input_derivation=cfg.derivation)
    )
    return reps


def run_pipeline(cfg: PipelineConfig) -> PipelineResult:
    """Execute all three stages and write the artifact set.

    Artifacts: cv_predictive.csv, site_weights.csv, full_predictive.csv,
    weight_surface.csv, surface.csv, evaluation.csv (plus weight_samples.csv,
    config.json, manifest.json). Deterministic given the config seed.
    """
    digest = cfg.digest()
    run_dir = Path(cfg.out_dir) / f"run_{digest}"
    if run_dir.exists():
        if not cfg.overwrite:
            raise OverwriteError(
                f"{run_dir} already exists; pass overwrite to replace it"
            )
    run_dir.mkdir(parents=True, exist_ok=True)
    meta = {"seed": cfg.seed, "config": digest}
    manifest = {
        "status": "running",
        "stage": "load",
        "seed": cfg.seed,
        "config": digest,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "artifacts": {},
        "timings_s": {},
    }
    pio.save_json(run_dir / "manifest.json", manifest)
    save_pipeline_config(run_dir / "config.json", cfg)
    seeds = np.random.SeedSequence(cfg.seed).spawn(12)
    paths = {}
    reports = []
    surface = None

    def checkpoint(stage=None, status="running"):
        manifest["status"] = status
        if stage is not None:
            manifest["stage"] = stage
        manifest["artifacts"] = {k: str(v) for k, v in paths.items()}
        pio.save_json(run_dir / "manifest.json", manifest)

    def run_stage(stage, fn):
        t0 = time.perf_counter()
        checkpoint(stage=stage)
        try:
            out = fn()
        except Exception as e:
            manifest["error"] = str(e)
            checkpoint(status="failed")
            raise StageError(stage, e) from e
        manifest["timings_s"][stage] = round(time.perf_counter() - t0, 3)
        return out

    data, ctm, sat, _cov = run_stage("load", lambda: _load_inputs(cfg))

    cv_inputs = run_stage("stage1-cv-downscalers", lambda: _stage1(cfg, data, seeds[0:2]))
    paths["cv_predictive"] = pio.emit_predictive(run_dir / "cv_predictive.csv", cv_inputs, meta)
    checkpoint()

    weights = run_stage("stage2-ensemble", lambda: _stage2(cfg, data, cv_inputs, seeds[2:3]))
    paths["site_weights"] = pio.emit_weights(
        run_dir / "site_weights.csv", weights.site_ids, weights.summary(), meta
    )
    paths["weight_samples"] = pio.emit_weight_samples(
        run_dir / "weight_samples.csv", weights, meta
    )
    checkpoint()

    fits = run_stage("stage3-full-fits", lambda: _stage3_fits(cfg, data, seeds[3:5]))
    full_inputs = run_stage(
        "stage3-full-predictive", lambda: _full_predictive(data, fits, seeds[5:9])
    )
    paths["full_predictive"] = pio.emit_predictive(
        run_dir / "full_predictive.csv", full_inputs, meta
    )
    checkpoint()

    if cfg.target_grid is not None:
        surface, target_ids, kriged = run_stage(
            "stage3-surface",
            lambda: _surface_stage(cfg, data, fits, weights, ctm, sat, seeds[5:12]),
        )
        paths["weight_surface"] = pio.emit_weights(
            run_dir / "weight_surface.csv", target_ids, kriged, meta
        )
        paths["surface"] = pio.emit_surface(run_dir / "surface.csv", surface, meta)
        checkpoint()

    reports = run_stage("evaluate", lambda: _reports(cfg, data, cv_inputs, weights))
    paths["evaluation"] = pio.emit_evaluation(run_dir / "evaluation.csv", reports, meta)

    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    checkpoint(stage="done", status="complete")
    return PipelineResult(
        run_dir=run_dir,
        config=cfg,
        paths=paths,
        reports=reports,
        weights=weights,
        cv_inputs=cv_inputs,
        surface=surface,
    )
