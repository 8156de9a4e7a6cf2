"""Command-line interface.

Subcommands: synth, fit-downscaler, fit-ensemble, krige-weights, predict,
cv, evaluate, run-all. Exit code 0 on success; failures print a diagnostic
(stage-tagged for pipeline runs) and exit nonzero. Set PMFUSION_THREADS to
cap BLAS thread counts for reproducible single-threaded runs.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io as pio
from .config import MCMCConfig
from .crossval import KFOLD, SPATIAL, evaluate as eval_pairs
from .downscaler import fit_downscaler, predict_at
from .ensemble import fit_joint, fit_two_stage, krige_weights
from .errors import PmFusionError, SchemaError
from .geo import CTM, SAT, GridSpec
from .kernels import GaussianSummary
from .pipeline import (
    JOINT,
    TWO_STAGE,
    PipelineConfig,
    combine_predictions,
    cv_component_table,
    load_pipeline_config,
    mixture_rows,
    run_pipeline,
    save_pipeline_config,
)
from .synth import SceneConfig, generate_scene
from .tables import PredictiveTable, SOURCE_COLUMNS


def _add_mcmc_args(p: argparse.ArgumentParser, iters: int = 10_000):
    p.add_argument("--iters", type=int, default=iters, help="MCMC iterations")
    p.add_argument("--burn-in", type=int, default=None, help="burn-in (default iters/2)")
    p.add_argument("--thin", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)


def _mcmc_from(args) -> MCMCConfig:
    burn = args.burn_in if args.burn_in is not None else args.iters // 2
    return MCMCConfig(n_iter=args.iters, burn_in=burn, thin=args.thin, seed=args.seed)


def _geometry(scene_path) -> tuple[GridSpec, GridSpec | None, int]:
    d = pio.load_json(scene_path)
    ctm = pio.grid_spec_from_dict(d["ctm_grid"])
    sat = pio.grid_spec_from_dict(d["sat_grid"]) if d.get("sat_grid") else None
    return ctm, sat, int(d["n_days"])


def _load_table(args, require_sat: bool):
    monitors = pio.load_monitors(args.monitors)
    obs = pio.load_obs(args.obs)
    ctm_spec, sat_spec, n_days = _geometry(args.scene)
    ctm = pio.load_grid(args.grid_ctm, ctm_spec, n_days)
    sat = None
    if args.grid_sat:
        if sat_spec is None:
            raise SchemaError(f"{args.scene}: no satellite grid geometry")
        sat = pio.load_grid(args.grid_sat, sat_spec, n_days)
    elif require_sat:
        raise SchemaError("--grid-sat is required for the satellite source")
    cov = pio.load_covariates(args.covariates) if args.covariates else None
    data = pio.assemble_observations(
        monitors, obs, ctm, ctm_spec, sat, sat_spec, cov, n_days
    )
    return data, monitors, (ctm_spec, sat_spec, n_days)


def _cmd_synth(args) -> int:
    sat_n = args.sat_cells
    sat_cell = args.sat_cell_km
    ctm_cell = args.ctm_cell_km
    margin = ctm_cell
    ctm_n = int(np.ceil((sat_n * sat_cell + 2 * margin) / ctm_cell))
    cfg = SceneConfig(
        n_sites=args.sites,
        n_days=args.days,
        ctm_grid=GridSpec(-margin, -margin, ctm_cell, ctm_n, ctm_n, CTM),
        sat_grid=GridSpec(0.0, 0.0, sat_cell, sat_n, sat_n, SAT),
        sat_missing_rate=args.missing_rate,
        tau2=args.tau2,
        rho=args.rho,
        seed=args.seed,
    )
    truth = generate_scene(cfg)
    grid_days = _parse_days(args.grid_days)
    paths = pio.export_scene(truth, args.out, grid_days)
    if args.write_config:
        out = Path(args.out)
        pipe = PipelineConfig(
            monitors=str(paths["monitors"]),
            obs=str(paths["obs"]),
            grid_ctm=str(paths["grid_ctm"]),
            ctm_grid=cfg.ctm_grid,
            out_dir=str(out / "runs"),
            grid_sat=str(paths["grid_sat"]),
            sat_grid=cfg.sat_grid,
            covariates=str(paths["covariates"]),
            target_grid=cfg.sat_grid,
            n_days=cfg.n_days,
            surface_days=tuple(grid_days) if grid_days else None,
            seed=args.seed,
        )
        paths["pipeline_config"] = save_pipeline_config(out / "pipeline_config.json", pipe)
    for name, p in sorted(paths.items()):
        print(f"{name}: {p}")
    return 0


def _parse_days(text: str | None) -> list[int] | None:
    if not text:
        return None
    return [int(x) for x in text.split(",") if x.strip()]


def _cmd_fit_downscaler(args) -> int:
    source = args.source
    data, monitors, _ = _load_table(args, require_sat=source == SAT)
    view = data if data.usable_mask(source).all() else data.subset(data.usable_mask(source))
    fit = fit_downscaler(view, source, _mcmc_from(args))
    pred = predict_at(
        fit,
        view.sites,
        view.site_idx,
        view.day,
        view.x_for(source),
        view.z if source == SAT else None,
        seed=args.seed + 1,
    )
    k = SOURCE_COLUMNS.index(source)
    n = pred.mu.shape[0]
    mu = np.zeros((n, 2))
    var = np.ones((n, 2))
    avail = np.zeros((n, 2), dtype=bool)
    mu[:, k] = pred.mu
    var[:, k] = np.where(pred.available, pred.var, 1.0)
    avail[:, k] = pred.available
    mu[:, k] = np.where(pred.available, mu[:, k], 0.0)
    table = PredictiveTable(
        ids=pred.ids,
        day=pred.day,
        mu=mu,
        var=var,
        available=avail,
        locations={s.site_id: s for s in view.sites},
    )
    meta = {"seed": args.seed, "config": pio.config_hash({"cmd": "fit-downscaler", "source": source, "seed": args.seed})}
    pio.emit_predictive(args.out, table, meta)
    acc = {k: round(v, 3) for k, v in fit.acceptance.items() if isinstance(v, float)}
    print(f"fitted {source} downscaler on {view.n_records} records; acceptance {acc}")
    print(f"wrote {args.out}")
    return 0


def _cmd_fit_ensemble(args) -> int:
    monitors = pio.load_monitors(args.monitors)
    ids, day, y = pio.load_obs(args.obs)
    inputs = pio.load_predictive(args.predictive, {l.site_id: l for l in monitors})
    y_of = {}
    for i in range(ids.shape[0]):
        y_of[(ids[i], int(day[i]))] = y[i]
    aligned = np.empty(inputs.ids.shape[0])
    for i in range(inputs.ids.shape[0]):
        key = (inputs.ids[i], int(inputs.day[i]))
        if key not in y_of:
            raise SchemaError(f"no observation for predictive row {key}")
        aligned[i] = y_of[key]
    fitter = fit_joint if args.variant == JOINT else fit_two_stage
    field = fitter(aligned, inputs, monitors, _mcmc_from(args))
    meta = {"seed": args.seed, "config": pio.config_hash({"cmd": "fit-ensemble", "variant": args.variant, "seed": args.seed})}
    pio.emit_weights(args.out_weights, field.site_ids, field.summary(), meta)
    pio.emit_weight_samples(args.out_samples, field, meta)
    acc = {k: round(v, 3) for k, v in field.acceptance.items() if isinstance(v, float)}
    print(f"fitted {args.variant} ensemble over {len(field.locations)} sites; acceptance {acc}")
    print(f"wrote {args.out_weights} and {args.out_samples}")
    return 0


def _cmd_krige_weights(args) -> int:
    monitors = pio.load_monitors(args.monitors)
    field = pio.load_weight_samples(args.samples, monitors)
    targets = pio.load_monitors(args.targets)
    kriged = krige_weights(field, targets, seed=args.seed)
    meta = {"seed": args.seed, "config": pio.config_hash({"cmd": "krige-weights", "seed": args.seed})}
    pio.emit_weights(args.out, [t.site_id for t in targets], kriged, meta)
    print(f"kriged weights at {len(targets)} targets; wrote {args.out}")
    return 0


def _cmd_predict(args) -> int:
    monitors = pio.load_monitors(args.monitors)
    inputs = pio.load_predictive(args.predictive, {l.site_id: l for l in monitors})
    w_ids, w_cols = pio.load_weights(args.weights)
    w_of = dict(zip(w_ids, w_cols["w_mean"]))
    for sid in np.unique(inputs.ids):
        if sid not in w_of:
            raise SchemaError(f"no weight row for site '{sid}'")
    w_row = np.array([w_of[sid] for sid in inputs.ids])
    mixes = mixture_rows(inputs, w_row)
    header = ("site_id", "day", "mean", "sd", "q025", "q975", "w")
    meta = {"seed": 0, "config": pio.config_hash({"cmd": "predict"})}
    rows = (
        [
            str(inputs.ids[i]),
            str(int(inputs.day[i])),
            pio._fmt(m.mean),
            pio._fmt(m.sd),
            pio._fmt(m.quantile(0.025)),
            pio._fmt(m.quantile(0.975)),
            pio._fmt(m.w),
        ]
        for i, m in enumerate(mixes)
    )
    pio._write_csv(args.out, header, rows, meta)
    print(f"wrote {inputs.ids.shape[0]} mixture predictions to {args.out}")
    return 0


def _cmd_cv(args) -> int:
    data, monitors, _ = _load_table(args, require_sat=args.grid_sat is not None)
    seeds = np.random.SeedSequence(args.seed).spawn(2)
    table = cv_component_table(
        data, args.derivation, args.folds, _mcmc_from(args), args.seed, seeds
    )
    meta = {"seed": args.seed, "config": pio.config_hash({"cmd": "cv", "derivation": args.derivation, "folds": args.folds, "seed": args.seed})}
    pio.emit_predictive(args.out, table, meta)
    print(f"wrote held-out predictives for {table.ids.shape[0]} records to {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    monitors = pio.load_monitors(args.monitors)
    ids, day, y = pio.load_obs(args.obs)
    inputs = pio.load_predictive(args.predictive, {l.site_id: l for l in monitors})
    y_of = {(ids[i], int(day[i])): y[i] for i in range(ids.shape[0])}
    aligned = np.array(
        [y_of[(inputs.ids[i], int(inputs.day[i]))] for i in range(inputs.ids.shape[0])]
    )
    reports = []
    for k, name in enumerate(SOURCE_COLUMNS):
        ok = inputs.available[:, k]
        if not ok.any():
            continue
        preds = [
            GaussianSummary(float(inputs.mu[i, k]), float(inputs.var[i, k]))
            for i in np.flatnonzero(ok)
        ]
        reports.append(
            replace(
                eval_pairs(aligned[ok], preds),
                method=name,
                estimation="downscaler",
                input_derivation="file",
            )
        )
    if args.weights:
        w_ids, w_cols = pio.load_weights(args.weights)
        w_of = dict(zip(w_ids, w_cols["w_mean"]))
        any_ok = inputs.available.any(axis=1)
        sub = PredictiveTable(
            ids=inputs.ids[any_ok],
            day=inputs.day[any_ok],
            mu=inputs.mu[any_ok],
            var=inputs.var[any_ok],
            available=inputs.available[any_ok],
            locations=inputs.locations,
        )
        w_row = np.array([w_of[sid] for sid in sub.ids])
        reports.append(
            replace(
                eval_pairs(aligned[any_ok], mixture_rows(sub, w_row)),
                method="ensemble",
                estimation="given",
                input_derivation="file",
            )
        )
    meta = {"seed": 0, "config": pio.config_hash({"cmd": "evaluate"})}
    pio.emit_evaluation(args.out, reports, meta)
    for r in reports:
        print(
            f"{r.method:10s} rmse={r.rmse:.3f} coverage95={r.coverage95:.1f}% "
            f"avg_sd={r.avg_posterior_sd:.3f} r2={r.r2:.3f} n={r.n_pairs}"
        )
    return 0


def _cmd_run_all(args) -> int:
    cfg = load_pipeline_config(args.config)
    updates = {}
    if args.out_dir:
        updates["out_dir"] = args.out_dir
    if args.overwrite:
        updates["overwrite"] = True
    if args.seed is not None:
        updates["seed"] = args.seed
    if args.variant:
        updates["variant"] = args.variant
    if updates:
        cfg = replace(cfg, **updates)
    result = run_pipeline(cfg)
    print(f"run directory: {result.run_dir}")
    for name, p in sorted(result.paths.items()):
        print(f"  {name}: {p}")
    for r in result.reports:
        print(
            f"  {r.method:10s} rmse={r.rmse:.3f} coverage95={r.coverage95:.1f}% "
            f"avg_sd={r.avg_posterior_sd:.3f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pmfusion",
        description="Bayesian fusion of gridded PM2.5 proxies against monitor data",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene as CSV inputs")
    p.add_argument("--out", required=True)
    p.add_argument("--sites", type=int, default=63)
    p.add_argument("--days", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--missing-rate", type=float, default=0.61)
    p.add_argument("--tau2", type=float, default=1.0)
    p.add_argument("--rho", type=float, default=35.0)
    p.add_argument("--sat-cells", type=int, default=25, help="satellite grid side length")
    p.add_argument("--sat-cell-km", type=float, default=4.0)
    p.add_argument("--ctm-cell-km", type=float, default=12.0)
    p.add_argument("--grid-days", default=None, help="comma list of days to export full grids for")
    p.add_argument("--no-config", dest="write_config", action="store_false")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("fit-downscaler", help="fit one source and emit predictives")
    p.add_argument("--monitors", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--grid-ctm", required=True)
    p.add_argument("--grid-sat", default=None)
    p.add_argument("--covariates", default=None)
    p.add_argument("--scene", required=True, help="scene.json with grid geometry")
    p.add_argument("--source", choices=[CTM, SAT], required=True)
    p.add_argument("--out", required=True)
    _add_mcmc_args(p, iters=2000)
    p.set_defaults(func=_cmd_fit_downscaler)

    p = sub.add_parser("fit-ensemble", help="fit the weight field from predictives")
    p.add_argument("--monitors", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--predictive", required=True)
    p.add_argument("--variant", choices=[JOINT, TWO_STAGE], default=JOINT)
    p.add_argument("--out-weights", required=True)
    p.add_argument("--out-samples", required=True)
    _add_mcmc_args(p)
    p.set_defaults(func=_cmd_fit_ensemble)

    p = sub.add_parser("krige-weights", help="krige sampled weights to targets")
    p.add_argument("--monitors", required=True)
    p.add_argument("--samples", required=True, help="weight_samples.csv")
    p.add_argument("--targets", required=True, help="targets in monitors.csv format")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_krige_weights)

    p = sub.add_parser("predict", help="combine predictives and weights into mixtures")
    p.add_argument("--monitors", required=True)
    p.add_argument("--predictive", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("cv", help="held-out predictives via cross-validation")
    p.add_argument("--monitors", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--grid-ctm", required=True)
    p.add_argument("--grid-sat", default=None)
    p.add_argument("--covariates", default=None)
    p.add_argument("--scene", required=True)
    p.add_argument("--derivation", choices=[KFOLD, SPATIAL], default=KFOLD)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--out", required=True)
    _add_mcmc_args(p, iters=2000)
    p.set_defaults(func=_cmd_cv)

    p = sub.add_parser("evaluate", help="score predictives against observations")
    p.add_argument("--monitors", required=True)
    p.add_argument("--obs", required=True)
    p.add_argument("--predictive", required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("run-all", help="full three-stage pipeline from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", choices=[JOINT, TWO_STAGE], default=None)
    p.add_argument("--overwrite", action="store_true")
    p.set_defaults(func=_cmd_run_all)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PmFusionError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
