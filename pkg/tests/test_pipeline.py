"""End-to-end orchestration: artifacts, determinism, failure tagging, CLI."""

import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from pmfusion import io as pio
from pmfusion.config import MCMCConfig
from pmfusion.errors import OverwriteError, StageError
from pmfusion.geo import CTM, SAT, GridSpec
from pmfusion.pipeline import (
    JOINT,
    TWO_STAGE,
    PipelineConfig,
    load_pipeline_config,
    run_pipeline,
    save_pipeline_config,
)
from pmfusion.synth import SceneConfig, generate_scene


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    cfg = SceneConfig(n_sites=8, n_days=14, sat_missing_rate=0.45, seed=50)
    truth = generate_scene(cfg)
    paths = pio.export_scene(truth, root)
    return truth, paths, root


def make_config(truth, paths, out_dir, **kw):
    cfg = truth.config
    base = dict(
        monitors=str(paths["monitors"]),
        obs=str(paths["obs"]),
        grid_ctm=str(paths["grid_ctm"]),
        ctm_grid=cfg.ctm_grid,
        out_dir=str(out_dir),
        grid_sat=str(paths["grid_sat"]),
        sat_grid=cfg.sat_grid,
        covariates=str(paths["covariates"]),
        target_grid=GridSpec(10.0, 10.0, 16.0, 5, 5),
        n_days=cfg.n_days,
        n_folds=4,
        downscaler_mcmc=MCMCConfig(n_iter=240, burn_in=120, thin=2),
        ensemble_mcmc=MCMCConfig(n_iter=400, burn_in=200, thin=2),
        surface_days=(1, 7),
        seed=3,
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def result(scene, tmp_path_factory):
    truth, paths, _ = scene
    out = tmp_path_factory.mktemp("runs")
    return run_pipeline(make_config(truth, paths, out))


class TestRunPipeline:
    def test_artifacts_exist_and_parse(self, scene, result):
        truth, _, _ = scene
        for name in ("cv_predictive", "site_weights", "weight_samples",
                     "full_predictive", "weight_surface", "surface", "evaluation"):
            assert result.paths[name].exists(), name
        locs = {s.site_id: s for s in truth.sites}
        cv = pio.load_predictive(result.paths["cv_predictive"], locs)
        assert cv.n_records == truth.obs.n_records
        assert cv.available[:, 0].all()
        full = pio.load_predictive(result.paths["full_predictive"], locs)
        assert full.available[:, 0].all()
        np.testing.assert_array_equal(
            full.available[:, 1], np.isfinite(truth.obs.x_sat)
        )
        ids, weights = pio.load_weights(result.paths["site_weights"])
        assert list(ids) == [s.site_id for s in truth.sites]
        assert np.all((weights["w_mean"] >= 0) & (weights["w_mean"] <= 1))
        field = pio.load_weight_samples(result.paths["weight_samples"], truth.sites)
        assert field.q.shape[0] == 100  # (400 - 200) / 2 kept draws
        manifest = pio.load_json(result.run_dir / "manifest.json")
        assert manifest["status"] == "complete"
        assert manifest["stage"] == "done"
        assert set(manifest["artifacts"]) == set(result.paths)
        assert "stage2-ensemble" in manifest["timings_s"]
        cfg_back = load_pipeline_config(result.run_dir / "config.json")
        assert cfg_back.digest() == result.config.digest()

    def test_run_dir_carries_the_config_digest(self, result):
        assert result.run_dir.name == f"run_{result.config.digest()}"
        assert pio.read_meta(result.paths["surface"])["config"] == result.config.digest()

    def test_reports_cover_sources_and_ensemble(self, result):
        by_method = {r.method: r for r in result.reports}
        assert set(by_method) == {"ctm", "sat", "ensemble"}
        assert by_method["ensemble"].estimation == JOINT
        for rep in result.reports:
            assert rep.n_pairs > 0
            assert np.isfinite(rep.rmse)
            assert rep.input_derivation == "kfold"
        assert by_method["sat"].n_pairs < by_method["ctm"].n_pairs

    def test_surface_covers_requested_days(self, result):
        surf = pio.load_surface(result.paths["surface"])
        assert set(surf.day) == {1, 7}
        assert surf.n_cells == 2 * 25
        assert np.all(surf.sd > 0)
        assert np.all((surf.q025 <= surf.mean) & (surf.mean <= surf.q975))
        ids, kriged = pio.load_weights(result.paths["weight_surface"])
        assert len(ids) == 25
        assert np.all((kriged["w_mean"] > 0) & (kriged["w_mean"] < 1))

    def test_rerun_reproduces_artifacts_byte_for_byte(self, scene, result):
        truth, paths, _ = scene
        cfg = replace(result.config, overwrite=True)
        again = run_pipeline(cfg)
        assert again.run_dir == result.run_dir
        for name in ("cv_predictive", "site_weights", "weight_samples",
                     "full_predictive", "surface", "evaluation"):
            assert again.paths[name].read_bytes() == result.paths[name].read_bytes(), name

    def test_existing_run_refused_without_overwrite(self, result):
        with pytest.raises(OverwriteError, match="overwrite"):
            run_pipeline(result.config)

    def test_two_stage_variant(self, scene, result, tmp_path):
        truth, paths, _ = scene
        cfg = make_config(truth, paths, tmp_path, variant=TWO_STAGE)
        out = run_pipeline(cfg)
        assert np.all(out.weights.q == out.weights.q[0])
        rep_two = next(r for r in out.reports if r.method == "ensemble")
        rep_joint = next(r for r in result.reports if r.method == "ensemble")
        assert rep_two.estimation == TWO_STAGE
        assert abs(rep_two.rmse - rep_joint.rmse) < 0.5

    def test_failed_stage_is_tagged_and_recorded(self, scene, tmp_path):
        truth, paths, _ = scene
        bad_obs = tmp_path / "obs.csv"
        text = paths["obs"].read_text()
        lines = text.splitlines()
        lines.insert(1, "zz,1,5.0")
        bad_obs.write_text("\n".join(lines) + "\n")
        cfg = make_config(truth, paths, tmp_path / "runs", obs=str(bad_obs))
        with pytest.raises(StageError, match="stage 'load' failed") as exc:
            run_pipeline(cfg)
        assert exc.value.stage == "load"
        manifest = pio.load_json(tmp_path / "runs" / f"run_{cfg.digest()}" / "manifest.json")
        assert manifest["status"] == "failed"
        assert "zz" in manifest["error"]

    def test_without_satellite(self, scene, tmp_path):
        truth, paths, _ = scene
        cfg = make_config(
            truth, paths, tmp_path,
            grid_sat=None, sat_grid=None, covariates=None,
            surface_days=(2,),
        )
        out = run_pipeline(cfg)
        assert {r.method for r in out.reports} == {"ctm", "ensemble"}
        text = out.paths["cv_predictive"].read_text()
        assert ",sat," not in text
        surf = pio.load_surface(out.paths["surface"])
        assert np.all(surf.w == 1.0)


class TestPipelineConfig:
    def test_json_round_trip(self, scene, tmp_path):
        truth, paths, _ = scene
        cfg = make_config(truth, paths, tmp_path)
        p = save_pipeline_config(tmp_path / "config.json", cfg)
        back = load_pipeline_config(p)
        assert back == cfg
        assert back.digest() == cfg.digest()

    def test_digest_ignores_out_dir_and_overwrite(self, scene, tmp_path):
        truth, paths, _ = scene
        a = make_config(truth, paths, tmp_path / "x")
        b = make_config(truth, paths, tmp_path / "y", overwrite=True)
        assert a.digest() == b.digest()
        c = make_config(truth, paths, tmp_path / "x", seed=99)
        assert c.digest() != a.digest()

    def test_validation(self, scene, tmp_path):
        truth, paths, _ = scene
        with pytest.raises(ValueError, match="variant"):
            make_config(truth, paths, tmp_path, variant="stacking")
        with pytest.raises(ValueError, match="n_folds"):
            make_config(truth, paths, tmp_path, n_folds=1)
        with pytest.raises(ValueError, match="go together"):
            make_config(truth, paths, tmp_path, sat_grid=None)


def run_cli(*args, cwd):
    return subprocess.run(
        [sys.executable, "-m", "pmfusion", *args],
        capture_output=True, text=True, cwd=cwd,
    )


@pytest.fixture(scope="module")
def cli_scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    out = run_cli(
        "synth", "--out", str(root / "scene"), "--sites", "5", "--days", "8",
        "--missing-rate", "0.3", "--seed", "7", "--sat-cells", "10",
        cwd=root,
    )
    assert out.returncode == 0, out.stderr
    return root


class TestCli:
    def test_synth_writes_inputs_and_config(self, cli_scene):
        scene = cli_scene / "scene"
        for name in ("monitors.csv", "obs.csv", "covariates.csv", "grid_ctm.csv",
                     "grid_sat.csv", "truth_weights.csv", "scene.json",
                     "pipeline_config.json"):
            assert (scene / name).exists(), name

    def test_run_all_produces_a_complete_run(self, cli_scene):
        cfg_path = cli_scene / "scene" / "pipeline_config.json"
        d = json.loads(cfg_path.read_text())
        d["downscaler_mcmc"] = {"n_iter": 160, "burn_in": 80, "thin": 2, "seed": 0}
        d["ensemble_mcmc"] = {"n_iter": 300, "burn_in": 150, "thin": 2, "seed": 0}
        d["n_folds"] = 3
        d["surface_days"] = [3]
        cfg_path.write_text(json.dumps(d))
        out = run_cli("run-all", "--config", str(cfg_path), cwd=cli_scene)
        assert out.returncode == 0, out.stderr
        runs = list((cli_scene / "scene" / "runs").glob("run_*"))
        assert len(runs) == 1
        manifest = pio.load_json(runs[0] / "manifest.json")
        assert manifest["status"] == "complete"
        for name in ("surface.csv", "evaluation.csv", "site_weights.csv"):
            assert (runs[0] / name).exists()
        # rerunning without --overwrite is an error the shell can see
        again = run_cli("run-all", "--config", str(cfg_path), cwd=cli_scene)
        assert again.returncode != 0
        assert "overwrite" in again.stderr

    def test_evaluate_subcommand(self, cli_scene):
        runs = list((cli_scene / "scene" / "runs").glob("run_*"))
        scene = cli_scene / "scene"
        out_csv = cli_scene / "scores.csv"
        out = run_cli(
            "evaluate",
            "--monitors", str(scene / "monitors.csv"),
            "--obs", str(scene / "obs.csv"),
            "--predictive", str(runs[0] / "cv_predictive.csv"),
            "--weights", str(runs[0] / "site_weights.csv"),
            "--out", str(out_csv),
            cwd=cli_scene,
        )
        assert out.returncode == 0, out.stderr
        reports = pio.load_evaluation(out_csv)
        assert any(r.method == "ensemble" for r in reports)

    def test_missing_input_is_a_clean_failure(self, cli_scene):
        out = run_cli(
            "evaluate",
            "--monitors", str(cli_scene / "nope.csv"),
            "--obs", str(cli_scene / "nope.csv"),
            "--predictive", str(cli_scene / "nope.csv"),
            "--out", str(cli_scene / "x.csv"),
            cwd=cli_scene,
        )
        assert out.returncode != 0
        assert "nope.csv" in out.stderr
