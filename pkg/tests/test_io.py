"""Every file format round-trips; bad files fail with file:line messages."""

import time

import numpy as np
import pytest

from pmfusion.crossval import EvalReport
from pmfusion.ensemble import WeightFieldSamples
from pmfusion.errors import ParseError, SchemaError
from pmfusion.geo import CTM, SAT, GridSpec, Location
from pmfusion.io import (
    SurfaceOutput,
    assemble_observations,
    config_hash,
    emit_covariates,
    emit_evaluation,
    emit_grid,
    emit_monitors,
    emit_obs,
    emit_predictive,
    emit_surface,
    emit_weight_samples,
    emit_weights,
    export_scene,
    grid_spec_from_dict,
    grid_spec_to_dict,
    load_covariates,
    load_evaluation,
    load_grid,
    load_json,
    load_monitors,
    load_obs,
    load_predictive,
    load_surface,
    load_weight_samples,
    load_weights,
    read_meta,
    save_json,
    scene_hash,
)
from pmfusion.synth import SceneConfig, generate_scene
from pmfusion.tables import PredictiveTable


@pytest.fixture
def sites():
    return [Location("a01", 1.5, 2.5), Location("b02", 10.0, 0.25), Location("c03", 3.0, 8.0)]


class TestMonitors:
    def test_round_trip(self, tmp_path, sites):
        p = emit_monitors(tmp_path / "monitors.csv", sites, {"seed": 5})
        back = load_monitors(p)
        assert back == sites
        assert read_meta(p)["seed"] == "5"

    def test_duplicate_id_reports_line(self, tmp_path, sites):
        p = emit_monitors(tmp_path / "monitors.csv", sites + [Location("a01", 0.0, 0.0)])
        with pytest.raises(ParseError, match=r"monitors\.csv:5: duplicate"):
            load_monitors(p)

    def test_missing_column_named(self, tmp_path):
        p = tmp_path / "monitors.csv"
        p.write_text("site_id,x_km\na,1.0\n")
        with pytest.raises(SchemaError, match="y_km"):
            load_monitors(p)

    def test_non_numeric_reports_file_and_line(self, tmp_path):
        p = tmp_path / "monitors.csv"
        p.write_text("site_id,x_km,y_km\na,1.0,2.0\nb,oops,3.0\n")
        with pytest.raises(ParseError, match=r"monitors\.csv:3: non-numeric value 'oops'"):
            load_monitors(p)


class TestObs:
    def test_round_trip_drops_empty_values(self, tmp_path):
        ids = np.array(["a", "b", "a"], dtype=object)
        day = np.array([1, 2, 3])
        y = np.array([10.5, np.nan, 12.25])
        p = emit_obs(tmp_path / "obs.csv", ids, day, y)
        rid, rday, ry = load_obs(p)
        assert list(rid) == ["a", "a"]
        assert list(rday) == [1, 3]
        np.testing.assert_array_equal(ry, [10.5, 12.25])

    def test_fractional_day_rejected(self, tmp_path):
        p = tmp_path / "obs.csv"
        p.write_text("site_id,day,pm25\na,1.5,3.0\n")
        with pytest.raises(ParseError, match="obs.csv:2.*integer"):
            load_obs(p)


class TestGrid:
    def test_absent_row_and_empty_field_both_mean_missing(self, tmp_path):
        spec = GridSpec(0.0, 0.0, 1.0, 2, 2, CTM)
        p = tmp_path / "grid.csv"
        p.write_text("day,row,col,value\n1,0,0,4.0\n1,0,1,\n2,1,1,7.0\n")
        values, present = load_grid(p, spec, n_days=2)
        assert values.shape == (2, 2, 2)
        assert values[0, 0, 0] == 4.0 and values[1, 1, 1] == 7.0
        assert present.sum() == 2
        assert not present[0, 0, 1] and not present[0, 1, 0]

    def test_round_trip_with_mask(self, tmp_path):
        rng = np.random.default_rng(3)
        spec = GridSpec(0.0, 0.0, 2.0, 4, 5, SAT)
        vals = rng.normal(8, 2, (3, 4, 5))
        present = rng.random((3, 4, 5)) > 0.4
        vals[~present] = np.nan
        p = emit_grid(tmp_path / "grid.csv", vals, meta={"seed": 0})
        rvals, rpresent = load_grid(p, spec, n_days=3)
        np.testing.assert_array_equal(rpresent, present)
        np.testing.assert_array_equal(rvals[present], vals[present])

    def test_horizon_inferred_from_max_day(self, tmp_path):
        spec = GridSpec(0.0, 0.0, 1.0, 1, 1, CTM)
        p = tmp_path / "grid.csv"
        p.write_text("day,row,col,value\n3,0,0,1.0\n")
        values, _ = load_grid(p, spec)
        assert values.shape == (3, 1, 1)

    def test_cell_outside_grid_rejected(self, tmp_path):
        spec = GridSpec(0.0, 0.0, 1.0, 2, 2, CTM)
        p = tmp_path / "grid.csv"
        p.write_text("day,row,col,value\n1,2,0,1.0\n")
        with pytest.raises(ParseError, match=r"grid\.csv:2.*outside"):
            load_grid(p, spec)

    def test_day_beyond_horizon_rejected(self, tmp_path):
        spec = GridSpec(0.0, 0.0, 1.0, 1, 1, CTM)
        p = tmp_path / "grid.csv"
        p.write_text("day,row,col,value\n5,0,0,1.0\n")
        with pytest.raises(SchemaError, match="beyond"):
            load_grid(p, spec, n_days=3)


class TestCovariates:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        ids = np.array(["a", "b"], dtype=object)
        day = np.array([1, 2])
        z = rng.normal(size=(2, 6))
        p = emit_covariates(tmp_path / "covariates.csv", ids, day, z)
        rid, rday, rz = load_covariates(p)
        assert list(rid) == ["a", "b"]
        np.testing.assert_array_equal(rz, z)


class TestPredictive:
    def make_table(self, sites):
        locs = {s.site_id: s for s in sites}
        ids = np.array(["a01", "a01", "b02"], dtype=object)
        day = np.array([1, 2, 1])
        mu = np.array([[1.0, 2.0], [3.0, 0.0], [5.0, 6.0]])
        var = np.array([[0.5, 0.7], [0.9, 1.0], [1.1, 1.3]])
        avail = np.array([[True, True], [True, False], [True, True]])
        return PredictiveTable(ids=ids, day=day, mu=mu, var=var, available=avail, locations=locs)

    def test_round_trip_preserves_availability(self, tmp_path, sites):
        table = self.make_table(sites)
        p = emit_predictive(tmp_path / "predictive.csv", table)
        back = load_predictive(p, table.locations)
        np.testing.assert_array_equal(back.available, table.available)
        np.testing.assert_array_equal(back.mu[back.available], table.mu[table.available])
        np.testing.assert_array_equal(back.var[back.available], table.var[table.available])
        assert list(back.ids) == list(table.ids)
        np.testing.assert_array_equal(back.day, table.day)

    def test_unknown_site_rejected(self, tmp_path, sites):
        p = tmp_path / "predictive.csv"
        p.write_text("site_id,day,source,mu,var\nzz,1,ctm,1.0,1.0\n")
        with pytest.raises(SchemaError, match="unknown site_id 'zz'"):
            load_predictive(p, {s.site_id: s for s in sites})

    def test_unknown_source_rejected(self, tmp_path, sites):
        p = tmp_path / "predictive.csv"
        p.write_text("site_id,day,source,mu,var\na01,1,lidar,1.0,1.0\n")
        with pytest.raises(ParseError, match="unknown source 'lidar'"):
            load_predictive(p, {s.site_id: s for s in sites})

    def test_duplicate_row_rejected(self, tmp_path, sites):
        p = tmp_path / "predictive.csv"
        p.write_text(
            "site_id,day,source,mu,var\na01,1,ctm,1.0,1.0\na01,1,ctm,2.0,1.0\n"
        )
        with pytest.raises(ParseError, match=r":3: duplicate"):
            load_predictive(p, {s.site_id: s for s in sites})


class TestWeights:
    def test_round_trip(self, tmp_path):
        ids = ["a", "b", "c"]
        summary = {
            "w_mean": np.array([0.2, 0.5, 0.8]),
            "w_lo": np.array([0.1, 0.3, 0.6]),
            "w_hi": np.array([0.3, 0.7, 0.95]),
            "q_mean": np.array([-1.4, 0.0, 1.4]),
        }
        p = emit_weights(tmp_path / "weights.csv", ids, summary)
        rid, back = load_weights(p)
        assert list(rid) == ids
        for key in summary:
            np.testing.assert_array_equal(back[key], summary[key])


class TestWeightSamples:
    def field(self, sites):
        rng = np.random.default_rng(6)
        return WeightFieldSamples(
            locations=sites,
            q=rng.normal(size=(5, 3)),
            tau2=rng.uniform(0.5, 2.0, 5),
            rho=rng.uniform(20, 60, 5),
            t_s=np.array([4, 4, 4]),
            acceptance={},
        )

    def test_round_trip(self, tmp_path, sites):
        field = self.field(sites)
        p = emit_weight_samples(tmp_path / "weight_samples.csv", field)
        back = load_weight_samples(p, sites)
        np.testing.assert_array_equal(back.q, field.q)
        np.testing.assert_array_equal(back.tau2, field.tau2)
        np.testing.assert_array_equal(back.rho, field.rho)
        assert [l.site_id for l in back.locations] == [l.site_id for l in sites]

    def test_missing_site_row_rejected(self, tmp_path, sites):
        p = tmp_path / "weight_samples.csv"
        p.write_text(
            "sample,site_id,q,tau2,rho\n0,a01,0.1,1.0,30.0\n0,b02,0.2,1.0,30.0\n"
            "1,a01,0.3,1.1,31.0\n"
        )
        with pytest.raises(SchemaError, match="incomplete"):
            load_weight_samples(p, sites[:2])

    def test_unknown_site_rejected(self, tmp_path, sites):
        p = tmp_path / "weight_samples.csv"
        p.write_text("sample,site_id,q,tau2,rho\n0,zz,0.1,1.0,30.0\n")
        with pytest.raises(SchemaError, match="unknown site_id"):
            load_weight_samples(p, sites)


class TestSurface:
    def make_surface(self, n, rng):
        sd = rng.uniform(0.5, 1.5, n)
        mean = rng.normal(10, 3, n)
        return SurfaceOutput(
            day=np.repeat(1, n),
            row=np.arange(n) // 100,
            col=np.arange(n) % 100,
            mean=mean,
            sd=sd,
            q025=mean - 1.96 * sd,
            q975=mean + 1.96 * sd,
            w=rng.uniform(0, 1, n),
        )

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        surf = self.make_surface(500, rng)
        p = emit_surface(tmp_path / "surface.csv", surf, {"seed": 1})
        back = load_surface(p)
        for name in ("day", "row", "col", "mean", "sd", "q025", "q975", "w"):
            np.testing.assert_array_equal(getattr(back, name), getattr(surf, name))

    def test_large_surface_loads_quickly(self, tmp_path):
        rng = np.random.default_rng(8)
        surf = self.make_surface(16_063, rng)
        p = emit_surface(tmp_path / "surface.csv", surf)
        t0 = time.perf_counter()
        back = load_surface(p)
        assert time.perf_counter() - t0 < 1.0
        assert back.n_cells == 16_063

    def test_validation(self):
        base = dict(
            day=np.array([1]), row=np.array([0]), col=np.array([0]),
            mean=np.array([1.0]), sd=np.array([0.5]),
        )
        with pytest.raises(ValueError, match="order"):
            SurfaceOutput(**base, q025=np.array([2.0]), q975=np.array([1.0]), w=np.array([0.5]))
        with pytest.raises(ValueError, match="weights"):
            SurfaceOutput(**base, q025=np.array([0.0]), q975=np.array([2.0]), w=np.array([1.5]))
        with pytest.raises(ValueError, match="length"):
            SurfaceOutput(**base, q025=np.array([0.0]), q975=np.array([2.0]), w=np.array([0.5, 0.5]))


class TestEvaluation:
    def test_round_trip_with_nan_r2(self, tmp_path):
        reports = [
            EvalReport(rmse=1.5, coverage95=94.0, avg_posterior_sd=1.2, r2=0.8,
                       n_pairs=100, method="ensemble", estimation="joint",
                       input_derivation="cv"),
            EvalReport(rmse=2.0, coverage95=90.0, avg_posterior_sd=1.4, r2=float("nan"),
                       n_pairs=50, method="ctm", estimation="two_stage",
                       input_derivation="full"),
        ]
        p = emit_evaluation(tmp_path / "evaluation.csv", reports)
        back = load_evaluation(p)
        assert back[0] == reports[0]
        assert back[1].method == "ctm" and np.isnan(back[1].r2)
        assert back[1].n_pairs == 50


class TestMetaAndJson:
    def test_meta_line_round_trip(self, tmp_path):
        p = emit_obs(
            tmp_path / "obs.csv",
            np.array(["a"], dtype=object), np.array([1]), np.array([2.0]),
            meta={"seed": 11, "config": "deadbeef0123"},
        )
        meta = read_meta(p)
        assert meta == {"seed": "11", "config": "deadbeef0123"}

    def test_comments_skipped_anywhere(self, tmp_path):
        p = tmp_path / "obs.csv"
        p.write_text("# preamble\nsite_id,day,pm25\n# mid comment\na,1,3.5\n")
        ids, day, y = load_obs(p)
        assert list(ids) == ["a"] and y[0] == 3.5

    def test_config_hash_is_order_insensitive(self):
        assert config_hash({"a": 1, "b": [2, 3]}) == config_hash({"b": [2, 3], "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})
        assert len(config_hash({})) == 12

    def test_json_round_trip_and_parse_error(self, tmp_path):
        p = save_json(tmp_path / "config.json", {"k": [1, 2], "s": "x"})
        assert load_json(p) == {"k": [1, 2], "s": "x"}
        bad = tmp_path / "bad.json"
        bad.write_text("{\n  broken\n}")
        with pytest.raises(ParseError, match=r"bad\.json:2"):
            load_json(bad)

    def test_grid_spec_dict_round_trip(self):
        spec = GridSpec(-3.0, 2.0, 12.0, 7, 9, CTM)
        assert grid_spec_from_dict(grid_spec_to_dict(spec)) == spec


class TestAssembleObservations:
    def pieces(self, tmp_path):
        scene = generate_scene(SceneConfig(n_sites=5, n_days=8, seed=21))
        paths = export_scene(scene, tmp_path / "scene")
        monitors = load_monitors(paths["monitors"])
        obs = load_obs(paths["obs"])
        cov = load_covariates(paths["covariates"])
        ctm = load_grid(paths["grid_ctm"], scene.config.ctm_grid, n_days=8)
        sat = load_grid(paths["grid_sat"], scene.config.sat_grid, n_days=8)
        return scene, monitors, obs, cov, ctm, sat

    def test_rebuilt_table_matches_the_generator(self, tmp_path):
        scene, monitors, obs, cov, ctm, sat = self.pieces(tmp_path)
        table = assemble_observations(
            monitors, obs, ctm, scene.config.ctm_grid,
            sat=sat, sat_spec=scene.config.sat_grid, covariates=cov, n_days=8,
        )
        assert table.n_records == scene.obs.n_records
        np.testing.assert_array_equal(table.y, scene.obs.y)
        np.testing.assert_array_equal(table.x_ctm, scene.obs.x_ctm)
        np.testing.assert_array_equal(table.x_sat, scene.obs.x_sat)
        np.testing.assert_array_equal(table.z, scene.obs.z)
        assert table.n_days == 8

    def test_satellite_optional(self, tmp_path):
        scene, monitors, obs, cov, ctm, _ = self.pieces(tmp_path)
        table = assemble_observations(monitors, obs, ctm, scene.config.ctm_grid, n_days=8)
        assert np.isnan(table.x_sat).all()
        assert np.all(table.z == 0.0)

    def test_unknown_observation_site_rejected(self, tmp_path):
        scene, monitors, obs, cov, ctm, sat = self.pieces(tmp_path)
        ids, day, y = obs
        bad = (np.append(ids, "zz"), np.append(day, 1), np.append(y, 5.0))
        with pytest.raises(SchemaError, match="unknown site_id 'zz'"):
            assemble_observations(monitors, bad, ctm, scene.config.ctm_grid)

    def test_missing_ctm_value_rejected(self, tmp_path):
        scene, monitors, obs, cov, ctm, sat = self.pieces(tmp_path)
        values, present = ctm
        values = values.copy()
        rc = scene.site_cell_ctm[scene.obs.site_idx[0]]
        values[scene.obs.day[0] - 1, rc[0], rc[1]] = np.nan
        with pytest.raises(SchemaError, match="no ctm grid value"):
            assemble_observations(monitors, obs, (values, present), scene.config.ctm_grid, n_days=8)

    def test_missing_covariate_row_rejected(self, tmp_path):
        scene, monitors, obs, cov, ctm, sat = self.pieces(tmp_path)
        cov_ids, cov_day, z = cov
        short = (cov_ids[:-1], cov_day[:-1], z[:-1])
        with pytest.raises(SchemaError, match="no covariate row"):
            assemble_observations(
                monitors, obs, ctm, scene.config.ctm_grid, covariates=short, n_days=8
            )


class TestExportScene:
    def test_exports_complete_and_hashed(self, tmp_path):
        cfg = SceneConfig(n_sites=4, n_days=6, seed=33)
        scene = generate_scene(cfg)
        paths = export_scene(scene, tmp_path / "scene")
        for key in ("monitors", "obs", "covariates", "grid_ctm", "grid_sat",
                    "truth_weights", "scene"):
            assert paths[key].exists()
        desc = load_json(paths["scene"])
        assert desc["seed"] == 33
        assert desc["config"] == scene_hash(cfg)
        assert grid_spec_from_dict(desc["ctm_grid"]) == cfg.ctm_grid
        assert read_meta(paths["obs"])["config"] == scene_hash(cfg)
        ids, weights = load_weights(paths["truth_weights"])
        np.testing.assert_allclose(weights["w_mean"], scene.w)

    def test_grid_day_subset_keeps_monitor_cells(self, tmp_path):
        cfg = SceneConfig(n_sites=4, n_days=6, seed=34, sat_missing_rate=0.0)
        scene = generate_scene(cfg)
        paths = export_scene(scene, tmp_path / "scene", grid_days=[2])
        values, present = load_grid(paths["grid_ctm"], cfg.ctm_grid, n_days=6)
        assert present[1].all()
        assert not present[0].all()
        rc = scene.site_cell_ctm
        for d in range(6):
            assert present[d, rc[:, 0], rc[:, 1]].all()
