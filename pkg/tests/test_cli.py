"""CLI and config tests: round-trip parsing, determinism, subcommand
behaviour, exit codes, end-to-end free-space fit."""

import json
import math
import os

import numpy as np
import pytest

from citywave.cli import (
    Config,
    ConfigError,
    main,
    read_map,
    run_fit,
    run_generate,
    run_trace,
    write_map,
)
from citywave.powermap import AttenuationMap, PolarGrid


class TestConfig:
    def test_defaults_match_reference_parameters(self):
        cfg = Config()
        assert cfg.r_window_m == 1000.0
        assert cfg.delta_r_m == 500.0
        assert cfg.u2_m == 400.0
        assert cfg.street_w_m == 10.0
        assert cfg.height_h_m == 15.0
        assert cfg.facade_b_m == 10.0
        assert cfg.p0_w == 40.0
        assert cfg.freq_hz == 2e9
        assert cfg.wavelength_m == 0.15
        assert cfg.n_rays == 10_000_000
        assert cfg.pixel_dd_m == 10.0
        assert cfg.pixel_dalpha_deg == 2.0
        assert cfg.gamma == pytest.approx(0.5, rel=1e-12)
        assert cfg.theta_xy0_rad == pytest.approx(math.pi / 2)
        assert cfg.dtheta_xy_rad == pytest.approx(math.pi)
        # default vertical aperture covers ground 50 m .. 1 km at 20 m height
        lo = cfg.theta_z0_rad - cfg.dtheta_z_rad
        hi = cfg.theta_z0_rad + cfg.dtheta_z_rad
        assert 20.0 / math.tan(hi) == pytest.approx(50.0, rel=1e-9)
        assert 20.0 / math.tan(lo) == pytest.approx(1000.0, rel=1e-9)

    def test_round_trip(self):
        cfg = Config(model="stit", rho=0.5, seed=42, n_rays=123456, sampler="uniform")
        text = cfg.to_text()
        back = Config.from_text(text)
        assert back == cfg
        assert Config.from_text(back.to_text()) == back

    def test_calibrated_intensity(self):
        assert Config(rho=0.0).lam == pytest.approx(math.pi / 200.0)
        assert Config(rho=1.0).lam == pytest.approx(0.02)

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            Config.from_text("no_such_key = 3\n")

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            Config.from_text("model = voronoi\n")
        with pytest.raises(ConfigError):
            Config.from_text("rho = 1.5\n")
        with pytest.raises(ConfigError):
            Config.from_text("gamma_db = 3.0\n")

    def test_importance_needs_positive_elevation(self):
        with pytest.raises(ConfigError):
            Config.from_text("theta_z0_rad = 0.2\ndtheta_z_rad = 0.3\n")

    def test_quadtree_auto(self):
        cfg = Config.from_text("quadtree_depth = auto\n")
        assert cfg.quadtree_depth == -1


def small_cfg(**kw):
    base = dict(
        r_window_m=150.0, delta_r_m=50.0, n_rays=20_000, n_cities=2, seed=9,
        pixel_dd_m=10.0, pixel_dalpha_deg=6.0, model="stit",
    )
    base.update(kw)
    return Config(**base)


class TestGenerate:
    def test_deterministic_files(self, tmp_path):
        cfg = small_cfg(n_cities=1)
        a = run_generate(cfg, str(tmp_path / "a"))
        b = run_generate(cfg, str(tmp_path / "b"))
        assert open(a[0], "rb").read() == open(b[0], "rb").read()

    def test_models_differ(self, tmp_path):
        pa = run_generate(small_cfg(model="plt", n_cities=1), str(tmp_path / "p"))
        pb = run_generate(small_cfg(model="stit", n_cities=1), str(tmp_path / "s"))
        assert open(pa[0]).read() != open(pb[0]).read()

    def test_metadata_has_reference_values(self, tmp_path):
        cfg = Config(n_cities=1, r_window_m=300.0, delta_r_m=100.0, seed=2)
        paths = run_generate(cfg, str(tmp_path / "m"))
        meta = json.load(open(paths[0]))["metadata"]
        assert meta["u2_m"] == 400.0
        assert meta["street_w_m"] == 10.0
        assert meta["facade_b_m"] == 10.0
        assert meta["height_h_m"] == 15.0
        assert meta["delta_h_m"] == 5.0
        assert meta["r_window_m"] == 300.0


class TestTraceAndFit:
    def test_trace_freespace_scene(self, tmp_path):
        # ground-only scene file: no buildings -> nothing masked
        cfg = small_cfg(n_rays=50_000)
        doc = {
            "type": "FeatureCollection",
            "metadata": {"antenna": [0.0, 0.0, 20.0], "antenna_on_ground": True,
                         "window_radius_m": 200.0, "city_index": 0},
            "features": [],
        }
        scene_file = tmp_path / "free.geojson"
        scene_file.write_text(json.dumps(doc))
        out = tmp_path / "map.csv"
        amap = run_trace(cfg, str(scene_file), str(out))
        assert not amap.mask.any()
        assert amap.street_fraction == 1.0
        assert os.path.exists(out)
        assert os.path.exists(str(out) + ".meta.json")
        back = read_map(str(out))
        assert np.allclose(back.power, amap.power)

    def test_map_round_trip(self, tmp_path):
        grid = PolarGrid(r=100.0, dd=10.0, dalpha=math.radians(10.0))
        rng = np.random.default_rng(0)
        amap = AttenuationMap(grid=grid, power=rng.uniform(0, 1, grid.shape),
                              mask=rng.random(grid.shape) < 0.2,
                              street_fraction=0.37,
                              meta={"grid": {"r_m": 100.0, "dd_m": 10.0,
                                             "dalpha_rad": grid.sector_aperture},
                                    "street_fraction": 0.37})
        amap.power[amap.mask] = 0.0
        path = str(tmp_path / "m.csv")
        write_map(amap, path)
        back = read_map(path)
        assert np.allclose(back.power, amap.power)
        assert np.array_equal(back.mask, amap.mask)
        assert back.street_fraction == pytest.approx(0.37)

    def test_fit_recovers_exact_exponent(self, tmp_path):
        grid = PolarGrid(r=500.0, dd=10.0, dalpha=math.radians(6.0))
        radii = grid.radii()
        power = np.where(radii > 0, 7.0 / np.maximum(radii, 1) ** 2.5, 0.0)
        amap = AttenuationMap(grid=grid, power=np.tile(power[:, None], (1, grid.n_sectors)),
                              mask=np.zeros(grid.shape, dtype=bool), street_fraction=1.0,
                              meta={"grid": {"r_m": 500.0, "dd_m": 10.0,
                                             "dalpha_rad": grid.sector_aperture},
                                    "street_fraction": 1.0})
        path = str(tmp_path / "syn.csv")
        write_map(amap, path)
        cfg = small_cfg()
        report = run_fit(cfg, [path], str(tmp_path / "out"), plot=True,
                         fit_range=(50.0, 500.0))
        assert report["alpha"] == pytest.approx(2.5, abs=1e-9)
        assert report["a"] == pytest.approx(7.0, rel=1e-6)
        assert report["r_squared"] == pytest.approx(1.0, abs=1e-12)
        assert os.path.exists(tmp_path / "out_loglog.svg")
        assert os.path.exists(tmp_path / "out_profile.csv")

    def test_freespace_alpha_two_end_to_end(self, tmp_path):
        # ten free-space maps through trace + fit: alpha -> 2 over [200, 1000]
        cfg = Config(r_window_m=1000.0, delta_r_m=100.0, n_rays=150_000,
                     n_cities=10, seed=4, pixel_dalpha_deg=6.0)
        files = []
        for i in range(10):
            doc = {
                "type": "FeatureCollection",
                "metadata": {"antenna": [0.0, 0.0, 20.0], "antenna_on_ground": True,
                             "window_radius_m": 1100.0, "city_index": i},
                "features": [],
            }
            sf = tmp_path / f"fs_{i}.geojson"
            sf.write_text(json.dumps(doc))
            out = str(tmp_path / f"fsmap_{i}.csv")
            run_trace(cfg, str(sf), out)
            files.append(out)
        report = run_fit(cfg, files, str(tmp_path / "fs"), plot=False,
                         fit_range=(200.0, 1000.0))
        assert report["alpha"] == pytest.approx(2.0, abs=0.05)


class TestMainExitCodes:
    def test_missing_config(self, tmp_path, capsys):
        rc = main(["generate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path)])
        assert rc == 1

    def test_bad_config_value(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("rho = 7\n")
        rc = main(["generate", "--config", str(p), "--out", str(tmp_path)])
        assert rc == 1

    def test_missing_map_file(self, tmp_path):
        p = tmp_path / "ok.cfg"
        p.write_text("n_cities = 1\n")
        rc = main(["fit", "--config", str(p), "--maps", str(tmp_path / "none.csv"),
                   "--out", str(tmp_path / "x")])
        assert rc == 2

    def test_generate_and_trace_via_main(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text(
            "model = stit\nr_window_m = 120\ndelta_r_m = 40\nn_rays = 5000\n"
            "n_cities = 1\nseed = 3\npixel_dalpha_deg = 10\n"
        )
        outdir = tmp_path / "scenes"
        assert main(["generate", "--config", str(p), "--out", str(outdir)]) == 0
        scene = outdir / "scene_0000.geojson"
        assert scene.exists()
        out = tmp_path / "m.csv"
        assert main(["trace", "--config", str(p), "--scene", str(scene),
                     "--out", str(out)]) == 0
        assert out.exists()

    def test_worker_invariance_end_to_end(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text(
            "model = plt\nr_window_m = 120\ndelta_r_m = 40\nn_rays = 40000\n"
            "n_cities = 1\nseed = 5\npixel_dalpha_deg = 10\n"
        )
        outdir = tmp_path / "scenes"
        main(["generate", "--config", str(p), "--out", str(outdir)])
        scene = str(outdir / "scene_0000.geojson")
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        main(["trace", "--config", str(p), "--scene", scene, "--out", str(a), "--workers", "1"])
        main(["trace", "--config", str(p), "--scene", scene, "--out", str(b), "--workers", "2"])
        assert a.read_bytes() == b.read_bytes()
