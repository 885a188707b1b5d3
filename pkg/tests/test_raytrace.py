"""Ray tracing tests: direction sampling laws, reflection, scene compilation,
index vs brute-force agreement, free-space geometry, canyon bounce sequences,
and batch/reference equivalence."""

import math

import numpy as np
import pytest

from citywave.citygen import Building, CityScene, assemble_scene, build_city
from citywave.geom import ConvexPolygon
from citywave.raytrace import (
    CompiledScene,
    GroundHit,
    QuadTreeIndex,
    SourceSpec,
    TraceLimits,
    brute_force_first_hit,
    build_index,
    compile_scene,
    first_hit,
    ground_hit_radius,
    ground_map_jacobian,
    importance_weight,
    portion_measure,
    reflect,
    sample_direction_importance,
    sample_direction_uniform,
    source_for_crown,
    trace_batch,
    trace_ray,
)


def free_space(h=20.0):
    scene = assemble_scene([], [], 1500.0)
    cs = compile_scene(scene)
    return cs, build_index(cs)


def box_building(x0, y0, x1, y1, h):
    return Building(ConvexPolygon.from_points([(x0, y0), (x1, y0), (x1, y1), (x0, y1)]), h)


CROWN = source_for_crown(20.0, 50.0, 1000.0)


class TestSourceSpec:
    def test_crown_angles(self):
        assert CROWN.theta_z_range[0] == pytest.approx(math.atan(0.02))
        assert CROWN.theta_z_range[1] == pytest.approx(math.atan(0.4))

    def test_portion_measure_formula(self):
        # Monte-Carlo oracle: fraction of uniform sphere directions in the portion
        rng = np.random.default_rng(0)
        n = 2_000_000
        z = rng.uniform(-1, 1, n)
        elev = np.arcsin(-z)  # elevation below horizon of a uniform direction
        phi = rng.uniform(-math.pi, math.pi, n)
        lo, hi = CROWN.theta_z_range
        frac = ((elev >= lo) & (elev <= hi)).mean()  # full azimuth portion
        assert portion_measure(CROWN) == pytest.approx(frac, rel=5e-3)

    def test_gamma_range_enforced(self):
        with pytest.raises(ValueError):
            SourceSpec(position=(0, 0, 20), gamma=1.5)


class TestUniformSampling:
    def test_full_sphere_mean_z(self):
        src = SourceSpec(position=(0, 0, 0), theta_z0=0.0, dtheta_z=math.pi / 2, gamma=0.5)
        rng = np.random.default_rng(1)
        dirs, om = sample_direction_uniform(src, rng, 1_000_000)
        assert np.all(om == 1.0)
        assert abs(dirs[:, 2].mean()) < 3.0 / math.sqrt(len(dirs))
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_elevation_marginal_ks(self):
        from scipy.stats import kstest

        rng = np.random.default_rng(2)
        dirs, _ = sample_direction_uniform(CROWN, rng, 100_000)
        thz = np.arcsin(-dirs[:, 2])
        lo, hi = CROWN.theta_z_range

        def cdf(t):
            return (np.sin(t) - math.sin(lo)) / (math.sin(hi) - math.sin(lo))

        assert kstest(thz, cdf).pvalue > 0.01


class TestImportanceSampling:
    def test_f_is_monotone_from_zero(self):
        lo, hi = CROWN.theta_z_range
        f = lambda t: 1.0 / math.sin(lo) ** 2 - 1.0 / math.sin(t) ** 2
        assert f(lo) == 0.0
        ts = np.linspace(lo, hi, 100)
        assert np.all(np.diff([f(t) for t in ts]) > 0)

    def test_jacobian_value(self):
        assert ground_map_jacobian(20.0, math.pi / 4) == pytest.approx(800.0, rel=1e-12)

    def test_jacobian_finite_differences(self):
        h = 20.0
        for thz in (0.1, 0.3, 0.8):
            eps = 1e-6
            # ground hit map r(thxy, thz) = d(thz) * (cos thxy, sin thxy)
            d0 = ground_hit_radius(h, thz)
            dd = (ground_hit_radius(h, thz + eps) - ground_hit_radius(h, thz - eps)) / (2 * eps)
            jac = abs(d0 * dd)  # |dr/dthxy x dr/dthz|
            assert ground_map_jacobian(h, thz) == pytest.approx(jac, rel=1e-5)

    def test_weights_mean_one(self):
        rng = np.random.default_rng(3)
        dirs, om = sample_direction_importance(CROWN, rng, 1_000_000)
        se = om.std(ddof=1) / math.sqrt(len(om))
        assert abs(om.mean() - 1.0) < 3.0 * se

    def test_rejects_horizontal_range(self):
        src = SourceSpec(position=(0, 0, 20), theta_z0=math.pi / 12, dtheta_z=math.pi / 12, gamma=0.5)
        with pytest.raises(ValueError):
            sample_direction_importance(src, np.random.default_rng(0), 10)

    def test_elevation_density_ks(self):
        from scipy.stats import kstest

        rng = np.random.default_rng(4)
        dirs, _ = sample_direction_importance(CROWN, rng, 100_000)
        thz = np.arcsin(-dirs[:, 2])
        lo, hi = CROWN.theta_z_range
        inv_lo, inv_hi = 1 / math.sin(lo) ** 2, 1 / math.sin(hi) ** 2

        def cdf(t):
            return (inv_lo - 1.0 / np.sin(t) ** 2) / (inv_lo - inv_hi)

        assert kstest(thz, cdf).pvalue > 0.01


class TestReflect:
    def test_normal_incidence(self):
        assert np.allclose(reflect((0, 0, -1), (0, 0, 1)), (0, 0, 1))

    def test_mirror(self):
        d = np.array([1.0, 0.0, -1.0]) / math.sqrt(2)
        assert np.allclose(reflect(d, (0, 0, 1)), np.array([1.0, 0.0, 1.0]) / math.sqrt(2))

    def test_isometry_random(self):
        rng = np.random.default_rng(5)
        for _ in range(10_000):
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            n = rng.normal(size=3)
            n /= np.linalg.norm(n)
            r = reflect(d, n)
            if r is None:
                continue
            assert np.linalg.norm(r) == pytest.approx(1.0, abs=1e-12)

    def test_grazing_flagged(self):
        assert reflect((1, 0, 0), (0, 0, 1)) is None


class TestIndex:
    def test_depth_zero_single_region(self):
        scene = assemble_scene([], [box_building(0, 0, 10, 10, 5)], 100.0)
        cs = compile_scene(scene)
        idx = build_index(cs, depth=0)
        assert idx.n_side == 1
        assert list(idx.cell_items) == [0]

    def test_building_spanning_cells_registered_in_both(self):
        scene = assemble_scene(
            [], [box_building(-20, -1, 20, 1, 5), box_building(30, 30, 31, 31, 5)], 100.0
        )
        cs = compile_scene(scene)
        idx = build_index(cs, depth=2)
        counts = np.bincount(idx.cell_items, minlength=2)
        assert counts[0] >= 2  # the long building spans several leaves
        assert counts[1] >= 1

    def test_free_space_scene_empty_index(self):
        cs, idx = free_space()
        assert cs.n_buildings == 0
        assert idx.cell_items.size == 0


class TestFirstHitOracle:
    def test_indexed_equals_bruteforce_random(self):
        rng = np.random.default_rng(6)
        scene = build_city(
            model="stit", lam=math.pi / 200, rho=0.0, theta=0.0, window_radius=250.0,
            street_w=10.0, facade_b=10.0, eta_dil=0.8, height_mean=15.0, delta_h=5.0, seed=21,
        )
        cs = compile_scene(scene)
        idx = build_index(cs)
        for _ in range(300):
            o = (rng.uniform(-200, 200), rng.uniform(-200, 200), rng.uniform(1.0, 40.0))
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            got = first_hit(cs, idx, o, d)
            ref = brute_force_first_hit(cs, o, d)
            if ref is None:
                assert got is None
                continue
            assert got is not None
            assert got[1] == ref[1]
            assert np.allclose(got[2], ref[2], atol=1e-9)


class TestFreeSpaceTrace:
    def test_single_hit_at_expected_radius(self):
        cs, idx = free_space()
        lim = TraceLimits(r_domain=1e9)
        for thz in (0.1, 0.25, 0.5, 1.0):
            d = (math.cos(thz), 0.0, -math.sin(thz))
            hits = trace_ray(cs, idx, (0, 0, 20.0), d, limits=lim)
            assert len(hits) == 1
            assert hits[0].n_bounce == 0
            assert math.hypot(hits[0].x, hits[0].y) == pytest.approx(ground_hit_radius(20.0, thz), rel=1e-12)

    def test_upward_ray_no_hits(self):
        cs, idx = free_space()
        assert trace_ray(cs, idx, (0, 0, 20.0), (0.6, 0.0, 0.8)) == []

    def test_round_trip_injectivity(self):
        cs, idx = free_space()
        rng = np.random.default_rng(7)
        dirs, _ = sample_direction_uniform(CROWN, rng, 10_000)
        lim = TraceLimits(r_domain=1e9)
        for d in dirs[:200]:
            hits = trace_ray(cs, idx, (0, 0, 20.0), d, limits=lim)
            assert len(hits) == 1
            dist = math.hypot(hits[0].x, hits[0].y)
            thz = math.atan2(20.0, dist)
            thxy = math.atan2(hits[0].y, hits[0].x)
            assert thz == pytest.approx(math.asin(-d[2]), abs=1e-9)
            assert thxy == pytest.approx(math.atan2(d[1], d[0]), abs=1e-9)


def canyon_oracle(x0, h, a, dx, dz, n_max=40):
    """Bounce sequence in an infinite street canyon with walls x=0 and x=a.

    Unfold reflections: the ray is a straight line in unfolded x; actual x is
    the triangular fold of x0 + dx*t into [0, a]. Returns ground-hit xs and
    the wall-bounce counts before each.
    """
    hits = []
    t_ground = h / -dz if dz < 0 else math.inf
    x_unf = x0 + dx * t_ground
    k = math.floor(x_unf / a)
    fold = x_unf - k * a
    x_real = fold if k % 2 == 0 else a - fold
    n_wall = abs(k)
    return x_real, n_wall


class TestCanyon:
    def test_bounce_sequence_matches_unfolding(self):
        # two parallel tall facades: buildings on either side of street [0, a]
        a = 12.0
        left = box_building(-10, -500, 0, 500, 400.0)
        right = box_building(a, -500, a + 10, 500, 400.0)
        scene = assemble_scene([], [left, right], 2000.0)
        cs = compile_scene(scene)
        idx = build_index(cs)
        lim = TraceLimits(gamma=0.5, power_floor=1e-9, max_bounces=100, r_domain=1e8)
        rng = np.random.default_rng(8)
        for _ in range(50):
            x0 = rng.uniform(1.0, a - 1.0)
            h = rng.uniform(5.0, 60.0)
            thz = rng.uniform(0.05, 0.6)
            sgn = 1.0 if rng.random() < 0.5 else -1.0
            d = np.array([sgn * math.cos(thz), 0.0, -math.sin(thz)])
            hits = trace_ray(cs, idx, (x0, 0.0, h), d, limits=lim)
            assert hits, "ray must reach the ground"
            x_exp, n_wall = canyon_oracle(x0, h, a, d[0], d[2])
            assert hits[0].x == pytest.approx(x_exp, abs=1e-6)
            assert hits[0].n_bounce == n_wall

    def test_energy_bookkeeping_weights(self):
        # the record carries (n, omega) so accumulation can weight by
        # gamma^n * omega; a steep ray lands direct (n=0), shallow rays land
        # after their wall bounces; dz only ever flips upward at the ground,
        # so each ray has at most one ground crossing in this geometry
        a = 12.0
        left = box_building(-10, -500, 0, 500, 400.0)
        right = box_building(a, -500, a + 10, 500, 400.0)
        cs = compile_scene(assemble_scene([], [left, right], 2000.0))
        idx = build_index(cs)
        lim = TraceLimits(gamma=0.5, power_floor=1e-8, max_bounces=64, r_domain=1e8)
        steep = trace_ray(cs, idx, (3.0, 0.0, 50.0), (0.0, 0.0, -1.0), 2.5, limits=lim)
        assert len(steep) == 1 and steep[0].n_bounce == 0 and steep[0].omega == 2.5
        d = np.array([math.cos(0.3), 0.0, -math.sin(0.3)])
        shallow = trace_ray(cs, idx, (3.0, 0.0, 50.0), d, 2.5, limits=lim)
        assert len(shallow) == 1
        assert shallow[0].n_bounce == canyon_oracle(3.0, 50.0, a, d[0], d[2])[1]
        assert shallow[0].omega == 2.5
        # power floor: with gamma=0.5 and floor 2^-5, rays needing more than
        # 5 wall bounces never reach the ground
        lim_tight = TraceLimits(gamma=0.5, power_floor=2.0**-5 * 1.001, max_bounces=64, r_domain=1e8)
        assert trace_ray(cs, idx, (3.0, 0.0, 50.0), d, limits=lim_tight) == []


class TestBatchTracer:
    def test_batch_matches_reference(self):
        scene = build_city(
            model="plt", lam=math.pi / 200, rho=0.0, theta=0.0, window_radius=250.0,
            street_w=10.0, facade_b=10.0, eta_dil=0.8, height_mean=15.0, delta_h=5.0, seed=31,
        )
        cs = compile_scene(scene)
        idx = build_index(cs)
        src = source_for_crown(float(scene.antenna[2]), 50.0, 1000.0)
        src = SourceSpec(position=scene.antenna, theta_z0=src.theta_z0, dtheta_z=src.dtheta_z)
        lim = TraceLimits(gamma=0.5, r_domain=250.0)
        n = 500
        chunks = list(trace_batch(cs, idx, src, n, seed=99, sampler="importance",
                                  limits=lim, chunk_rays=200))
        # re-draw the same substreams and trace each ray via the reference path
        got = {k: np.concatenate([c[k] for c in chunks]) for k in ("x", "y", "n", "w")}
        ref_x, ref_y, ref_n, ref_w = [], [], [], []
        for ci in range((n + 199) // 200):
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([99, ci])))
            n_here = min(200, n - ci * 200)
            dirs, omegas = sample_direction_importance(src, rng, n_here)
            for d, om in zip(dirs, omegas):
                for hit in trace_ray(cs, idx, src.position, d, float(om), limits=lim):
                    ref_x.append(hit.x)
                    ref_y.append(hit.y)
                    ref_n.append(hit.n_bounce)
                    ref_w.append(hit.omega)
        assert len(got["x"]) == len(ref_x)
        assert np.array_equal(got["n"], ref_n)
        assert np.allclose(got["x"], ref_x, atol=1e-12)
        assert np.allclose(got["y"], ref_y, atol=1e-12)
        assert np.allclose(got["w"], ref_w, atol=1e-15)

    def test_worker_count_invariance(self):
        scene = build_city(
            model="stit", lam=math.pi / 200, rho=0.0, theta=0.0, window_radius=200.0,
            street_w=10.0, facade_b=10.0, eta_dil=0.8, height_mean=15.0, delta_h=5.0, seed=41,
        )
        cs = compile_scene(scene)
        idx = build_index(cs)
        src = SourceSpec(position=scene.antenna)
        lim = TraceLimits(r_domain=200.0)

        def collect(workers):
            chunks = list(trace_batch(cs, idx, src, 20_000, seed=7, limits=lim,
                                      chunk_rays=4096, workers=workers))
            return {k: np.concatenate([c[k] for c in chunks]) for k in ("x", "y", "dz", "n", "w")}

        a = collect(1)
        b = collect(2)
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_determinism_same_seed(self):
        cs, idx = free_space()
        src = CROWN
        lim = TraceLimits(r_domain=1e7)
        a = list(trace_batch(cs, idx, src, 5000, seed=3, limits=lim))
        b = list(trace_batch(cs, idx, src, 5000, seed=3, limits=lim))
        assert all(np.array_equal(x["x"], y["x"]) for x, y in zip(a, b))
