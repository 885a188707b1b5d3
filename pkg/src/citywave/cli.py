"""Batch orchestration: config files, generation / tracing / fitting
subcommands, deterministic seeding, file I/O.

Config files are flat key=value text with one key per model parameter;
defaults reproduce the reference parameter set (1 km measurement radius plus
500 m guard ring, 400 m mean block perimeter, 10 m streets and facades, 15 m
mean heights, 40 W source, -3 dB reflections, 10 m by 2 degree pixels).

Exit codes: 0 ok, 1 config error, 2 I/O error, 3 validation failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import glob
import json
import math
import os
import sys
from dataclasses import dataclass, fields

import numpy as np

from .analysis import ensemble_average, fit_power_law, street_area_fraction
from .citygen import build_city, scene_from_geojson, scene_to_geojson
from .geom import regular_window
from .powermap import AttenuationMap, PolarGrid, accumulate, map_to_rows, street_mask
from .raytrace import (
    SourceSpec,
    TraceLimits,
    build_index,
    compile_scene,
    trace_batch,
)
from .tessellation import AnisotropyLaw, calibrate_intensity, xi


class ConfigError(Exception):
    pass


# default vertical aperture: ground crown 50 m .. 1 km at a 20 m antenna
_TH_LO = math.atan(20.0 / 1000.0)
_TH_HI = math.atan(20.0 / 50.0)


@dataclass
class Config:
    model: str = "plt"
    rho: float = 0.0
    theta_rad: float = 0.0
    r_window_m: float = 1000.0
    delta_r_m: float = 500.0
    u2_m: float = 400.0
    street_w_m: float = 10.0
    facade_b_m: float = 10.0
    height_h_m: float = 15.0
    eta_dil: float = 0.8
    delta_h_m: float = 5.0
    p0_w: float = 40.0
    freq_hz: float = 2.0e9
    wavelength_m: float = 0.15
    theta_xy0_rad: float = math.pi / 2.0
    dtheta_xy_rad: float = math.pi
    theta_z0_rad: float = 0.5 * (_TH_HI + _TH_LO)
    dtheta_z_rad: float = 0.5 * (_TH_HI - _TH_LO)
    n_rays: int = 10_000_000
    max_bounces: int = 64
    power_floor: float = 1e-6
    gamma_db: float = 10.0 * math.log10(0.5)
    pixel_dd_m: float = 10.0
    pixel_dalpha_deg: float = 2.0
    quadtree_depth: int = -1  # -1 = auto
    sampler: str = "importance"
    seed: int = 1
    n_cities: int = 50

    def validate(self) -> None:
        if self.model not in ("plt", "stit"):
            raise ConfigError(f"model must be plt or stit, not {self.model!r}")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho must lie in [0, 1]")
        if self.sampler not in ("uniform", "importance"):
            raise ConfigError(f"unknown sampler {self.sampler!r}")
        for name in ("r_window_m", "delta_r_m", "u2_m", "street_w_m", "facade_b_m",
                     "height_h_m", "delta_h_m", "p0_w", "pixel_dd_m",
                     "pixel_dalpha_deg", "power_floor"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 < self.eta_dil < 1.0:
            raise ConfigError("eta_dil must lie in (0, 1)")
        if self.gamma_db >= 0.0:
            raise ConfigError("gamma_db must be negative (a loss)")
        if self.n_rays <= 0 or self.n_cities <= 0:
            raise ConfigError("n_rays and n_cities must be positive")
        if self.sampler == "importance" and self.theta_z0_rad - self.dtheta_z_rad <= 0.0:
            raise ConfigError("importance sampling needs theta_z0 - dtheta_z > 0")

    @property
    def gamma(self) -> float:
        return 10.0 ** (self.gamma_db / 10.0)

    @property
    def lam(self) -> float:
        return calibrate_intensity(self.u2_m, xi(AnisotropyLaw(self.rho, self.theta_rad)))

    @property
    def generation_radius(self) -> float:
        return self.r_window_m + self.delta_r_m

    def grid(self) -> PolarGrid:
        return PolarGrid(r=self.r_window_m, dd=self.pixel_dd_m,
                         dalpha=math.radians(self.pixel_dalpha_deg))

    def source(self, position) -> SourceSpec:
        return SourceSpec(
            position=tuple(position),
            theta_xy0=self.theta_xy0_rad,
            dtheta_xy=self.dtheta_xy_rad,
            theta_z0=self.theta_z0_rad,
            dtheta_z=self.dtheta_z_rad,
            power_w=self.p0_w,
            gamma=self.gamma,
        )

    def limits(self) -> TraceLimits:
        return TraceLimits(gamma=self.gamma, power_floor=self.power_floor,
                           max_bounces=self.max_bounces, r_domain=self.generation_radius)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)!r}".replace("'", ""))
        return "\n".join(lines) + "\n"

    @staticmethod
    def from_text(text: str) -> "Config":
        values: dict = {}
        for ln, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {ln}: expected key = value")
            key, val = (part.strip() for part in line.split("=", 1))
            values[key] = val
        known = {f.name: f for f in fields(Config)}
        kwargs = {}
        for key, val in values.items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            typ = known[key].type
            try:
                if typ == "int":
                    kwargs[key] = -1 if val == "auto" else int(float(val))
                elif typ == "float":
                    kwargs[key] = float(val)
                else:
                    kwargs[key] = val
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {val!r}") from exc
        cfg = Config(**kwargs)
        cfg.validate()
        return cfg

    @staticmethod
    def load(path: str) -> "Config":
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return Config.from_text(text)


def city_scene(cfg: Config, city_index: int):
    """Deterministic city for (config, city index)."""
    seed = int(np.random.SeedSequence([cfg.seed, 100 + city_index]).generate_state(1)[0])
    return build_city(
        model=cfg.model,
        lam=cfg.lam,
        rho=cfg.rho,
        theta=cfg.theta_rad,
        window_radius=cfg.generation_radius,
        street_w=cfg.street_w_m,
        facade_b=cfg.facade_b_m,
        eta_dil=cfg.eta_dil,
        height_mean=cfg.height_h_m,
        delta_h=cfg.delta_h_m,
        seed=seed,
    )


def scene_path(outdir: str, i: int) -> str:
    return os.path.join(outdir, f"scene_{i:04d}.geojson")


def map_path(outdir: str, i: int) -> str:
    return os.path.join(outdir, f"map_{i:04d}.csv")


def run_generate(cfg: Config, outdir: str, workers: int = 1) -> list[str]:
    os.makedirs(outdir, exist_ok=True)
    paths = []

    def one(i: int) -> str:
        scene = city_scene(cfg, i)
        doc = scene_to_geojson(scene)
        doc["metadata"].update(r_window_m=cfg.r_window_m, delta_r_m=cfg.delta_r_m,
                               u2_m=cfg.u2_m, city_index=i, master_seed=cfg.seed)
        path = scene_path(outdir, i)
        with open(path, "w") as fh:
            json.dump(doc, fh)
        return path

    if workers <= 1:
        for i in range(cfg.n_cities):
            paths.append(one(i))
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_generate_worker, [(cfg.to_text(), outdir, i) for i in range(cfg.n_cities)]))
    return paths


def _generate_worker(args) -> str:
    text, outdir, i = args
    cfg = Config.from_text(text)
    scene = city_scene(cfg, i)
    doc = scene_to_geojson(scene)
    doc["metadata"].update(r_window_m=cfg.r_window_m, delta_r_m=cfg.delta_r_m,
                           u2_m=cfg.u2_m, city_index=i, master_seed=cfg.seed)
    path = scene_path(outdir, i)
    with open(path, "w") as fh:
        json.dump(doc, fh)
    return path


def trace_scene(cfg: Config, scene, trace_seed: int, workers: int = 1,
                hit_dump: str | None = None) -> AttenuationMap:
    """Index, trace and accumulate one scene into an attenuation map."""
    cs = compile_scene(scene)
    depth = None if cfg.quadtree_depth < 0 else cfg.quadtree_depth
    index = build_index(cs, depth)
    if scene.antenna is None:
        raise ConfigError("scene has no antenna position")
    src = cfg.source(scene.antenna)
    grid = cfg.grid()
    mask = street_mask(grid, scene)
    chunks = trace_batch(cs, index, src, cfg.n_rays, seed=trace_seed,
                         sampler=cfg.sampler, limits=cfg.limits(), workers=workers)
    if hit_dump is not None:
        if cfg.n_rays >= 10_000_000:
            print(f"warning: dumping hits for {cfg.n_rays} rays writes a very large file",
                  file=sys.stderr)
        chunks = _dumping(chunks, hit_dump)
    amap = accumulate(grid, chunks, cfg.n_rays, cfg.gamma, power_w=cfg.p0_w, mask=mask)
    window = regular_window((0.0, 0.0), cfg.r_window_m)
    amap.street_fraction = street_area_fraction(scene, window)
    amap.meta = {
        "n_rays": cfg.n_rays,
        "gamma": cfg.gamma,
        "p0_w": cfg.p0_w,
        "sampler": cfg.sampler,
        "trace_seed": trace_seed,
        "street_fraction": amap.street_fraction,
        "antenna": list(scene.antenna),
        "source": {
            "theta_xy0_rad": src.theta_xy0, "dtheta_xy_rad": src.dtheta_xy,
            "theta_z0_rad": src.theta_z0, "dtheta_z_rad": src.dtheta_z,
        },
        "grid": {"r_m": grid.r, "dd_m": grid.dd, "dalpha_rad": grid.sector_aperture},
        "freq_hz": cfg.freq_hz,
        "wavelength_m": cfg.wavelength_m,
    }
    return amap


def _dumping(chunks, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "n", "omega"])
        for c in chunks:
            for row in zip(c["x"], c["y"], c["n"], c["w"]):
                writer.writerow(row)
            yield c


def write_map(amap: AttenuationMap, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["j", "k", "d_center_m", "alpha_center_rad", "power_w_per_m2", "masked"])
        writer.writerows(map_to_rows(amap))
    with open(path + ".meta.json", "w") as fh:
        json.dump(amap.meta, fh, indent=1)


def read_map(path: str) -> AttenuationMap:
    try:
        with open(path + ".meta.json") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"missing map metadata for {path}: {exc}") from exc
    g = meta["grid"]
    grid = PolarGrid(r=g["r_m"], dd=g["dd_m"], dalpha=g["dalpha_rad"])
    power = np.zeros(grid.shape)
    mask = np.zeros(grid.shape, dtype=bool)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            j, k = int(row[0]), int(row[1])
            power[j, k] = float(row[4])
            mask[j, k] = bool(int(row[5]))
    return AttenuationMap(grid=grid, power=power, mask=mask,
                          street_fraction=float(meta.get("street_fraction", 1.0)), meta=meta)


def run_trace(cfg: Config, scene_file: str, out_path: str, workers: int = 1,
              hit_dump: str | None = None, figure: bool = False) -> AttenuationMap:
    try:
        with open(scene_file) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read scene {scene_file}: {exc}") from exc
    scene = scene_from_geojson(doc)
    city_index = int(doc.get("metadata", {}).get("city_index", 0))
    trace_seed = int(np.random.SeedSequence([cfg.seed, 500 + city_index]).generate_state(1)[0])
    amap = trace_scene(cfg, scene, trace_seed, workers=workers, hit_dump=hit_dump)
    amap.meta["scene_file"] = os.path.basename(scene_file)
    write_map(amap, out_path)
    if figure:
        save_map_figure(amap, os.path.splitext(out_path)[0] + ".png")
    return amap


def run_fit(cfg: Config, map_files: list[str], out_prefix: str, plot: bool = True,
            fit_range: tuple[float, float] | None = None) -> dict:
    if not map_files:
        raise ConfigError("no attenuation maps supplied")
    maps = [read_map(p) for p in map_files]
    res = ensemble_average(maps)
    lo = fit_range[0] if fit_range else 50.0
    hi = fit_range[1] if fit_range else cfg.r_window_m
    fit = fit_power_law(res.radii, res.power, (lo, hi))
    profile_path = out_prefix + "_profile.csv"
    with open(profile_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d_m", "power_w_per_m2"])
        writer.writerows(zip(res.radii, res.power))
    report = fit.to_dict()
    report.update(n_cities=res.n_cities, model=cfg.model, rho=cfg.rho,
                  note="log-log OLS is unweighted; residual noise grows with distance")
    fit_path = out_prefix + "_fit.json"
    with open(fit_path, "w") as fh:
        json.dump(report, fh, indent=1)
    if plot:
        save_fit_figure(res, fit, out_prefix + "_loglog.svg")
    return report


def save_fit_figure(res, fit, path: str) -> None:
    """Log-log profile with the fitted power law, written as a static file."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6, 4.5))
    ax = fig.subplots()
    keep = res.power > 0
    ax.loglog(res.radii[keep], res.power[keep], ".", ms=3, label="ensemble mean")
    lo, hi = fit.fit_range
    ds = np.geomspace(max(lo, 1.0), hi, 64)
    ax.loglog(ds, fit.amplitude / ds**fit.alpha, "-",
              label=f"A/d^{fit.alpha:.2f}  (R$^2$={fit.r_squared:.4f})")
    ax.set_xlabel("distance d [m]")
    ax.set_ylabel("mean power density [W/m$^2$]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)


def save_map_figure(amap: AttenuationMap, path: str) -> None:
    """Attenuation map on the polar grid (log scale), as a raster file."""
    from matplotlib.figure import Figure

    fig = Figure(figsize=(6, 5))
    ax = fig.subplots(subplot_kw={"projection": "polar"})
    shape = amap.grid.shape
    theta = np.linspace(0, 2 * math.pi, shape[1] + 1)
    r = (np.arange(shape[0] + 1) - 0.5).clip(0) * amap.grid.dd
    vals = amap.masked_power()
    with np.errstate(divide="ignore"):
        logp = np.log10(np.where(vals > 0, vals, np.nan))
    pm = ax.pcolormesh(theta, r, logp, cmap="inferno")
    fig.colorbar(pm, ax=ax, label="log10 power density")
    ax.set_yticklabels([])
    fig.tight_layout()
    fig.savefig(path, dpi=150)


def run_pipeline(cfg: Config, outdir: str, workers: int = 1, plot: bool = True) -> dict:
    os.makedirs(outdir, exist_ok=True)
    reports = []
    for i in range(cfg.n_cities):
        scene = city_scene(cfg, i)
        doc = scene_to_geojson(scene)
        doc["metadata"].update(city_index=i, master_seed=cfg.seed)
        with open(scene_path(outdir, i), "w") as fh:
            json.dump(doc, fh)
        trace_seed = int(np.random.SeedSequence([cfg.seed, 500 + i]).generate_state(1)[0])
        amap = trace_scene(cfg, scene, trace_seed, workers=workers)
        amap.meta["scene_file"] = os.path.basename(scene_path(outdir, i))
        write_map(amap, map_path(outdir, i))
        reports.append(map_path(outdir, i))
    return run_fit(cfg, reports, os.path.join(outdir, "ensemble"), plot=plot)


def run_validate(cfg: Config, quick: bool = True) -> list[str]:
    """Free-space checks: flux variance against both predictors and the
    alpha = 2 fit. Returns a list of failure messages (empty = pass)."""
    from .citygen import assemble_scene
    from .powermap import (
        emission_footprint_area,
        freespace_flux,
        predicted_sigma_importance,
        predicted_sigma_uniform,
    )
    from .raytrace import source_for_crown

    failures = []
    h = 20.0
    src = source_for_crown(h, 50.0, 1000.0, power_w=cfg.p0_w, gamma=cfg.gamma)
    cs = compile_scene(assemble_scene([], [], cfg.generation_radius))
    index = build_index(cs, 0)
    n = 200_000 if quick else 1_000_000
    reps = 10 if quick else 24
    lim = TraceLimits(gamma=cfg.gamma, r_domain=1e9)
    region_d = [60.0, 200.0, 500.0, 940.0]

    def flux_runs(sampler):
        out = np.zeros((reps, len(region_d)))
        for rep in range(reps):
            for c in trace_batch(cs, index, src, n, seed=9000 + rep, sampler=sampler, limits=lim):
                for a, d0 in enumerate(region_d):
                    sel = (np.abs(c["x"] - d0) < 5.0) & (np.abs(c["y"]) < 5.0)
                    out[rep, a] += (c["w"][sel]).sum()
        return out / n

    uni = flux_runs("uniform")
    sig_uni = uni.std(axis=0, ddof=1) / uni.mean(axis=0)
    phi0 = freespace_flux(src, h, region_d[0], 100.0)
    pred0 = predicted_sigma_uniform(phi0, n)
    if not 1 / 2.0 < sig_uni[0] / pred0 < 2.0:
        failures.append(f"uniform inner-crown sigma_r {sig_uni[0]:.4f} vs predicted {pred0:.4f}")

    imp = flux_runs("importance")
    sig_imp = imp.std(axis=0, ddof=1) / imp.mean(axis=0)
    pred = predicted_sigma_importance(100.0, n, emission_footprint_area(src, h))
    if sig_imp.max() / sig_imp.min() > 2.5:
        failures.append(f"importance sigma_r not flat: {sig_imp}")
    if not 1 / 1.6 < sig_imp.mean() / pred < 1.6:
        failures.append(f"importance sigma_r {sig_imp.mean():.4f} vs predicted {pred:.4f}")

    grid = cfg.grid()
    amap = accumulate(
        grid,
        trace_batch(cs, index, src, n, seed=77, sampler="importance", limits=lim),
        n, cfg.gamma, power_w=cfg.p0_w,
    )
    res = ensemble_average([amap], [1.0])
    fit = fit_power_law(res.radii, res.power, (200.0, 1000.0))
    if abs(fit.alpha - 2.0) > 0.1:
        failures.append(f"free-space alpha {fit.alpha:.3f} not within 2.0 +- 0.1")
    return failures


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="citywave",
                                     description="random cities and path-loss estimation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--workers", type=int, default=1)

    p_gen = sub.add_parser("generate", help="write city scene files")
    add_common(p_gen)
    p_gen.add_argument("--out", required=True, help="output directory")

    p_tr = sub.add_parser("trace", help="trace one scene into an attenuation map")
    add_common(p_tr)
    p_tr.add_argument("--scene", required=True)
    p_tr.add_argument("--out", required=True, help="map CSV path")
    p_tr.add_argument("--dump-hits", default=None, help="optional hit-stream CSV")
    p_tr.add_argument("--figure", action="store_true", help="also write a PNG map figure")

    p_fit = sub.add_parser("fit", help="ensemble-average maps and fit the exponent")
    add_common(p_fit)
    p_fit.add_argument("--maps", required=True, nargs="+", help="map CSVs (globs allowed)")
    p_fit.add_argument("--out", required=True, help="output prefix")
    p_fit.add_argument("--no-plot", action="store_true")
    p_fit.add_argument("--fit-min", type=float, default=None)
    p_fit.add_argument("--fit-max", type=float, default=None)

    p_pipe = sub.add_parser("pipeline", help="generate, trace and fit in one run")
    add_common(p_pipe)
    p_pipe.add_argument("--out", required=True)
    p_pipe.add_argument("--no-plot", action="store_true")

    p_val = sub.add_parser("validate", help="run the free-space estimator checks")
    add_common(p_val)
    p_val.add_argument("--full", action="store_true", help="use the slower full-size check")

    args = parser.parse_args(argv)
    try:
        cfg = Config.load(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "generate":
            paths = run_generate(cfg, args.out, workers=args.workers)
            print(f"wrote {len(paths)} scenes to {args.out}")
        elif args.command == "trace":
            amap = run_trace(cfg, args.scene, args.out, workers=args.workers,
                             hit_dump=args.dump_hits, figure=args.figure)
            print(f"wrote {args.out} (street fraction {amap.street_fraction:.3f})")
        elif args.command == "fit":
            files = []
            for pattern in args.maps:
                expanded = sorted(glob.glob(pattern))
                if not expanded and not os.path.exists(pattern):
                    print(f"I/O error: no such map file {pattern}", file=sys.stderr)
                    return 2
                files.extend(expanded if expanded else [pattern])
            rng = (None if args.fit_min is None or args.fit_max is None
                   else (args.fit_min, args.fit_max))
            report = run_fit(cfg, files, args.out, plot=not args.no_plot, fit_range=rng)
            print(json.dumps(report, indent=1))
        elif args.command == "pipeline":
            report = run_pipeline(cfg, args.out, workers=args.workers, plot=not args.no_plot)
            print(json.dumps(report, indent=1))
        elif args.command == "validate":
            failures = run_validate(cfg, quick=not args.full)
            if failures:
                for f in failures:
                    print(f"validation failure: {f}", file=sys.stderr)
                return 3
            print("free-space validation passed")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
