"""Monte-Carlo geometric-optics propagation.

Emission directions come from the antenna's sphere portion, either uniformly
(cosine-of-elevation sphere measure) or from the variance-flattening
importance law with density proportional to cos(thz)/sin^3(thz) in elevation;
importance samples carry the density-ratio weight so every downstream
estimator stays unbiased.

Rays reflect specularly off facades, roofs and the ground, each reflection
keeping a power fraction gamma; every ground crossing is recorded. A flat
2^M x 2^M leaf grid (the quadtree's leaf level) over building bounding boxes
accelerates first-hit queries; a brute-force path over all surfaces is kept
as the independent oracle.
"""

from __future__ import annotations

import concurrent.futures
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .citygen import CityScene


class GeometryLeakError(Exception):
    """A downward ray found no surface: the scene lost its ground."""


@dataclass(frozen=True)
class SourceSpec:
    """Antenna emission model: sphere portion, total power, reflection gain.

    theta_z is the elevation below the horizontal plane (pi/2 points straight
    down); the portion is [theta_xy0 +- dtheta_xy] x [theta_z0 +- dtheta_z].
    """

    position: tuple
    theta_xy0: float = math.pi / 2.0
    dtheta_xy: float = math.pi
    theta_z0: float = 0.2002518555
    dtheta_z: float = 0.1802545216
    power_w: float = 40.0
    gamma: float = 0.5

    def __post_init__(self):
        if self.dtheta_z <= 0.0:
            raise ValueError("vertical half-aperture must be positive")
        lo, hi = self.theta_z_range
        if lo < -math.pi / 2 - 1e-12 or hi > math.pi / 2 + 1e-12:
            raise ValueError("elevation range must stay within [-pi/2, pi/2]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def theta_z_range(self) -> tuple[float, float]:
        return self.theta_z0 - self.dtheta_z, self.theta_z0 + self.dtheta_z


def portion_measure(src: SourceSpec) -> float:
    """Sphere measure of the emission portion (fraction of the full sphere)."""
    return src.dtheta_xy * math.sin(src.dtheta_z) * math.cos(src.theta_z0) / math.pi


def source_for_crown(height: float, r_inner: float, r_outer: float, **kw) -> SourceSpec:
    """Source whose direct rays cover ground distances [r_inner, r_outer]."""
    th_hi = math.atan2(height, r_inner)
    th_lo = math.atan2(height, r_outer)
    return SourceSpec(
        position=(0.0, 0.0, height),
        theta_z0=0.5 * (th_hi + th_lo),
        dtheta_z=0.5 * (th_hi - th_lo),
        **kw,
    )


def _to_directions(theta_xy, theta_z):
    cz = np.cos(theta_z)
    return np.stack([cz * np.cos(theta_xy), cz * np.sin(theta_xy), -np.sin(theta_z)], axis=-1)


def sample_direction_uniform(src: SourceSpec, rng: np.random.Generator, n: int | None = None):
    """Directions uniform on the sphere portion: weight is identically 1.

    The elevation marginal has density ~ cos(theta_z), inverted through its
    sine CDF.
    """
    size = 1 if n is None else n
    theta_xy = src.theta_xy0 + rng.uniform(-src.dtheta_xy, src.dtheta_xy, size)
    lo, hi = np.sin(src.theta_z_range[0]), np.sin(src.theta_z_range[1])
    theta_z = np.arcsin(lo + rng.uniform(0.0, 1.0, size) * (hi - lo))
    dirs = _to_directions(theta_xy, theta_z)
    omegas = np.ones(size)
    if n is None:
        return dirs[0], 1.0
    return dirs, omegas


def importance_weight(src: SourceSpec, theta_z):
    """dS/dT at elevation theta_z: the estimator weight of importance draws."""
    lo, hi = src.theta_z_range
    f_max = 1.0 / math.sin(lo) ** 2 - 1.0 / math.sin(hi) ** 2
    return f_max * np.sin(theta_z) ** 3 / (4.0 * math.sin(src.dtheta_z) * math.cos(src.theta_z0))


def sample_direction_importance(src: SourceSpec, rng: np.random.Generator, n: int | None = None):
    """Importance draws flattening the ground-hit relative error.

    Elevation density ~ cos/sin^3, sampled by inverting
    F(t) = 1/sin^2(lo) - 1/sin^2(t); azimuth uniform. Requires the whole
    range strictly below the horizontal.
    """
    lo, hi = src.theta_z_range
    if lo <= 0.0:
        raise ValueError("importance sampling needs theta_z0 - dtheta_z > 0")
    size = 1 if n is None else n
    theta_xy = src.theta_xy0 + rng.uniform(-src.dtheta_xy, src.dtheta_xy, size)
    inv_lo = 1.0 / math.sin(lo) ** 2
    inv_hi = 1.0 / math.sin(hi) ** 2
    u = rng.uniform(0.0, 1.0, size)
    theta_z = np.arcsin(1.0 / np.sqrt(inv_lo - u * (inv_lo - inv_hi)))
    dirs = _to_directions(theta_xy, theta_z)
    omegas = importance_weight(src, theta_z)
    if n is None:
        return dirs[0], float(omegas[0])
    return dirs, omegas


SAMPLERS = {"uniform": sample_direction_uniform, "importance": sample_direction_importance}


def ground_hit_radius(height: float, theta_z) -> float:
    """Ground distance of the obstacle-free ray at the given elevation."""
    return height / np.tan(theta_z)


def ground_map_jacobian(height: float, theta_z) -> float:
    """|det J| of (azimuth, elevation) -> ground point, free space."""
    return height**2 * np.cos(theta_z) / np.sin(theta_z) ** 3


def reflect(direction, normal):
    """Specular reflection d - 2<d,n>n; None flags grazing incidence."""
    d = np.asarray(direction, dtype=float)
    n = np.asarray(normal, dtype=float)
    dn = float(d @ n)
    if abs(dn) < 1e-12:
        return None
    return d - 2.0 * dn * n


@dataclass
class GroundHit:
    x: float
    y: float
    direction: tuple
    n_bounce: int
    omega: float


@dataclass
class CompiledScene:
    """Flat-array view of a city scene for the tracing kernels."""

    fac_x0: np.ndarray
    fac_y0: np.ndarray
    fac_nx: np.ndarray
    fac_ny: np.ndarray
    fac_ux: np.ndarray
    fac_uy: np.ndarray
    fac_len: np.ndarray
    fac_h: np.ndarray
    bld_fac_start: np.ndarray
    roof_vx: np.ndarray
    roof_vy: np.ndarray
    roof_off: np.ndarray
    roof_h: np.ndarray
    window_radius: float
    max_roof: float

    @property
    def n_facades(self) -> int:
        return len(self.fac_x0)

    @property
    def n_buildings(self) -> int:
        return len(self.roof_h)

    @property
    def n_surfaces(self) -> int:
        return 1 + self.n_facades + self.n_buildings


def compile_scene(scene: CityScene) -> CompiledScene:
    fx0, fy0, fnx, fny, fux, fuy, flen, fh = [], [], [], [], [], [], [], []
    bld_start = [0]
    rvx, rvy, roff, rh = [], [], [0], []
    for b in scene.buildings:
        verts = b.footprint.vertices()
        for e in b.footprint.edges:
            ux, uy = e.support.direction
            fx0.append(e.p0[0])
            fy0.append(e.p0[1])
            fux.append(ux)
            fuy.append(uy)
            fnx.append(-uy)
            fny.append(ux)
            flen.append(e.length())
            fh.append(b.height)
        bld_start.append(len(fx0))
        for v in verts:
            rvx.append(v[0])
            rvy.append(v[1])
        roff.append(len(rvx))
        rh.append(b.height)
    arr = lambda x: np.asarray(x, dtype=np.float64)
    return CompiledScene(
        fac_x0=arr(fx0), fac_y0=arr(fy0), fac_nx=arr(fnx), fac_ny=arr(fny),
        fac_ux=arr(fux), fac_uy=arr(fuy), fac_len=arr(flen), fac_h=arr(fh),
        bld_fac_start=np.asarray(bld_start, dtype=np.int64),
        roof_vx=arr(rvx), roof_vy=arr(rvy),
        roof_off=np.asarray(roff, dtype=np.int64), roof_h=arr(rh),
        window_radius=scene.window_radius,
        max_roof=float(max(rh)) if rh else 0.0,
    )


@dataclass
class QuadTreeIndex:
    """Leaf level of the depth-M quadtree: a 2^M x 2^M grid of squares, each
    listing the buildings whose footprint box meets it."""

    depth: int
    x0: float
    y0: float
    cell_size: float
    n_side: int
    cell_start: np.ndarray
    cell_items: np.ndarray


def build_index(cs: CompiledScene, depth: int | None = None) -> QuadTreeIndex:
    """Spatial index over buildings; depth None picks leaves about twice the
    mean building diameter (clamped to [0, 10])."""
    n_bld = cs.n_buildings
    if n_bld == 0:
        half = max(cs.window_radius, 1.0)
        return QuadTreeIndex(0, -half, -half, 2 * half, 1,
                             np.zeros(2, dtype=np.int64), np.zeros(0, dtype=np.int64))

    mins_x = np.empty(n_bld)
    maxs_x = np.empty(n_bld)
    mins_y = np.empty(n_bld)
    maxs_y = np.empty(n_bld)
    for b in range(n_bld):
        vx = cs.roof_vx[cs.roof_off[b]:cs.roof_off[b + 1]]
        vy = cs.roof_vy[cs.roof_off[b]:cs.roof_off[b + 1]]
        mins_x[b] = vx.min()
        maxs_x[b] = vx.max()
        mins_y[b] = vy.min()
        maxs_y[b] = vy.max()

    x0 = float(mins_x.min()) - 1.0
    y0 = float(mins_y.min()) - 1.0
    x1 = float(maxs_x.max()) + 1.0
    y1 = float(maxs_y.max()) + 1.0
    extent = max(x1 - x0, y1 - y0)
    if depth is None:
        # leaves about one mean building diameter wide trace fastest here
        diam = float(np.mean(np.hypot(maxs_x - mins_x, maxs_y - mins_y)))
        depth = int(round(math.log2(max(extent / max(diam, 1e-6), 1.0))))
        depth = min(max(depth, 0), 10)
    n = 1 << depth
    gs = extent / n

    ix_lo = np.clip(((mins_x - x0) / gs).astype(np.int64), 0, n - 1)
    ix_hi = np.clip(((maxs_x - x0) / gs).astype(np.int64), 0, n - 1)
    iy_lo = np.clip(((mins_y - y0) / gs).astype(np.int64), 0, n - 1)
    iy_hi = np.clip(((maxs_y - y0) / gs).astype(np.int64), 0, n - 1)

    counts = np.zeros(n * n + 1, dtype=np.int64)
    entries_cell = []
    entries_bld = []
    for b in range(n_bld):
        for iy in range(iy_lo[b], iy_hi[b] + 1):
            base = iy * n
            for ix in range(ix_lo[b], ix_hi[b] + 1):
                entries_cell.append(base + ix)
                entries_bld.append(b)
    entries_cell = np.asarray(entries_cell, dtype=np.int64)
    entries_bld = np.asarray(entries_bld, dtype=np.int64)
    order = np.lexsort((entries_bld, entries_cell))
    entries_cell = entries_cell[order]
    entries_bld = entries_bld[order]
    np.add.at(counts, entries_cell + 1, 1)
    cell_start = np.cumsum(counts)
    return QuadTreeIndex(depth, x0, y0, gs, n, cell_start, entries_bld)


@dataclass(frozen=True)
class TraceLimits:
    gamma: float = 0.5
    power_floor: float = 1e-6
    max_bounces: int = 64
    r_domain: float = 1500.0


def _kernel_args(cs: CompiledScene, index: QuadTreeIndex):
    return (
        cs.fac_x0, cs.fac_y0, cs.fac_nx, cs.fac_ny, cs.fac_ux, cs.fac_uy,
        cs.fac_len, cs.fac_h, cs.bld_fac_start, cs.roof_vx, cs.roof_vy,
        cs.roof_off, cs.roof_h, index.cell_start, index.cell_items,
        index.x0, index.y0, index.cell_size, index.n_side,
    )


def first_hit(cs: CompiledScene, index: QuadTreeIndex, origin, direction, t_min: float = 1e-9):
    """Indexed first hit: (t, surface_id, point) or None."""
    stamps = np.full(cs.n_buildings, -1, dtype=np.int64)
    t, sid = _kernels.nearest_hit(
        origin[0], origin[1], origin[2], direction[0], direction[1], direction[2],
        t_min, *_kernel_args(cs, index), stamps, 0,
    )
    if sid < 0:
        if direction[2] < 0.0 and origin[2] > 0.0:
            raise GeometryLeakError("downward ray escaped the scene")
        return None
    p = (origin[0] + t * direction[0], origin[1] + t * direction[1], origin[2] + t * direction[2])
    return t, int(sid), p


def brute_force_first_hit(cs: CompiledScene, origin, direction, t_min: float = 1e-9):
    """Oracle first hit testing every surface with numpy; no index involved."""
    px, py, pz = origin
    dx, dy, dz = direction
    best_t = math.inf
    best_sid = -1
    if dz < 0.0 and pz > 0.0:
        t = -pz / dz
        if t > t_min:
            best_t, best_sid = t, 0

    if cs.n_facades:
        den = dx * cs.fac_nx + dy * cs.fac_ny
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((cs.fac_x0 - px) * cs.fac_nx + (cs.fac_y0 - py) * cs.fac_ny) / den
        z = pz + t * dz
        hx = px + t * dx - cs.fac_x0
        hy = py + t * dy - cs.fac_y0
        s = hx * cs.fac_ux + hy * cs.fac_uy
        ok = (den != 0.0) & (t > t_min) & (z >= 0.0) & (z <= cs.fac_h) & (s >= 0.0) & (s <= cs.fac_len)
        if ok.any():
            ts = np.where(ok, t, np.inf)
            f = int(np.argmin(ts))
            if ts[f] < best_t or (ts[f] == best_t and 1 + f < best_sid):
                best_t, best_sid = float(ts[f]), 1 + f

    if cs.n_buildings and dz != 0.0:
        t = (cs.roof_h - pz) / dz
        for b in range(cs.n_buildings):
            sid = 1 + cs.n_facades + b
            tb = t[b]
            if tb <= t_min or tb > best_t or (tb == best_t and sid > best_sid):
                continue
            x = px + tb * dx
            y = py + tb * dy
            vx = cs.roof_vx[cs.roof_off[b]:cs.roof_off[b + 1]]
            vy = cs.roof_vy[cs.roof_off[b]:cs.roof_off[b + 1]]
            cross = (np.roll(vx, -1) - vx) * (y - vy) - (np.roll(vy, -1) - vy) * (x - vx)
            if (cross >= 0.0).all():
                best_t, best_sid = float(tb), sid

    if best_sid < 0:
        if dz < 0.0 and pz > 0.0:
            raise GeometryLeakError("downward ray escaped the scene")
        return None
    p = (px + best_t * dx, py + best_t * dy, pz + best_t * dz)
    return best_t, best_sid, p


def trace_ray(
    cs: CompiledScene,
    index: QuadTreeIndex | None,
    origin,
    direction,
    omega: float = 1.0,
    limits: TraceLimits = TraceLimits(),
) -> list[GroundHit]:
    """Reference single-ray tracer; records one GroundHit per ground crossing.

    index=None uses the brute-force surface scan; the batch kernel must
    reproduce these hit streams exactly.
    """
    px, py, pz = origin
    d = np.asarray(direction, dtype=float)
    hits: list[GroundHit] = []
    nb = 0
    pw = 1.0
    while True:
        if index is None:
            res = brute_force_first_hit(cs, (px, py, pz), d)
        else:
            res = first_hit(cs, index, (px, py, pz), d)
        if res is None:
            break
        t, sid, (px, py, pz) = res
        if sid == 0:
            hits.append(GroundHit(px, py, tuple(d), nb, omega))
            pz = 0.0
            nd = reflect(d, (0.0, 0.0, 1.0))
        elif sid <= cs.n_facades:
            f = sid - 1
            nd = reflect(d, (cs.fac_nx[f], cs.fac_ny[f], 0.0))
        else:
            pz = float(cs.roof_h[sid - 1 - cs.n_facades])
            nd = reflect(d, (0.0, 0.0, 1.0))
        if nd is None:
            break
        d = nd
        nb += 1
        pw *= limits.gamma
        if pw < limits.power_floor or nb > limits.max_bounces:
            break
        if px * px + py * py > limits.r_domain**2 and (px * d[0] + py * d[1]) > 0.0:
            break
        if pz >= cs.max_roof and d[2] >= 0.0:
            break
    return hits


def trace_batch(
    cs: CompiledScene,
    index: QuadTreeIndex,
    src: SourceSpec,
    n_rays: int,
    seed: int,
    sampler: str = "importance",
    limits: TraceLimits | None = None,
    chunk_rays: int = 65536,
    workers: int = 1,
):
    """Trace n_rays and yield hit chunks, deterministically in chunk order.

    Each chunk draws its directions from an independent substream keyed by
    (seed, chunk id), so results never depend on the worker count. Yields
    dicts of arrays (x, y, dx, dy, dz, n, w).
    """
    if limits is None:
        limits = TraceLimits(gamma=src.gamma, r_domain=cs.window_radius if cs.window_radius else 1e9)
    sample = SAMPLERS[sampler]
    n_chunks = (n_rays + chunk_rays - 1) // chunk_rays
    ox, oy, oz = src.position

    def run_chunk(ci: int):
        n_here = min(chunk_rays, n_rays - ci * chunk_rays)
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, ci])))
        dirs, omegas = sample(src, rng, n_here)
        cap = max(4096, min(n_here * 8, 1 << 20))
        parts = []
        start = 0
        grazes = 0
        while start < n_here:
            out = [np.empty(cap) for _ in range(6)]
            out_n = np.empty(cap, dtype=np.int64)
            nxt, n_hits, g = _kernels.trace_chunk(
                ox, oy, oz, dirs, omegas, start,
                limits.gamma, limits.power_floor, limits.max_bounces,
                limits.r_domain, cs.max_roof,
                *_kernel_args(cs, index),
                out[0], out[1], out[2], out[3], out[4], out_n, out[5],
            )
            parts.append(
                {
                    "x": out[0][:n_hits].copy(), "y": out[1][:n_hits].copy(),
                    "dx": out[2][:n_hits].copy(), "dy": out[3][:n_hits].copy(),
                    "dz": out[4][:n_hits].copy(), "n": out_n[:n_hits].copy(),
                    "w": out[5][:n_hits].copy(),
                }
            )
            grazes += g
            start = nxt
        merged = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]} if parts else {}
        merged["grazing_terminations"] = grazes
        merged["n_rays"] = n_here
        return merged

    if workers <= 1:
        for ci in range(n_chunks):
            yield run_chunk(ci)
    else:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            window = 2 * workers
            futures = {}
            next_submit = 0
            next_yield = 0
            while next_yield < n_chunks:
                while next_submit < n_chunks and len(futures) < window:
                    futures[next_submit] = pool.submit(run_chunk, next_submit)
                    next_submit += 1
                yield futures.pop(next_yield).result()
                next_yield += 1
