"""Attenuation maps on the polar pixel grid.

Ground hits accumulate as weighted vector sums per pixel (weight
gamma^n_bounce * omega, direction divided by its vertical component); the
pixel power is the norm of that sum scaled by the source power over
N * pixel area. Pixels wholly covered by blocks are forced to zero by the
street mask. The free-space relative-variation predictors for both samplers
live here too.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .citygen import CityScene
from .raytrace import SourceSpec, portion_measure


@dataclass(frozen=True)
class PolarGrid:
    """Crowns of radial length dd and sectors of equal aperture.

    Crown j spans radii [(j - 1/2) dd, (j + 1/2) dd) (clamped at 0), with
    evaluation points at (j*dd, k*dalpha). The aperture snaps to 2*pi/K so
    the sectors tile the circle exactly.
    """

    r: float = 1000.0
    dd: float = 10.0
    dalpha: float = math.radians(2.0)

    @property
    def n_sectors(self) -> int:
        return max(1, round(2.0 * math.pi / self.dalpha))

    @property
    def sector_aperture(self) -> float:
        return 2.0 * math.pi / self.n_sectors

    @property
    def n_crowns(self) -> int:
        return int(round(self.r / self.dd))

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_crowns + 1, self.n_sectors

    def crown_bounds(self, j) -> tuple:
        j = np.asarray(j, dtype=float)
        return np.maximum(j - 0.5, 0.0) * self.dd, (j + 0.5) * self.dd

    def pixel_area(self, j) -> np.ndarray:
        r_in, r_out = self.crown_bounds(j)
        return (r_out**2 - r_in**2) * self.sector_aperture / 2.0

    def radii(self) -> np.ndarray:
        return np.arange(self.n_crowns + 1) * self.dd

    def pixel_of(self, x, y):
        """(j, k) indices for hit coordinates; j may exceed n_crowns."""
        d = np.hypot(x, y)
        j = np.floor(d / self.dd + 0.5).astype(np.int64)
        k = np.floor((np.arctan2(y, x) % (2.0 * math.pi)) / self.sector_aperture).astype(np.int64)
        k = np.minimum(k, self.n_sectors - 1)
        return j, k


@dataclass
class AttenuationMap:
    grid: PolarGrid
    power: np.ndarray  # W / m^2, shape (n_crowns+1, n_sectors)
    mask: np.ndarray  # True = forced to zero (no street overlap)
    street_fraction: float = 1.0
    meta: dict = field(default_factory=dict)

    def masked_power(self) -> np.ndarray:
        out = self.power.copy()
        out[self.mask] = 0.0
        return out


COS_FLOOR = 1e-3


def accumulate(
    grid: PolarGrid,
    hit_chunks,
    n_rays: int,
    gamma: float,
    power_w: float = 1.0,
    mask: np.ndarray | None = None,
    cos_floor: float = COS_FLOOR,
) -> AttenuationMap:
    """Vector-sum estimator over a stream of ground-hit chunks.

    Each hit adds gamma^n * omega * d / max(|dz|, cos_floor) to its pixel;
    the pixel estimate is power_w * ||sum|| / (n_rays * area). Hits beyond
    the outermost crown are ignored; masked pixels are skipped when a mask
    is supplied (equivalently zeroed afterwards).
    """
    if n_rays <= 0:
        raise ValueError("ray count must be positive")
    shape = grid.shape
    sums = np.zeros((3,) + shape)
    n_cells = shape[0] * shape[1]
    for chunk in hit_chunks:
        if not len(chunk.get("x", ())):
            continue
        j, k = grid.pixel_of(chunk["x"], chunk["y"])
        keep = j < shape[0]
        if mask is not None:
            inside = keep.copy()
            keep[inside] &= ~mask[j[inside], k[inside]]
        j, k = j[keep], k[keep]
        wt = gamma ** chunk["n"][keep].astype(np.float64) * chunk["w"][keep]
        dz = np.abs(chunk["dz"][keep])
        scale = wt / np.maximum(dz, cos_floor)
        flat = j * shape[1] + k
        sums[0] += np.bincount(flat, weights=scale * chunk["dx"][keep], minlength=n_cells).reshape(shape)
        sums[1] += np.bincount(flat, weights=scale * chunk["dy"][keep], minlength=n_cells).reshape(shape)
        sums[2] += np.bincount(flat, weights=scale * chunk["dz"][keep], minlength=n_cells).reshape(shape)
    norm = np.sqrt(sums[0] ** 2 + sums[1] ** 2 + sums[2] ** 2)
    areas = grid.pixel_area(np.arange(shape[0]))[:, None]
    power = power_w * norm / (n_rays * areas)
    out_mask = np.zeros(shape, dtype=bool) if mask is None else mask.copy()
    power[out_mask] = 0.0
    return AttenuationMap(grid=grid, power=power, mask=out_mask)


def street_mask(grid: PolarGrid, scene: CityScene, samples: int = 16) -> np.ndarray:
    """True where a pixel has no street overlap (entirely covered by blocks).

    Coverage is decided on a quasi-uniform sample lattice per pixel (4x4 by
    default, area-uniform in radius).
    """
    shape = grid.shape
    side = int(round(math.sqrt(samples)))
    fr = (np.arange(side) + 0.5) / side
    j = np.arange(shape[0])
    r_in, r_out = grid.crown_bounds(j)
    # area-uniform radial interpolation within each crown
    r2 = r_in[:, None] ** 2 + fr[None, :] * (r_out[:, None] ** 2 - r_in[:, None] ** 2)
    rs = np.sqrt(r2)  # (J+1, side)
    k = np.arange(shape[1])
    angles = (k[:, None] + fr[None, :]) * grid.sector_aperture  # (K, side)
    xs = rs[:, None, :, None] * np.cos(angles)[None, :, None, :]
    ys = rs[:, None, :, None] * np.sin(angles)[None, :, None, :]
    pts_x = xs.reshape(-1)
    pts_y = ys.reshape(-1)
    covered = np.zeros(pts_x.shape, dtype=bool)
    for blk in scene.blocks:
        vs = np.asarray(blk.polygon.vertices())
        lo = vs.min(axis=0) - 1e-9
        hi = vs.max(axis=0) + 1e-9
        cand = np.nonzero(
            (pts_x >= lo[0]) & (pts_x <= hi[0]) & (pts_y >= lo[1]) & (pts_y <= hi[1]) & ~covered
        )[0]
        if not len(cand):
            continue
        inside = np.ones(len(cand), dtype=bool)
        x = pts_x[cand]
        y = pts_y[cand]
        for e in blk.polygon.edges:
            ux, uy = e.support.direction
            ox, oy = e.support.origin
            inside &= (ux * (y - oy) - uy * (x - ox)) >= -1e-9
            if not inside.any():
                break
        covered[cand[inside]] = True
    per_pixel = covered.reshape(shape[0], shape[1], side * side)
    return per_pixel.all(axis=2)


def predicted_sigma_uniform(phi: float, n_rays: int) -> float:
    """Relative variation of the flux estimator under uniform sampling."""
    if not 0.0 < phi < 1.0 or n_rays <= 0:
        raise ValueError("need 0 < phi < 1 and positive ray count")
    return math.sqrt((1.0 - phi) / (n_rays * phi))


def predicted_sigma_importance(pixel_area: float, n_rays: int, crown_area: float) -> float:
    """Position-independent relative variation under the importance law."""
    if pixel_area <= 0.0 or n_rays <= 0 or crown_area <= 0.0:
        raise ValueError("areas and ray count must be positive")
    return math.sqrt(crown_area / (n_rays * pixel_area))


def emission_footprint_area(src: SourceSpec, height: float) -> float:
    """Ground area reached directly by the source (the crown between the
    ray ranges of the two elevation extremes)."""
    lo, hi = src.theta_z_range
    r_out = height / math.tan(lo)
    r_in = height / math.tan(hi)
    return math.pi * (r_out**2 - r_in**2)


def freespace_flux(src: SourceSpec, height: float, distance: float, area: float) -> float:
    """Analytic portion-measure flux through a small ground region.

    First-order approximation: flux density at ground distance d times the
    region area, valid while the region is small against the crown.
    """
    theta = math.atan2(height, distance)
    lo, hi = src.theta_z_range
    if not lo <= theta <= hi:
        return 0.0
    jac = height**2 * math.cos(theta) / math.sin(theta) ** 3
    c_norm = 4.0 * src.dtheta_xy * math.sin(src.dtheta_z) * math.cos(src.theta_z0)
    return math.cos(theta) / jac * area / c_norm


def freespace_power_density(src: SourceSpec, height: float, distance: float) -> float:
    """Poynting magnitude at ground distance d for the obstacle-free scene."""
    rho2 = distance**2 + height**2
    return src.power_w / (4.0 * math.pi * portion_measure(src) * rho2)


def map_to_rows(amap: AttenuationMap):
    """Rows (j, k, d_center, alpha_center, power, masked) for CSV export."""
    shape = amap.grid.shape
    for j in range(shape[0]):
        for k in range(shape[1]):
            yield (
                j,
                k,
                j * amap.grid.dd,
                (k + 0.5) * amap.grid.sector_aperture,
                amap.power[j, k],
                int(amap.mask[j, k]),
            )
