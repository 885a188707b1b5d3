"""Ensemble statistics over morphologically equivalent cities and the
path-loss exponent fit.

The ensemble mean at each crown radius averages all sectors of all maps
(street-zeroed pixels included), weighting each city by its street area
fraction; the profile is then fitted by P(d) = A / d^alpha with ordinary
least squares on (log d, log P).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .citygen import CityScene
from .geom import ConvexPolygon, contains_many, convex_intersection
from .powermap import AttenuationMap


def street_area_fraction(scene: CityScene, window: ConvexPolygon) -> float:
    """1 - (block area inside the window) / (window area)."""
    w_area = window.area()
    covered = 0.0
    for blk in scene.blocks:
        inter = convex_intersection(blk.polygon, window)
        if inter is not None:
            covered += inter.area()
    return 1.0 - covered / w_area


def street_area_fraction_sampled(
    scene: CityScene, window: ConvexPolygon, rng: np.random.Generator, n: int = 100_000
) -> float:
    """Monte-Carlo cross-check of the exact block-clipping computation."""
    _, radius = window.bounding_circle()
    pts = rng.uniform(-radius, radius, size=(int(n * 4 / math.pi) + 1, 2))
    inside_w = contains_many(window, pts[:, 0], pts[:, 1], closed=True)
    pts = pts[inside_w][:n]
    covered = np.zeros(len(pts), dtype=bool)
    for blk in scene.blocks:
        vs = np.asarray(blk.polygon.vertices())
        lo, hi = vs.min(axis=0), vs.max(axis=0)
        cand = np.nonzero(
            (pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0])
            & (pts[:, 1] >= lo[1]) & (pts[:, 1] <= hi[1]) & ~covered
        )[0]
        if len(cand):
            covered[cand] |= contains_many(blk.polygon, pts[cand, 0], pts[cand, 1], closed=True)
    return 1.0 - covered.mean()


@dataclass
class EnsembleResult:
    radii: np.ndarray
    power: np.ndarray  # ensemble-mean power per crown radius
    street_fractions: list[float]
    n_cities: int


def ensemble_average(maps: list[AttenuationMap], fractions: list[float] | None = None) -> EnsembleResult:
    """P(d_j) = sum_k sum_i P_i(d_j, a_k) * eta_i * dalpha / (n_cities * 2pi).

    All maps must share one grid; masked pixels contribute their stored 0.
    """
    if not maps:
        raise ValueError("need at least one map")
    grid = maps[0].grid
    for m in maps[1:]:
        if m.grid != grid:
            raise ValueError("attenuation maps use different grids")
    if fractions is None:
        fractions = [m.street_fraction for m in maps]
    if len(fractions) != len(maps):
        raise ValueError("one street fraction per map required")
    acc = np.zeros(grid.shape[0])
    for m, eta in zip(maps, fractions):
        acc += m.masked_power().sum(axis=1) * eta
    power = acc * grid.sector_aperture / (len(maps) * 2.0 * math.pi)
    return EnsembleResult(
        radii=grid.radii(), power=power, street_fractions=list(fractions), n_cities=len(maps)
    )


@dataclass
class FitResult:
    amplitude: float
    alpha: float
    r_squared: float
    fit_range: tuple[float, float]
    n_points: int = 0

    def to_dict(self) -> dict:
        return {
            "a": self.amplitude,
            "alpha": self.alpha,
            "r_squared": self.r_squared,
            "fit_range_m": list(self.fit_range),
            "n_points": self.n_points,
        }


DEFAULT_FIT_RANGE = (50.0, 1000.0)


def fit_power_law(radii, power, fit_range: tuple[float, float] = DEFAULT_FIT_RANGE) -> FitResult:
    """OLS fit of log P against log d: slope is -alpha, intercept is log A.

    Non-positive powers are excluded; fewer than 3 surviving points is an
    error. The fit is unweighted, so the per-point noise level varies across
    the range (heteroscedastic residuals).
    """
    d = np.asarray(radii, dtype=float)
    p = np.asarray(power, dtype=float)
    lo, hi = fit_range
    keep = (d >= lo) & (d <= hi) & (p > 0.0)
    if keep.sum() < 3:
        raise ValueError("fewer than 3 positive points in the fit range")
    x = np.log(d[keep])
    y = np.log(p[keep])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return FitResult(
        amplitude=float(np.exp(intercept)),
        alpha=float(-slope),
        r_squared=float(r2),
        fit_range=(lo, hi),
        n_points=int(keep.sum()),
    )
