"""City construction on top of a tessellation: street axes, building blocks
by cell erosion, facade-aligned building footprints on block borders, random
heights, antenna placement.

Buildings fill the annulus between a block boundary and its centred shrunk
copy: a 1-D Poisson process on the shrunk boundary is projected outward onto
the block boundary and consecutive point pairs become quadrilateral
footprints, split at corners so every piece keeps its street-facing side on a
single block edge.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import (
    ConvexPolygon,
    Edge,
    GeometryError,
    contains_many,
    dilate_about_centroid,
    erode,
    regular_window,
    simplify_collinear,
)
from .tessellation import AnisotropyLaw, Tessellation, generate_plt, generate_stit


@dataclass
class Axis:
    """Maximal chain of pairwise aligned, endpoint-connected edges."""

    edges: list[Edge]

    def span(self) -> tuple:
        """Endpoints of the geometric union (all member edges are collinear)."""
        support = self.edges[0].support
        params = []
        for e in self.edges:
            params.append(support.param_of(e.p0))
            params.append(support.param_of(e.p1))
        return support.point_at(min(params)), support.point_at(max(params))

    def length(self) -> float:
        a, b = self.span()
        return math.hypot(b[0] - a[0], b[1] - a[1])


_ANGLE_TOL = 1e-9


def extract_axes(tess: Tessellation) -> list[Axis]:
    """Partition interior edges into axes (transitive closure of alignment).

    Two edges are aligned when they share an endpoint and make a zero angle
    (directions equal mod pi within 1e-9 rad).
    """
    edges: list[Edge] = []
    node_incident: dict = {}
    seen: set[int] = set()
    for cell in tess.cells:
        for ec in cell.containers:
            if ec.opposite is None or id(ec) in seen or id(ec.opposite) in seen:
                continue
            seen.add(id(ec))
            idx = len(edges)
            edges.append(ec.edge)
            node_incident.setdefault(ec.edge.p0, []).append(idx)
            node_incident.setdefault(ec.edge.p1, []).append(idx)

    parent = list(range(len(edges)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i: int, j: int) -> None:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri

    for node, incident in node_incident.items():
        for a_pos in range(len(incident)):
            for b_pos in range(a_pos + 1, len(incident)):
                ia, ib = incident[a_pos], incident[b_pos]
                da = edges[ia].direction_angle()
                db = edges[ib].direction_angle()
                diff = abs(da - db)
                diff = min(diff, math.pi - diff)
                if diff <= _ANGLE_TOL:
                    union(ia, ib)

    groups: dict = {}
    for i in range(len(edges)):
        groups.setdefault(find(i), []).append(edges[i])
    return [Axis(members) for members in groups.values()]


@dataclass
class Block:
    polygon: ConvexPolygon
    parent_cell: int


@dataclass
class Building:
    footprint: ConvexPolygon
    height: float = 0.0


@dataclass
class CityScene:
    """Ground plane, building prisms and the antenna position."""

    blocks: list[Block]
    buildings: list[Building]
    window_radius: float
    antenna: tuple | None = None
    antenna_on_ground: bool = False
    meta: dict = field(default_factory=dict)

    def surface_count(self) -> int:
        """Reflective surfaces: ground + one facade per footprint edge + roofs."""
        return 1 + sum(len(b.footprint.edges) for b in self.buildings) + len(self.buildings)


def blocks_from_cells(tess: Tessellation, street_w: float) -> list[Block]:
    """Erode each cell by half the street width; empty erosions vanish."""
    if street_w <= 0.0:
        raise ValueError("street width must be positive")
    blocks = []
    for i, cell in enumerate(tess.cells):
        poly = simplify_collinear(cell.polygon())
        shrunk = erode(poly, street_w / 2.0)
        if shrunk is not None:
            blocks.append(Block(shrunk, i))
    return blocks


def _boundary_walk(poly: ConvexPolygon):
    """Edge lengths and cumulative arc positions of the boundary vertices."""
    lens = np.array([e.length() for e in poly.edges])
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    return lens, cum


def _point_at_arc(poly: ConvexPolygon, lens, cum, s: float):
    """Boundary point at arc length s, plus the edge index it sits on."""
    j = int(np.searchsorted(cum, s, side="right") - 1)
    j = min(j, len(poly.edges) - 1)
    e = poly.edges[j]
    t = (s - cum[j]) / lens[j]
    p0, p1 = e.p0, e.p1
    return (p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])), j


def _is_convex_quad(pts, tol=1e-9) -> bool:
    n = len(pts)
    area2 = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        area2 += x0 * y1 - x1 * y0
    if abs(area2) < 1e-6:
        return False
    sign = 1.0 if area2 > 0 else -1.0
    for i in range(n):
        ax, ay = pts[i]
        bx, by = pts[(i + 1) % n]
        cx, cy = pts[(i + 2) % n]
        cross = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if sign * cross < -tol:
            return False
    return True


def generate_buildings(
    block: Block,
    facade_b: float,
    eta_dil: float,
    rng: np.random.Generator,
) -> list[ConvexPolygon]:
    """Building footprints for one block.

    A Poisson process of intensity 1/(facade_b * eta_dil) on the shrunk
    boundary gives facade endpoints; each is projected onto the block
    boundary, consecutive pairs close into quads, split at corners of the
    shrunk polygon. Blocks with fewer than two points get no buildings.
    """
    if not 0.0 < eta_dil < 1.0:
        raise ValueError("dilation ratio must lie in (0, 1)")
    if facade_b <= 0.0:
        raise ValueError("facade length must be positive")
    outer = block.polygon
    inner = dilate_about_centroid(outer, eta_dil)
    lens, cum = _boundary_walk(inner)
    per = cum[-1]
    m = rng.poisson(per / (facade_b * eta_dil))
    if m < 2:
        return []
    arcs = np.sort(rng.uniform(0.0, per, m))

    # Outward projection is the homothety preimage: it lands exactly on the
    # block boundary, maps inner edge k onto outer edge k and is a monotone
    # bijection of the boundaries, so footprints never overlap. (The nearest-
    # point projection is not monotone across skewed corners.)
    cx, cy = outer.centroid()

    def proj(p):
        return (cx + (p[0] - cx) / eta_dil, cy + (p[1] - cy) / eta_dil)

    def corner(k: int):
        return inner.edges[k].p0, outer.edges[k].p0

    points = []
    for s in arcs:
        p, j = _point_at_arc(inner, lens, cum, float(s))
        points.append((s, p, j, proj(p)))

    n_edges = len(inner.edges)
    footprints: list[ConvexPolygon] = []
    for i in range(m):
        s_a, p_a, j_a, q_a = points[i]
        s_b, p_b, j_b, q_b = points[(i + 1) % m]
        wrap = (i + 1) == m
        # corner indices crossed going forward along the boundary from a to b
        crossed: list[int] = []
        if not wrap:
            crossed = [k for k in range(1, n_edges) if s_a < cum[k] < s_b]
        else:
            crossed = [k for k in range(1, n_edges) if cum[k] > s_a]
            crossed.append(0)  # vertex 0 sits at arc position `per`
            crossed.extend(k for k in range(1, n_edges) if cum[k] < s_b)
        chain = [(p_a, q_a)] + [corner(k) for k in crossed] + [(p_b, q_b)]
        for (pi, qi), (pj, qj) in zip(chain[:-1], chain[1:]):
            quad = [qi, pi, pj, qj]
            if not _is_convex_quad(quad):
                continue
            try:
                footprints.append(ConvexPolygon.from_points(list(quad)))
            except GeometryError:
                continue
    return footprints


def assign_heights(buildings: list[Building], height_mean: float, rng: np.random.Generator) -> None:
    """I.i.d. exponential heights with the given mean."""
    if height_mean <= 0.0:
        raise ValueError("mean height must be positive")
    hs = rng.exponential(height_mean, len(buildings))
    for b, h in zip(buildings, hs):
        b.height = float(h)


def assemble_scene(blocks: list[Block], buildings: list[Building], window_radius: float) -> CityScene:
    return CityScene(blocks=blocks, buildings=buildings, window_radius=window_radius)


def place_antenna(scene: CityScene, delta_h: float) -> tuple:
    """Antenna above the roof whose centroid is nearest the origin.

    Ground-only scenes fall back to (0, 0, delta_h) and set a flag.
    """
    if not scene.buildings:
        scene.antenna = (0.0, 0.0, delta_h)
        scene.antenna_on_ground = True
        return scene.antenna
    best = None
    best_d = math.inf
    for b in scene.buildings:
        cx, cy = b.footprint.centroid()
        d = math.hypot(cx, cy)
        if d < best_d:
            best_d = d
            best = (cx, cy, b.height + delta_h)
    scene.antenna = best
    scene.antenna_on_ground = False
    return best


def build_city(
    *,
    model: str,
    lam: float,
    rho: float,
    theta: float,
    window_radius: float,
    street_w: float,
    facade_b: float,
    eta_dil: float,
    height_mean: float,
    delta_h: float,
    seed: int,
    tau: float = 1.0,
    window_sides: int = 64,
) -> CityScene:
    """Full generation pipeline for one city, reproducible from the seed.

    Blocks consume independent RNG substreams keyed by (seed, block index),
    so per-block work could run in any order or in parallel without changing
    the result.
    """
    law = AnisotropyLaw(rho, theta)
    window = regular_window((0.0, 0.0), window_radius, window_sides)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0])))
    if model == "plt":
        tess = generate_plt(lam, law, window, rng)
    elif model == "stit":
        tess = generate_stit(lam, tau, law, window, rng)
    else:
        raise ValueError(f"unknown model {model!r}")

    blocks = blocks_from_cells(tess, street_w)
    buildings: list[Building] = []
    for bi, block in enumerate(blocks):
        brng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1, bi])))
        foots = generate_buildings(block, facade_b, eta_dil, brng)
        blds = [Building(f) for f in foots]
        assign_heights(blds, height_mean, brng)
        buildings.extend(blds)

    scene = assemble_scene(blocks, buildings, window_radius)
    place_antenna(scene, delta_h)
    scene.meta = {
        "seed": seed,
        "model": model,
        "lambda_per_m": lam,
        "rho": rho,
        "theta_rad": theta,
        "street_w_m": street_w,
        "facade_b_m": facade_b,
        "eta_dil": eta_dil,
        "height_h_m": height_mean,
        "delta_h_m": delta_h,
        "window_radius_m": window_radius,
        "n_cells": len(tess.cells),
        "n_blocks": len(blocks),
        "n_buildings": len(buildings),
    }
    return scene


def scene_to_geojson(scene: CityScene) -> dict:
    feats = []
    for i, blk in enumerate(scene.blocks):
        feats.append(
            {
                "type": "Feature",
                "properties": {"kind": "block", "height_m": 0.0, "block_id": blk.parent_cell},
                "geometry": blk.polygon.to_geojson(),
            }
        )
    for b in scene.buildings:
        feats.append(
            {
                "type": "Feature",
                "properties": {"kind": "building", "height_m": b.height},
                "geometry": b.footprint.to_geojson(),
            }
        )
    meta = dict(scene.meta)
    meta["antenna"] = list(scene.antenna) if scene.antenna else None
    meta["antenna_on_ground"] = scene.antenna_on_ground
    meta["window_radius_m"] = scene.window_radius
    return {"type": "FeatureCollection", "metadata": meta, "features": feats}


def scene_from_geojson(obj: dict) -> CityScene:
    blocks = []
    buildings = []
    for feat in obj["features"]:
        kind = feat["properties"]["kind"]
        poly = ConvexPolygon.from_geojson(feat["geometry"])
        if kind == "block":
            blocks.append(Block(poly, feat["properties"].get("block_id", -1)))
        elif kind == "building":
            buildings.append(Building(poly, float(feat["properties"]["height_m"])))
    meta = obj.get("metadata", {})
    scene = CityScene(
        blocks=blocks,
        buildings=buildings,
        window_radius=float(meta.get("window_radius_m", 0.0)),
        meta={k: v for k, v in meta.items() if k not in ("antenna", "antenna_on_ground")},
    )
    ant = meta.get("antenna")
    scene.antenna = tuple(ant) if ant else None
    scene.antenna_on_ground = bool(meta.get("antenna_on_ground", False))
    return scene


def sample_annulus_fraction(block: Block, inner: ConvexPolygon, footprints, rng, n=10_000):
    """Fraction of sampled footprint points inside the block annulus (test aid)."""
    pts = []
    for f in footprints:
        vs = np.array(f.vertices())
        w = rng.dirichlet(np.ones(len(vs)), size=max(1, n // max(1, len(footprints))))
        pts.append(w @ vs)
    pts = np.concatenate(pts)
    in_outer = contains_many(block.polygon, pts[:, 0], pts[:, 1], closed=True)
    in_inner_strict = contains_many(inner, pts[:, 0], pts[:, 1], tol=1e-7)
    ok = in_outer & ~in_inner_strict
    return float(ok.mean())
