"""Random tessellation engine.

Cells are circular lists of edge containers cross-linked through `opposite`
pointers, so that dividing a line through several cells reuses the exact same
intersection point on both sides of every shared edge (no numerically
divergent duplicate vertices). On top of that structure sit the two
generators: Poisson line tessellations (global line divisions) and crack
tessellations (sequential single-cell divisions with exponential lifetimes).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom import (
    TOL,
    ConvexPolygon,
    DirectedLine,
    Edge,
    GeometryError,
    intersect_lines,
    side_of,
)


class StructureError(Exception):
    """Cross-link corruption detected during a division."""


@dataclass(frozen=True)
class AnisotropyLaw:
    """Street-orientation law: mix of an isotropic part and two right-angle
    atoms at theta and theta + pi/2.

    rho = 0 is fully isotropic, rho = 1 is Manhattan-like (axis atoms only).
    """

    rho: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")

    def sample_angle(self, rng: np.random.Generator) -> float:
        if rng.random() < self.rho:
            base = self.theta if rng.random() < 0.5 else self.theta + math.pi / 2.0
            return base % math.pi
        return rng.uniform(0.0, math.pi)


def xi(law: AnisotropyLaw) -> float:
    """Mean |sin| of the angle between two independent law draws."""
    return law.rho**2 * (0.5 - 2.0 / math.pi) + 2.0 / math.pi


def calibrate_intensity(target_u2: float, xi_value: float) -> float:
    """Line intensity giving the requested mean typical-cell perimeter."""
    if target_u2 <= 0.0 or xi_value <= 0.0:
        raise ValueError("target perimeter and xi must be positive")
    return 4.0 / (target_u2 * xi_value)


def line_measure_of(poly: ConvexPolygon, law: AnisotropyLaw) -> float:
    """Measure of lines hitting the polygon under Lebesgue x law.

    The law-averaged width integral: (1-rho) * perimeter / pi for the
    isotropic part plus the two axis atoms' widths.
    """
    iso = (1.0 - law.rho) * poly.perimeter() / math.pi
    if law.rho == 0.0:
        return iso
    atoms = 0.5 * law.rho * (poly.width(law.theta) + poly.width(law.theta + math.pi / 2.0))
    return iso + atoms


def sample_random_line(
    window: ConvexPolygon,
    law: AnisotropyLaw,
    rng: np.random.Generator,
    max_rejections: int = 1_000_000,
) -> DirectedLine:
    """Uniform random line hitting the window, by rejection in its
    circumscribed circle.
    """
    center, radius = window.bounding_circle()
    for _ in range(max_rejections):
        r0 = rng.uniform(-radius, radius)
        alpha = law.sample_angle(rng)
        line = DirectedLine.from_offset_angle(center, r0, alpha)
        if _line_crosses(window, line):
            return line
    raise GeometryError("random line rejection limit reached (degenerate window)")


def _line_crosses(poly: ConvexPolygon, line: DirectedLine, tol: float = TOL) -> bool:
    has_plus = has_minus = False
    for v in poly.vertices():
        s = side_of(line, v, tol)
        if s > 0:
            has_plus = True
        elif s < 0:
            has_minus = True
        if has_plus and has_minus:
            return True
    return False


class EdgeContainer:
    """Edge plus its cross links: the owning cell and the reversed twin."""

    __slots__ = ("edge", "opposite", "left")

    def __init__(self, edge: Edge, left: "Cell | None" = None):
        self.edge = edge
        self.opposite: EdgeContainer | None = None
        self.left = left

    def pair_with(self, other: "EdgeContainer") -> None:
        self.opposite = other
        other.opposite = self


class Cell:
    """Circular list of edge containers, positively oriented."""

    __slots__ = ("containers",)

    def __init__(self, containers: list[EdgeContainer]):
        self.containers = containers
        for ec in containers:
            ec.left = self

    def polygon(self) -> ConvexPolygon:
        return ConvexPolygon([ec.edge for ec in self.containers])

    def area(self) -> float:
        return self.polygon().area()

    def node_points(self) -> list:
        return [ec.edge.p0 for ec in self.containers]


@dataclass
class Tessellation:
    cells: list[Cell]
    window: ConvexPolygon
    n_divisions: int = 0
    degenerate_vertex_hits: int = 0
    meta: dict = field(default_factory=dict)

    @staticmethod
    def from_window(window: ConvexPolygon) -> "Tessellation":
        cell = Cell([EdgeContainer(e) for e in window.edges])
        return Tessellation([cell], window)

    def check_links(self) -> None:
        for cell in self.cells:
            for ec in cell.containers:
                if ec.left is not cell:
                    raise StructureError("left link broken")
                if ec.opposite is not None:
                    if ec.opposite.opposite is not ec:
                        raise StructureError("opposite symmetry broken")
                    if ec.opposite.edge.p0 != ec.edge.p1 or ec.opposite.edge.p1 != ec.edge.p0:
                        raise StructureError("opposite edge endpoints disagree")

    def total_cell_area(self) -> float:
        return sum(c.area() for c in self.cells)

    def to_geojson(self) -> dict:
        feats = []
        for i, cell in enumerate(self.cells):
            feats.append(
                {
                    "type": "Feature",
                    "properties": {"cell_id": i},
                    "geometry": cell.polygon().to_geojson(),
                }
            )
        return {"type": "FeatureCollection", "features": feats}


def _cut_container(ec: EdgeContainer, p) -> tuple[EdgeContainer, EdgeContainer]:
    """Split a container at interior point p; rewires both cells' boundaries.

    The very same point value p lands in all four sub-edges, which is what
    keeps shared vertices bitwise identical across cells.
    """
    cell = ec.left
    e = ec.edge
    first = EdgeContainer(Edge(e.support, e.p0, p), cell)
    second = EdgeContainer(Edge(e.support, p, e.p1), cell)
    i = cell.containers.index(ec)
    cell.containers[i : i + 1] = [first, second]

    opp = ec.opposite
    if opp is not None:
        ncell = opp.left
        rev = opp.edge
        minus_second = EdgeContainer(Edge(rev.support, rev.p0, p), ncell)
        minus_first = EdgeContainer(Edge(rev.support, p, rev.p1), ncell)
        j = ncell.containers.index(opp)
        ncell.containers[j : j + 1] = [minus_second, minus_first]
        first.pair_with(minus_first)
        second.pair_with(minus_second)
    return first, second


def _find_chain_node(cell: Cell, p) -> int | None:
    for i, ec in enumerate(cell.containers):
        if ec.edge.p0 == p:
            return i
    return None


def _locate_crossings(cell: Cell, line: DirectedLine, entry_nodes: list, tol: float):
    """All boundary crossing nodes of the line, as (point, kind, container).

    kind is "entry" for chain nodes propagated from a neighbour cut, "cut"
    for transversal edge intersections, "vertex" for intersections snapped to
    an existing vertex (the degenerate case).
    """
    found: list[tuple[object, str, EdgeContainer | None]] = [(p, "entry", None) for p in entry_nodes]

    def known(q) -> bool:
        return any(abs(q[0] - f[0][0]) <= tol and abs(q[1] - f[0][1]) <= tol for f in found)

    for ec in cell.containers:
        e = ec.edge
        hit = intersect_lines(e.support, line)
        if hit is None:
            continue
        p, t, _ = hit
        lo, hi = e.param_range()
        if t < lo - tol or t > hi + tol:
            continue
        if abs(t - lo) <= tol:
            p, kind, cut = e.p0, "vertex", None  # snap to existing node
        elif abs(t - hi) <= tol:
            p, kind, cut = e.p1, "vertex", None
        else:
            kind, cut = "cut", ec
        if not known(p):
            found.append((p, kind, cut))
    return found


def divide_cell(tess: Tessellation, cell: Cell, line: DirectedLine, entry_nodes: list | None = None, tol: float = TOL):
    """Split one cell by a line, carrying shared intersection points to the
    neighbouring cells through the opposite links.

    Returns (plus_cell, minus_cell, exits) where exits are (point, neighbour)
    pairs for propagation, or None when the line misses the cell.
    """
    entry_nodes = entry_nodes or []
    crossings = _locate_crossings(cell, line, entry_nodes, tol)
    if len(crossings) < 2:
        return None

    if len(crossings) > 2:
        # Numerical duplicates: keep the two extreme ones along the line.
        crossings.sort(key=lambda f: line.param_of(f[0]))
        crossings = [crossings[0], crossings[-1]]

    exits = []
    vertex_hits = 0
    nodes = []
    for p, kind, ec_to_cut in crossings:
        if kind == "cut":
            first, second = _cut_container(ec_to_cut, p)
            if first.opposite is not None:
                exits.append((p, first.opposite.left))
        elif kind == "vertex":
            vertex_hits += 1
            exits.append((p, None))  # neighbour across a vertex: sweep finds it
        nodes.append(p)

    pa, pb = nodes
    if line.param_of(pb) < line.param_of(pa):
        pa, pb = pb, pa

    ia = _find_chain_node(cell, pa)
    ib = _find_chain_node(cell, pb)
    if ia is None or ib is None:
        raise StructureError("crossing node missing from chain after cut")
    n = len(cell.containers)

    def arc(i_from: int, i_to: int) -> list[EdgeContainer]:
        out = []
        k = i_from
        while k != i_to:
            out.append(cell.containers[k])
            k = (k + 1) % n
        return out

    arc_a = arc(ia, ib)  # boundary from pa to pb
    arc_b = arc(ib, ia)  # boundary from pb to pa

    bridge_support = DirectedLine(pa, line.direction)
    ec_plus = EdgeContainer(Edge(bridge_support, pa, pb))
    ec_minus = EdgeContainer(Edge(bridge_support.reversed(), pb, pa))
    ec_plus.pair_with(ec_minus)

    # Interior on the left: the plus side (left of the line) is bounded by the
    # bridge pa->pb followed by the boundary arc pb->..->pa.
    plus_cell = Cell([ec_plus] + arc_b)
    minus_cell = Cell([ec_minus] + arc_a)

    idx = tess.cells.index(cell)
    tess.cells[idx : idx + 1] = [plus_cell, minus_cell]
    tess.n_divisions += 1
    tess.degenerate_vertex_hits += vertex_hits
    return plus_cell, minus_cell, exits


def divide_tessellation(tess: Tessellation, line: DirectedLine, tol: float = TOL) -> int:
    """Divide every cell met by the line; returns the number of cells split.

    Propagation walks across opposite links so adjacent cells reuse identical
    intersection points; a final sweep catches the degenerate vertex-hit
    hand-offs.
    """
    n_split = 0
    pending: list[tuple[Cell, list]] = []
    done: set[int] = set()

    def seed_from_sweep() -> bool:
        for cell in tess.cells:
            if id(cell) in done:
                continue
            if _line_crosses(cell.polygon(), line, tol):
                pending.append((cell, []))
                return True
        return False

    if not seed_from_sweep():
        return 0

    while True:
        while pending:
            cell, entries = pending.pop()
            if id(cell) in done or cell not in tess.cells:
                continue
            result = divide_cell(tess, cell, line, entries, tol)
            done.add(id(cell))
            if result is None:
                continue
            n_split += 1
            for point, neighbour in result[2]:
                if neighbour is not None and id(neighbour) not in done:
                    pending.append((neighbour, [point]))
        if not seed_from_sweep():
            break
    return n_split


def generate_plt(
    lam: float,
    law: AnisotropyLaw,
    window: ConvexPolygon,
    rng: np.random.Generator,
) -> Tessellation:
    """Poisson line tessellation restricted to the window.

    Candidate lines live in the circumscribed circle (their count is
    Poisson(2 * lam * r)); only the ones crossing the window divide it.
    """
    if lam <= 0.0:
        raise ValueError("intensity must be positive")
    tess = Tessellation.from_window(window)
    center, radius = window.bounding_circle()
    n_candidates = rng.poisson(2.0 * lam * radius)
    n_hits = 0
    for _ in range(n_candidates):
        r0 = rng.uniform(-radius, radius)
        alpha = law.sample_angle(rng)
        line = DirectedLine.from_offset_angle(center, r0, alpha)
        if _line_crosses(window, line):
            divide_tessellation(tess, line)
            n_hits += 1
    tess.meta.update(model="plt", lam=lam, rho=law.rho, theta=law.theta,
                     n_candidates=int(n_candidates), n_lines=n_hits)
    return tess


def generate_stit(
    lam: float,
    tau: float,
    law: AnisotropyLaw,
    window: ConvexPolygon,
    rng: np.random.Generator,
) -> Tessellation:
    """Crack tessellation: iterated cell division with exponential lifetimes.

    A live cell of line-hitting measure m waits Exp(lam * m) and, if still
    before tau, is split by a uniform random line of its own; both daughters
    recurse. Daughters are processed depth-first (plus side first) so a run
    is reproducible from its seed.
    """
    if lam <= 0.0 or tau <= 0.0:
        raise ValueError("intensity and horizon must be positive")
    tess = Tessellation.from_window(window)
    stack: list[tuple[Cell, float]] = [(tess.cells[0], 0.0)]
    n_chords = 0
    while stack:
        cell, t = stack.pop()
        poly = cell.polygon()
        rate = lam * line_measure_of(poly, law)
        t_next = t + rng.exponential(1.0 / rate)
        if t_next >= tau:
            continue
        line = sample_random_line(poly, law, rng)
        result = divide_cell(tess, cell, line)
        if result is None:
            continue
        plus_cell, minus_cell, _ = result
        n_chords += 1
        # Depth-first, minus pushed first so plus comes out on top.
        stack.append((minus_cell, t_next))
        stack.append((plus_cell, t_next))
    tess.meta.update(model="stit", lam=lam, tau=tau, rho=law.rho, theta=law.theta,
                     n_chords=n_chords)
    return tess


@dataclass
class TessStats:
    """Morphology of one realization, interior-of-window convention.

    Two families of numbers coexist:
      * raw structural counts over the window (cells, interior edges and
        vertices, clipped edge length) -- these include O(boundary) terms;
      * unbiased intensity estimators for validation against the analytic
        means: vertices strictly inside the window, half the edge-end count
        at interior vertices, and the lowest-vertex cell count (each bounded
        convex cell has exactly one upward-opening corner wedge, so summing
        wedges over interior vertices counts cells without window bias).
    Typical-object means (u1, u2, a2) are the matching intensity ratios.
    """

    window_area: float
    n_cells: int
    n_interior_edges: int
    n_interior_vertices: int
    degree_sum: int
    wedge_sum: int
    edge_length_sum: float

    # raw per-unit-area values (window counts)
    @property
    def la(self) -> float:
        return self.edge_length_sum / self.window_area

    @property
    def n0(self) -> float:
        return self.n_interior_vertices / self.window_area

    @property
    def n1(self) -> float:
        return self.n_interior_edges / self.window_area

    @property
    def n2(self) -> float:
        return self.n_cells / self.window_area

    # unbiased intensity estimators (acceptance validation)
    @property
    def n1_hat(self) -> float:
        return 0.5 * self.degree_sum / self.window_area

    @property
    def n2_hat(self) -> float:
        return self.wedge_sum / self.window_area

    @property
    def u1(self) -> float:
        return self.edge_length_sum / (0.5 * self.degree_sum) if self.degree_sum else math.nan

    @property
    def u2(self) -> float:
        return 2.0 * self.edge_length_sum / self.wedge_sum if self.wedge_sum else math.nan

    @property
    def a2(self) -> float:
        return self.window_area / self.wedge_sum if self.wedge_sum else math.nan


_DIR_TOL = 1e-12


def _points_up(d) -> bool:
    # Lexicographic "up" so Manhattan-aligned horizontal edges break ties.
    return d[1] > _DIR_TOL or (abs(d[1]) <= _DIR_TOL and d[0] > 0.0)


def _upward_wedges(dirs: list) -> int:
    """Corner wedges at a vertex whose both bounding directions point up.

    Each bounded convex cell has exactly one such corner (its lowest vertex),
    so summing over interior vertices counts cells without window bias.
    """
    k = len(dirs)
    if k < 2:
        return 0
    order = sorted(range(k), key=lambda i: math.atan2(dirs[i][1], dirs[i][0]))
    count = 0
    for i in range(k):
        a = dirs[order[i]]
        b = dirs[order[(i + 1) % k]]
        if _points_up(a) and _points_up(b):
            count += 1
    return count


def summarize(tess: Tessellation) -> TessStats:
    """Morphological statistics with the interior-of-window convention."""
    boundary_nodes: set = set()
    node_dirs: dict = {}
    edge_length = 0.0
    n_interior_edges = 0
    seen: set[int] = set()

    for cell in tess.cells:
        for ec in cell.containers:
            if ec.opposite is None:
                boundary_nodes.add(ec.edge.p0)
                boundary_nodes.add(ec.edge.p1)
                continue
            if id(ec) in seen or id(ec.opposite) in seen:
                continue
            seen.add(id(ec))
            e = ec.edge
            edge_length += e.length()
            n_interior_edges += 1
            ux, uy = e.support.direction
            node_dirs.setdefault(e.p0, []).append((ux, uy))
            node_dirs.setdefault(e.p1, []).append((-ux, -uy))

    n_interior = 0
    degree_sum = 0
    wedge_sum = 0
    for node, dirs in node_dirs.items():
        if node in boundary_nodes:
            continue
        n_interior += 1
        degree_sum += len(dirs)
        wedge_sum += _upward_wedges(dirs)

    return TessStats(
        window_area=tess.window.area(),
        n_cells=len(tess.cells),
        n_interior_edges=n_interior_edges,
        n_interior_vertices=n_interior,
        degree_sum=degree_sum,
        wedge_sum=wedge_sum,
        edge_length_sum=edge_length,
    )


STATS_CSV_HEADER = "model,lam,rho,seed,L_A,N0,N1,N2,U1,U2,A2"


def stats_csv_row(stats: TessStats, model: str, lam: float, rho: float, seed: int) -> str:
    vals = [stats.la, stats.n0, stats.n1, stats.n2, stats.u1, stats.u2, stats.a2]
    return ",".join([model, repr(lam), repr(rho), str(seed)] + [repr(v) for v in vals])
