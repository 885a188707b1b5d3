"""Planar geometry kernel: directed lines, convex polygons stored as circular
edge lists, half-plane division, inward/outward offsets, containment and
boundary projection.

Conventions fixed once and asserted everywhere:
  * points are plain (x, y) tuples of floats, units are meters;
  * a directed line L splits the plane into L+ (det(u, p - o) > 0, the left
    side) and L- (right side);
  * polygon boundaries are circular edge lists with the interior on the LEFT
    of every directed edge, i.e. positive signed area for bounded polygons;
  * coincidence tolerance is TOL = 1e-9 m (absolute).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

TOL = 1e-9

Point2 = tuple[float, float]


class GeometryError(Exception):
    pass


def _unit(dx: float, dy: float) -> Point2:
    n = math.hypot(dx, dy)
    if n < 1e-300:
        raise GeometryError("zero-length direction")
    return (dx / n, dy / n)


@dataclass(frozen=True)
class DirectedLine:
    """Oriented line given by an origin point and a unit direction vector."""

    origin: Point2
    direction: Point2

    def __post_init__(self):
        ux, uy = self.direction
        if abs(math.hypot(ux, uy) - 1.0) > 1e-12:
            raise GeometryError("direction must be a unit vector")

    @staticmethod
    def through(p: Point2, q: Point2) -> "DirectedLine":
        return DirectedLine(p, _unit(q[0] - p[0], q[1] - p[1]))

    @staticmethod
    def from_offset_angle(center: Point2, r0: float, alpha: float) -> "DirectedLine":
        """Line at signed distance r0 from `center` with direction angle alpha.

        The offset is measured along the left normal of the direction, so the
        (r0, alpha) chart is the standard cylinder parameterization of lines.
        """
        ux, uy = math.cos(alpha), math.sin(alpha)
        origin = (center[0] - r0 * uy, center[1] + r0 * ux)
        return DirectedLine(origin, (ux, uy))

    def reversed(self) -> "DirectedLine":
        return DirectedLine(self.origin, (-self.direction[0], -self.direction[1]))

    def point_at(self, t: float) -> Point2:
        return (self.origin[0] + t * self.direction[0], self.origin[1] + t * self.direction[1])

    def param_of(self, p: Point2) -> float:
        return (p[0] - self.origin[0]) * self.direction[0] + (p[1] - self.origin[1]) * self.direction[1]

    def signed_offset(self, p: Point2) -> float:
        """Signed perpendicular distance, positive on the left side."""
        return self.direction[0] * (p[1] - self.origin[1]) - self.direction[1] * (p[0] - self.origin[0])


def side_of(line: DirectedLine, p: Point2, tol: float = TOL) -> int:
    """+1 on the left of the line, -1 on the right, 0 within tol of it."""
    d = line.signed_offset(p)
    if d > tol:
        return 1
    if d < -tol:
        return -1
    return 0


def intersect_lines(a: DirectedLine, b: DirectedLine) -> tuple[Point2, float, float] | None:
    """Intersection point plus parameters (t on a, s on b); None if parallel."""
    ax, ay = a.direction
    bx, by = b.direction
    den = ax * by - ay * bx
    if abs(den) < 1e-14:
        return None
    rx = b.origin[0] - a.origin[0]
    ry = b.origin[1] - a.origin[1]
    t = (rx * by - ry * bx) / den
    s = (rx * ay - ry * ax) / den
    return a.point_at(t), t, s


SEGMENT = "segment"
HALF_LINE = "half-line"
LINE = "line"


@dataclass(frozen=True)
class Edge:
    """Piece of a directed support line: segment, half-line or full line.

    p0/p1 are the finite start/end points (None at an infinite extremity);
    both lie on the support and p1 follows p0 along the support direction.
    """

    support: DirectedLine
    p0: Point2 | None
    p1: Point2 | None

    @property
    def kind(self) -> str:
        if self.p0 is not None and self.p1 is not None:
            return SEGMENT
        if self.p0 is None and self.p1 is None:
            return LINE
        return HALF_LINE

    @staticmethod
    def segment(p0: Point2, p1: Point2) -> "Edge":
        return Edge(DirectedLine.through(p0, p1), p0, p1)

    def reversed(self) -> "Edge":
        return Edge(self.support.reversed(), self.p1, self.p0)

    def length(self) -> float:
        if self.kind != SEGMENT:
            return math.inf
        return math.hypot(self.p1[0] - self.p0[0], self.p1[1] - self.p0[1])

    def midpoint(self) -> Point2:
        if self.kind == SEGMENT:
            return ((self.p0[0] + self.p1[0]) / 2.0, (self.p0[1] + self.p1[1]) / 2.0)
        anchor = self.p0 if self.p0 is not None else self.p1
        if anchor is None:
            return self.support.origin
        return anchor

    def param_range(self) -> tuple[float, float]:
        lo = -math.inf if self.p0 is None else self.support.param_of(self.p0)
        hi = math.inf if self.p1 is None else self.support.param_of(self.p1)
        return lo, hi

    def direction_angle(self) -> float:
        ux, uy = self.support.direction
        return math.atan2(uy, ux) % math.pi


@dataclass
class ConvexPolygon:
    """Convex region bounded by a circular list of edges, interior on the left.

    An empty edge list represents the whole plane. Unbounded polygons carry
    half-line/line edges; bounded ones are closed chains of segments with
    positive signed area.
    """

    edges: list[Edge]

    @staticmethod
    def plane() -> "ConvexPolygon":
        return ConvexPolygon([])

    @staticmethod
    def from_points(pts: list[Point2]) -> "ConvexPolygon":
        if len(pts) < 3:
            raise GeometryError("need at least 3 vertices")
        area2 = 0.0
        n = len(pts)
        for i in range(n):
            x0, y0 = pts[i]
            x1, y1 = pts[(i + 1) % n]
            area2 += x0 * y1 - x1 * y0
        if abs(area2) < TOL * TOL:
            raise GeometryError("degenerate polygon")
        if area2 < 0.0:
            pts = pts[::-1]
        edges = [Edge.segment(pts[i], pts[(i + 1) % len(pts)]) for i in range(len(pts))]
        return ConvexPolygon(edges)

    @property
    def is_plane(self) -> bool:
        return not self.edges

    def is_bounded(self) -> bool:
        return bool(self.edges) and all(e.kind == SEGMENT for e in self.edges)

    def vertices(self) -> list[Point2]:
        return [e.p0 for e in self.edges if e.p0 is not None]

    def signed_area(self) -> float:
        if not self.is_bounded():
            return math.inf
        s = 0.0
        for e in self.edges:
            s += e.p0[0] * e.p1[1] - e.p1[0] * e.p0[1]
        return 0.5 * s

    def area(self) -> float:
        return abs(self.signed_area())

    def perimeter(self) -> float:
        return sum(e.length() for e in self.edges)

    def centroid(self) -> Point2:
        if not self.is_bounded():
            raise GeometryError("centroid of unbounded polygon")
        a = 0.0
        cx = 0.0
        cy = 0.0
        for e in self.edges:
            cross = e.p0[0] * e.p1[1] - e.p1[0] * e.p0[1]
            a += cross
            cx += (e.p0[0] + e.p1[0]) * cross
            cy += (e.p0[1] + e.p1[1]) * cross
        a *= 0.5
        if abs(a) < 1e-300:
            vs = self.vertices()
            return (sum(p[0] for p in vs) / len(vs), sum(p[1] for p in vs) / len(vs))
        return (cx / (6.0 * a), cy / (6.0 * a))

    def bounding_circle(self) -> tuple[Point2, float]:
        """Circle enclosing the polygon (vertex-centroid based, near-minimal)."""
        vs = self.vertices()
        if not vs:
            raise GeometryError("bounding circle of unbounded polygon")
        cx = sum(p[0] for p in vs) / len(vs)
        cy = sum(p[1] for p in vs) / len(vs)
        r = max(math.hypot(p[0] - cx, p[1] - cy) for p in vs)
        return (cx, cy), r

    def width(self, alpha: float) -> float:
        """Extent of the polygon projected on the normal of direction alpha.

        Equals the length of the offset interval of lines with direction angle
        alpha that hit the polygon.
        """
        nx, ny = -math.sin(alpha), math.cos(alpha)
        vals = [p[0] * nx + p[1] * ny for p in self.vertices()]
        return max(vals) - min(vals)

    def validate(self, tol: float = TOL) -> None:
        """Assert the boundary invariants (orientation, chaining, convexity)."""
        if self.is_plane:
            return
        n = len(self.edges)
        for i, e in enumerate(self.edges):
            if e.kind == SEGMENT and e.length() <= tol:
                raise GeometryError(f"degenerate edge {i}")
        if self.is_bounded():
            if self.signed_area() <= 0.0:
                raise GeometryError("boundary must be positively oriented")
            for i in range(n):
                a = self.edges[i].p1
                b = self.edges[(i + 1) % n].p0
                if math.hypot(a[0] - b[0], a[1] - b[1]) > tol:
                    raise GeometryError(f"edges {i} and {(i + 1) % n} do not chain")
        for e in self.edges:
            for v in self.vertices():
                if e.support.signed_offset(v) < -1e-7:
                    raise GeometryError("non-convex boundary")

    def to_geojson(self) -> dict:
        if not self.is_bounded():
            raise GeometryError("only bounded polygons serialize to GeoJSON")
        ring = [[p[0], p[1]] for p in self.vertices()]
        ring.append(ring[0])
        return {"type": "Polygon", "coordinates": [ring]}

    @staticmethod
    def from_geojson(obj: dict) -> "ConvexPolygon":
        if obj.get("type") != "Polygon":
            raise GeometryError("expected GeoJSON Polygon")
        ring = obj["coordinates"][0]
        pts = [(float(x), float(y)) for x, y in ring[:-1]]
        return ConvexPolygon.from_points(pts)


def contains(poly: ConvexPolygon, p: Point2, tol: float = TOL) -> bool:
    """Strict interior test: every edge must see p on its positive side."""
    if poly.is_plane:
        return True
    for e in poly.edges:
        if side_of(e.support, p, tol) != 1:
            return False
    return True


def contains_closed(poly: ConvexPolygon, p: Point2, tol: float = TOL) -> bool:
    if poly.is_plane:
        return True
    return all(side_of(e.support, p, tol) >= 0 for e in poly.edges)


@dataclass
class DivisionResult:
    plus: ConvexPolygon | None
    minus: ConvexPolygon | None
    vertex_hit: bool = False


def _split_edge_at(e: Edge, line: DirectedLine, tol: float) -> tuple[Point2, bool] | None:
    """Transversal intersection of `line` with edge e, if any.

    Returns (point, snapped_to_vertex). Intersections within tol of a finite
    endpoint snap to that endpoint so edge counts stay minimal.
    """
    hit = intersect_lines(e.support, line)
    if hit is None:
        return None
    p, t, _ = hit
    lo, hi = e.param_range()
    if t < lo - tol or t > hi + tol:
        return None
    if e.p0 is not None and abs(t - lo) <= tol:
        return e.p0, True
    if e.p1 is not None and abs(t - hi) <= tol:
        return e.p1, True
    return p, False


def divide_polygon(poly: ConvexPolygon, line: DirectedLine, tol: float = TOL) -> DivisionResult:
    """Split a convex polygon by a directed line into (plus, minus) parts.

    plus = poly ∩ L+ and minus = poly ∩ L-; a missed side comes back None.
    The two bridge edges are mutual reverses, oriented along the line in the
    plus part. Lines passing within tol of a vertex snap to it (reported via
    vertex_hit).
    """
    if poly.is_plane:
        plus = ConvexPolygon([Edge(DirectedLine(line.origin, line.direction), None, None)])
        minus = ConvexPolygon([Edge(line.reversed(), None, None)])
        return DivisionResult(plus, minus)

    if poly.is_bounded():
        return _divide_bounded(poly, line, tol)
    return _divide_unbounded(poly, line, tol)


def _divide_bounded(poly: ConvexPolygon, line: DirectedLine, tol: float) -> DivisionResult:
    verts = poly.vertices()
    sides = [side_of(line, v, tol) for v in verts]
    if all(s >= 0 for s in sides):
        return DivisionResult(poly, None, vertex_hit=any(s == 0 for s in sides))
    if all(s <= 0 for s in sides):
        return DivisionResult(None, poly, vertex_hit=any(s == 0 for s in sides))

    n = len(verts)
    # Build the cut boundary as an ordered node list with crossing marks.
    nodes: list[Point2] = []
    crossing_idx: list[int] = []
    vertex_hit = False
    for i in range(n):
        p_cur, s_cur = verts[i], sides[i]
        p_nxt, s_nxt = verts[(i + 1) % n], sides[(i + 1) % n]
        nodes.append(p_cur)
        if s_cur == 0:
            crossing_idx.append(len(nodes) - 1)
            vertex_hit = True
        elif s_cur * s_nxt < 0:
            res = _split_edge_at(poly.edges[i], line, tol)
            if res is None:
                raise GeometryError("missed expected edge crossing")
            p, snapped = res
            if snapped:
                vertex_hit = True
                if p == p_cur:
                    crossing_idx.append(len(nodes) - 1)
                    continue
                # snapped to the far endpoint: handled on the next iteration
                if p == p_nxt:
                    continue
            nodes.append(p)
            crossing_idx.append(len(nodes) - 1)

    if len(crossing_idx) != 2:
        # Tangency at a single vertex or numerically grazing line: no split.
        pos = sum(1 for s in sides if s > 0)
        neg = sum(1 for s in sides if s < 0)
        if pos >= neg:
            return DivisionResult(poly, None, vertex_hit=True)
        return DivisionResult(None, poly, vertex_hit=True)

    i1, i2 = crossing_idx
    pa, pb = nodes[i1], nodes[i2]
    # Order the bridge along the line direction: p1 -> p2 in plus.
    if line.param_of(pb) < line.param_of(pa):
        i1, i2 = i2, i1
        pa, pb = pb, pa

    m = len(nodes)
    arc_ab = [nodes[(i1 + k) % m] for k in range(0, (i2 - i1) % m + 1)]  # pa..pb
    arc_ba = [nodes[(i2 + k) % m] for k in range(0, (i1 - i2) % m + 1)]  # pb..pa

    def mean_side(arc: list[Point2]) -> float:
        inner = arc[1:-1]
        if not inner:
            mid = ((arc[0][0] + arc[1][0]) / 2.0, (arc[0][1] + arc[1][1]) / 2.0)
            inner = [mid]
        return sum(line.signed_offset(p) for p in inner) / len(inner)

    if mean_side(arc_ba) >= mean_side(arc_ab):
        plus_chain, minus_chain = arc_ba, arc_ab
    else:
        plus_chain, minus_chain = arc_ab, arc_ba

    def build(chain: list[Point2]) -> ConvexPolygon | None:
        # chain runs from one bridge endpoint to the other; close it with the
        # bridge segment (first point follows the last in boundary order).
        pts = chain
        if len(pts) < 3:
            return None
        edges = [Edge.segment(pts[i], pts[i + 1]) for i in range(len(pts) - 1)]
        edges.append(Edge.segment(pts[-1], pts[0]))
        cp = ConvexPolygon(edges)
        if cp.area() <= tol * tol:
            return None
        return cp

    plus = build(plus_chain)
    minus = build(minus_chain)
    if plus is None:
        return DivisionResult(None, poly, vertex_hit=True)
    if minus is None:
        return DivisionResult(poly, None, vertex_hit=True)
    return DivisionResult(plus, minus, vertex_hit=vertex_hit)


def _edge_side(e: Edge, line: DirectedLine, tol: float) -> int:
    """Side of an entire (possibly unbounded) edge that does not cross line."""
    probes = []
    if e.p0 is not None:
        probes.append(e.p0)
    if e.p1 is not None:
        probes.append(e.p1)
    if not probes:
        probes.append(e.support.origin)
    # Push unbounded extremities far out along the support.
    lo, hi = e.param_range()
    big = 1e9
    if lo == -math.inf:
        probes.append(e.support.point_at((hi if hi != math.inf else 0.0) - big))
    if hi == math.inf:
        probes.append(e.support.point_at((lo if lo != -math.inf else 0.0) + big))
    best = 0
    for p in probes:
        s = side_of(line, p, tol)
        if s != 0 and best == 0:
            best = s
        elif s != 0 and s != best:
            raise GeometryError("edge crosses line but was classified as one-sided")
    return best


def _divide_unbounded(poly: ConvexPolygon, line: DirectedLine, tol: float) -> DivisionResult:
    # Locate crossings edge by edge.
    crossings: list[tuple[int, Point2]] = []
    vertex_hit = False
    for i, e in enumerate(poly.edges):
        res = _split_edge_at(e, line, tol)
        if res is None:
            continue
        p, snapped = res
        vertex_hit = vertex_hit or snapped
        if not any(_pts_close(p, q) for _, q in crossings):
            crossings.append((i, p))

    if not crossings:
        sides = [_edge_side(e, line, tol) for e in poly.edges]
        has_plus = any(s > 0 for s in sides)
        has_minus = any(s < 0 for s in sides)
        if has_plus and has_minus:
            raise GeometryError("inconsistent sides without crossing")
        if contains(poly, line.origin, tol) and (has_plus or has_minus):
            # Line runs inside the polygon parallel to its boundary (strip
            # split): the bridge is a full line edge on each side.
            plus_edges = [e for e, s in zip(poly.edges, sides) if s > 0]
            minus_edges = [e for e, s in zip(poly.edges, sides) if s < 0]
            bridge = DirectedLine(line.origin, line.direction)
            plus = ConvexPolygon(plus_edges + [Edge(bridge, None, None)])
            minus = ConvexPolygon(minus_edges + [Edge(bridge.reversed(), None, None)])
            return DivisionResult(plus, minus)
        if has_minus:
            return DivisionResult(None, poly, vertex_hit=vertex_hit)
        return DivisionResult(poly, None, vertex_hit=vertex_hit)

    # Split each crossed edge and partition the pieces by side.
    pieces: list[Edge] = []
    for i, e in enumerate(poly.edges):
        cut = [p for j, p in crossings if j == i]
        if not cut:
            pieces.append(e)
            continue
        segs = []
        prev = e.p0
        for t in sorted(e.support.param_of(p) for p in cut):
            q = _match_crossing(cut, e, t)
            if prev is not None and _pts_close(prev, q):
                prev = q
                continue
            segs.append(Edge(e.support, prev, q))
            prev = q
        if e.p1 is None or not _pts_close(prev, e.p1):
            segs.append(Edge(e.support, prev, e.p1))
        pieces.extend(s for s in segs if s.kind != SEGMENT or s.length() > tol)

    plus_pieces = [e for e in pieces if _edge_side(e, line, tol) > 0]
    minus_pieces = [e for e in pieces if _edge_side(e, line, tol) < 0]

    def assemble(side_pieces: list[Edge], forward: bool) -> ConvexPolygon | None:
        if not side_pieces:
            return None
        # Keep original circular order; rotate so the chain is contiguous.
        idx = [pieces.index(e) for e in side_pieces]
        k = len(side_pieces)
        start = 0
        for s in range(k):
            prev_i = idx[(s - 1) % k]
            if (idx[s] - prev_i) % len(pieces) != 1:
                start = s
        chain = [side_pieces[(start + s) % k] for s in range(k)]
        u = line.direction if forward else (-line.direction[0], -line.direction[1])
        bridge_line = DirectedLine(crossings[0][1], u)
        first, last = chain[0], chain[-1]
        if last.p1 is not None and first.p0 is not None:
            bridge = Edge(DirectedLine.through(last.p1, first.p0), last.p1, first.p0)
        elif last.p1 is not None:
            bridge = Edge(DirectedLine(last.p1, u), last.p1, None)
        elif first.p0 is not None:
            bridge = Edge(DirectedLine(first.p0, u), None, first.p0)
        else:
            bridge = Edge(bridge_line, None, None)
        return ConvexPolygon(chain + [bridge])

    plus = assemble(plus_pieces, forward=True)
    minus = assemble(minus_pieces, forward=False)
    return DivisionResult(plus, minus, vertex_hit=vertex_hit)


def _match_crossing(cut: list[Point2], e: Edge, t: float) -> Point2:
    for p in cut:
        if abs(e.support.param_of(p) - t) <= 4 * TOL:
            return p
    return e.support.point_at(t)


def _pts_close(a: Point2, b: Point2, tol: float = TOL) -> bool:
    return abs(a[0] - b[0]) <= tol and abs(a[1] - b[1]) <= tol


def erode(poly: ConvexPolygon, eps: float, tol: float = TOL) -> ConvexPolygon | None:
    """Inward offset by eps: intersection of all edge half-planes pushed in.

    Returns None when the offset polygon is empty (cell too small).
    """
    if not poly.is_bounded():
        raise GeometryError("erode requires a bounded polygon")
    if eps <= 0.0:
        raise GeometryError("eps must be positive")
    result: ConvexPolygon | None = poly
    for e in poly.edges:
        ux, uy = e.support.direction
        # interior is on the left: left normal points inward
        ox = e.support.origin[0] - uy * eps
        oy = e.support.origin[1] + ux * eps
        offset_line = DirectedLine((ox, oy), (ux, uy))
        result = divide_polygon(result, offset_line, tol).plus
        if result is None:
            return None
    if result.area() <= 100 * tol * tol:
        return None
    return result


def dilate_about_centroid(poly: ConvexPolygon, ratio: float) -> ConvexPolygon:
    """Homothety about the area centroid; areas scale by ratio**2."""
    if not poly.is_bounded():
        raise GeometryError("dilate requires a bounded polygon")
    if ratio <= 0.0:
        raise GeometryError("ratio must be positive")
    cx, cy = poly.centroid()
    pts = [(cx + ratio * (p[0] - cx), cy + ratio * (p[1] - cy)) for p in poly.vertices()]
    return ConvexPolygon.from_points(pts)


def project_onto_boundary(poly: ConvexPolygon, p: Point2) -> Point2:
    """Nearest point of the polygon boundary; ties go to the first edge."""
    if not poly.is_bounded():
        raise GeometryError("projection requires a bounded polygon")
    best = None
    best_d = math.inf
    for e in poly.edges:
        t = e.support.param_of(p)
        lo, hi = e.param_range()
        t = min(max(t, lo), hi)
        q = e.support.point_at(t)
        d = math.hypot(p[0] - q[0], p[1] - q[1])
        if d < best_d:
            best_d = d
            best = q
    return best


def simplify_collinear(poly: ConvexPolygon, tol: float = TOL) -> ConvexPolygon:
    """Merge consecutive collinear segment edges (drops pass-through nodes)."""
    if not poly.is_bounded():
        return poly
    verts = poly.vertices()
    n = len(verts)
    keep = []
    for i in range(n):
        a = verts[(i - 1) % n]
        b = verts[i]
        c = verts[(i + 1) % n]
        cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        base = math.hypot(c[0] - a[0], c[1] - a[1])
        if base > 0 and abs(cross) / base > tol:
            keep.append(b)
    if len(keep) < 3:
        return poly
    return ConvexPolygon.from_points(keep)


def regular_window(center: Point2, radius: float, n_sides: int = 64) -> ConvexPolygon:
    """Regular polygon window approximating a disc of the given radius."""
    pts = []
    for k in range(n_sides):
        a = 2.0 * math.pi * k / n_sides
        pts.append((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)))
    return ConvexPolygon.from_points(pts)


def unit_area_window(center: Point2 = (0.0, 0.0), n_sides: int = 64) -> ConvexPolygon:
    """Regular n-gon window of exactly unit area (the validation window)."""
    # area of regular n-gon with circumradius r: (n/2) r^2 sin(2π/n)
    n = n_sides
    r = math.sqrt(2.0 / (n * math.sin(2.0 * math.pi / n)))
    return regular_window(center, r, n)


def convex_intersection(a: ConvexPolygon, b: ConvexPolygon, tol: float = TOL) -> ConvexPolygon | None:
    """Intersection of two bounded convex polygons via successive clipping."""
    result: ConvexPolygon | None = a
    for e in b.edges:
        if result is None:
            return None
        result = divide_polygon(result, e.support, tol).plus
    if result is not None and result.area() <= 100 * tol * tol:
        return None
    return result


def contains_many(poly: ConvexPolygon, xs, ys, tol: float = TOL, closed: bool = False):
    """Vectorized containment of many points (numpy arrays of x and y)."""
    import numpy as np

    inside = np.ones(np.shape(xs), dtype=bool)
    for e in poly.edges:
        ux, uy = e.support.direction
        ox, oy = e.support.origin
        off = ux * (ys - oy) - uy * (xs - ox)
        inside &= (off >= -tol) if closed else (off > tol)
    return inside
