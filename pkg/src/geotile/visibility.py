"""Visibility graphs over the boundary vertices of areal geometry.

Vertices are the distinct ring points of a polygon or multipolygon.  Two
non-adjacent vertices see each other when the open segment between them
properly crosses no boundary edge; touching an edge at a shared endpoint or
grazing a vertex does not block visibility.  Same-ring and cross-ring pairs
both participate, and ring provenance is kept so either subset can be
selected afterwards.
"""

from __future__ import annotations

import math

from .model import EDGE_BOUNDARY, EDGE_VISIBLE, Geometry, VisibilityGraph

Scene = tuple[list[tuple[float, float]], list[tuple[int, int]], list[tuple[int, int]]]


def build_scene(geom: Geometry) -> Scene:
    """Flatten rings into (vertices, provenance, boundary edge index pairs).

    Closing points are dropped; every ring must be explicitly closed.
    """
    if geom.kind not in ("polygon", "multipolygon"):
        raise ValueError(f"visibility needs areal geometry, got {geom.kind}")
    rings = geom.rings()
    if not rings:
        raise ValueError("geometry has no rings")
    vertices: list[tuple[float, float]] = []
    provenance: list[tuple[int, int]] = []
    edges: list[tuple[int, int]] = []
    for ridx, ring in enumerate(rings):
        if len(ring) < 4 or ring[0] != ring[-1]:
            raise ValueError(f"ring {ridx} is not closed (or has fewer than 3 distinct points)")
        pts = ring[:-1]
        base = len(vertices)
        for pos, p in enumerate(pts):
            vertices.append(p)
            provenance.append((ridx, pos))
        n = len(pts)
        for i in range(n):
            edges.append((base + i, base + (i + 1) % n))
    return vertices, provenance, edges


def proper_crossing(
    px: float, py: float, qx: float, qy: float,
    ax: float, ay: float, bx: float, by: float,
) -> bool:
    """True when open segments pq and ab cross at an interior point of both.

    Collinear overlap and endpoint contact are not proper crossings, which is
    what makes grazing contact count as visible.
    """
    o1 = (qx - px) * (ay - py) - (qy - py) * (ax - px)
    o2 = (qx - px) * (by - py) - (qy - py) * (bx - px)
    if o1 * o2 >= 0.0:
        return False
    o3 = (bx - ax) * (py - ay) - (by - ay) * (px - ax)
    o4 = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
    return o3 * o4 < 0.0


def _candidate_pairs(scene: Scene) -> list[tuple[int, int]]:
    vertices, _, edges = scene
    adjacent = {(min(i, j), max(i, j)) for i, j in edges}
    n = len(vertices)
    return [(i, j) for i in range(n) for j in range(i + 1, n) if (i, j) not in adjacent]


def _assemble(scene: Scene, visible: list[tuple[int, int]]) -> VisibilityGraph:
    vertices, provenance, edges = scene
    labelled = [(min(i, j), max(i, j), EDGE_BOUNDARY) for i, j in edges]
    labelled.extend((i, j, EDGE_VISIBLE) for i, j in visible)
    return VisibilityGraph(vertices=tuple(provenance), edges=tuple(labelled))


def visibility_edges_brute(geom: Geometry) -> VisibilityGraph:
    """Reference implementation: every pair against every boundary edge."""
    scene = build_scene(geom)
    vertices, _, edges = scene
    visible = []
    for i, j in _candidate_pairs(scene):
        px, py = vertices[i]
        qx, qy = vertices[j]
        blocked = False
        for a, b in edges:
            ax, ay = vertices[a]
            bx, by = vertices[b]
            if proper_crossing(px, py, qx, qy, ax, ay, bx, by):
                blocked = True
                break
        if not blocked:
            visible.append((i, j))
    return _assemble(scene, visible)


class _EdgeGrid:
    """Uniform grid over boundary edges for segment occlusion queries.

    Edges are bucketed by bounding box, so any cell a segment passes through
    holds every edge it could properly cross there.  Queries walk the cells
    along the segment and stop at the first crossing; on a near-tie at a cell
    corner both side cells are visited, keeping the walk conservative.
    """

    def __init__(self, vertices: list[tuple[float, float]], edges: list[tuple[int, int]]):
        self.ax = [vertices[a][0] for a, _ in edges]
        self.ay = [vertices[a][1] for a, _ in edges]
        self.bx = [vertices[b][0] for _, b in edges]
        self.by = [vertices[b][1] for _, b in edges]
        xs = [p[0] for p in vertices]
        ys = [p[1] for p in vertices]
        # Slightly offset origin so geometry aligned to round numbers does
        # not sit exactly on cell boundaries.
        pad = max(max(xs) - min(xs), max(ys) - min(ys), 1e-9) * 0.00537
        self.ox = min(xs) - pad
        self.oy = min(ys) - pad
        span_x = max(xs) - self.ox + pad
        span_y = max(ys) - self.oy + pad
        m = max(len(edges), 1)
        self.ncx = max(1, min(int(math.sqrt(m)) + 1, 256))
        self.ncy = self.ncx
        self.csx = span_x / self.ncx
        self.csy = span_y / self.ncy
        buckets: dict[int, list[int]] = {}
        for e in range(len(edges)):
            gx0, gy0 = self._cell(min(self.ax[e], self.bx[e]), min(self.ay[e], self.by[e]))
            gx1, gy1 = self._cell(max(self.ax[e], self.bx[e]), max(self.ay[e], self.by[e]))
            for gx in range(gx0, gx1 + 1):
                for gy in range(gy0, gy1 + 1):
                    buckets.setdefault(gx * self.ncy + gy, []).append(e)
        self.buckets = {k: tuple(v) for k, v in buckets.items()}
        self.n_edges = len(edges)
        self._stamp = [0] * len(edges)
        self._query = 0

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        gx = int((x - self.ox) / self.csx)
        gy = int((y - self.oy) / self.csy)
        return (min(max(gx, 0), self.ncx - 1), min(max(gy, 0), self.ncy - 1))

    def blocked(self, px: float, py: float, qx: float, qy: float) -> bool:
        """Does any bucketed edge properly cross segment pq?"""
        self._query += 1
        query = self._query
        stamp = self._stamp
        buckets = self.buckets
        ax, ay, bx, by = self.ax, self.ay, self.bx, self.by

        def test_cell(gx: int, gy: int) -> bool:
            bucket = buckets.get(gx * self.ncy + gy)
            if bucket is None:
                return False
            for e in bucket:
                if stamp[e] == query:
                    continue
                stamp[e] = query
                if proper_crossing(px, py, qx, qy, ax[e], ay[e], bx[e], by[e]):
                    return True
            return False

        gx, gy = self._cell(px, py)
        ex, ey = self._cell(qx, qy)
        if test_cell(gx, gy):
            return True
        dx = qx - px
        dy = qy - py
        step_x = 1 if dx > 0 else -1
        step_y = 1 if dy > 0 else -1
        # Parametric distance to the next vertical / horizontal cell boundary.
        if dx != 0.0:
            nx = self.ox + (gx + (1 if dx > 0 else 0)) * self.csx
            t_max_x = (nx - px) / dx
            t_dx = self.csx / abs(dx)
        else:
            t_max_x, t_dx = math.inf, math.inf
        if dy != 0.0:
            ny = self.oy + (gy + (1 if dy > 0 else 0)) * self.csy
            t_max_y = (ny - py) / dy
            t_dy = self.csy / abs(dy)
        else:
            t_max_y, t_dy = math.inf, math.inf
        tie = 1e-12
        safety = (self.ncx + self.ncy + 4) * 2
        while (gx, gy) != (ex, ey):
            safety -= 1
            if safety <= 0:
                # Float trouble: fall back to testing everything once.
                for e in range(self.n_edges):
                    if stamp[e] != query and proper_crossing(
                        px, py, qx, qy, ax[e], ay[e], bx[e], by[e]
                    ):
                        return True
                return False
            if t_max_x < t_max_y - tie:
                gx += step_x
                t_max_x += t_dx
            elif t_max_y < t_max_x - tie:
                gy += step_y
                t_max_y += t_dy
            else:
                # Corner tie: visit both side cells, then move diagonally.
                if 0 <= gx + step_x < self.ncx and test_cell(gx + step_x, gy):
                    return True
                if 0 <= gy + step_y < self.ncy and test_cell(gx, gy + step_y):
                    return True
                gx += step_x
                gy += step_y
                t_max_x += t_dx
                t_max_y += t_dy
            if not (0 <= gx < self.ncx and 0 <= gy < self.ncy):
                gx = min(max(gx, 0), self.ncx - 1)
                gy = min(max(gy, 0), self.ncy - 1)
            if test_cell(gx, gy):
                return True
        return False


def visibility_edges(geom: Geometry) -> VisibilityGraph:
    """Grid-accelerated visibility graph; identical output to the brute pass."""
    scene = build_scene(geom)
    vertices, _, edges = scene
    grid = _EdgeGrid(vertices, edges)
    visible = []
    for i, j in _candidate_pairs(scene):
        px, py = vertices[i]
        qx, qy = vertices[j]
        if not grid.blocked(px, py, qx, qy):
            visible.append((i, j))
    return _assemble(scene, visible)
