"""Domain types shared across the pipeline.

Coordinates are stored as plain nested tuples of floats so that values
survive serialisation round trips exactly; algorithms convert to numpy
arrays at their boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, Literal, Sequence

from .geo import TileId

Coord = tuple[float, float]
Ring = tuple[Coord, ...]          # closed: first == last, >= 4 stored points
Polygon = tuple[Ring, ...]        # outer ring first, then holes

GeometryKind = Literal["point", "polyline", "polygon", "multipolygon"]

EDGE_BOUNDARY = "bnd"
EDGE_VISIBLE = "vis"


def _as_coord(p: Sequence[float]) -> Coord:
    return (float(p[0]), float(p[1]))


def _as_ring(ring: Sequence[Sequence[float]]) -> Ring:
    return tuple(_as_coord(p) for p in ring)


@dataclass(frozen=True)
class Geometry:
    """One of point / polyline / polygon / multipolygon.

    coords nesting by kind:
      point         (x, y)
      polyline      ((x, y), ...)            >= 2 points
      polygon       (ring, ...)              rings closed, outer first
      multipolygon  (polygon, ...)
    """

    kind: GeometryKind
    coords: tuple

    @staticmethod
    def point(p: Sequence[float]) -> "Geometry":
        return Geometry("point", _as_coord(p))

    @staticmethod
    def polyline(points: Sequence[Sequence[float]]) -> "Geometry":
        pts = tuple(_as_coord(p) for p in points)
        if len(pts) < 2:
            raise ValueError("polyline needs at least 2 points")
        return Geometry("polyline", pts)

    @staticmethod
    def polygon(rings: Sequence[Sequence[Sequence[float]]]) -> "Geometry":
        return Geometry("polygon", _validated_polygon(rings))

    @staticmethod
    def multipolygon(polygons: Sequence) -> "Geometry":
        if not polygons:
            raise ValueError("multipolygon needs at least one polygon")
        return Geometry("multipolygon", tuple(_validated_polygon(p) for p in polygons))

    def rings(self) -> tuple[Ring, ...]:
        """All rings regardless of polygon membership (empty for non-areal kinds)."""
        if self.kind == "polygon":
            return self.coords
        if self.kind == "multipolygon":
            return tuple(r for poly in self.coords for r in poly)
        return ()

    def iter_points(self) -> Iterator[Coord]:
        if self.kind == "point":
            yield self.coords
        elif self.kind == "polyline":
            yield from self.coords
        else:
            for ring in self.rings():
                yield from ring


def _validated_polygon(rings: Sequence) -> Polygon:
    if not rings:
        raise ValueError("polygon needs at least one ring")
    out = []
    for ring in rings:
        r = _as_ring(ring)
        if len(r) < 4 or r[0] != r[-1]:
            raise ValueError("ring must be closed with at least 4 stored points")
        out.append(r)
    return tuple(out)


@dataclass(frozen=True)
class MinBox:
    """Oriented rectangle as 4 corners in counter-clockwise winding."""

    corners: tuple[Coord, Coord, Coord, Coord]

    def flat(self) -> tuple[float, ...]:
        return tuple(v for c in self.corners for v in c)

    @staticmethod
    def from_flat(values: Sequence[float]) -> "MinBox":
        if len(values) != 8:
            raise ValueError("minbox needs exactly 8 values")
        it = [float(v) for v in values]
        return MinBox(((it[0], it[1]), (it[2], it[3]), (it[4], it[5]), (it[6], it[7])))


@dataclass(frozen=True)
class VisibilityGraph:
    """Vertex provenance plus labelled edges over a multipolygon's rings.

    vertices[i] is (ring_index, position_in_ring); edges carry "bnd" for ring
    adjacency and "vis" for unobstructed non-adjacent pairs.  Cross-ring vs
    same-ring visibility can be recovered from the provenance.
    """

    vertices: tuple[tuple[int, int], ...]
    edges: tuple[tuple[int, int, str], ...]

    def cross_ring_edges(self) -> tuple[tuple[int, int, str], ...]:
        return tuple(
            (i, j, kind)
            for i, j, kind in self.edges
            if kind == EDGE_VISIBLE and self.vertices[i][0] != self.vertices[j][0]
        )


@dataclass(frozen=True)
class Entity:
    """A tagged map feature inside one tile."""

    id: int
    kind: Literal["node", "way", "relation"]
    tags: tuple[tuple[str, str], ...]
    geometry: Geometry
    minbox: MinBox | None = None
    visgraph: VisibilityGraph | None = None

    def has_tags(self) -> bool:
        return len(self.tags) > 0

    def with_tags(self, tags: Sequence[tuple[str, str]]) -> "Entity":
        return replace(self, tags=tuple((str(k), str(v)) for k, v in tags))


@dataclass(frozen=True)
class Tile:
    """One map tile: identity, local frame parameters and its entities."""

    id: TileId
    origin: tuple[float, float]
    extent_m: float
    entities: tuple[Entity, ...] = field(default_factory=tuple)

    def with_entities(self, entities: Sequence[Entity]) -> "Tile":
        return replace(self, entities=tuple(entities))


def validate_tile(tile: Tile, *, lo: float = 0.0, hi: float = 1.0) -> list[str]:
    """List of constraint violations (coordinates outside [lo, hi], bad rings).

    Empty list means the tile is well-formed for storage.
    """
    problems = []
    if tile.extent_m <= 0:
        problems.append("extent must be positive")
    for e in tile.entities:
        for x, y in e.geometry.iter_points():
            if not (lo <= x <= hi and lo <= y <= hi):
                problems.append(f"entity {e.id}: coordinate ({x}, {y}) outside [{lo}, {hi}]")
                break
        for ring in e.geometry.rings():
            if len(ring) < 4 or ring[0] != ring[-1]:
                problems.append(f"entity {e.id}: unclosed ring")
                break
    return problems
