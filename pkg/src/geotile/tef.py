"""Tile exchange format: JSON lines, one tile per line, plus the gzip store.

The writer emits a canonical form (fixed key order, no whitespace, floats in
shortest round-trip notation) so write -> parse -> write is byte-identical.
Parsing validates the schema and reports the line number and field path of
the first violation.

A store is a directory of ``<zoom>_<gx>_<gy>.tefgz`` files, each holding the
gzipped TEF lines of one 4x4 block of the tile grid (at most 16 tiles), plus
an ``index.json`` mapping tile ids to file names.  Gzip members are written
with a zeroed mtime so identical content produces identical bytes.
"""

from __future__ import annotations

import gzip
import json
import os
from collections import defaultdict
from typing import Iterable, Iterator

from .geo import TileId
from .model import (
    EDGE_BOUNDARY,
    EDGE_VISIBLE,
    Entity,
    Geometry,
    MinBox,
    Tile,
    VisibilityGraph,
)

GROUP_SPAN = 4  # tiles per group file along each axis

INDEX_NAME = "index.json"


class TefError(ValueError):
    pass


def tile_group(tid: TileId) -> tuple[int, int, int]:
    """Group key (zoom, x // 4, y // 4) indexing the 16-tile store block."""
    return (tid.zoom, tid.x // GROUP_SPAN, tid.y // GROUP_SPAN)


def group_file_name(group: tuple[int, int, int]) -> str:
    return f"{group[0]}_{group[1]}_{group[2]}.tefgz"


# ----------------------------------------------------------------- encoding


def _coords_json(geom: Geometry):
    if geom.kind == "point":
        return list(geom.coords)
    if geom.kind == "polyline":
        return [list(p) for p in geom.coords]
    if geom.kind == "polygon":
        return [[list(p) for p in ring] for ring in geom.coords]
    return [[[list(p) for p in ring] for ring in poly] for poly in geom.coords]


def _entity_json(e: Entity) -> dict:
    obj: dict = {
        "id": e.id,
        "kind": e.kind,
        "tags": [[k, v] for k, v in e.tags],
        "geometry": {"type": e.geometry.kind, "coords": _coords_json(e.geometry)},
    }
    if e.minbox is not None:
        obj["minbox"] = [float(v) for v in e.minbox.flat()]
    if e.visgraph is not None:
        obj["visgraph"] = {"edges": [[i, j, kind] for i, j, kind in e.visgraph.edges]}
    return obj


def tile_to_json(tile: Tile) -> str:
    obj = {
        "id": tile.id.key,
        "extent_m": float(tile.extent_m),
        "origin": [float(tile.origin[0]), float(tile.origin[1])],
        "entities": [_entity_json(e) for e in tile.entities],
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


# ----------------------------------------------------------------- decoding


def _fail(path: str, message: str, lineno: int | None) -> TefError:
    where = f" (line {lineno})" if lineno is not None else ""
    return TefError(f"{path}: {message}{where}")


def _number(value, path: str, lineno) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _fail(path, f"expected number, got {type(value).__name__}", lineno)
    return float(value)


def _coord(value, path: str, lineno) -> tuple[float, float]:
    if not isinstance(value, list) or len(value) != 2:
        raise _fail(path, "expected [x, y]", lineno)
    return (_number(value[0], path + "[0]", lineno), _number(value[1], path + "[1]", lineno))


def _ring(value, path: str, lineno):
    if not isinstance(value, list) or len(value) < 4:
        raise _fail(path, "ring must be a closed list of at least 4 points", lineno)
    pts = [_coord(p, f"{path}[{i}]", lineno) for i, p in enumerate(value)]
    if pts[0] != pts[-1]:
        raise _fail(path, "ring is not closed", lineno)
    return pts


def _geometry(obj, path: str, lineno) -> Geometry:
    if not isinstance(obj, dict):
        raise _fail(path, "expected object", lineno)
    kind = obj.get("type")
    coords = obj.get("coords")
    try:
        if kind == "point":
            return Geometry.point(_coord(coords, path + ".coords", lineno))
        if kind == "polyline":
            if not isinstance(coords, list) or len(coords) < 2:
                raise _fail(path + ".coords", "polyline needs at least 2 points", lineno)
            return Geometry.polyline(
                [_coord(p, f"{path}.coords[{i}]", lineno) for i, p in enumerate(coords)]
            )
        if kind == "polygon":
            if not isinstance(coords, list) or not coords:
                raise _fail(path + ".coords", "polygon needs at least one ring", lineno)
            return Geometry.polygon(
                [_ring(r, f"{path}.coords[{i}]", lineno) for i, r in enumerate(coords)]
            )
        if kind == "multipolygon":
            if not isinstance(coords, list) or not coords:
                raise _fail(path + ".coords", "multipolygon needs at least one polygon", lineno)
            polys = []
            for i, poly in enumerate(coords):
                if not isinstance(poly, list) or not poly:
                    raise _fail(f"{path}.coords[{i}]", "polygon needs at least one ring", lineno)
                polys.append([_ring(r, f"{path}.coords[{i}][{j}]", lineno) for j, r in enumerate(poly)])
            return Geometry.multipolygon(polys)
    except ValueError as exc:
        if isinstance(exc, TefError):
            raise
        raise _fail(path, str(exc), lineno) from None
    raise _fail(path + ".type", f"unknown geometry type {kind!r}", lineno)


def _visgraph(obj, geom: Geometry, path: str, lineno) -> VisibilityGraph:
    if not isinstance(obj, dict) or not isinstance(obj.get("edges"), list):
        raise _fail(path, "expected {\"edges\": [...]}", lineno)
    vertices: list[tuple[int, int]] = []
    for ridx, ring in enumerate(geom.rings()):
        vertices.extend((ridx, i) for i in range(len(ring) - 1))
    edges = []
    for i, item in enumerate(obj["edges"]):
        epath = f"{path}.edges[{i}]"
        if (
            not isinstance(item, list)
            or len(item) != 3
            or not isinstance(item[0], int)
            or not isinstance(item[1], int)
            or item[2] not in (EDGE_BOUNDARY, EDGE_VISIBLE)
        ):
            raise _fail(epath, 'expected [i, j, "bnd"|"vis"]', lineno)
        if not (0 <= item[0] < len(vertices) and 0 <= item[1] < len(vertices)):
            raise _fail(epath, "vertex index out of range", lineno)
        edges.append((item[0], item[1], item[2]))
    return VisibilityGraph(vertices=tuple(vertices), edges=tuple(edges))


def _entity(obj, path: str, lineno) -> Entity:
    if not isinstance(obj, dict):
        raise _fail(path, "expected object", lineno)
    if not isinstance(obj.get("id"), int):
        raise _fail(path + ".id", "expected integer id", lineno)
    if obj.get("kind") not in ("node", "way", "relation"):
        raise _fail(path + ".kind", f"unknown kind {obj.get('kind')!r}", lineno)
    tags_obj = obj.get("tags")
    if not isinstance(tags_obj, list):
        raise _fail(path + ".tags", "expected list of [key, value]", lineno)
    tags = []
    for i, t in enumerate(tags_obj):
        if not isinstance(t, list) or len(t) != 2 or not all(isinstance(s, str) for s in t):
            raise _fail(f"{path}.tags[{i}]", "expected [key, value] strings", lineno)
        tags.append((t[0], t[1]))
    geom = _geometry(obj.get("geometry"), path + ".geometry", lineno)
    minbox = None
    if obj.get("minbox") is not None:
        mb = obj["minbox"]
        if not isinstance(mb, list) or len(mb) != 8:
            raise _fail(path + ".minbox", "expected 8 numbers", lineno)
        minbox = MinBox.from_flat([_number(v, f"{path}.minbox[{i}]", lineno) for i, v in enumerate(mb)])
    visgraph = None
    if obj.get("visgraph") is not None:
        visgraph = _visgraph(obj["visgraph"], geom, path + ".visgraph", lineno)
    return Entity(
        id=obj["id"], kind=obj["kind"], tags=tuple(tags), geometry=geom, minbox=minbox, visgraph=visgraph
    )


def tile_from_json(line: str, lineno: int | None = None) -> Tile:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise _fail("tile", f"invalid JSON: {exc.msg}", lineno) from None
    if not isinstance(obj, dict):
        raise _fail("tile", "expected object", lineno)
    if not isinstance(obj.get("id"), str):
        raise _fail("tile.id", "expected string tile id", lineno)
    try:
        tid = TileId.parse(obj["id"])
    except ValueError as exc:
        raise _fail("tile.id", str(exc), lineno) from None
    extent = _number(obj.get("extent_m"), "tile.extent_m", lineno)
    origin = _coord(obj.get("origin"), "tile.origin", lineno)
    entities_obj = obj.get("entities")
    if not isinstance(entities_obj, list):
        raise _fail("tile.entities", "expected list", lineno)
    entities = [_entity(e, f"tile.entities[{i}]", lineno) for i, e in enumerate(entities_obj)]
    return Tile(id=tid, origin=origin, extent_m=extent, entities=tuple(entities))


def write_tef(tiles: Iterable[Tile], path: str) -> None:
    data = "".join(tile_to_json(t) + "\n" for t in tiles)
    atomic_write_bytes(path, data.encode("utf-8"))


def parse_tef_lines(lines: Iterable[str]) -> Iterator[Tile]:
    seen: set[str] = set()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        tile = tile_from_json(line, lineno)
        if tile.id.key in seen:
            raise TefError(f"duplicate tile id {tile.id.key} (line {lineno})")
        seen.add(tile.id.key)
        yield tile


def parse_tef(path: str) -> list[Tile]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(parse_tef_lines(fh))


# -------------------------------------------------------------------- store


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write via a sibling temp file and rename, so crashes leave no partial file."""
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _gzip_bytes(data: bytes) -> bytes:
    import io

    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", filename="", mtime=0) as gz:
        gz.write(data)
    return buf.getvalue()


def write_store(tiles: Iterable[Tile], root: str) -> dict[str, str]:
    """Write tiles into group files under root; returns the tile -> file index."""
    os.makedirs(root, exist_ok=True)
    groups: dict[tuple[int, int, int], list[Tile]] = defaultdict(list)
    for tile in tiles:
        groups[tile_group(tile.id)].append(tile)
    index: dict[str, str] = {}
    for group in sorted(groups):
        members = sorted(groups[group], key=lambda t: (t.id.x, t.id.y))
        name = group_file_name(group)
        text = "".join(tile_to_json(t) + "\n" for t in members)
        atomic_write_bytes(os.path.join(root, name), _gzip_bytes(text.encode("utf-8")))
        for t in members:
            index[t.id.key] = name
    payload = json.dumps({"tiles": dict(sorted(index.items()))}, indent=1, sort_keys=True)
    atomic_write_bytes(os.path.join(root, INDEX_NAME), payload.encode("utf-8"))
    return index


def read_store_index(root: str) -> dict[str, str]:
    with open(os.path.join(root, INDEX_NAME), "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict) or not isinstance(obj.get("tiles"), dict):
        raise TefError(f"{root}: malformed store index")
    return obj["tiles"]


def read_group_file(path: str) -> list[Tile]:
    with gzip.open(path, "rt", encoding="utf-8") as fh:
        return list(parse_tef_lines(fh))


def read_store(root: str) -> list[Tile]:
    """All tiles in the store, ordered by group file then grid position."""
    index = read_store_index(root)
    tiles: list[Tile] = []
    for name in sorted(set(index.values())):
        tiles.extend(read_group_file(os.path.join(root, name)))
    return tiles


def read_store_tile(root: str, tile_id: str) -> Tile:
    index = read_store_index(root)
    if tile_id not in index:
        raise KeyError(f"tile {tile_id} not in store {root}")
    for tile in read_group_file(os.path.join(root, index[tile_id])):
        if tile.id.key == tile_id:
            return tile
    raise TefError(f"store index lists {tile_id} in {index[tile_id]}, but the file lacks it")
