"""Walk a synthetic map extract through ingest and processing.

Builds a tiny PBF file covering a 2x2 block of zoom-16 tiles, runs the
two pipeline stages, and prints what the store holds afterwards: entity
counts, the effect of polyline simplification, an oriented min-box, and
the visibility graph of a building with a courtyard.

Run with:  python3 demos/01_tile_pipeline.py
"""

import os
import tempfile

from geotile import geo, ingest, pbf, process, tef
from geotile.model import Geometry
from geotile.visibility import visibility_edges

BASE_X, BASE_Y = 18052, 25956


def build_extract(path):
    """Four tiles, each holding a signal, a building and a wavy road."""
    nodes, ways = [], []
    next_id = iter(range(1, 100000))
    for dx in range(2):
        for dy in range(2):
            b = geo.tile_bounds(geo.TileId(16, BASE_X + dx, BASE_Y + dy))

            def at(fx, fy):
                return (b.west + fx * (b.east - b.west),
                        b.south + fy * (b.north - b.south))

            lon, lat = at(0.3, 0.7)
            nodes.append(pbf.RawNode(next(next_id), lon, lat,
                                     (("highway", "traffic_signals"),)))

            refs = []
            for fx, fy in ((0.4, 0.4), (0.6, 0.4), (0.6, 0.6), (0.4, 0.6)):
                refs.append(next(next_id))
                lon, lat = at(fx, fy)
                nodes.append(pbf.RawNode(refs[-1], lon, lat))
            ways.append(pbf.RawWay(next(next_id), tuple(refs + refs[:1]),
                                   (("building", "yes"),)))

            refs = []
            for i in range(30):  # a road with a gentle wiggle
                fx = 0.1 + 0.8 * i / 29
                fy = 0.5 + 0.02 * ((i % 4) - 1.5) / 1.5
                refs.append(next(next_id))
                lon, lat = at(fx, fy)
                nodes.append(pbf.RawNode(refs[-1], lon, lat))
            ways.append(pbf.RawWay(next(next_id), tuple(refs),
                                   (("highway", "residential"), ("maxspeed", "30 mph"))))
    pbf.write_pbf(path, nodes=nodes, ways=ways)


def main():
    work = tempfile.mkdtemp(prefix="geotile-demo-")
    extract = os.path.join(work, "demo.pbf")
    build_extract(extract)
    print(f"extract written to {extract}")

    data = pbf.read_pbf(extract)
    tiles, stats = ingest.ingest_elements(data, zoom=16)
    print("\n-- ingest --")
    for line in stats.lines():
        print(" ", line)

    raw_store = os.path.join(work, "raw")
    tef.write_store(tiles, raw_store)

    print("\n-- process (simplify, min-boxes, visibility) --")
    worked = [process.process_tile(t, eps_m=process.DEFAULT_EPS_M, seed=0) for t in tiles]
    for before, after in zip(tiles, worked):
        road_before = max(len(e.geometry.coords) for e in before.entities
                          if e.geometry.kind == "polyline")
        road_after = max(len(e.geometry.coords) for e in after.entities
                         if e.geometry.kind == "polyline")
        print(f"  {before.id.key}: road {road_before} -> {road_after} points")

    sample = worked[0].entities[0]
    print(f"\n  entity {sample.id} min-box corners:")
    for corner in sample.minbox.corners:
        print(f"    ({corner[0]:.4f}, {corner[1]:.4f})")

    outer = [(0.1, 0.1), (0.9, 0.1), (0.9, 0.9), (0.1, 0.9), (0.1, 0.1)]
    hole = [(0.45, 0.35), (0.45, 0.65), (0.75, 0.65), (0.75, 0.35), (0.45, 0.35)]
    graph = visibility_edges(Geometry.multipolygon([[outer, hole]]))
    kinds = [kind for _, _, kind in graph.edges]
    print("\n-- courtyard visibility graph --")
    print(f"  {len(graph.vertices)} vertices, "
          f"{kinds.count('bnd')} boundary edges, {kinds.count('vis')} visibility edges")
    print(f"  cross-ring sight lines: {len(graph.cross_ring_edges())}")

    proc_store = os.path.join(work, "proc")
    tef.write_store(worked, proc_store)
    print(f"\nprocessed store written to {proc_store}")
    print("group files:", sorted(os.listdir(proc_store)))


if __name__ == "__main__":
    main()
