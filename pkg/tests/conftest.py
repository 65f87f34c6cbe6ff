"""Synthetic map extracts shared by the CLI and acceptance tests."""

from geotile import geo
from geotile.pbf import RawNode, RawWay, write_pbf


def grid_elements(x0: int, y0: int, nx: int, ny: int, zoom: int = 16):
    """Nodes and ways for an nx-by-ny block of tiles, six entities each.

    Every tile gets a traffic signal, a bakery, a cafe, a building square,
    a maxspeed road, and a car bridge, all strictly inside the tile so
    clipping never copies anything into a neighbour.
    """
    nodes: list[RawNode] = []
    ways: list[RawWay] = []
    counter = iter(range(1, 10**9))

    for dx in range(nx):
        for dy in range(ny):
            b = geo.tile_bounds(geo.TileId(zoom, x0 + dx, y0 + dy))

            def at(fx, fy):
                return (b.west + fx * (b.east - b.west),
                        b.south + fy * (b.north - b.south))

            for fx, fy, tags in (
                (0.30, 0.70, (("highway", "traffic_signals"),)),
                (0.70, 0.30, (("shop", "bakery"),)),
                (0.25, 0.25, (("amenity", "cafe"),)),
            ):
                lon, lat = at(fx, fy)
                nodes.append(RawNode(next(counter), lon, lat, tags))

            def polyline(points, tags):
                refs = []
                for lon, lat in points:
                    refs.append(next(counter))
                    nodes.append(RawNode(refs[-1], lon, lat))
                ways.append(RawWay(next(counter), tuple(refs), tags))

            square = [at(0.40, 0.40), at(0.60, 0.40), at(0.60, 0.60), at(0.40, 0.60)]
            polyline(square + square[:1], (("building", "yes"),))

            speed = "30 mph" if (dx + dy) % 3 == 0 else str(30 + 10 * ((dx + dy) % 4))
            polyline(
                [at(0.20, 0.50), at(0.50, 0.52), at(0.80, 0.50)],
                (("highway", "residential"), ("maxspeed", speed)),
            )
            polyline(
                [at(0.50, 0.20), at(0.52, 0.50), at(0.50, 0.80)],
                (("highway", "primary"), ("bridge", "yes")),
            )

    return nodes, ways


def write_grid_pbf(path, x0: int, y0: int, nx: int, ny: int, zoom: int = 16) -> None:
    nodes, ways = grid_elements(x0, y0, nx, ny, zoom)
    write_pbf(str(path), nodes=nodes, ways=ways)
