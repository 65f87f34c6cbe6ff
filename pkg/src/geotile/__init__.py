"""Map-tile corpora, synthetic geospatial tasks, and training-side utilities.

The pipeline runs left to right: OSM PBF extracts are parsed and clipped
into a tile store (pbf, ingest, tef), tiles are simplified and annotated
with oriented boxes and visibility graphs (geometry, visibility, process),
tasks derive labels and masked corpora (tasks), and the token, masking,
loss, schedule and evaluation modules cover the training-adjacent math.
"""

__version__ = "0.1.0"

from .geo import TileId, tile_bounds, tile_extent_m, tile_index, tile_origin
from .model import Entity, Geometry, MinBox, Tile, VisibilityGraph

__all__ = [
    "Entity",
    "Geometry",
    "MinBox",
    "Tile",
    "TileId",
    "VisibilityGraph",
    "__version__",
    "tile_bounds",
    "tile_extent_m",
    "tile_index",
    "tile_origin",
]
