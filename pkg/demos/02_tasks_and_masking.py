"""Label synthesis, evidence masking, and token-level mask planning.

Constructs a small in-memory corpus, labels it under every bundled task,
shows that masking removes exactly the evidence the label was read from,
then tokenizes the corpus and prints the three masking strategies' plans
for the first batch.

Run with:  python3 demos/02_tasks_and_masking.py
"""

import itertools

import numpy as np

from geotile import masking, process, tasks, tokens
from geotile.geo import TileId, tile_extent_m, tile_origin
from geotile.model import Entity, Geometry, Tile


def square(x0, y0, side):
    ring = [(x0, y0), (x0 + side, y0), (x0 + side, y0 + side), (x0, y0 + side), (x0, y0)]
    return Geometry.polygon([ring])


def build_corpus(n=12, seed=4):
    rng = np.random.default_rng(seed)
    eid = itertools.count(1)
    tiles = []
    for i in range(n):
        tid = TileId(16, 18000 + i, 25900)
        entities = []
        for _ in range(int(rng.integers(0, 4))):
            x, y = (float(v) for v in rng.uniform(0.1, 0.7, size=2))
            entities.append(Entity(next(eid), "way", (("building", "yes"),),
                                   square(x, y, 0.12)))
        if rng.random() < 0.75:
            tags = [("highway", "residential")]
            if rng.random() < 0.5:
                tags.append(("maxspeed", "40 mph" if rng.random() < 0.5 else "60"))
            entities.append(Entity(next(eid), "way", tuple(tags),
                                   Geometry.polyline([(0.05, 0.5), (0.95, 0.5)])))
        if rng.random() < 0.4:
            entities.append(Entity(next(eid), "node", (("highway", "traffic_signals"),),
                                   Geometry.point((0.5, 0.5))))
        if rng.random() < 0.3:
            entities.append(Entity(next(eid), "way",
                                   (("bridge", "yes"), ("highway", "primary")),
                                   Geometry.polyline([(0.2, 0.8), (0.8, 0.8)])))
        tiles.append(Tile(tid, tile_origin(tid), tile_extent_m(tid), tuple(entities)))
    return tiles


def main():
    tiles = build_corpus()

    print("-- labels per task --")
    for name in tasks.BUNDLED_TASKS:
        spec = tasks.load_task(name)
        result = tasks.synthesize_task(tiles, spec, seed=0)
        shown = ", ".join(f"{k.split('_')[1]}:{v:g}" for k, v in sorted(result.labels.items()))
        print(f"  {name:16s} pruned={result.pruned} dropped={result.rebalance_dropped}")
        print(f"    {shown}")

    print("\n-- masking removes the evidence --")
    spec = tasks.load_task("buildings")
    tile = max(tiles, key=lambda t: tasks.compute_label(t, spec) or 0.0)
    masked = tasks.apply_mask(tile, spec)
    print(f"  tile {tile.id.key}: label {tasks.compute_label(tile, spec):g}, "
          f"{len(tile.entities)} entities")
    print(f"  after mask: label {tasks.compute_label(masked, spec):g}, "
          f"{len(masked.entities)} entities")

    print("\n-- tokens and mask plans --")
    vocab = ["building=yes", "highway=residential", "highway=traffic_signals"]
    rng = np.random.default_rng(1)
    table = tokens.EmbeddingTable(
        dim=8, vectors={t: rng.normal(size=8) for t in vocab})
    # tokenization reads the min-boxes the processing stage attaches
    populated = [process.process_tile(t, eps_m=process.DEFAULT_EPS_M, seed=0)
                 for t in tiles if t.entities]
    batch = tokens.assemble_token_batch(populated, table, include_image=True)
    print(f"  batch: {batch.size} tiles, max_len {batch.max_len}, dim {batch.dim}")

    cfg = masking.MaskConfig(seed=11)
    for index in range(3):
        plan = masking.plan_masks(batch, cfg, batch_index=index)
        fractions = [s.context_fraction() for s in plan.samples]
        print(f"  batch {index}: strategy {plan.strategy:9s} "
              f"mean context {np.mean(fractions):.3f} fallbacks {plan.fallbacks}")

    plan = masking.plan_masks(batch, cfg, batch_index=0)
    context, targets, maps = masking.compact(batch, plan)
    print(f"  compacted context batch: max_len {context.max_len} "
          f"(from {batch.max_len}), {len(targets)} target batches")


if __name__ == "__main__":
    main()
