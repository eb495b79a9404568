"""Erode a synthetic heightmap, extract its ridge/valley sketch and rebuild
a heightmap from the sketch alone.

Run: python demos/terrain_round_trip.py
"""
import numpy as np

from scenelattice import terrain
from scenelattice.bridge import terrain_caption


def synthetic_dem(size=128, seed=0):
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    z = 0.6 * np.exp(-((xx - 0.35) ** 2 + (yy - 0.4) ** 2) / 0.03)    # a hill
    z += 0.4 * np.exp(-((xx - 0.75) ** 2) / 0.004) * (yy > 0.2)        # a ridge line
    z += 0.3 * (1 - yy)                                                 # tilt down to the south
    z += 0.02 * rng.standard_normal(z.shape)
    z = (z - z.min()) / (z.max() - z.min())
    return terrain.Heightmap((z * 60000).astype(np.uint16), meters_per_pixel=8.0)


def main():
    h = synthetic_dem()
    stats = terrain.ErosionStats(0)
    eroded = terrain.erode(h, 30, talus_angle=30.0, stats=stats)
    before, after = int(h.values.sum(dtype=np.int64)), int(eroded.values.sum(dtype=np.int64))
    print(f"erosion: {stats.iterations} steps, moved {sum(stats.moved):.0f} units, "
          f"total {before} -> {after}, clamps {stats.clamp_events}")

    acc = terrain.flow_accumulation(eroded)
    print(f"flow: max accumulation {acc.max():.0f} cells, sink total {acc[terrain.sink_mask(eroded)].sum():.0f}"
          f" of {acc.size}")

    sketch = terrain.extract_sketch(eroded)
    print(f"sketch: {(sketch.strokes == terrain.RIDGE).sum()} ridge px, {(sketch.strokes == terrain.VALLEY).sum()} valley px")

    rebuilt = terrain.sketch_to_heightmap(sketch)
    corr = np.corrcoef(eroded.values.ravel(), rebuilt.values.ravel())[0, 1]
    print(f"rebuilt from sketch: correlation with the eroded map {corr:.2f}")

    print(terrain_caption(terrain.summarize_terrain(eroded)))
    zones = terrain.elevation_zones(eroded, 8)
    for row in zones:
        print("   ", " ".join(z[0] for z in row))


if __name__ == "__main__":
    main()
