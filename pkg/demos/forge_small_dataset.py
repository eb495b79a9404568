"""Build a tiny training set from one synthetic segmentation image.

Run: python demos/forge_small_dataset.py [out_dir]
"""
import sys
from dataclasses import replace

import numpy as np

from scenelattice import forge
from scenelattice.bridge import MockBackend
from scenelattice.layout import builtin_table


def main(out_dir="demo_dataset"):
    table = builtin_table("loveda")
    rng = np.random.default_rng(1)
    blocks = rng.integers(0, len(table.entries), size=(12, 12))
    image = table.colors[np.kron(blocks, np.ones((32, 32), dtype=np.int64))].astype(np.uint8)

    tiles = forge.tile_source(image, tile_px=128, table=table)
    records = forge.forge_records(tiles, rotations=(0, 1, 2, 3))
    print(f"{len(tiles)} tiles x 4 rotations = {len(records)} records")

    # Captions come from an annotator model; the mock stands in for it here.
    annotator = MockBackend()
    configs = forge.sample_configs(len(records), layout_context=records[0].layout, seed=0)
    records = [
        replace(forge.attach_caption(r, "layout_caption", annotator.generate(r.prompts[0])), config=c)
        for r, c in zip(records, configs)
    ]
    print("first caption:", records[0].captions["layout_caption"])
    print("seasons:", sorted({c.coarse.season for c in configs}))

    counts = forge.export_dataset(records, out_dir)
    back = forge.import_dataset(out_dir)
    print(f"exported {counts['records']} records, re-imported {len(back)}")


if __name__ == "__main__":
    main(*sys.argv[1:])
