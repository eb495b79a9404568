"""Regenerate the small input files under tests/fixtures."""
from pathlib import Path

import numpy as np

from scenelattice import bridge, config, layout, terrain

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

DEMO_INSTRUCTION = (
    "A suburban summer scene with farmland throughout, buildings concentrated towards the center, "
    "forest on the left and water on the right. In the upper left, two eagles are patrolling the skies. "
    "In the middle left, an ancient warrior stands idle."
)


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    table = layout.builtin_table("loveda")
    backend = bridge.MockBackend(seed=7)
    raw = bridge.invoke_generator(bridge.build_layout_prompt(DEMO_INSTRUCTION, table), backend)
    m = bridge.validate_layout_response(raw, table).payload
    layout.write_layout(m, OUT / "demo_layout.txt")
    raw = bridge.invoke_generator(bridge.build_config_prompt(DEMO_INSTRUCTION, m), backend)
    cfg = bridge.validate_config_response(raw).payload
    (OUT / "demo_config.json").write_text(cfg.to_json())
    (OUT / "demo_instruction.txt").write_text(DEMO_INSTRUCTION + "\n")

    grass = layout.LayoutMatrix.from_rows(["G" * 32] * 32, table)
    layout.write_layout(grass, OUT / "grass_layout.txt")
    whale = config.EnvironmentConfig(
        cfg.coarse, cfg.fine, (config.AgentSpec("whale", 1, "swimming", "center"),))
    (OUT / "whale_config.json").write_text(whale.to_json())

    yy, xx = np.mgrid[0:64, 0:64]
    ramp = terrain.Heightmap((xx * 300 + yy * 100).astype(np.uint16), meters_per_pixel=16.0)
    terrain.save_heightmap(ramp, OUT / "ramp_heightmap.png")

    ragged = layout.serialize_layout(m).splitlines()
    ragged[4] = ragged[4][:-3]
    (OUT / "ragged_layout.txt").write_text("\n".join(ragged) + "\n")


if __name__ == "__main__":
    main()
