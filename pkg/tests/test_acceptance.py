"""Acceptance criteria, each run at its stated size, tolerance and time budget.

Every test prints one ``[PASS]`` or ``[FAIL]`` line (visible without ``-s``).
"""
import json
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from scipy.spatial.distance import pdist

from scenelattice import _grid
from scenelattice import bridge as B
from scenelattice import forge as F
from scenelattice import placement as P
from scenelattice.cli import EXIT_OK, main
from scenelattice.config import (
    check_consistency,
    default_rule_table,
    habitat_cells,
    region_mask,
)
from scenelattice.decoder import decode_layout, load_masks
from scenelattice.errors import Unrepairable
from scenelattice.layout import (
    LayoutMatrix,
    SegmentationRaster,
    builtin_table,
    downsample_segmentation,
    parse_layout,
    serialize_layout,
)
from scenelattice.terrain import Heightmap, erode, flow_accumulation, sink_mask

from conftest import FIXTURES

pytestmark = pytest.mark.acceptance

# Symbols and class names of the published symbol table.
PUBLISHED_LOVEDA = {"A": "farmland", "B": "building", "D": "barren", "F": "forest",
                    "G": "grassland", "R": "road", "W": "water"}
PUBLISHED_WILD = {"B": "grassland", "F": "forest", "R": "rocky", "S": "snow", "W": "water"}
# Published (seasonal, material) variant counts.
PUBLISHED_VARIANTS = {
    "grass": (3, 4), "flower": (2, 4), "dead_branch": (2, 4), "stone": (3, 4),
    "architecture": (4, 3), "road": (2, 2), "lake": (2, 2), "desert": (6, 3),
    "forest": (18, 4), "crops": (4, 4), "snow_mountain": (3, 3),
}


@pytest.fixture
def criterion(capsys):
    @contextmanager
    def run(number, title, limit_s):
        t0 = time.perf_counter()
        status, detail = "PASS", ""
        try:
            yield
            elapsed = time.perf_counter() - t0
            assert elapsed < limit_s, f"took {elapsed:.1f} s, budget {limit_s} s"
        except BaseException as exc:
            status, detail = "FAIL", f" -- {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
            raise
        finally:
            elapsed = time.perf_counter() - t0
            with capsys.disabled():
                print(f"\n[{status}] criterion {number:2d}: {title} ({elapsed:.2f} s / {limit_s} s){detail}")
    return run


def test_c01_symbol_tables(criterion):
    with criterion(1, "symbol tables match the published legend", 1):
        lv, wd = builtin_table("loveda"), builtin_table("wild")
        assert dict(zip(lv.symbols, lv.classes)) == PUBLISHED_LOVEDA
        assert dict(zip(wd.symbols, wd.classes)) == PUBLISHED_WILD
        assert len(lv.entries) == 7 and not set("ADG") & set(wd.symbols)


def test_c02_parameter_table(criterion):
    with criterion(2, "variant counts match the published table (49 / 37)", 1):
        rules = default_rule_table()
        got = {a: (rules.asset(a)["seasonal_variants"], rules.asset(a)["material_variants"])
               for a in rules.asset_names}
        assert got == PUBLISHED_VARIANTS
        assert sum(v[0] for v in got.values()) == 49
        assert sum(v[1] for v in got.values()) == 37
        assert got["forest"][0] == 18


def test_c03_layout_round_trip(criterion):
    with criterion(3, "10,000 random 32x32 layouts round-trip exactly", 10):
        rng = np.random.default_rng(3)
        for name in ("loveda", "wild"):
            table = builtin_table(name)
            for _ in range(5000):
                m = LayoutMatrix(table, rng.integers(0, len(table.entries), size=(32, 32)))
                text = serialize_layout(m)
                again = parse_layout(text, table)
                assert again == m
                assert serialize_layout(again) == text


def _patch_majority_oracle(idx, p, k):
    """Per-patch bincount over the balanced partition; ties to the lowest index."""
    h, w = idx.shape
    rows = [math.ceil(i * h / p) for i in range(p + 1)]
    cols = [math.ceil(j * w / p) for j in range(p + 1)]
    out = np.empty((p, p), dtype=np.int64)
    for i in range(p):
        for j in range(p):
            counts = np.bincount(idx[rows[i]:rows[i + 1], cols[j]:cols[j + 1]].ravel(), minlength=k)
            out[i, j] = int(np.argmax(counts))
    return out


def test_c04_downsampling_oracle(criterion):
    with criterion(4, "200 random 512x512 rasters match the per-patch majority oracle", 60):
        table = builtin_table("loveda")
        k = len(table.entries)
        rng = np.random.default_rng(4)
        for t in range(200):
            block = int(rng.integers(1, 24))
            small = rng.integers(0, k, size=(512 // block + 1, 512 // block + 1))
            idx = np.kron(small, np.ones((block, block), dtype=np.int64))[:512, :512]
            noise = rng.random((512, 512)) < 0.2
            idx = np.where(noise, rng.integers(0, k, size=(512, 512)), idx)
            raster = SegmentationRaster(table.colors[idx].astype(np.uint8), table)
            got = downsample_segmentation(raster, 32)
            assert np.array_equal(got.codes, _patch_majority_oracle(idx, 32, k)), f"raster {t}"


def test_c05_partition_of_unity(criterion):
    with criterion(5, "decoded masks sum to 1 +/- 1e-6; sigma 0 is block replication", 120):
        table = builtin_table("loveda")
        rng = np.random.default_rng(5)
        for t in range(50):
            m = LayoutMatrix(table, rng.integers(0, len(table.entries), size=(32, 32)))
            for sigma in (0, 1, 2, 4):
                ms = decode_layout(m, 512, sigma, 0.0, seed=t)
                assert np.abs(ms.coverage() - 1.0).max() <= 1e-6, (t, sigma)
                if sigma == 0:
                    for c in ms.classes:
                        block = np.kron(m.class_mask(c).astype(np.float64), np.ones((16, 16)))
                        assert np.array_equal(ms[c], block), (t, c)


def _tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_c06_determinism(criterion, tmp_path):
    with criterion(6, "compile is byte-identical across runs and worker counts", 60):
        trees = []
        for i, workers in enumerate(("1", "1", "1", "4")):
            out = tmp_path / f"run{i}"
            code = main(["--quiet", "compile", "--layout", str(FIXTURES / "demo_layout.txt"),
                         "--config", str(FIXTURES / "demo_config.json"), "--workers", workers, "--out", str(out)])
            assert code == EXIT_OK
            trees.append(_tree(out))
        assert any(k.startswith("masks/") for k in trees[0]) and "manifest.json" in trees[0]
        assert all(t == trees[0] for t in trees[1:])


def _cell_of(x, y, p, world):
    cell = world / p
    return np.minimum((np.asarray(y) // cell).astype(int), p - 1), np.minimum((np.asarray(x) // cell).astype(int), p - 1)


def test_c07_constraint_soundness(criterion):
    with criterion(7, "1,000 sampled configs are consistent and every instance obeys its rule", 120):
        rules = default_rule_table()
        table = builtin_table("loveda")
        rng = np.random.default_rng(7)
        params = P.PlacementParams(resolution=64, spacing_m={a: 32.0 for a in rules.asset_names})
        d_min, slope_max, world = params.buildings.d_min, params.buildings.slope_max, params.world_size_m
        checked = {"configs": 0, "agents": 0, "buildings": 0, "assets": 0}
        for li in range(100):
            block = int(rng.choice([2, 4, 8]))
            small = rng.integers(0, len(table.entries), size=(32 // block, 32 // block))
            m = LayoutMatrix(table, np.kron(small, np.ones((block, block), dtype=np.int64)))
            for cfg in F.sample_configs(10, rules, layout_context=m, seed=li):
                checked["configs"] += 1
                assert check_consistency(cfg, m, None, rules).ok
                res = P.compile(m, None, cfg, params, seed=li, rules=rules)
                inst = res.manifest.instances
                terrain = P.Terrain3D(_flat(), world, params.max_height_m)
                # Agents: habitat class and sector of the spawn cell.
                for spec in cfg.agents:
                    mine = [i for i in inst if i.kind == "agent" and i.name == spec.category
                            and i.rule.endswith(f"@{spec.region}") and i.state == spec.state]
                    ok = habitat_cells(rules.habitat(spec.category, spec.state), m, res.zones, rules)
                    ok &= region_mask(spec.region, m.p)
                    r, c = _cell_of([i.x for i in mine], [i.y for i in mine], m.p, world)
                    assert len(mine) >= spec.quantity and ok[r, c].all()
                    checked["agents"] += len(mine)
                # Buildings: exhaustive pairwise spacing, mask and slope.
                b = np.array([(i.x, i.y) for i in inst if i.kind == "building"]).reshape(-1, 2)
                if len(b) > 1:
                    assert pdist(b).min() >= d_min - 1e-9
                if len(b):
                    bm = res.masks["building"]
                    rr = np.minimum((b[:, 1] / world * bm.shape[0]).astype(int), bm.shape[0] - 1)
                    cc = np.minimum((b[:, 0] / world * bm.shape[1]).astype(int), bm.shape[1] - 1)
                    assert (bm[rr, cc] >= 0.5).all()
                    assert (terrain.slope_deg(b[:, 0], b[:, 1]) <= slope_max).all()
                checked["buildings"] += len(b)
                # Scattered assets land where their layout classes have weight.
                for name in {i.name for i in inst if i.kind == "asset"}:
                    pts = np.array([(i.x, i.y) for i in inst if i.kind == "asset" and i.name == name])
                    w = sum(res.masks[c] for c in rules.asset(name)["layout_classes"] if c in res.masks.classes)
                    rr = np.minimum((pts[:, 1] / world * w.shape[0]).astype(int), w.shape[0] - 1)
                    cc = np.minimum((pts[:, 0] / world * w.shape[1]).astype(int), w.shape[1] - 1)
                    assert (w[rr, cc] > 0).all()
                    checked["assets"] += len(pts)
        assert checked["configs"] == 1000 and checked["agents"] > 0 and checked["buildings"] > 0


def _flat():
    from scenelattice.terrain import flat_heightmap
    return flat_heightmap(64, 64, 0)


def test_c08_terrain_conservation(criterion):
    with criterion(8, "flow reaches sinks exactly; erosion conserves mass", 60):
        rng = np.random.default_rng(8)
        for t in range(100):
            z = rng.integers(0, 65536, size=(64, 64)).astype(np.uint16)
            if t % 2:
                z = (np.cumsum(rng.normal(0, 500, (64, 64)), axis=1) + 30000).clip(0, 65535).astype(np.uint16)
            acc = flow_accumulation(z)
            total = acc[sink_mask(z)].sum()
            assert total == 64 * 64 and float(total).is_integer()
        for t in range(10):
            z = (rng.random((64, 64)) * 40000 + 10000).astype(np.uint16)
            h = Heightmap(z, 30.0)
            out = erode(h, 50, talus_angle=20.0)
            before, after = int(z.astype(np.int64).sum()), int(out.values.astype(np.int64).sum())
            assert abs(after - before) <= 1e-6 * before
            assert not np.array_equal(out.values, z)


def test_c09_scatter_statistics(criterion):
    with criterion(9, "scatter counts inside 3-sigma binomial bounds in >= 99/100 trials", 60):
        n = P.sampler_capacity(10.24, 1024.0)
        assert n == 10_000
        mask = np.ones((64, 64))
        for density in (0.1, 0.5, 0.9):
            sd = math.sqrt(n * density * (1 - density))
            inside = sum(
                abs(len(P.scatter_assets("grass", mask, density, seed, 10.24)) - n * density) <= 3 * sd
                for seed in range(100)
            )
            assert inside >= 99, f"density {density}: {inside}/100 inside"


def test_c10_end_to_end_offline(criterion, tmp_path):
    with criterion(10, "mock generate puts most building mass in the center sector", 30):
        out = tmp_path / "gen"
        code = main(["--quiet", "generate", "--instruction-file", str(FIXTURES / "demo_instruction.txt"),
                     "--out", str(out)])
        assert code == EXIT_OK
        assert (out / "manifest.json").is_file()
        ms = load_masks(out / "masks")
        bm = ms["building"]
        edges = _grid.patch_edges(bm.shape[0], 3)
        mass = {}
        for k in range(9):
            r, c = divmod(k, 3)
            mass[k] = float(bm[edges[r]:edges[r + 1], edges[c]:edges[c + 1]].sum())
        assert all(mass[4] > mass[k] for k in range(9) if k != 4), mass
        doc = json.loads((out / "manifest.json").read_text())
        assert any(i["kind"] == "building" for i in doc["instances"])


def test_c11_augmentation_arithmetic(criterion, tmp_path):
    with criterion(11, "2,059 tiles x 4 rotations give 8,236 records", 60):
        table = builtin_table("loveda")
        rng = np.random.default_rng(11)
        img = table.colors[rng.integers(0, 7, size=(29 * 32, 71 * 32))].astype(np.uint8)
        tiles = F.tile_source(img, tile_px=32, table=table)
        assert len(tiles) == 2059
        records = F.forge_records(tiles, rotations=(0, 1, 2, 3))
        assert len(records) == 8236 and len({r.id for r in records}) == 8236
        counts = F.export_dataset(records, tmp_path)
        assert counts["records"] == 8236
        assert len((tmp_path / F.INDEX_NAME).read_text().splitlines()) == 8236


def _malformed(table, rng, kind):
    m = LayoutMatrix(table, np.kron(rng.integers(0, 7, size=(8, 8)), np.ones((4, 4), dtype=np.int64)))
    rows = serialize_layout(m).splitlines()
    if kind == "short":
        for i in rng.choice(32, size=int(rng.integers(1, 4)), replace=False):
            rows[i] = rows[i][:-int(rng.integers(1, 6))]
    elif kind == "prose":
        return m, "Here is the requested map:\n\n" + "\n".join(rows) + "\n\nLet me know if you need changes.", 0
    elif kind == "symbols":
        n = int(rng.integers(1, 52))
        grid = [list(r) for r in rows]
        for cell in rng.choice(1024, size=n, replace=False):
            grid[cell // 32][cell % 32] = str(rng.choice(list("xyz?#")))
        rows = ["".join(r) for r in grid]
    return m, "\n".join(rows), None


def test_c12_bridge_robustness(criterion):
    with criterion(12, "50 malformed responses repaired; 20 over-budget ones rejected", 10):
        table = builtin_table("loveda")
        rng = np.random.default_rng(12)
        for t in range(50):
            m, raw, _ = _malformed(table, rng, ("short", "prose", "symbols")[t % 3])
            res = B.validate_layout_response(raw, table)
            assert res.payload.p == 32 and res.touched_cells <= 0.05 * 1024
            parse_layout(serialize_layout(res.payload), table)
            # Cells the repair did not touch are carried over verbatim.
            raw_rows = [ln.strip() for ln in raw.splitlines()]
            repaired = res.payload.rows()
            for r, line in enumerate(raw_rows[-32:] if t % 3 != 1 else serialize_layout(m).splitlines()):
                for c, ch in enumerate(line[:32]):
                    if ch in table.symbols:
                        assert repaired[r][c] == ch
        for t in range(20):
            m = LayoutMatrix(table, rng.integers(0, 7, size=(32, 32)))
            grid = [list(r) for r in serialize_layout(m).splitlines()]
            if t % 2:
                n = int(rng.integers(60, 300))
                for cell in rng.choice(1024, size=n, replace=False):
                    grid[cell // 32][cell % 32] = "?"
                raw = "\n".join("".join(r) for r in grid)
            else:
                raw = "\n".join("".join(r) for r in grid[:30])      # 64 missing cells
            with pytest.raises(Unrepairable):
                B.validate_layout_response(raw, table)
