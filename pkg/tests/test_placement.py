import json
import math
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from scenelattice import placement as P
from scenelattice.config import AgentSpec, EnvironmentConfig, default_rule_table, parse_config, region_of_cell
from scenelattice.errors import ConsistencyError, HabitatExhausted, InfeasibleRules, PlacementError, StageError
from scenelattice.layout import parse_layout, read_layout
from scenelattice.terrain import MAX_ELEVATION, Heightmap, flat_heightmap, load_heightmap

from conftest import FIXTURES

FAST = P.PlacementParams(resolution=128)


@pytest.fixture(scope="module")
def rules():
    return default_rule_table()


def flat_terrain(world=1024.0):
    return P.Terrain3D(flat_heightmap(64, 64, 0), world, 200.0)


def layout_from(rows, table):
    return parse_layout("\n".join(rows), table)


def compass_yaw(dx, dy):
    return math.degrees(math.atan2(dy, dx)) % 360.0


def angle_gap(a, b):
    return abs((a - b + 180.0) % 360.0 - 180.0)


# -- scattering ------------------------------------------------------------

def test_sampler_capacity():
    assert P.sampler_capacity(10.24, 1024.0) == 10_000
    assert P.sampler_capacity(8.0, 1024.0) == 128 * 128


@pytest.mark.parametrize("density", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_scatter_count_is_binomial(density, seed):
    n = P.sampler_capacity(10.24, 1024.0)
    got = len(P.scatter_assets("grass", np.ones((64, 64)), density, seed, 10.24))
    sd = math.sqrt(n * density * (1 - density))
    assert abs(got - n * density) <= 5 * sd


def test_scatter_respects_mask():
    mask = np.zeros((64, 64))
    mask[:, :32] = 1.0
    inst = P.scatter_assets("grass", mask, 1.0, 0, 8.0)
    assert inst and all(i.x < 512.0 for i in inst)
    assert len(inst) == 128 * 64


def test_scatter_zero_density_and_bad_density():
    assert P.scatter_assets("grass", np.ones((8, 8)), 0.0, 0, 8.0) == []
    with pytest.raises(PlacementError):
        P.scatter_assets("grass", np.ones((8, 8)), 1.2, 0, 8.0)


@given(seed=st.integers(0, 10_000), lo=st.floats(0, 1), hi=st.floats(0, 1))
def test_scatter_is_monotone_in_density(seed, lo, hi):
    lo, hi = min(lo, hi), max(lo, hi)
    mask = np.ones((16, 16))
    a = {(i.x, i.y) for i in P.scatter_assets("stone", mask, lo, seed, 32.0)}
    b = {(i.x, i.y) for i in P.scatter_assets("stone", mask, hi, seed, 32.0)}
    assert a <= b


def test_scatter_positions_stay_in_world():
    inst = P.scatter_assets("grass", np.ones((4, 4)), 1.0, 3, 7.0, world_size_m=100.0)
    assert all(0 <= i.x < 100 and 0 <= i.y < 100 for i in inst)
    assert all(0 <= i.orientation[1] < 360 for i in inst)


# -- buildings -------------------------------------------------------------

@given(seed=st.integers(0, 10_000), d_min=st.floats(5.0, 40.0))
def test_buildings_respect_minimum_distance(seed, d_min):
    rules = P.BuildingRules(d_min=d_min, d_max=d_min * 4)
    b = P.place_buildings(np.ones((32, 32)), flat_terrain(256.0), rules, seed)
    assert b
    for u, v in combinations(b, 2):
        assert math.hypot(u.x - v.x, u.y - v.y) >= d_min - 1e-9


def test_buildings_are_dense_packing():
    # Greedy insertion over a fine candidate set leaves no gap wider than
    # 2 * d_min inside the mask.
    b = P.place_buildings(np.ones((32, 32)), flat_terrain(256.0), P.BuildingRules(d_min=15.0), 0)
    pts = np.array([(i.x, i.y) for i in b])
    probe = np.stack(np.meshgrid(np.arange(5, 251, 10.0), np.arange(5, 251, 10.0)), -1).reshape(-1, 2)
    nearest = np.min(np.linalg.norm(probe[:, None] - pts[None], axis=-1), axis=1)
    assert nearest.max() < 2 * 15.0


def test_buildings_avoid_steep_ground():
    # Flat west half, steep ramp (about 21 degrees) over the east half.
    values = np.zeros((64, 64), dtype=np.uint16)
    values[:, 32:] = np.linspace(0, MAX_ELEVATION, 32).round().astype(np.uint16)
    terrain = P.Terrain3D(Heightmap(values), 1024.0, 200.0)
    b = P.place_buildings(np.ones((64, 64)), terrain, P.BuildingRules(slope_max=15.0), 0)
    assert b
    assert all(i.x < 512.0 + 32.0 for i in b)
    assert all(terrain.slope_deg(i.x, i.y)[0] <= 15.0 for i in b)


def test_slope_of_gentle_ramp(fixtures):
    h = load_heightmap(fixtures / "ramp_heightmap.png")
    terrain = P.Terrain3D(h, 1024.0, 200.0)
    # The fixture rises 300 units per pixel eastward and 100 southward.
    rise = math.hypot(300, 100) * 200.0 / MAX_ELEVATION
    expected = math.degrees(math.atan(rise / 16.0))
    assert terrain.slope_deg(512.0, 512.0)[0] == pytest.approx(expected, abs=0.2)


def test_buildings_face_downhill_without_roads():
    values = np.tile(np.linspace(0, MAX_ELEVATION // 4, 64).round().astype(np.uint16), (64, 1))
    terrain = P.Terrain3D(Heightmap(values), 1024.0, 200.0)
    b = P.place_buildings(np.ones((64, 64)), terrain, P.BuildingRules(), 1)
    assert b
    # Elevation rises eastward, so downhill is due west (yaw 180).
    for i in b:
        assert i.rule == "building:downhill"
        assert angle_gap(i.orientation[1], 180.0) <= 15.0 + 1e-9


def test_buildings_face_adjacent_road(loveda):
    rows = ["B" * 8] * 8
    rows = [r[:4] + "R" + r[5:] for r in rows]
    m = layout_from(rows, loveda)
    mask = np.kron(m.class_mask("building"), np.ones((8, 8)))
    b = P.place_buildings(mask, flat_terrain(256.0), P.BuildingRules(d_min=10.0, d_max=40.0), 5, layout=m)
    cell = 32.0
    facing = [i for i in b if i.rule == "building:road_facing"]
    assert facing
    for i in facing:
        r, c = int(i.y // cell), int(i.x // cell)
        # Independent oracle: nearest road-cell centre among the 8 neighbours.
        cands = [(math.hypot((cc + 0.5) * cell - i.x, (rr + 0.5) * cell - i.y), rr, cc)
                 for rr in range(r - 1, r + 2) for cc in range(c - 1, c + 2)
                 if (rr, cc) != (r, c) and 0 <= rr < 8 and 0 <= cc < 8 and rows[rr][cc] == "R"]
        _, rr, cc = min(cands)
        want = compass_yaw((cc + 0.5) * cell - i.x, (rr + 0.5) * cell - i.y)
        assert angle_gap(i.orientation[1], want) <= 15.0 + 1e-9
    far = [i for i in b if abs(int(i.x // cell) - 4) > 1]
    assert all(i.rule == "building:downhill" for i in far)


def test_infeasible_building_rules():
    t = flat_terrain(100.0)
    with pytest.raises(InfeasibleRules):
        P.place_buildings(np.ones((4, 4)), t, P.BuildingRules(d_min=200.0, d_max=300.0), 0)
    with pytest.raises(InfeasibleRules):
        P.place_buildings(np.ones((4, 4)), t, P.BuildingRules(d_min=30.0, d_max=20.0), 0)


def test_isolation_warnings():
    mk = lambda x, y: P.Instance("building", "architecture", x, y, 0.0)
    ws = P.isolation_warnings([mk(0, 0), mk(10, 0), mk(500, 500)], 60.0)
    assert len(ws) == 1 and "isolated" in ws[0]


# -- agents ----------------------------------------------------------------

def test_agents_land_on_habitat_in_their_sector(loveda, rules):
    rows = ["G" * 16] * 8 + ["W" * 16] * 8
    m = layout_from(rows, loveda)
    agents = [AgentSpec("whale", 3, "swimming", "lower_center"),
              AgentSpec("sheep", 4, "grazing", "upper_left")]
    inst = P.spawn_agents(agents, m, None, flat_terrain(), rules, 0)
    assert len(inst) == 7
    cell = 1024.0 / 16
    seen = {}
    for i in inst:
        r, c = int(i.y // cell), int(i.x // cell)
        seen.setdefault(i.name, []).append((r, c))
        if i.name == "whale":
            assert rows[r][c] == "W" and region_of_cell(r, c, 16) == "lower_center"
            assert i.state == "swimming"
        else:
            assert rows[r][c] == "G" and region_of_cell(r, c, 16) == "upper_left"
    assert all(len(set(v)) == len(v) for v in seen.values())


def test_agent_shortfall_raises(loveda, rules):
    m = layout_from(["G" * 16] * 16, loveda)
    with pytest.raises(HabitatExhausted) as exc:
        P.spawn_agents([AgentSpec("whale", 1, "swimming", "center")], m, None, flat_terrain(), rules, 0)
    assert exc.value.available == 0 and exc.value.requested == 1


# -- compile ---------------------------------------------------------------

@pytest.fixture(scope="module")
def demo(rules):
    from scenelattice.layout import builtin_table
    m = read_layout(FIXTURES / "demo_layout.txt", builtin_table("loveda"))
    cfg = parse_config((FIXTURES / "demo_config.json").read_text(), rules)
    return m, cfg


def test_compile_is_deterministic(demo, rules):
    m, cfg = demo
    a = P.compile(m, None, cfg, FAST, seed=3, rules=rules)
    b = P.compile(m, None, cfg, FAST, seed=3, rules=rules)
    assert a.manifest.to_json() == b.manifest.to_json()
    assert all(np.array_equal(a.masks[c], b.masks[c]) for c in a.masks.classes)


def test_compile_seed_matters(demo, rules):
    m, cfg = demo
    a = P.compile(m, None, cfg, FAST, seed=3, rules=rules)
    b = P.compile(m, None, cfg, FAST, seed=4, rules=rules)
    assert a.manifest.to_json() != b.manifest.to_json()


def test_compile_workers_do_not_change_output(demo, rules):
    m, cfg = demo
    a = P.compile(m, None, cfg, FAST, seed=1, rules=rules)
    b = P.compile(m, None, cfg, FAST.replace(workers=4), seed=1, rules=rules)
    assert a.manifest.to_json() == b.manifest.to_json()


def test_compile_report_counts(demo, rules):
    m, cfg = demo
    res = P.compile(m, None, cfg, FAST, seed=0, rules=rules)
    counts = res.report["counts"]
    assert counts["agent"] == sum(a.quantity for a in cfg.agents)
    assert counts["asset"] + counts["building"] + counts["agent"] == len(res.manifest.instances)
    assert sum(counts["by_class"].values()) == len(res.manifest.instances)


def test_compile_rejects_inconsistent_config(loveda, rules):
    m = layout_from(["G" * 32] * 32, loveda)
    cfg = parse_config((FIXTURES / "whale_config.json").read_text(), rules)
    with pytest.raises(StageError) as exc:
        P.compile(m, None, cfg, FAST, rules=rules)
    assert exc.value.stage == "consistency"
    assert isinstance(exc.value.error, ConsistencyError)
    assert "habitat_unsatisfiable" in exc.value.error.report.rule_ids()


def test_changing_agents_only_changes_agent_instances(demo, rules):
    m, cfg = demo
    other = EnvironmentConfig(cfg.coarse, cfg.fine, (AgentSpec("goblin", 2, "idle", "center"),))
    a = P.compile(m, None, cfg, FAST, seed=2, rules=rules)
    b = P.compile(m, None, other, FAST, seed=2, rules=rules)
    strip = lambda r: [i for i in r.manifest.instances if i.kind != "agent"]
    assert strip(a) == strip(b)
    assert a.manifest.materials == b.manifest.materials
    assert all(np.array_equal(a.masks[c], b.masks[c]) for c in a.masks.classes)
    assert [i.name for i in b.manifest.instances if i.kind == "agent"] == ["goblin", "goblin"]
    # The provenance hash covers the whole configuration, agents included.
    assert a.manifest.provenance["layout_hash"] == b.manifest.provenance["layout_hash"]
    assert a.manifest.provenance["config_hash"] != b.manifest.provenance["config_hash"]


def test_manifest_round_trip(demo, rules):
    m, cfg = demo
    res = P.compile(m, None, cfg, FAST, seed=0, rules=rules)
    text = res.manifest.to_json()
    doc = json.loads(text)
    P.validate_manifest(doc)
    again = P.PlacementManifest.from_dict(doc)
    assert again.to_json() == text


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(format="other"),
    lambda d: d.update(version=9),
    lambda d: d.pop("instances"),
    lambda d: d["instances"][0].update(kind="tree"),
    lambda d: d["instances"][0].update(position=[5000.0, 1.0, 0.0]),
])
def test_manifest_validation_rejects(demo, rules, mutate):
    m, cfg = demo
    doc = json.loads(P.compile(m, None, cfg, FAST, seed=0, rules=rules).manifest.to_json())
    mutate(doc)
    with pytest.raises(PlacementError):
        P.validate_manifest(doc)


def test_elevations_follow_heightmap(loveda, rules):
    values = np.tile(np.linspace(0, MAX_ELEVATION, 64).round().astype(np.uint16), (64, 1))
    h = Heightmap(values)
    m = layout_from(["G" * 32] * 32, loveda)
    cfg = parse_config((FIXTURES / "demo_config.json").read_text(), rules).without_agents()
    res = P.compile(m, h, cfg, FAST.replace(buildings=P.BuildingRules(slope_max=45.0)), seed=0, rules=rules)
    for i in res.manifest.instances[:200]:
        assert i.z == pytest.approx(min(max(i.x / 1024.0 * 64 - 0.5, 0), 63) / 63 * 200.0, abs=0.01)
