import json

import jsonschema
import numpy as np
import pytest
from hypothesis import given, strategies as st

from scenelattice import config as C
from scenelattice.errors import DimensionMismatch, RangeViolation, SchemaError, UnknownEnum
from scenelattice.layout import LayoutMatrix, parse_layout

from conftest import FIXTURES, blocky_layout

# Published variant counts per asset type: (seasonal, material).
VARIANT_COUNTS = {
    "grass": (3, 4), "flower": (2, 4), "dead_branch": (2, 4), "stone": (3, 4),
    "architecture": (4, 3), "road": (2, 2), "lake": (2, 2), "desert": (6, 3),
    "forest": (18, 4), "crops": (4, 4), "snow_mountain": (3, 3),
}


@pytest.fixture(scope="module")
def rules():
    return C.default_rule_table()


def minimal_doc(**coarse):
    base = {"terrain_type": "suburbs", "season": "summer", "artistic_style": "realism",
            "weather": "sunny", "time_of_day": "daytime"}
    base.update(coarse)
    return {"coarse": base}


def full_doc(rules, seed=0, season="summer", agents=()):
    coarse = C.CoarseAttributes("suburbs", season, "realism", "sunny", "daytime")
    fine = C.expand_coarse_to_fine(coarse, rules, seed)
    return C.EnvironmentConfig(coarse, fine, tuple(agents)).to_dict()


def uniform_layout(table, symbol, p=32):
    return parse_layout("\n".join([symbol * p] * p), table)


# -- rule table ------------------------------------------------------------

def test_variant_counts_match_published_table(rules):
    assert set(rules.asset_names) == set(VARIANT_COUNTS)
    for name, (sv, mv) in VARIANT_COUNTS.items():
        spec = rules.asset(name)
        assert (spec["seasonal_variants"], spec["material_variants"]) == (sv, mv)
    assert sum(v[0] for v in VARIANT_COUNTS.values()) == 49
    assert sum(v[1] for v in VARIANT_COUNTS.values()) == 37


def test_every_season_covers_every_asset(rules):
    for season in rules.enum("season"):
        for name in rules.asset_names:
            cell = rules.cell(season, name)
            assert cell["seasonal_variants"] and cell["material_variants"]


def test_rule_table_rejects_out_of_range_variant(rules):
    doc = rules.doc
    doc["season_rules"]["summer"]["grass"]["seasonal_variants"] = [7]
    with pytest.raises(RangeViolation):
        C.RuleTable(doc)


# -- parsing ---------------------------------------------------------------

def test_minimal_config_parses(rules):
    cfg = C.config_from_dict(minimal_doc(), rules)
    assert cfg.coarse.season == "summer"
    assert cfg.fine == {} and cfg.agents == ()


def test_enum_case_is_normalised(rules):
    cfg = C.config_from_dict(minimal_doc(season="Winter", time_of_day="DAYTIME"), rules)
    assert cfg.coarse.season == "winter" and cfg.coarse.time_of_day == "daytime"


def test_region_aliases():
    assert C.normalize_region("Top Left") == "upper_left"
    assert C.normalize_region("middle-center") == "center"


def test_density_above_one_is_range_violation(rules):
    doc = full_doc(rules)
    doc["fine"]["grass"]["density"] = 1.3
    with pytest.raises(RangeViolation) as exc:
        C.config_from_dict(doc, rules)
    assert exc.value.path == "fine.grass.density"


def test_yaw_360_is_range_violation(rules):
    doc = full_doc(rules)
    doc["fine"]["flower"]["rotation"] = [0.0, 360.0, 0.0]
    with pytest.raises(RangeViolation) as exc:
        C.config_from_dict(doc, rules)
    assert exc.value.path == "fine.flower.rotation[1]"


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.update(extra=1), "extra"),
    (lambda d: d["coarse"].update(mood="calm"), "coarse.mood"),
    (lambda d: d["fine"]["grass"].update(colour=3), "fine.grass.colour"),
])
def test_unknown_fields_are_schema_errors(rules, mutate, path):
    doc = full_doc(rules)
    mutate(doc)
    with pytest.raises(SchemaError) as exc:
        C.config_from_dict(doc, rules)
    assert exc.value.path == path


def test_unknown_enum_values(rules):
    with pytest.raises(UnknownEnum):
        C.config_from_dict(minimal_doc(season="monsoon"), rules)
    doc = minimal_doc()
    doc["agents"] = [{"category": "dragon", "quantity": 1, "state": "idle", "region": "center"}]
    with pytest.raises(UnknownEnum):
        C.config_from_dict(doc, rules)


def test_quantity_must_be_positive(rules):
    doc = minimal_doc()
    doc["agents"] = [{"category": "sheep", "quantity": 0, "state": "idle", "region": "center"}]
    with pytest.raises(RangeViolation):
        C.config_from_dict(doc, rules)


def test_invalid_json_is_schema_error(rules):
    with pytest.raises(SchemaError):
        C.parse_config("{not json", rules)


@given(seed=st.integers(0, 10_000), season=st.sampled_from(["spring", "summer", "autumn", "winter"]))
def test_parse_serialize_identity(seed, season):
    rules = C.default_rule_table()
    cfg = C.config_from_dict(full_doc(rules, seed, season), rules)
    again = C.parse_config(cfg.to_json(), rules)
    assert again == cfg
    assert again.to_json() == cfg.to_json()


@given(seed=st.integers(0, 10_000), season=st.sampled_from(["spring", "summer", "autumn", "winter"]))
def test_expanded_configs_satisfy_json_schema(seed, season):
    rules = C.default_rule_table()
    jsonschema.validate(full_doc(rules, seed, season), C.config_json_schema(rules))


@pytest.mark.parametrize("field, value", [
    ("density", 1.3), ("density", -0.1), ("seasonal_variant", 9), ("material_variant", -1),
])
def test_schema_and_parser_agree_on_rejection(rules, field, value):
    doc = full_doc(rules)
    doc["fine"]["grass"][field] = value
    validator = jsonschema.Draft202012Validator(C.config_json_schema(rules))
    assert list(validator.iter_errors(doc))
    with pytest.raises(RangeViolation):
        C.config_from_dict(doc, rules)


def test_fixture_configs_parse(rules):
    for name in ("demo_config.json", "whale_config.json"):
        text = (FIXTURES / name).read_text()
        cfg = C.parse_config(text, rules)
        jsonschema.validate(json.loads(text), C.config_json_schema(rules))
        assert cfg.to_dict() == json.loads(text)


# -- coarse -> fine --------------------------------------------------------

@given(seed=st.integers(0, 2**31 - 1))
def test_winter_grass_never_denser_than_summer(seed):
    rules = C.default_rule_table()
    mk = lambda s: C.CoarseAttributes("plains", s, "realism", "sunny", "daytime")
    winter = C.expand_coarse_to_fine(mk("winter"), rules, seed)["grass"]
    summer = C.expand_coarse_to_fine(mk("summer"), rules, seed)["grass"]
    assert winter.density <= summer.density


def test_winter_foliage_variants_subset_of_summer(rules):
    for name in ("grass", "flower", "forest", "crops"):
        w = set(rules.cell("winter", name)["seasonal_variants"])
        s = set(rules.cell("summer", name)["seasonal_variants"])
        assert w <= s, name


def test_singleton_variant_always_chosen(rules):
    doc = rules.doc
    doc["season_rules"]["summer"]["grass"]["seasonal_variants"] = [2]
    r = C.RuleTable(doc)
    coarse = C.CoarseAttributes("plains", "summer", "realism", "sunny", "daytime")
    for seed in range(20):
        assert C.expand_coarse_to_fine(coarse, r, seed)["grass"].seasonal_variant == 2


@given(seed=st.integers(0, 2**31 - 1), season=st.sampled_from(["spring", "summer", "autumn", "winter"]))
def test_expansion_stays_inside_rule_cells(seed, season):
    rules = C.default_rule_table()
    coarse = C.CoarseAttributes("plains", season, "realism", "sunny", "daytime")
    fine = C.expand_coarse_to_fine(coarse, rules, seed)
    assert fine == C.expand_coarse_to_fine(coarse, rules, seed)
    for name, fp in fine.items():
        cell = rules.cell(season, name)
        assert fp.seasonal_variant in cell["seasonal_variants"]
        assert fp.material_variant in cell["material_variants"]
        assert cell["density"][0] <= fp.density <= cell["density"][1]
    cfg = C.EnvironmentConfig(coarse, fine)
    assert C.check_consistency(cfg, uniform_layout(_loveda(), "A"), None, rules).ok


def _loveda():
    from scenelattice.layout import builtin_table
    return builtin_table("loveda")


# -- regions ---------------------------------------------------------------

def test_upper_left_at_32():
    cells = C.region_cells("upper_left", 32)
    assert cells == {(r, c) for r in range(11) for c in range(11)}
    assert len(cells) == 121


def test_center_at_3():
    assert C.region_cells("center", 3) == {(1, 1)}


@pytest.mark.parametrize("p", [3, 4, 7, 10, 32, 33, 64])
def test_regions_partition_grid(p):
    total = np.zeros((p, p), dtype=int)
    for name in C.REGIONS:
        mask = C.region_mask(name, p)
        total += mask
        for r, c in np.argwhere(mask):
            assert C.region_of_cell(int(r), int(c), p) == name
    assert (total == 1).all()


# -- consistency -----------------------------------------------------------

def test_whale_in_grass_is_unsatisfiable(rules, loveda):
    cfg = C.config_from_dict({**minimal_doc(), "agents": [
        {"category": "whale", "quantity": 1, "state": "swimming", "region": "upper_left"}]}, rules)
    report = C.check_consistency(cfg, uniform_layout(loveda, "G"), None, rules)
    assert report.rule_ids() == ["habitat_unsatisfiable"]
    assert "habitat_unsatisfiable(whale)" in report.violations[0].message
    assert report.violations[0].location.endswith("upper_left")


def test_idle_warrior_on_grass_is_consistent(rules, loveda):
    cfg = C.config_from_dict({**minimal_doc(), "agents": [
        {"category": "ancient_warrior", "quantity": 1, "state": "idle", "region": "middle_left"}]}, rules)
    assert C.check_consistency(cfg, uniform_layout(loveda, "G"), None, rules).ok


def test_whale_in_water_is_consistent(rules, loveda):
    cfg = C.parse_config((FIXTURES / "whale_config.json").read_text(), rules)
    assert C.check_consistency(cfg, uniform_layout(loveda, "W"), None, rules).ok


@given(seed=st.integers(0, 10_000))
def test_snow_violation_counts_snow_cells(seed):
    from scenelattice.layout import builtin_table
    wild = builtin_table("wild")
    rules = C.default_rule_table()
    m = blocky_layout(wild, 32, seed)
    zones = np.full((32, 32), "low")
    cfg = C.config_from_dict(minimal_doc(), rules)
    report = C.check_consistency(cfg, m, zones, rules)
    n_snow = sum(row.count("S") for row in m.rows())
    if n_snow:
        (v,) = report.violations
        assert v.rule_id == "snow_below_threshold" and v.count == n_snow
    else:
        assert report.ok


def test_snow_in_high_zone_is_fine(rules, wild):
    cfg = C.config_from_dict(minimal_doc(), rules)
    assert C.check_consistency(cfg, uniform_layout(wild, "S"), np.full((32, 32), "high"), rules).ok


def test_zone_shape_mismatch(rules, loveda):
    cfg = C.config_from_dict(minimal_doc(), rules)
    with pytest.raises(DimensionMismatch):
        C.check_consistency(cfg, uniform_layout(loveda, "G"), np.full((16, 16), "low"), rules)


@given(seed=st.integers(0, 10_000), qty=st.integers(1, 40))
def test_more_agents_never_fixes_a_violation(seed, qty):
    from scenelattice.layout import builtin_table
    loveda = builtin_table("loveda")
    rules = C.default_rule_table()
    m = blocky_layout(loveda, 16, seed)
    agent = {"category": "sheep", "quantity": qty, "state": "idle", "region": "center"}
    bad = lambda q: not C.check_consistency(
        C.config_from_dict({**minimal_doc(), "agents": [{**agent, "quantity": q}]}, rules), m, None, rules).ok
    if bad(qty):
        assert bad(qty + 1)


def test_fine_variant_outside_season_is_flagged(rules, loveda):
    doc = full_doc(rules, season="winter")
    allowed = rules.cell("winter", "forest")["seasonal_variants"]
    outside = next(i for i in range(18) if i not in allowed)
    doc["fine"]["forest"]["seasonal_variant"] = outside
    report = C.check_consistency(C.config_from_dict(doc, rules), uniform_layout(loveda, "F"), None, rules)
    assert report.rule_ids() == ["fine_seasonal_variant"]


def test_without_agents_drops_only_agents(rules):
    cfg = C.parse_config((FIXTURES / "whale_config.json").read_text(), rules)
    stripped = cfg.without_agents()
    assert stripped.agents == () and stripped.fine == cfg.fine and stripped.coarse == cfg.coarse


def test_layout_matrix_is_used_unchanged(rules, loveda):
    m = uniform_layout(loveda, "G")
    before = m.rows()
    C.check_consistency(C.config_from_dict(minimal_doc(), rules), m, np.full((32, 32), "low"), rules)
    assert m.rows() == before and isinstance(m, LayoutMatrix)
