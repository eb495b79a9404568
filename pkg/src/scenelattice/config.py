"""Environment configurations: data model, parsing, rule-driven expansion
and consistency checking against a layout and its elevation zones.

A configuration has three parts:

* ``coarse`` -- five global attributes (terrain type, season, artistic
  style, weather, time of day) drawn from closed enumerations;
* ``fine`` -- per-asset-type parameters (seasonal/material variant
  indices, density, rotation, ...);
* ``agents`` -- category, quantity, state and one of nine map sectors.

The :class:`RuleTable` ties them together: for every (season, asset type)
it lists permitted variant indices and a density range, and for every
agent category the allowed states and habitat.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy import ndimage

from . import _grid
from .errors import (
    DimensionMismatch,
    RangeViolation,
    RuleGap,
    SchemaError,
    UnknownEnum,
)
from .layout import LayoutMatrix

CONFIG_VERSION = 1
COARSE_FIELDS = ("terrain_type", "season", "artistic_style", "weather", "time_of_day")
PARAM_FIELDS = ("density", "rotation", "scale", "height", "wind", "slope")
REGIONS = (
    "upper_left", "upper_center", "upper_right",
    "middle_left", "center", "middle_right",
    "lower_left", "lower_center", "lower_right",
)
_REGION_ALIASES = {
    "middle_center": "center", "center_center": "center", "centre": "center",
    "central": "center", "middle": "center",
}


def normalize_enum(value: str) -> str:
    return "_".join(value.strip().lower().replace("-", " ").replace("_", " ").split())


def normalize_region(value: str) -> str:
    v = normalize_enum(value)
    v = v.replace("top", "upper").replace("bottom", "lower").replace("centre", "center")
    return _REGION_ALIASES.get(v, v)


# -- rule table ------------------------------------------------------------

class RuleTable:
    """Read-only view over a rule-table document."""

    def __init__(self, doc: Mapping[str, Any]):
        self._doc = copy.deepcopy(dict(doc))
        self._validate()

    def _validate(self):
        d = self._doc
        if d.get("version") != 1:
            raise SchemaError("version", f"unsupported rule table version {d.get('version')!r}")
        for f in COARSE_FIELDS:
            if f not in d["enums"]:
                raise SchemaError(f"enums.{f}", "missing enumeration")
        for season, cells in d["season_rules"].items():
            if season not in d["enums"]["season"]:
                raise UnknownEnum(f"season_rules.{season}", "not a season")
            for asset, c in cells.items():
                spec = d["assets"].get(asset)
                if spec is None:
                    raise SchemaError(f"season_rules.{season}.{asset}", "unknown asset type")
                if any(not 0 <= i < spec["seasonal_variants"] for i in c["seasonal_variants"]):
                    raise RangeViolation(f"season_rules.{season}.{asset}", "seasonal index out of range")
                if any(not 0 <= i < spec["material_variants"] for i in c["material_variants"]):
                    raise RangeViolation(f"season_rules.{season}.{asset}", "material index out of range")
                lo, hi = c["density"]
                if not 0.0 <= lo <= hi <= 1.0:
                    raise RangeViolation(f"season_rules.{season}.{asset}.density", "range must lie in [0, 1]")
        for cat, spec in d["agents"].items():
            if not spec.get("states"):
                raise SchemaError(f"agents.{cat}.states", "category needs at least one state")

    @property
    def doc(self) -> dict:
        return copy.deepcopy(self._doc)

    def enum(self, name: str) -> tuple[str, ...]:
        return tuple(self._doc["enums"][name])

    @property
    def asset_names(self) -> tuple[str, ...]:
        return tuple(self._doc["assets"])

    def asset(self, name: str) -> dict:
        return self._doc["assets"][name]

    def param_range(self, param: str) -> tuple[float, float]:
        lo, hi = self._doc["param_ranges"][param]
        return float(lo), float(hi)

    def sample_range(self, param: str) -> tuple[float, float]:
        lo, hi = self._doc["sample_ranges"].get(param, self._doc["param_ranges"][param])
        return float(lo), float(hi)

    def cell(self, season: str, asset: str) -> dict:
        try:
            return self._doc["season_rules"][season][asset]
        except KeyError:
            raise RuleGap("season", season, asset) from None

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self._doc["agents"])

    def allowed_states(self, category: str) -> tuple[str, ...]:
        return tuple(self._doc["agents"][category]["states"])

    def is_flying(self, category: str) -> bool:
        return bool(self._doc["agents"][category].get("flying", False))

    def habitat(self, category: str, state: str) -> dict:
        spec = self._doc["agents"][category]
        h = spec.get("state_habitats", {}).get(state)
        if h is None:
            h = self._doc.get("state_habitats", {}).get(state)
        if h is None or spec.get("flying"):
            h = spec.get("habitat", {"classes": "land"})
        return {"classes": h.get("classes", "land"), "min_component": int(h.get("min_component", 1)),
                "zones": h.get("zones")}

    @property
    def snow_class(self) -> str:
        return self._doc.get("snow_class", "snow")

    @property
    def water_class(self) -> str:
        return self._doc.get("water_class", "water")

    def assets_for_class(self, asset_class: str) -> tuple[str, ...]:
        return tuple(a for a, s in self._doc["assets"].items() if asset_class in s["layout_classes"])

    def with_agent(self, category: str, states, habitat: dict | None = None,
                   flying: bool = False) -> "RuleTable":
        doc = self.doc
        doc["agents"][category] = {"states": list(states), "flying": flying,
                                   "habitat": habitat or {"classes": "land"}}
        return RuleTable(doc)


def default_rule_table() -> RuleTable:
    ref = resources.files("scenelattice") / "data" / "rules.json"
    return RuleTable(json.loads(ref.read_text(encoding="utf-8")))


def load_rule_table(path: str | Path) -> RuleTable:
    return RuleTable(json.loads(Path(path).read_text(encoding="utf-8")))


# -- data model ------------------------------------------------------------

@dataclass(frozen=True)
class CoarseAttributes:
    terrain_type: str
    season: str
    artistic_style: str
    weather: str
    time_of_day: str

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in COARSE_FIELDS}


@dataclass(frozen=True)
class AssetParams:
    seasonal_variant: int
    material_variant: int
    density: float
    rotation: tuple[float, float, float] | None = None
    scale: float | None = None
    height: float | None = None
    wind: float | None = None
    slope: float | None = None

    def to_dict(self) -> dict:
        out = {"seasonal_variant": self.seasonal_variant, "material_variant": self.material_variant,
               "density": self.density}
        for f in PARAM_FIELDS[1:]:
            v = getattr(self, f)
            if v is not None:
                out[f] = list(v) if f == "rotation" else v
        return out


@dataclass(frozen=True)
class AgentSpec:
    category: str
    quantity: int
    state: str
    region: str

    def to_dict(self) -> dict:
        return {"category": self.category, "quantity": self.quantity,
                "state": self.state, "region": self.region}


@dataclass(frozen=True)
class EnvironmentConfig:
    coarse: CoarseAttributes
    fine: Mapping[str, AssetParams] = field(default_factory=dict)
    agents: tuple[AgentSpec, ...] = ()
    version: int = CONFIG_VERSION

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "coarse": self.coarse.to_dict(),
            "fine": {k: self.fine[k].to_dict() for k in sorted(self.fine)},
            "agents": [a.to_dict() for a in self.agents],
        }

    def to_json(self, indent: int | None = 2) -> str:
        if indent is None:
            return _grid.canonical_json(self.to_dict())
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True) + "\n"

    def config_hash(self) -> str:
        return _grid.sha256_text(_grid.canonical_json(self.to_dict()))

    def without_agents(self) -> "EnvironmentConfig":
        return EnvironmentConfig(self.coarse, self.fine, (), self.version)


# -- parsing ---------------------------------------------------------------

def _require_object(value, path) -> dict:
    if not isinstance(value, dict):
        raise SchemaError(path, f"expected an object, got {type(value).__name__}")
    return value


def _check_keys(obj: dict, path: str, allowed, required=()):
    for k in obj:
        if k not in allowed:
            raise SchemaError(f"{path}.{k}" if path else k, "unknown field")
    for k in required:
        if k not in obj:
            raise SchemaError(f"{path}.{k}" if path else k, "missing required field")


def _enum(value, allowed, path, normalize=normalize_enum) -> str:
    if not isinstance(value, str):
        raise SchemaError(path, f"expected a string, got {type(value).__name__}")
    v = normalize(value)
    if v not in allowed:
        raise UnknownEnum(path, f"{value!r} is not one of {sorted(allowed)}")
    return v


def _int(value, path) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise SchemaError(path, f"expected an integer, got {value!r}")
    return value


def _real(value, path) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise RangeViolation(path, "must be finite")
    return float(value)


def _in_range(value: float, lo: float, hi: float, path: str, half_open: bool = False) -> float:
    ok = lo <= value < hi if half_open else lo <= value <= hi
    if not ok:
        bracket = ")" if half_open else "]"
        raise RangeViolation(path, f"{value} outside [{lo}, {hi}{bracket}")
    return value


def parse_asset_params(name: str, obj, rules: RuleTable, path: str) -> AssetParams:
    spec = rules.asset(name)
    obj = _require_object(obj, path)
    params = spec["params"]
    _check_keys(obj, path, ["seasonal_variant", "material_variant", *params],
                ["seasonal_variant", "material_variant", *params])
    sv = _int(obj["seasonal_variant"], f"{path}.seasonal_variant")
    if not 0 <= sv < spec["seasonal_variants"]:
        raise RangeViolation(f"{path}.seasonal_variant", f"{sv} not in [0, {spec['seasonal_variants']})")
    mv = _int(obj["material_variant"], f"{path}.material_variant")
    if not 0 <= mv < spec["material_variants"]:
        raise RangeViolation(f"{path}.material_variant", f"{mv} not in [0, {spec['material_variants']})")
    values: dict[str, Any] = {}
    for p in params:
        lo, hi = rules.param_range(p)
        ppath = f"{path}.{p}"
        if p == "rotation":
            rot = obj[p]
            if not isinstance(rot, list) or len(rot) != 3:
                raise SchemaError(ppath, "expected [pitch, yaw, roll]")
            values[p] = tuple(
                _in_range(_real(v, f"{ppath}[{i}]"), lo, hi, f"{ppath}[{i}]", half_open=True)
                for i, v in enumerate(rot)
            )
        elif p == "scale":
            v = _real(obj[p], ppath)
            if v <= 0:
                raise RangeViolation(ppath, "scale must be positive")
            values[p] = _in_range(v, lo, hi, ppath)
        else:
            values[p] = _in_range(_real(obj[p], ppath), lo, hi, ppath)
    return AssetParams(sv, mv, **values)


def config_from_dict(doc, rules: RuleTable | None = None) -> EnvironmentConfig:
    rules = rules or default_rule_table()
    doc = _require_object(doc, "")
    _check_keys(doc, "", ("version", "coarse", "fine", "agents"), ("coarse",))
    version = doc.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise SchemaError("version", f"unsupported configuration version {version!r}")

    coarse_doc = _require_object(doc["coarse"], "coarse")
    _check_keys(coarse_doc, "coarse", COARSE_FIELDS, COARSE_FIELDS)
    coarse = CoarseAttributes(**{
        f: _enum(coarse_doc[f], rules.enum(f), f"coarse.{f}") for f in COARSE_FIELDS
    })

    fine_doc = _require_object(doc.get("fine", {}), "fine")
    fine = {}
    for raw_name, obj in fine_doc.items():
        name = normalize_enum(raw_name)
        if name not in rules.asset_names:
            raise UnknownEnum(f"fine.{raw_name}", f"unknown asset type {raw_name!r}")
        fine[name] = parse_asset_params(name, obj, rules, f"fine.{name}")

    agents_doc = doc.get("agents", [])
    if not isinstance(agents_doc, list):
        raise SchemaError("agents", "expected a list")
    agents = []
    for i, a in enumerate(agents_doc):
        path = f"agents[{i}]"
        a = _require_object(a, path)
        _check_keys(a, path, ("category", "quantity", "state", "region"),
                    ("category", "quantity", "state", "region"))
        cat = _enum(a["category"], rules.categories, f"{path}.category")
        qty = _int(a["quantity"], f"{path}.quantity")
        if qty < 1:
            raise RangeViolation(f"{path}.quantity", "quantity must be >= 1")
        state = _enum(a["state"], rules.allowed_states(cat), f"{path}.state")
        region = _enum(a["region"], REGIONS, f"{path}.region", normalize=normalize_region)
        agents.append(AgentSpec(cat, qty, state, region))
    return EnvironmentConfig(coarse, fine, tuple(agents), version)


def parse_config(json_text: str, rules: RuleTable | None = None) -> EnvironmentConfig:
    """Parse and validate a configuration document.

    Unknown fields are rejected; enumeration values are case-normalised.
    """
    try:
        doc = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise SchemaError("", f"invalid JSON: {exc}") from exc
    return config_from_dict(doc, rules)


def config_json_schema(rules: RuleTable | None = None) -> dict:
    """JSON Schema (draft 2020-12) describing canonical configuration documents."""
    rules = rules or default_rule_table()

    def param_schema(p):
        lo, hi = rules.param_range(p)
        if p == "rotation":
            item = {"type": "number", "minimum": lo, "exclusiveMaximum": hi}
            return {"type": "array", "items": item, "minItems": 3, "maxItems": 3}
        if p == "scale":
            return {"type": "number", "exclusiveMinimum": 0, "minimum": lo, "maximum": hi}
        return {"type": "number", "minimum": lo, "maximum": hi}

    fine_props = {}
    for name in rules.asset_names:
        spec = rules.asset(name)
        props = {
            "seasonal_variant": {"type": "integer", "minimum": 0, "maximum": spec["seasonal_variants"] - 1},
            "material_variant": {"type": "integer", "minimum": 0, "maximum": spec["material_variants"] - 1},
        }
        props.update({p: param_schema(p) for p in spec["params"]})
        fine_props[name] = {"type": "object", "properties": props,
                            "required": list(props), "additionalProperties": False}
    return {
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "$id": "scenelattice/environment-config/v1",
        "type": "object",
        "required": ["coarse"],
        "additionalProperties": False,
        "properties": {
            "version": {"const": CONFIG_VERSION},
            "coarse": {
                "type": "object",
                "required": list(COARSE_FIELDS),
                "additionalProperties": False,
                "properties": {f: {"enum": list(rules.enum(f))} for f in COARSE_FIELDS},
            },
            "fine": {"type": "object", "properties": fine_props, "additionalProperties": False},
            "agents": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["category", "quantity", "state", "region"],
                    "additionalProperties": False,
                    "properties": {
                        "category": {"enum": list(rules.categories)},
                        "quantity": {"type": "integer", "minimum": 1},
                        "state": {"type": "string"},
                        "region": {"enum": list(REGIONS)},
                    },
                },
            },
        },
    }


# -- coarse -> fine --------------------------------------------------------

def expand_coarse_to_fine(coarse: CoarseAttributes, rules: RuleTable, seed: int,
                          assets=None) -> dict[str, AssetParams]:
    """Draw fine attributes for each asset type inside the season's rule cell.

    Every asset type consumes a fixed number of uniforms from its own
    stream, so the same seed gives the same draw positions in every season
    (winter and summer densities differ only through their ranges).
    """
    out = {}
    for name in (assets if assets is not None else rules.asset_names):
        spec = rules.asset(name)
        c = rules.cell(coarse.season, name)
        if not c["seasonal_variants"] or not c["material_variants"]:
            raise RuleGap("season", coarse.season, name)
        u = _grid.sub_rng(seed, "fine", name).random(8)
        sv = c["seasonal_variants"][min(int(u[0] * len(c["seasonal_variants"])), len(c["seasonal_variants"]) - 1)]
        mv = c["material_variants"][min(int(u[1] * len(c["material_variants"])), len(c["material_variants"]) - 1)]
        lo, hi = c["density"]
        density = min(max(round(lo + u[2] * (hi - lo), 4), lo), hi)
        values: dict[str, Any] = {}
        params = spec["params"]
        if "rotation" in params:
            values["rotation"] = (0.0, round(u[3] * 360.0, 3) % 360.0, 0.0)
        for k, p in enumerate(("scale", "height", "wind", "slope")):
            if p in params:
                slo, shi = rules.sample_range(p)
                values[p] = round(slo + u[4 + k] * (shi - slo), 4)
        out[name] = AssetParams(sv, mv, density, **values)
    return out


# -- regions ---------------------------------------------------------------

def region_mask(region: str, p: int) -> np.ndarray:
    """Boolean p x p mask for one of the nine 3 x 3 sectors."""
    region = normalize_region(region)
    if region not in REGIONS:
        raise UnknownEnum("region", f"{region!r} is not a sector")
    if p < 3:
        raise ValueError("regions need p >= 3")
    k = REGIONS.index(region)
    edges = _grid.patch_edges(p, 3)
    out = np.zeros((p, p), dtype=bool)
    r, c = divmod(k, 3)
    out[edges[r]:edges[r + 1], edges[c]:edges[c + 1]] = True
    return out


def region_cells(region: str, p: int) -> set[tuple[int, int]]:
    return {(int(r), int(c)) for r, c in np.argwhere(region_mask(region, p))}


def region_of_cell(row: int, col: int, p: int) -> str:
    edges = _grid.patch_edges(p, 3)
    r = int(np.searchsorted(edges, row, side="right")) - 1
    c = int(np.searchsorted(edges, col, side="right")) - 1
    return REGIONS[3 * r + c]


# -- consistency -----------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule_id: str
    location: str
    message: str
    count: int | None = None

    def to_dict(self) -> dict:
        d = {"rule_id": self.rule_id, "location": self.location, "message": self.message}
        if self.count is not None:
            d["count"] = self.count
        return d


@dataclass(frozen=True)
class ConsistencyReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def rule_ids(self) -> list[str]:
        return [v.rule_id for v in self.violations]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": [v.to_dict() for v in self.violations]}


def habitat_cells(habitat: dict, m: LayoutMatrix, zones: np.ndarray | None, rules: RuleTable) -> np.ndarray:
    """Cells an agent may occupy, after the minimum-component-size filter."""
    classes = habitat["classes"]
    if classes == "any":
        valid = np.ones(m.codes.shape, dtype=bool)
    elif classes == "land":
        valid = ~m.class_mask(rules.water_class)
    else:
        valid = np.zeros(m.codes.shape, dtype=bool)
        for c in classes:
            valid |= m.class_mask(c)
    if habitat.get("zones") and zones is not None:
        valid &= np.isin(zones, habitat["zones"])
    min_size = habitat.get("min_component", 1)
    if min_size > 1 and valid.any():
        labels, n = ndimage.label(valid)          # 4-connectivity
        sizes = np.bincount(labels.ravel(), minlength=n + 1)
        keep = sizes >= min_size
        keep[0] = False
        valid = keep[labels]
    return valid


def agent_spawn_cells(agent: AgentSpec, m: LayoutMatrix, zones, rules: RuleTable) -> np.ndarray:
    """(row, col) pairs where ``agent`` may spawn, row-major order."""
    h = rules.habitat(agent.category, agent.state)
    valid = habitat_cells(h, m, zones, rules) & region_mask(agent.region, m.p)
    return np.argwhere(valid)


def check_consistency(cfg: EnvironmentConfig, m: LayoutMatrix, zones, rules: RuleTable | None = None) -> ConsistencyReport:
    """List every way ``cfg`` contradicts the layout, zones or rule table.

    Rule ids: ``habitat_unsatisfiable``, ``state_not_allowed``,
    ``fine_seasonal_variant``, ``fine_material_variant``,
    ``fine_density_range``, ``snow_below_threshold``.
    """
    rules = rules or default_rule_table()
    if zones is not None:
        zones = np.asarray(zones)
        if zones.shape != m.codes.shape:
            raise DimensionMismatch(f"zones {zones.shape} vs layout {m.codes.shape}")
    out: list[Violation] = []

    for i, a in enumerate(cfg.agents):
        loc = f"agents[{i}]@{a.region}"
        if a.state not in rules.allowed_states(a.category):
            out.append(Violation("state_not_allowed", loc, f"{a.category} cannot be {a.state}"))
            continue
        available = len(agent_spawn_cells(a, m, zones, rules))
        if available < a.quantity:
            out.append(Violation(
                "habitat_unsatisfiable", loc,
                f"habitat_unsatisfiable({a.category}): {available} valid cells in {a.region}, "
                f"{a.quantity} requested",
                count=available,
            ))

    for name in sorted(cfg.fine):
        fp = cfg.fine[name]
        cell = rules.cell(cfg.coarse.season, name)
        loc = f"fine.{name}"
        if fp.seasonal_variant not in cell["seasonal_variants"]:
            out.append(Violation("fine_seasonal_variant", loc,
                                 f"seasonal variant {fp.seasonal_variant} not allowed in {cfg.coarse.season}"))
        if fp.material_variant not in cell["material_variants"]:
            out.append(Violation("fine_material_variant", loc,
                                 f"material variant {fp.material_variant} not allowed in {cfg.coarse.season}"))
        lo, hi = cell["density"]
        if not lo <= fp.density <= hi:
            out.append(Violation("fine_density_range", loc,
                                 f"density {fp.density} outside [{lo}, {hi}] for {cfg.coarse.season}"))

    if zones is not None:
        snow = m.class_mask(rules.snow_class) & (zones == "low")
        n = int(snow.sum())
        if n:
            out.append(Violation("snow_below_threshold", "layout",
                                 f"{n} snow cells lie in low elevation zones", count=n))
    return ConsistencyReport(tuple(out))
