"""Regenerate src/scenelattice/data/rules.json from the compact definitions below.

The JSON file is the shipped artifact; this script only keeps the 44
(season, asset) cells consistent with the design rules it encodes.
"""
import json
import math
from pathlib import Path

SEASONS = ["spring", "summer", "autumn", "winter"]

# name: (label, seasonal, material, params, group, layout classes, spacing_m, slope_align, materials)
ASSETS = {
    "grass": ("Grass", 3, 4, ["density"], "vegetation", ["grassland"], 8.0, False,
              ["lawn", "meadow", "dry", "frosted"]),
    "flower": ("Flower", 2, 4, ["density", "rotation"], "vegetation", ["grassland"], 16.0, False,
               ["wild", "garden", "alpine", "dried"]),
    "dead_branch": ("Dead Branch", 2, 4, ["density", "rotation"], "debris", ["forest"], 24.0, True,
                    ["oak", "pine", "birch", "charred"]),
    "stone": ("Stone", 3, 4, ["density", "rotation"], "terrain", ["rocky", "barren"], 16.0, True,
              ["granite", "sandstone", "mossy", "snow_covered"]),
    "architecture": ("Architecture", 4, 3, ["density", "rotation", "scale"], "structure", ["building"], None, False,
                     ["brick", "timber", "concrete"]),
    "road": ("Road", 2, 2, ["density"], "terrain", ["road"], None, False,
             ["asphalt", "snow_covered"]),
    "lake": ("Lake", 2, 2, ["density", "height"], "terrain", ["water"], None, False,
             ["open_water", "snow_covered_ice"]),
    "desert": ("Desert", 6, 3, ["density", "rotation", "wind"], "terrain", ["barren"], None, False,
               ["sand", "gravel", "snow_dusted"]),
    "forest": ("Forest", 18, 4, ["density", "rotation"], "vegetation", ["forest"], 12.0, False,
               ["broadleaf", "conifer", "mixed", "snow_laden"]),
    "crops": ("Crops", 4, 4, ["density", "rotation"], "vegetation", ["farmland"], 10.0, False,
              ["wheat", "corn", "rice", "fallow"]),
    "snow_mountain": ("Snow Mountain", 3, 3, ["density", "rotation", "slope"], "terrain", ["snow"], None, True,
                      ["rock", "snow", "ice_snow"]),
}

DENSITY = {
    ("vegetation", "winter"): [0.1, 0.5],
    ("vegetation", None): [0.5, 1.0],
    ("debris", None): [0.2, 0.8],
    ("terrain", None): [0.3, 1.0],
    ("structure", None): [0.2, 0.8],
}


def cell(asset, season):
    label, ns, nm, params, group, _, _, _, mats = ASSETS[asset]
    seasonal = list(range(ns))
    if group == "vegetation" and season == "winter":
        seasonal = list(range(max(1, math.ceil(ns / 3))))
    materials = list(range(nm))
    if group == "terrain":
        snowy = [i for i, m in enumerate(mats) if "snow" in m]
        if season == "winter":
            materials = snowy
        elif asset != "snow_mountain":
            materials = [i for i in materials if i not in snowy]
    density = DENSITY.get((group, season), DENSITY[(group, None)])
    return {"seasonal_variants": seasonal, "material_variants": materials, "density": density}


def main():
    doc = {
        "format": "scenelattice.rule_table",
        "version": 1,
        "enums": {
            "terrain_type": ["suburbs", "mountainous", "desert", "plains", "wilderness"],
            "season": SEASONS,
            "artistic_style": ["realism", "cartoon", "cyberpunk"],
            "weather": ["sunny", "cloudy", "rain", "mist", "snowfall", "sandstorm"],
            "time_of_day": ["daytime", "afternoon", "dusk", "night"],
        },
        "param_ranges": {
            "density": [0.0, 1.0],
            "rotation": [0.0, 360.0],
            "scale": [0.1, 10.0],
            "height": [0.0, 1.0],
            "wind": [0.0, 1.0],
            "slope": [0.0, 90.0],
        },
        "sample_ranges": {
            "scale": [0.8, 1.25],
            "height": [0.2, 0.8],
            "wind": [0.0, 0.6],
            "slope": [15.0, 60.0],
        },
        "assets": {
            name: {
                "label": a[0],
                "seasonal_variants": a[1],
                "material_variants": a[2],
                "params": a[3],
                "group": a[4],
                "layout_classes": a[5],
                "spacing_m": a[6],
                "slope_align": a[7],
                "materials": a[8],
            }
            for name, a in ASSETS.items()
        },
        "season_rules": {s: {a: cell(a, s) for a in ASSETS} for s in SEASONS},
        "agents": {
            "goblin": {"states": ["idle", "patrolling"], "habitat": {"classes": "land"}},
            "humanoid_robot": {"states": ["idle", "patrolling"], "habitat": {"classes": "land"}},
            "robotic_dog": {"states": ["idle", "patrolling"], "habitat": {"classes": "land"}},
            "ancient_warrior": {"states": ["idle", "patrolling"], "habitat": {"classes": "land"}},
            "eagle": {"states": ["idle", "patrolling"], "flying": True, "habitat": {"classes": "any"}},
            "aerial_robot": {"states": ["idle", "patrolling"], "flying": True, "habitat": {"classes": "any"}},
            "sheep": {
                "states": ["idle", "grazing", "patrolling"],
                "habitat": {"classes": "land"},
                "state_habitats": {"grazing": {"classes": ["grassland", "farmland"]}},
            },
            "horse": {
                "states": ["idle", "grazing", "patrolling"],
                "habitat": {"classes": "land"},
                "state_habitats": {"grazing": {"classes": ["grassland", "farmland"]}},
            },
            "whale": {
                "states": ["swimming", "idle"],
                "habitat": {"classes": ["water"], "min_component": 16},
                "state_habitats": {"swimming": {"classes": ["water"], "min_component": 16}},
            },
        },
        "state_habitats": {"swimming": {"classes": ["water"], "min_component": 4}},
        "snow_class": "snow",
        "water_class": "water",
    }
    out = Path(__file__).resolve().parents[1] / "src" / "scenelattice" / "data" / "rules.json"
    out.write_text(json.dumps(doc, indent=2) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
