"""Resolve a validated configuration into concrete instances.

World frame: origin at the layout's upper-left corner, x east, y south
(down), both in metres; the p x p layout covers ``world_size_m`` on a
side.  Yaw is in degrees, clockwise from +x as seen from above.
Elevation is sampled bilinearly from the heightmap, with 65535 mapped to
``max_height_m``.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np
from scipy import ndimage

from . import _grid
from .config import (
    EnvironmentConfig,
    RuleTable,
    agent_spawn_cells,
    check_consistency,
    default_rule_table,
    expand_coarse_to_fine,
)
from .decoder import MaskSet, decode_layout
from .errors import (
    ConsistencyError,
    HabitatExhausted,
    InfeasibleRules,
    PlacementError,
    SceneLatticeError,
    StageError,
)
from .layout import LayoutMatrix, layout_hash
from .terrain import MAX_ELEVATION, Heightmap, elevation_zones, flat_heightmap

MANIFEST_FORMAT = "scenelattice.placement_manifest"
MANIFEST_VERSION = 1
KINDS = ("asset", "building", "agent")


@dataclass(frozen=True)
class Instance:
    kind: str
    name: str
    x: float
    y: float
    z: float
    orientation: tuple[float, float, float] = (0.0, 0.0, 0.0)   # pitch, yaw, roll
    scale: float = 1.0
    state: str | None = None
    rule: str = ""

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "class": self.name,
            "position": [round(self.x, 3), round(self.y, 3), round(self.z, 3)],
            "orientation": [round(a, 3) for a in self.orientation],
            "scale": round(self.scale, 4),
            "rule": self.rule,
        }
        if self.state is not None:
            d["state"] = self.state
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Instance":
        x, y, z = d["position"]
        return cls(d["kind"], d["class"], x, y, z, tuple(d["orientation"]), d.get("scale", 1.0),
                   d.get("state"), d.get("rule", ""))


class Terrain3D:
    """Metric view of a heightmap stretched over the world square."""

    def __init__(self, heightmap: Heightmap, world_size_m: float, max_height_m: float):
        self.heightmap = heightmap
        self.world_size_m = float(world_size_m)
        self.max_height_m = float(max_height_m)
        z = heightmap.values.astype(np.float64) * (self.max_height_m / MAX_ELEVATION)
        self.z = z
        rows, cols = z.shape
        self.dy = self.world_size_m / rows
        self.dx = self.world_size_m / cols
        self.gy, self.gx = np.gradient(z, self.dy, self.dx)

    def _coords(self, x, y):
        rows, cols = self.z.shape
        u = np.asarray(x, dtype=np.float64) / self.dx - 0.5
        v = np.asarray(y, dtype=np.float64) / self.dy - 0.5
        return np.stack([np.clip(v, 0, rows - 1), np.clip(u, 0, cols - 1)])

    def _sample(self, grid, x, y):
        return ndimage.map_coordinates(grid, self._coords(np.atleast_1d(x), np.atleast_1d(y)),
                                       order=1, mode="nearest")

    def elevation(self, x, y) -> np.ndarray:
        return self._sample(self.z, x, y)

    def gradient(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        return self._sample(self.gx, x, y), self._sample(self.gy, x, y)

    def slope_deg(self, x, y) -> np.ndarray:
        gx, gy = self.gradient(x, y)
        return np.degrees(np.arctan(np.hypot(gx, gy)))


def _mask_lookup(mask: np.ndarray, x: np.ndarray, y: np.ndarray, world_size_m: float) -> np.ndarray:
    rows, cols = mask.shape
    c = np.clip((x / world_size_m * cols).astype(np.int64), 0, cols - 1)
    r = np.clip((y / world_size_m * rows).astype(np.int64), 0, rows - 1)
    return mask[r, c]


def jittered_grid(n: int, spacing: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One uniformly jittered point per cell of an n x n grid, row-major."""
    jitter = rng.random((n, n, 2))
    rows, cols = np.indices((n, n))
    return ((cols + jitter[..., 0]) * spacing).ravel(), ((rows + jitter[..., 1]) * spacing).ravel()


def grid_cells(spacing_m: float, world_size_m: float) -> int:
    """Cells per side of the scatter grid; tolerant of float round-off (1024 / 10.24)."""
    return max(1, int(math.floor(world_size_m / spacing_m + 1e-9)))


def sampler_capacity(spacing_m: float, world_size_m: float) -> int:
    n = grid_cells(spacing_m, world_size_m)
    return n * n


def scatter_assets(asset: str, mask: np.ndarray, density: float, seed: int, spacing_m: float,
                   world_size_m: float = 1024.0, terrain: Terrain3D | None = None,
                   slope_align: bool = False, scale: float = 1.0) -> list[Instance]:
    """Jittered-grid scattering.

    The grid has ``floor(world / spacing)`` cells per side; a candidate at
    pixel q survives with probability ``density * mask(q)``.  Yaw is
    uniform; pitch and roll follow the terrain only when ``slope_align``.
    """
    if not 0.0 <= density <= 1.0:
        raise PlacementError(f"density {density} outside [0, 1]")
    n = grid_cells(spacing_m, world_size_m)
    step = world_size_m / n
    rng = _grid.sub_rng(seed, "scatter", asset)
    xs, ys = jittered_grid(n, step, rng)
    keep_u = rng.random(n * n)
    yaw_u = rng.random(n * n)
    if density == 0.0:
        return []
    keep = keep_u < density * _mask_lookup(np.asarray(mask), xs, ys, world_size_m)
    xs, ys, yaws = xs[keep], ys[keep], yaw_u[keep] * 360.0
    if not len(xs):
        return []
    if terrain is not None:
        zs = terrain.elevation(xs, ys)
        if slope_align:
            gx, gy = terrain.gradient(xs, ys)
            pitch = np.degrees(np.arctan(gy)) % 360.0
            roll = np.degrees(np.arctan(gx)) % 360.0
        else:
            pitch = roll = np.zeros(len(xs))
    else:
        zs = pitch = roll = np.zeros(len(xs))
    rule = f"scatter:{asset}"
    return [
        Instance("asset", asset, float(x), float(y), float(z), (float(p), float(w), float(r)), scale, None, rule)
        for x, y, z, p, w, r in zip(xs, ys, zs, pitch, yaws, roll)
    ]


# -- buildings -------------------------------------------------------------

@dataclass(frozen=True)
class BuildingRules:
    d_min: float = 15.0
    d_max: float = 60.0
    slope_max: float = 15.0
    jitter_deg: float = 15.0
    target_count: int | None = None
    mask_threshold: float = 0.5


def building_candidates(seed: int, d_min: float, world_size_m: float) -> np.ndarray:
    """Seeded candidate sites (k x 2, metres) in acceptance-test order."""
    step = d_min / 2.0
    n = max(1, int(math.ceil(world_size_m / step)))
    rng = _grid.sub_rng(seed, "buildings", "candidates")
    xs, ys = jittered_grid(n, step, rng)
    pts = np.stack([xs, ys], axis=1)
    pts = pts[(pts[:, 0] < world_size_m) & (pts[:, 1] < world_size_m)]
    return pts[rng.permutation(len(pts))]


def _road_yaw(x: float, y: float, layout: LayoutMatrix, world_size_m: float, road_class: str) -> float | None:
    p = layout.p
    cell = world_size_m / p
    r, c = min(int(y // cell), p - 1), min(int(x // cell), p - 1)
    road = layout.class_mask(road_class)
    best = None
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if (dr or dc) and 0 <= r + dr < p and 0 <= c + dc < p and road[r + dr, c + dc]:
                cx, cy = (c + dc + 0.5) * cell, (r + dr + 0.5) * cell
                d = math.hypot(cx - x, cy - y)
                if best is None or d < best[0]:
                    best = (d, cx, cy)
    if best is None:
        return None
    return math.degrees(math.atan2(best[2] - y, best[1] - x)) % 360.0


def place_buildings(mask: np.ndarray, terrain: Terrain3D, rules: BuildingRules, seed: int,
                    layout: LayoutMatrix | None = None, road_class: str = "road",
                    scale: float = 1.0) -> list[Instance]:
    """Greedy seeded insertion of building sites.

    A candidate is accepted when the building mask is >= 0.5 there, the
    local slope is within ``slope_max`` and every accepted building is at
    least ``d_min`` away.  Buildings face an 8-adjacent road cell when one
    exists, otherwise downhill, plus uniform jitter of +/- ``jitter_deg``.
    """
    world = terrain.world_size_m
    if rules.d_min <= 0 or rules.d_min > world:
        raise InfeasibleRules(f"d_min={rules.d_min} m does not fit a {world} m world")
    if rules.d_min >= rules.d_max:
        raise InfeasibleRules(f"d_min={rules.d_min} must be below d_max={rules.d_max}")
    if rules.slope_max < 0:
        raise InfeasibleRules("slope_max must be non-negative")
    mask = np.asarray(mask)
    if not (mask >= rules.mask_threshold).any():
        return []

    cand = building_candidates(seed, rules.d_min, world)
    ok = _mask_lookup(mask, cand[:, 0], cand[:, 1], world) >= rules.mask_threshold
    cand = cand[ok]
    if len(cand):
        cand = cand[terrain.slope_deg(cand[:, 0], cand[:, 1]) <= rules.slope_max]

    cell = rules.d_min
    buckets: dict[tuple[int, int], list[tuple[float, float]]] = {}
    accepted: list[tuple[float, float]] = []
    d2 = rules.d_min * rules.d_min
    for x, y in cand.tolist():
        bx, by = int(x // cell), int(y // cell)
        clash = False
        for i in (bx - 1, bx, bx + 1):
            for j in (by - 1, by, by + 1):
                for ox, oy in buckets.get((i, j), ()):
                    if (ox - x) ** 2 + (oy - y) ** 2 < d2:
                        clash = True
                        break
                if clash:
                    break
            if clash:
                break
        if clash:
            continue
        buckets.setdefault((bx, by), []).append((x, y))
        accepted.append((x, y))
        if rules.target_count is not None and len(accepted) >= rules.target_count:
            break

    if not accepted:
        return []
    rng = _grid.sub_rng(seed, "buildings", "yaw")
    jitter = rng.uniform(-rules.jitter_deg, rules.jitter_deg, size=len(accepted))
    pts = np.array(accepted)
    zs = terrain.elevation(pts[:, 0], pts[:, 1])
    gx, gy = terrain.gradient(pts[:, 0], pts[:, 1])
    out = []
    for k, (x, y) in enumerate(accepted):
        base = None
        rule = "building:downhill"
        if layout is not None:
            base = _road_yaw(x, y, layout, world, road_class)
            if base is not None:
                rule = "building:road_facing"
        if base is None:
            if math.hypot(gx[k], gy[k]) > 1e-9:
                base = math.degrees(math.atan2(-gy[k], -gx[k])) % 360.0
            else:
                base = 0.0
        yaw = (base + jitter[k]) % 360.0
        out.append(Instance("building", "architecture", x, y, float(zs[k]), (0.0, yaw, 0.0), scale, None, rule))
    return out


def isolation_warnings(buildings: list[Instance], d_max: float) -> list[str]:
    """Buildings whose nearest neighbour is farther than ``d_max``."""
    if len(buildings) < 2:
        return []
    from scipy.spatial import cKDTree

    pts = np.array([(b.x, b.y) for b in buildings])
    dist, _ = cKDTree(pts).query(pts, k=2)
    return [
        f"building {i} at ({pts[i, 0]:.1f}, {pts[i, 1]:.1f}) is isolated: nearest neighbour {dist[i, 1]:.1f} m > d_max {d_max} m"
        for i in np.flatnonzero(dist[:, 1] > d_max)
    ]


# -- agents ----------------------------------------------------------------

def spawn_agents(agents, m: LayoutMatrix, zones, terrain: Terrain3D, rules: RuleTable,
                 seed: int) -> list[Instance]:
    """Spawn each spec's ``quantity`` agents on distinct habitat cells of its sector."""
    cell = terrain.world_size_m / m.p
    out = []
    for i, a in enumerate(agents):
        cells = agent_spawn_cells(a, m, zones, rules)
        if len(cells) < a.quantity:
            raise HabitatExhausted(a.category, a.region, len(cells), a.quantity)
        rng = _grid.sub_rng(seed, "agent", i, a.category)
        pick = cells[rng.choice(len(cells), size=a.quantity, replace=False)]
        offs = rng.random((a.quantity, 2))
        yaws = rng.random(a.quantity) * 360.0
        xs = (pick[:, 1] + offs[:, 0]) * cell
        ys = (pick[:, 0] + offs[:, 1]) * cell
        zs = terrain.elevation(xs, ys)
        rule = f"habitat:{a.category}:{a.state}@{a.region}"
        out.extend(
            Instance("agent", a.category, float(x), float(y), float(z), (0.0, float(w), 0.0), 1.0, a.state, rule)
            for x, y, z, w in zip(xs, ys, zs, yaws)
        )
    return out


# -- manifest --------------------------------------------------------------

@dataclass
class PlacementManifest:
    world_size_m: float
    max_height_m: float
    instances: list[Instance]
    provenance: dict
    coarse: dict = field(default_factory=dict)
    materials: dict = field(default_factory=dict)

    def count(self, kind: str | None = None, name: str | None = None) -> int:
        return sum(1 for i in self.instances
                   if (kind is None or i.kind == kind) and (name is None or i.name == name))

    def to_dict(self) -> dict:
        return {
            "format": MANIFEST_FORMAT,
            "version": MANIFEST_VERSION,
            "world_size_m": self.world_size_m,
            "max_height_m": self.max_height_m,
            "frame": {"origin": "upper_left", "x": "east", "y": "south", "units": "m",
                      "yaw": "degrees clockwise from +x"},
            "coarse": self.coarse,
            "materials": self.materials,
            "provenance": self.provenance,
            "instances": [i.to_dict() for i in self.instances],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "PlacementManifest":
        validate_manifest(doc)
        return cls(doc["world_size_m"], doc["max_height_m"],
                   [Instance.from_dict(i) for i in doc["instances"]],
                   doc["provenance"], doc.get("coarse", {}), doc.get("materials", {}))


def validate_manifest(doc: dict) -> None:
    if not isinstance(doc, dict) or doc.get("format") != MANIFEST_FORMAT:
        raise PlacementError("not a placement manifest")
    if doc.get("version") != MANIFEST_VERSION:
        raise PlacementError(f"unsupported manifest version {doc.get('version')!r}")
    for key in ("world_size_m", "max_height_m", "provenance", "instances"):
        if key not in doc:
            raise PlacementError(f"manifest missing {key!r}")
    size = doc["world_size_m"]
    for k, inst in enumerate(doc["instances"]):
        if inst.get("kind") not in KINDS:
            raise PlacementError(f"instances[{k}]: bad kind {inst.get('kind')!r}")
        x, y, _ = inst["position"]
        if not (0 <= x <= size and 0 <= y <= size):
            raise PlacementError(f"instances[{k}]: position ({x}, {y}) outside the world")
        if inst["kind"] == "agent" and "state" not in inst:
            raise PlacementError(f"instances[{k}]: agent without state")


# -- compile ---------------------------------------------------------------

@dataclass(frozen=True)
class PlacementParams:
    world_size_m: float = 1024.0
    max_height_m: float = 200.0
    resolution: int = 512
    sigma_px: float = 2.0
    noise_amp: float = 0.0
    zone_thresholds: tuple[int, int] = (20000, 45000)
    buildings: BuildingRules = BuildingRules()
    spacing_m: dict = field(default_factory=dict)
    workers: int = 1

    def replace(self, **kw) -> "PlacementParams":
        return replace(self, **kw)


@dataclass
class CompileResult:
    masks: MaskSet
    manifest: PlacementManifest
    report: dict
    zones: np.ndarray = None
    config: EnvironmentConfig = None


def class_union_mask(masks: MaskSet, classes) -> np.ndarray | None:
    present = [c for c in classes if c in masks.classes]
    if not present:
        return None
    return np.clip(sum(masks[c] for c in present), 0.0, 1.0)


def _materials_section(cfg: EnvironmentConfig, rules: RuleTable, masks: MaskSet) -> dict:
    out = {}
    for name in sorted(cfg.fine):
        fp = cfg.fine[name]
        spec = rules.asset(name)
        mask = class_union_mask(masks, spec["layout_classes"])
        d = fp.to_dict()
        d["material"] = spec["materials"][fp.material_variant]
        d["coverage"] = round(float(mask.mean()), 6) if mask is not None else 0.0
        out[name] = d
    return out


def compile(m: LayoutMatrix, heightmap: Heightmap | None, cfg: EnvironmentConfig,
            params: PlacementParams = PlacementParams(), seed: int = 0,
            rules: RuleTable | None = None) -> CompileResult:
    """Layout + heightmap + configuration -> weight masks and placement manifest.

    One ``seed`` fans out to every stochastic stage through keyed
    sub-streams.  Failures are re-raised as :class:`StageError` carrying
    the stage name.
    """
    rules = rules or default_rule_table()
    timings: dict[str, float] = {}
    warnings: list[str] = []

    def stage(name, fn, *a, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*a, **kw)
        except SceneLatticeError as exc:
            raise StageError(name, exc) from exc
        except (ValueError, KeyError) as exc:
            raise StageError(name, exc) from exc
        finally:
            timings[name] = round(time.perf_counter() - t0, 6)

    if heightmap is None:
        heightmap = flat_heightmap(max(params.resolution, m.p), max(params.resolution, m.p), 0)
    zones = stage("zones", elevation_zones, heightmap, m.p, params.zone_thresholds)

    def consistency():
        rep = check_consistency(cfg, m, zones, rules)
        if not rep.ok:
            raise ConsistencyError(rep)
        return rep

    report_c = stage("consistency", consistency)

    missing = [a for a in rules.asset_names if a not in cfg.fine]
    fine = dict(cfg.fine)
    if missing:
        fine.update(stage("expand", expand_coarse_to_fine, cfg.coarse, rules, seed, missing))
    full_cfg = EnvironmentConfig(cfg.coarse, fine, cfg.agents, cfg.version)

    masks = stage("decode", decode_layout, m, params.resolution, params.sigma_px,
                  params.noise_amp, seed, params.workers)
    terrain = Terrain3D(heightmap, params.world_size_m, params.max_height_m)

    def scatter_all():
        jobs = []
        for name in rules.asset_names:
            spec = rules.asset(name)
            spacing = params.spacing_m.get(name, spec.get("spacing_m"))
            if spacing is None:
                continue
            mask = class_union_mask(masks, spec["layout_classes"])
            if mask is None:
                continue
            jobs.append((name, mask, fine[name].density, seed, spacing, params.world_size_m,
                         terrain, spec.get("slope_align", False), fine[name].scale or 1.0))
        if params.workers > 1:
            with ThreadPoolExecutor(max_workers=params.workers) as pool:
                parts = list(pool.map(lambda j: scatter_assets(*j), jobs))
        else:
            parts = [scatter_assets(*j) for j in jobs]
        return [inst for part in parts for inst in part]

    assets = stage("scatter", scatter_all)

    arch = rules.asset("architecture")
    bmask = class_union_mask(masks, arch["layout_classes"])
    buildings = []
    if bmask is not None:
        buildings = stage("buildings", place_buildings, bmask, terrain, params.buildings, seed,
                          m, "road", fine["architecture"].scale or 1.0)
        warnings.extend(isolation_warnings(buildings, params.buildings.d_max))

    agents = stage("agents", spawn_agents, cfg.agents, m, zones, terrain, rules, seed)

    manifest = PlacementManifest(
        world_size_m=params.world_size_m,
        max_height_m=params.max_height_m,
        instances=assets + buildings + agents,
        provenance={"layout_hash": layout_hash(m), "config_hash": cfg.config_hash(), "seed": seed},
        coarse=cfg.coarse.to_dict(),
        materials=_materials_section(full_cfg, rules, masks),
    )
    counts: dict[str, Any] = {k: manifest.count(k) for k in KINDS}
    counts["by_class"] = {}
    for inst in manifest.instances:
        key = f"{inst.kind}:{inst.name}"
        counts["by_class"][key] = counts["by_class"].get(key, 0) + 1
    report = {
        "counts": counts,
        "warnings": warnings,
        "expanded_assets": missing,
        "consistency": report_c.to_dict(),
        "timings_s": timings,
        "seed": seed,
    }
    return CompileResult(masks, manifest, report, zones, full_cfg)
