"""Training-data construction from segmentation rasters and elevation models.

Source images are cut into square tiles, each tile is downsampled to a
letter matrix and augmented by quarter-turn rotations.  Records carry the
caption prompts that an external annotator should answer; the caption
slots themselves stay empty until :func:`attach_caption` accepts a reply.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from . import _grid
from .bridge import PromptBundle, build_caption_prompt
from .config import (
    COARSE_FIELDS,
    REGIONS,
    AgentSpec,
    CoarseAttributes,
    EnvironmentConfig,
    RuleTable,
    agent_spawn_cells,
    default_rule_table,
    expand_coarse_to_fine,
    parse_config,
)
from .errors import DatasetError, DimensionMismatch, SceneLatticeError, TooSmall
from .layout import (
    DEFAULT_P,
    LayoutMatrix,
    SegmentationRaster,
    SymbolTable,
    downsample_segmentation,
    parse_layout,
    read_segmentation_png,
    rotate_layout,
    serialize_layout,
    write_segmentation_png,
)
from .terrain import (
    Heightmap,
    Sketch,
    erode,
    extract_sketch,
    load_heightmap,
    load_sketch,
    save_heightmap,
    save_sketch,
)

FLAT_ZERO = "flat-zero"
INDEX_NAME = "index.jsonl"
CAPTION_SLOTS = ("layout_caption", "terrain_caption")
MAX_CAPTION_WORDS = 200


@dataclass(frozen=True)
class Tile:
    raster: SegmentationRaster
    heightmap: Heightmap | None = None
    origin: tuple[int, int] = (0, 0)     # (row, col) of the top-left pixel in the source


@dataclass(frozen=True, eq=False)
class DatasetRecord:
    id: str
    layout: LayoutMatrix
    segmentation: SegmentationRaster
    heightmap: Heightmap | None          # None means the flat-zero marker
    sketch: Sketch | None
    prompts: tuple[PromptBundle, ...]
    rotation: int = 0
    source: str = ""
    captions: dict = field(default_factory=lambda: {k: None for k in CAPTION_SLOTS})
    config: EnvironmentConfig | None = None

    @property
    def heightmap_marker(self) -> str:
        return FLAT_ZERO if self.heightmap is None else "file"


def tile_source(image, dem=None, tile_px: int = 512, stride: int | None = None,
                table: SymbolTable | None = None) -> list[Tile]:
    """Cut an image (and optional elevation model) into square tiles.

    ``image`` is a :class:`SegmentationRaster` or an RGB array (then
    ``table`` is required).  Tiles that would run past the right or bottom
    edge are dropped, never padded.
    """
    if not isinstance(image, SegmentationRaster):
        if table is None:
            raise ValueError("a symbol table is needed to tile a bare RGB array")
        image = SegmentationRaster(np.asarray(image), table)
    stride = tile_px if stride is None else stride
    if tile_px <= 0 or stride <= 0:
        raise ValueError("tile_px and stride must be positive")
    h, w = image.height, image.width
    if h < tile_px or w < tile_px:
        raise TooSmall(f"image {w}x{h} is smaller than one {tile_px}px tile")
    if dem is not None:
        z = dem.values if isinstance(dem, Heightmap) else np.asarray(dem)
        mpp = dem.meters_per_pixel if isinstance(dem, Heightmap) else 1.0
        if z.shape != (h, w):
            raise DimensionMismatch(f"elevation model {z.shape[::-1]} vs image {w}x{h}")
    tiles = []
    for r in range(0, h - tile_px + 1, stride):
        for c in range(0, w - tile_px + 1, stride):
            hm = None
            if dem is not None:
                hm = Heightmap(z[r:r + tile_px, c:c + tile_px], mpp)
            raster = SegmentationRaster(image.pixels[r:r + tile_px, c:c + tile_px], image.table)
            tiles.append(Tile(raster, hm, (r, c)))
    return tiles


def _caption_prompts(layout: LayoutMatrix, heightmap: Heightmap | None) -> tuple[PromptBundle, ...]:
    out = [build_caption_prompt("layout", layout)]
    if heightmap is not None:
        out.append(build_caption_prompt("heightmap", heightmap))
    return tuple(out)


def forge_records(tiles, table: SymbolTable | None = None, rotations=(0, 1, 2, 3), mode: str = "loveda",
                  p: int = DEFAULT_P, erode_iterations: int = 10, id_prefix: str = "r") -> list[DatasetRecord]:
    """One record per (tile, rotation).

    ``mode="loveda"``: flat-zero elevation, no sketch.  ``mode="wild"``:
    each tile's elevation model is eroded once, its sketch extracted, and
    both are rotated together with the segmentation.
    """
    if mode not in ("loveda", "wild"):
        raise ValueError(f"mode must be 'loveda' or 'wild', got {mode!r}")
    rotations = tuple(int(k) % 4 for k in rotations)
    records = []
    for i, tile in enumerate(tiles):
        raster = tile.raster if table is None else SegmentationRaster(tile.raster.pixels, table)
        base = downsample_segmentation(raster, p)
        hm_base = sketch_base = None
        if mode == "wild":
            if tile.heightmap is None:
                raise DatasetError("wild-mode tile has no elevation model", f"{id_prefix}{i:06d}")
            hm_base = erode(tile.heightmap, erode_iterations) if erode_iterations else tile.heightmap
            sketch_base = extract_sketch(hm_base)
        for k in rotations:
            layout = rotate_layout(base, k)
            seg = SegmentationRaster(np.rot90(raster.pixels, -k), raster.table)
            hm = sk = None
            if hm_base is not None:
                hm = Heightmap(np.rot90(hm_base.values, -k), hm_base.meters_per_pixel)
                sk = Sketch(np.rot90(sketch_base.strokes, -k))
            records.append(DatasetRecord(
                id=f"{id_prefix}{i:06d}_k{k}",
                layout=layout,
                segmentation=seg,
                heightmap=hm,
                sketch=sk,
                prompts=_caption_prompts(layout, hm),
                rotation=k,
                source=f"tile{i:06d}@{tile.origin[0]},{tile.origin[1]}",
            ))
    return records


def attach_caption(record: DatasetRecord, slot: str, text: str,
                   max_words: int = MAX_CAPTION_WORDS) -> DatasetRecord:
    """Fill one caption slot with an annotator reply after basic checks."""
    if slot not in CAPTION_SLOTS:
        raise DatasetError(f"unknown caption slot {slot!r}", record.id)
    if slot == "terrain_caption" and record.heightmap is None:
        raise DatasetError("flat-zero records take no terrain caption", record.id)
    text = " ".join(text.split())
    if not text:
        raise DatasetError("empty caption", record.id)
    if "```" in text or len(text.split()) > max_words:
        raise DatasetError(f"caption is not plain prose of at most {max_words} words", record.id)
    return replace(record, captions={**record.captions, slot: text})


# -- configuration sampling -------------------------------------------------

def _stratified(values, n: int, rng: np.random.Generator) -> list:
    """n draws covering ``values`` as evenly as possible, in random order."""
    values = list(values)
    head = values * (n // len(values))
    extra = [values[j] for j in rng.permutation(len(values))[: n - len(head)]]
    out = head + extra
    return [out[j] for j in rng.permutation(len(out))]


def _agent_options(layout: LayoutMatrix, zones, rules: RuleTable) -> list[tuple[str, str, str, int]]:
    """Every (category, state, region, available_cells) with at least one cell."""
    out = []
    for cat in rules.categories:
        for state in rules.allowed_states(cat):
            for region in REGIONS:
                n = len(agent_spawn_cells(AgentSpec(cat, 1, state, region), layout, zones, rules))
                if n:
                    out.append((cat, state, region, n))
    return out


def sample_configs(n: int, rules: RuleTable | None = None, layout_context: LayoutMatrix | None = None,
                   seed: int = 0, zones=None, max_agents: int = 3, max_quantity: int = 5) -> list[EnvironmentConfig]:
    """Sample ``n`` configurations that fit ``layout_context``.

    Coarse attributes are stratified independently per field, so every
    enumeration value appears floor(n / size) or ceil(n / size) times.
    Agents are drawn only from (category, state, sector) combinations the
    layout can host, with quantities capped by the available cells, so the
    habitat rules hold by construction.  Without a layout no agents are
    emitted.  Layout-only findings (snow in low zones) do not depend on the
    configuration and are the caller's concern.
    """
    rules = rules or default_rule_table()
    rng = _grid.sub_rng(seed, "sample_configs")
    columns = {f: _stratified(rules.enum(f), n, rng) for f in COARSE_FIELDS}
    options = _agent_options(layout_context, zones, rules) if layout_context is not None else []
    out = []
    for i in range(n):
        coarse = CoarseAttributes(**{f: columns[f][i] for f in COARSE_FIELDS})
        fine = expand_coarse_to_fine(coarse, rules, int(rng.integers(2**31)))
        agents = []
        if options:
            k = int(rng.integers(0, max_agents + 1))
            for j in rng.choice(len(options), size=min(k, len(options)), replace=False):
                cat, state, region, avail = options[int(j)]
                q = int(rng.integers(1, min(avail, max_quantity) + 1))
                agents.append(AgentSpec(cat, q, state, region))
        out.append(EnvironmentConfig(coarse, fine, tuple(agents)))
    return out


# -- export / import --------------------------------------------------------

def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def _index_entry(rec: DatasetRecord) -> dict:
    files = {"layout": "layout.txt", "segmentation": "seg.png", "prompts": "prompts.json",
             "heightmap": None, "sketch": None, "config": None}
    if rec.heightmap is not None:
        files["heightmap"] = "height.png"
    if rec.sketch is not None:
        files["sketch"] = "sketch.png"
    if rec.config is not None:
        files["config"] = "config.json"
    return {
        "id": rec.id,
        "table": rec.layout.table.name,
        "p": rec.layout.p,
        "rotation": rec.rotation,
        "source": rec.source,
        "heightmap": rec.heightmap_marker,
        "captions": {k: rec.captions.get(k) for k in CAPTION_SLOTS},
        "dir": f"assets/{rec.id}",
        "files": files,
    }


def export_dataset(records, directory: str | Path) -> dict:
    """Write ``index.jsonl`` and ``assets/<id>/...``; returns counts."""
    directory = Path(directory)
    records = list(records)
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise DatasetError("duplicate record ids")
    tables = {}
    lines = []
    for rec in records:
        tables[rec.layout.table.name] = rec.layout.table
        entry = _index_entry(rec)
        d = directory / entry["dir"]
        _grid.atomic_write_text(d / "layout.txt", serialize_layout(rec.layout))
        write_segmentation_png(rec.segmentation, d / "seg.png")
        _grid.atomic_write_bytes(d / "prompts.json", _json_bytes([b.to_dict() for b in rec.prompts]))
        if rec.heightmap is not None:
            save_heightmap(rec.heightmap, d / "height.png")
        if rec.sketch is not None:
            save_sketch(rec.sketch, d / "sketch.png")
        if rec.config is not None:
            _grid.atomic_write_text(d / "config.json", rec.config.to_json())
        lines.append(_grid.canonical_json(entry))
    for name, table in sorted(tables.items()):
        _grid.atomic_write_bytes(directory / "tables" / f"{name}.json", _json_bytes(table.to_dict()))
    _grid.atomic_write_text(directory / INDEX_NAME, "".join(line + "\n" for line in lines))
    return {"records": len(records), "with_heightmap": sum(r.heightmap is not None for r in records),
            "with_config": sum(r.config is not None for r in records)}


def _load_record(directory: Path, entry: dict, tables: dict, rules: RuleTable | None) -> DatasetRecord:
    rid = entry.get("id", "?")
    try:
        table = tables[entry["table"]]
        d = directory / entry["dir"]
        files = entry["files"]
        layout = parse_layout((d / files["layout"]).read_text(encoding="utf-8"), table)
        if layout.p != entry["p"]:
            raise DatasetError(f"layout is {layout.p}x{layout.p}, index says {entry['p']}", rid)
        seg = read_segmentation_png(d / files["segmentation"], table)
        hm = load_heightmap(d / files["heightmap"]) if files.get("heightmap") else None
        if (hm is None) != (entry["heightmap"] == FLAT_ZERO):
            raise DatasetError("heightmap marker disagrees with files", rid)
        if hm is not None and hm.values.shape != seg.pixels.shape[:2]:
            raise DatasetError("heightmap and segmentation sizes differ", rid)
        sk = load_sketch(d / files["sketch"]) if files.get("sketch") else None
        prompts = tuple(PromptBundle.from_dict(b)
                        for b in json.loads((d / files["prompts"]).read_text(encoding="utf-8")))
        cfg = None
        if files.get("config"):
            cfg = parse_config((d / files["config"]).read_text(encoding="utf-8"), rules)
        return DatasetRecord(rid, layout, seg, hm, sk, prompts, int(entry["rotation"]), entry.get("source", ""),
                             {k: entry["captions"].get(k) for k in CAPTION_SLOTS}, cfg)
    except DatasetError:
        raise
    except (SceneLatticeError, OSError, KeyError, TypeError, ValueError) as exc:
        raise DatasetError(str(exc), rid) from exc


def import_dataset(directory: str | Path, rules: RuleTable | None = None) -> list[DatasetRecord]:
    """Read and validate every record of an exported dataset."""
    directory = Path(directory)
    from .layout import load_symbol_table

    tables = {}
    for path in sorted((directory / "tables").glob("*.json")):
        t = load_symbol_table(path)
        tables[t.name] = t
    records = []
    for n, line in enumerate((directory / INDEX_NAME).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"index line {n} is not JSON: {exc}", None) from exc
        records.append(_load_record(directory, entry, tables, rules))
    return records


def load_source_pair(image_path: str | Path, table: SymbolTable, dem_path: str | Path | None = None):
    """Read one (segmentation PNG, optional 16-bit elevation PNG) source pair."""
    with Image.open(image_path) as im:
        raster = SegmentationRaster(np.asarray(im.convert("RGB")), table)
    dem = load_heightmap(dem_path) if dem_path is not None else None
    return raster, dem
