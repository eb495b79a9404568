"""Command-line entry point: compile, generate, validate, forge, inspect.

Exit codes: 0 success, 1 validation failure, 2 consistency violation,
3 generator failure, 4 I/O error.  Every subcommand is deterministic for
fixed inputs, flags and ``--seed`` (default 0).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import _grid
from .bridge import (
    GeneratorResponse,
    MockBackend,
    RemoteBackend,
    build_config_prompt,
    build_layout_prompt,
    invoke_generator,
    terrain_caption,
    validate_config_response,
    validate_layout_response,
)
from .config import parse_config
from .decoder import MANIFEST_NAME, export_masks, load_masks
from .errors import (
    BridgeError,
    ConsistencyError,
    DatasetError,
    SceneLatticeError,
    StageError,
)
from .forge import export_dataset, forge_records, import_dataset, load_source_pair, sample_configs, tile_source
from .layout import (
    DEFAULT_P,
    layout_region_histogram,
    read_layout,
    read_segmentation_png,
    resolve_table,
    serialize_layout,
)
from .placement import BuildingRules, PlacementManifest, PlacementParams, compile
from .terrain import (
    elevation_zones,
    load_heightmap,
    load_sketch,
    sketch_to_heightmap,
    summarize_terrain,
)

log = logging.getLogger("scenelattice")

EXIT_OK, EXIT_VALIDATION, EXIT_CONSISTENCY, EXIT_GENERATOR, EXIT_IO = 0, 1, 2, 3, 4

# Built-in defaults for options that may also come from --config-file.
DEFAULTS = {
    "table": "loveda",
    "p": DEFAULT_P,
    "resolution": 512,
    "sigma_px": 2.0,
    "noise_amp": 0.0,
    "world_size_m": 1024.0,
    "max_height_m": 200.0,
    "d_min": 15.0,
    "d_max": 60.0,
    "slope_max": 15.0,
    "zone_thresholds": [20000, 45000],
    "workers": 1,
    "backend": "mock",
    "tile_px": 512,
    "stride": None,
    "rotations": "0,1,2,3",
    "mode": "loveda",
    "configs": 0,
}


class _JsonFormatter(logging.Formatter):
    def format(self, record):
        return json.dumps({"level": record.levelname.lower(), "logger": record.name,
                           "message": record.getMessage()}, sort_keys=True)


def _setup_logging(args) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonFormatter() if args.json_logs else logging.Formatter("%(levelname)s: %(message)s"))
    root = logging.getLogger("scenelattice")
    root.handlers[:] = [handler]
    root.setLevel(logging.ERROR if args.quiet else logging.INFO)
    root.propagate = False


def _out(args, text: str) -> None:
    if not args.quiet:
        print(text)


def _opt(args, name):
    """Command-line value, else --config-file value, else built-in default."""
    v = getattr(args, name, None)
    if v is not None:
        return v
    return args.file_settings.get(name, DEFAULTS.get(name))


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.error)
    if isinstance(exc, ConsistencyError):
        return EXIT_CONSISTENCY
    if isinstance(exc, BridgeError):
        return EXIT_GENERATOR
    if isinstance(exc, DatasetError) and isinstance(exc.__cause__, OSError):
        return EXIT_IO
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_VALIDATION


def _report_error(exc: BaseException) -> int:
    code = exit_code_for(exc)
    inner = exc.error if isinstance(exc, StageError) else exc
    if isinstance(inner, ConsistencyError):
        for v in inner.report.violations:
            print(f"violation [{v.rule_id}] {v.location}: {v.message}", file=sys.stderr)
    label = f"[{exc.stage}] " if isinstance(exc, StageError) else ""
    print(f"error: {label}{type(inner).__name__}: {inner}", file=sys.stderr)
    return code


# -- shared helpers --------------------------------------------------------

def _params(args) -> PlacementParams:
    low, high = _opt(args, "zone_thresholds")
    return PlacementParams(
        world_size_m=float(_opt(args, "world_size_m")),
        max_height_m=float(_opt(args, "max_height_m")),
        resolution=int(_opt(args, "resolution")),
        sigma_px=float(_opt(args, "sigma_px")),
        noise_amp=float(_opt(args, "noise_amp")),
        zone_thresholds=(int(low), int(high)),
        buildings=BuildingRules(d_min=float(_opt(args, "d_min")), d_max=float(_opt(args, "d_max")),
                                slope_max=float(_opt(args, "slope_max"))),
        workers=int(_opt(args, "workers")),
    )


def _load_terrain(args):
    if getattr(args, "sketch", None):
        return sketch_to_heightmap(load_sketch(args.sketch))
    if getattr(args, "heightmap", None):
        return load_heightmap(args.heightmap)
    return None


def _write_compile_outputs(result, out: Path) -> None:
    export_masks(result.masks, out / "masks")
    _grid.atomic_write_text(out / "manifest.json", result.manifest.to_json())
    report = {k: v for k, v in result.report.items() if k != "timings_s"}
    _grid.atomic_write_text(out / "report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def _run_compile(args, layout, heightmap, cfg) -> int:
    out = Path(args.out)
    result = compile(layout, heightmap, cfg, _params(args), seed=args.seed)
    for w in result.report["warnings"]:
        log.warning(w)
    log.info("stage timings: %s", result.report["timings_s"])
    _write_compile_outputs(result, out)
    c = result.report["counts"]
    _out(args, f"compiled {c['asset']} assets, {c['building']} buildings, {c['agent']} agents -> {out}")
    return EXIT_OK


# -- subcommands -----------------------------------------------------------

def cmd_compile(args) -> int:
    table = resolve_table(_opt(args, "table"))
    layout = read_layout(args.layout, table)
    cfg = parse_config(Path(args.config).read_text(encoding="utf-8"))
    return _run_compile(args, layout, _load_terrain(args), cfg)


def _backend(args):
    if _opt(args, "backend") == "remote":
        return RemoteBackend.from_env(args.file_settings.get("remote"))
    return MockBackend(seed=args.seed)


def _log_repairs(kind: str, resp: GeneratorResponse) -> None:
    for r in resp.repairs:
        log.warning("%s repair: %s", kind, r)


def cmd_generate(args) -> int:
    backend = _backend(args)          # configuration errors surface before any work
    if args.instruction_file:
        instruction = Path(args.instruction_file).read_text(encoding="utf-8").strip()
    else:
        instruction = args.instruction or ""
    table = resolve_table(_opt(args, "table"))
    p = int(_opt(args, "p"))
    heightmap = _load_terrain(args)
    caption = None
    if heightmap is not None:
        summary = summarize_terrain(heightmap)
        if summary.max > summary.min:
            caption = terrain_caption(summary)
    out = Path(args.out)

    layout_bundle = build_layout_prompt(instruction, table, caption, p)
    raw_layout = invoke_generator(layout_bundle, backend)
    try:
        layout_resp = validate_layout_response(raw_layout, table, p)
    except BridgeError as exc:
        _grid.atomic_write_text(out / "layout.raw.txt", raw_layout)
        diag = getattr(exc, "diagnostics", {})
        print(f"layout response rejected: {exc}", file=sys.stderr)
        if diag:
            print("repair diagnostics: " + json.dumps(diag, sort_keys=True), file=sys.stderr)
        return EXIT_GENERATOR
    _log_repairs("layout", layout_resp)

    config_bundle = build_config_prompt(instruction, layout_resp.payload, None, caption)
    raw_config = invoke_generator(config_bundle, backend)
    try:
        config_resp = validate_config_response(raw_config)
    except SceneLatticeError as exc:
        _grid.atomic_write_text(out / "config.raw.txt", raw_config)
        print(f"configuration response rejected: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GENERATOR
    _log_repairs("config", config_resp)

    _grid.atomic_write_text(out / "layout.txt", serialize_layout(layout_resp.payload))
    _grid.atomic_write_text(out / "config.json", config_resp.payload.to_json())
    _grid.atomic_write_text(out / "prompts.json", json.dumps(
        [layout_bundle.to_dict(), config_bundle.to_dict()], indent=2, sort_keys=True) + "\n")
    _grid.atomic_write_text(out / "generation.json", json.dumps(
        {"layout": layout_resp.to_dict(), "config": config_resp.to_dict(),
         "backend": _opt(args, "backend"), "seed": args.seed}, indent=2, sort_keys=True) + "\n")
    return _run_compile(args, layout_resp.payload, heightmap, config_resp.payload)


def _detect_kind(path: Path) -> str:
    if path.is_dir():
        if (path / "index.jsonl").is_file():
            return "dataset"
        if (path / MANIFEST_NAME).is_file():
            return "masks"
        raise ValueError("directory is neither a dataset nor a mask set")
    suffix = path.suffix.lower()
    if suffix == ".txt":
        return "layout"
    if suffix == ".png":
        with Image.open(path) as im:
            return "heightmap" if im.mode.startswith("I;16") else "segmentation"
    if suffix == ".json":
        doc = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(doc, dict) and doc.get("format") == "scenelattice.placement_manifest":
            return "manifest"
        if isinstance(doc, dict) and doc.get("format") == "scenelattice.symbol_table":
            return "table"
        if path.name == MANIFEST_NAME:
            return "masks"
        return "config"
    raise ValueError(f"cannot tell what kind of file {path.name} is")


def _validate_one(path: Path, kind: str, args) -> str:
    table = resolve_table(_opt(args, "table"))
    if kind == "layout":
        m = read_layout(path, table)
        return f"{m.p}x{m.p} layout"
    if kind == "config":
        cfg = parse_config(path.read_text(encoding="utf-8"))
        return f"config with {len(cfg.agents)} agent group(s)"
    if kind == "heightmap":
        h = load_heightmap(path)
        return f"{h.width}x{h.height} heightmap"
    if kind == "segmentation":
        r = read_segmentation_png(path, table)
        r.class_indices()
        return f"{r.width}x{r.height} segmentation"
    if kind == "sketch":
        s = load_sketch(path)
        return f"{s.width}x{s.height} sketch"
    if kind == "manifest":
        mf = PlacementManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
        return f"manifest with {len(mf.instances)} instances"
    if kind == "masks":
        ms = load_masks(path if path.is_dir() else path.parent, renormalize=False)
        err = float(np.abs(ms.coverage() - 1.0).max())
        if err > 1e-3:
            raise ValueError(f"mask weights sum to 1 only within {err:.2e}")
        return f"{len(ms.classes)} masks at {ms.resolution}px"
    if kind == "table":
        t = resolve_table(str(path))
        return f"symbol table {t.name!r} with {len(t.entries)} entries"
    if kind == "dataset":
        return f"dataset with {len(import_dataset(path))} records"
    raise ValueError(f"unknown kind {kind!r}")


def cmd_validate(args) -> int:
    worst = EXIT_OK
    for name in args.paths:
        path = Path(name)
        try:
            if not path.exists():
                raise FileNotFoundError(f"no such file: {name}")
            kind = args.kind or _detect_kind(path)
            detail = _validate_one(path, kind, args)
            _out(args, f"OK   {name}: {detail}")
        except (SceneLatticeError, OSError, ValueError, KeyError) as exc:
            code = exit_code_for(exc)
            print(f"FAIL {name}: {type(exc).__name__}: {exc}", file=sys.stderr)
            worst = max(worst, code)
    return worst


def cmd_forge(args) -> int:
    table = resolve_table(_opt(args, "table"))
    mode = _opt(args, "mode")
    rotations = [int(k) for k in str(_opt(args, "rotations")).split(",") if k.strip()]
    stride = _opt(args, "stride")
    src = Path(args.src_dir)
    images = sorted(p for p in src.glob("*.png") if not p.name.endswith(".dem.png"))
    if not images:
        raise FileNotFoundError(f"no source images in {src}")
    records = []
    for n, img in enumerate(images):
        dem = img.with_name(img.stem + ".dem.png")
        raster, hm = load_source_pair(img, table, dem if dem.is_file() else None)
        tiles = tile_source(raster, hm, int(_opt(args, "tile_px")), int(stride) if stride else None)
        records.extend(forge_records(tiles, table, rotations, mode, int(_opt(args, "p")),
                                     id_prefix=f"{img.stem}_"))
    n_cfg = int(_opt(args, "configs"))
    if n_cfg:
        from dataclasses import replace

        records = [replace(r, config=sample_configs(1, None, r.layout, seed=args.seed + i)[0])
                   for i, r in enumerate(records)]
    counts = export_dataset(records, args.out_dir)
    import_dataset(args.out_dir)
    _out(args, f"forged {counts['records']} records from {len(images)} source image(s) -> {args.out_dir}")
    return EXIT_OK


def _display(name: str) -> str:
    return name.replace("_", " ").capitalize()


def _inspect_layout(m) -> list[str]:
    lines = [f"layout {m.p}x{m.p}, table {m.table.name}"]
    for cls, (n, frac) in layout_region_histogram(m).items():
        lines.append(f"  {_display(cls):<12} {n:6d} cells  {100 * frac:5.1f}%")
    return lines


def cmd_inspect(args) -> int:
    path = Path(args.artifact)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    kind = args.kind or _detect_kind(path)
    table = resolve_table(_opt(args, "table"))
    lines: list[str] = []
    if kind == "layout":
        lines = _inspect_layout(read_layout(path, table))
    elif kind == "heightmap":
        h = load_heightmap(path)
        s = summarize_terrain(h)
        low, high = _opt(args, "zone_thresholds")
        zones = elevation_zones(h, int(_opt(args, "p")), (int(low), int(high)))
        lines = [f"heightmap {h.width}x{h.height}, {h.meters_per_pixel} m/px",
                 f"  min {s.min}  max {s.max}  mean {s.mean:.1f}  downhill {s.direction}",
                 "  relief: " + " | ".join(" ".join(r) for r in s.relief),
                 "  zones (l/m/h):"]
        lines += ["    " + "".join(z[0] for z in row) for row in zones]
    elif kind == "manifest":
        mf = PlacementManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
        by = {}
        for inst in mf.instances:
            by[(inst.kind, inst.name)] = by.get((inst.kind, inst.name), 0) + 1
        lines = [f"manifest: {len(mf.instances)} instances in a {mf.world_size_m:g} m world"]
        lines += [f"  {k:<9} {n:<16} {c:6d}" for (k, n), c in sorted(by.items())]
        lines.append(f"  provenance: {json.dumps(mf.provenance, sort_keys=True)}")
    elif kind == "config":
        cfg = parse_config(path.read_text(encoding="utf-8"))
        lines = ["config: " + ", ".join(f"{k}={v}" for k, v in cfg.coarse.to_dict().items())]
        lines += [f"  agent {a.quantity} x {a.category} ({a.state}) in {a.region}" for a in cfg.agents]
        lines.append(f"  fine attributes for {len(cfg.fine)} asset type(s)")
    elif kind == "masks":
        ms = load_masks(path if path.is_dir() else path.parent)
        lines = [f"masks at {ms.resolution}px"]
        lines += [f"  {_display(c):<12} mean weight {float(ms[c].mean()):.4f}" for c in ms.classes]
    elif kind == "segmentation":
        from .layout import downsample_segmentation

        lines = _inspect_layout(downsample_segmentation(read_segmentation_png(path, table), int(_opt(args, "p"))))
    elif kind == "dataset":
        recs = import_dataset(path)
        lines = [f"dataset: {len(recs)} records",
                 f"  with heightmap: {sum(r.heightmap is not None for r in recs)}",
                 f"  with config: {sum(r.config is not None for r in recs)}"]
    else:
        lines = [f"{kind}: {_validate_one(path, kind, args)}"]
    print("\n".join(lines))
    return EXIT_OK


# -- argument parsing ------------------------------------------------------

def _add_compile_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--table", help="symbol table name (loveda, wild) or JSON path")
    p.add_argument("--resolution", type=int, help="mask resolution in pixels (default 512)")
    p.add_argument("--sigma", dest="sigma_px", type=float, help="edge blur sigma in pixels (default 2)")
    p.add_argument("--noise", dest="noise_amp", type=float, help="edge noise amplitude (default 0)")
    p.add_argument("--world-size", dest="world_size_m", type=float, help="world edge length in metres")
    p.add_argument("--max-height", dest="max_height_m", type=float, help="elevation of value 65535 in metres")
    p.add_argument("--d-min", type=float, help="minimum building spacing in metres (default 15)")
    p.add_argument("--d-max", type=float, help="isolation warning distance in metres (default 60)")
    p.add_argument("--slope-max", type=float, help="steepest building site in degrees (default 15)")
    p.add_argument("--zone-thresholds", type=int, nargs=2, metavar=("LOW", "HIGH"))
    p.add_argument("--workers", type=int, help="threads for per-class stages (default 1)")
    terrain = p.add_mutually_exclusive_group()
    terrain.add_argument("--heightmap", help="16-bit grayscale PNG")
    terrain.add_argument("--sketch", help="ridge/valley sketch PNG, converted to a heightmap")
    p.add_argument("--out", required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scenelattice", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--config-file", help="JSON file with option defaults")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--quiet", action="store_true", help="only print errors")
    verbosity.add_argument("--json-logs", action="store_true", help="log as JSON lines on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    # --seed is also accepted after the subcommand name.
    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    p = sub.add_parser("compile", parents=[seeded], help="layout + config (+ terrain) -> masks and manifest")
    p.add_argument("--layout", required=True)
    p.add_argument("--config", required=True)
    _add_compile_options(p)
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("generate", parents=[seeded], help="instruction -> layout and config via a generator, then compile")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("instruction", nargs="?")
    src.add_argument("--instruction-file")
    p.add_argument("--backend", choices=("mock", "remote"))
    p.add_argument("--p", type=int, help="layout size (default 32)")
    _add_compile_options(p)
    p.set_defaults(func=cmd_generate)

    kinds = ("layout", "config", "heightmap", "segmentation", "sketch", "manifest", "masks", "table", "dataset")
    p = sub.add_parser("validate", parents=[seeded], help="check files of any supported kind")
    p.add_argument("paths", nargs="+")
    p.add_argument("--table")
    p.add_argument("--kind", choices=kinds, help="skip auto-detection")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("forge", parents=[seeded], help="build a training dataset from segmentation sources")
    p.add_argument("src_dir", help="directory of <name>.png segmentations (+ optional <name>.dem.png)")
    p.add_argument("out_dir")
    p.add_argument("--table")
    p.add_argument("--mode", choices=("loveda", "wild"))
    p.add_argument("--tile-px", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--rotations", help="comma-separated quarter turns (default 0,1,2,3)")
    p.add_argument("--p", type=int)
    p.add_argument("--configs", type=int, help="attach one sampled config per record when non-zero")
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("inspect", parents=[seeded], help="human-readable summary of an artifact")
    p.add_argument("artifact")
    p.add_argument("--table")
    p.add_argument("--kind", choices=kinds)
    p.add_argument("--p", type=int)
    p.add_argument("--zone-thresholds", type=int, nargs=2, metavar=("LOW", "HIGH"))
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args)
    args.file_settings = {}
    try:
        if args.config_file:
            settings = json.loads(Path(args.config_file).read_text(encoding="utf-8"))
            if not isinstance(settings, dict):
                raise ValueError("--config-file must hold a JSON object")
            args.file_settings = settings
        return args.func(args)
    except (SceneLatticeError, OSError, ValueError, KeyError) as exc:
        return _report_error(exc)


if __name__ == "__main__":
    sys.exit(main())
