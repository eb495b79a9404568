"""Symbolic scene layouts compiled into terrain masks and placement manifests."""
from .errors import *  # noqa: F401,F403
from .layout import (
    LayoutMatrix, SegmentationRaster, SymbolTable, builtin_table, colorize_layout,
    downsample_segmentation, layout_hash, parse_layout, rotate_layout, serialize_layout,
)
from .terrain import (
    Heightmap, Sketch, erode, extract_sketch, flow_accumulation, sketch_to_heightmap,
    summarize_terrain, elevation_zones,
)
from .decoder import MaskSet, decode_layout, export_masks, load_masks
from .config import (
    EnvironmentConfig, RuleTable, check_consistency, default_rule_table,
    expand_coarse_to_fine, parse_config,
)
from .placement import PlacementManifest, PlacementParams, compile, scatter_assets, place_buildings
from .bridge import (
    MockBackend, PromptBundle, RemoteBackend, build_caption_prompt, build_config_prompt,
    build_layout_prompt, invoke_generator, validate_config_response, validate_layout_response,
)

__version__ = "0.1.0"
