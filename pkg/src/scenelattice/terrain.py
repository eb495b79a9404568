"""Heightmaps, sketches and the dataset-side terrain operators.

Elevations are stored as integers in [0, 65535].  Array axes are
(row, col) = (y, x) with y growing southwards, so "north" is row 0.

``sketch_to_heightmap`` is a deterministic distance-field construction,
not a learned model: it keeps the sketch-in / heightmap-out contract
(black strokes are ridges, blue strokes are valleys) without any training.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin
from scipy import ndimage

from . import _grid
from .errors import BadBitDepth, BadDimensions, DegenerateRelief, EmptySketch, TerrainError

log = logging.getLogger(__name__)

MAX_ELEVATION = 65535
DEFAULT_ZONE_THRESHOLDS = (20000, 45000)
ZONE_LABELS = ("low", "mid", "high")
COMPASS = ("E", "SE", "S", "SW", "W", "NW", "N", "NE")
COMPASS_NAMES = {
    "E": "east", "SE": "southeast", "S": "south", "SW": "southwest",
    "W": "west", "NW": "northwest", "N": "north", "NE": "northeast",
    "none": "none",
}

# Row/col offsets of the 8 neighbours, fixed order used for D8 tie-breaking.
_D8 = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


class Heightmap:
    """Immutable uint16 elevation grid plus horizontal scale metadata."""

    __slots__ = ("values", "meters_per_pixel")

    def __init__(self, values, meters_per_pixel: float = 1.0):
        arr = np.asarray(values)
        if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
            raise BadDimensions(f"heightmap must be at least 2x2, got shape {arr.shape}")
        if arr.dtype != np.uint16:
            if arr.size and (np.min(arr) < 0 or np.max(arr) > MAX_ELEVATION):
                raise TerrainError("heightmap values must lie in [0, 65535]")
            if np.issubdtype(arr.dtype, np.floating):
                arr = np.rint(arr)
        arr = np.array(arr, dtype=np.uint16, copy=True)
        arr.setflags(write=False)
        if not meters_per_pixel > 0:
            raise TerrainError("meters_per_pixel must be positive")
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "meters_per_pixel", float(meters_per_pixel))

    def __setattr__(self, name, value):
        raise AttributeError("Heightmap is immutable")

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Heightmap):
            return NotImplemented
        return (self.meters_per_pixel == other.meters_per_pixel
                and np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"Heightmap({self.width}x{self.height}, mpp={self.meters_per_pixel})"


def _values(h) -> np.ndarray:
    return np.asarray(h.values if isinstance(h, Heightmap) else h)


def heightmap_png_bytes(h: Heightmap) -> bytes:
    info = PngImagePlugin.PngInfo()
    info.add_text("meters_per_pixel", repr(h.meters_per_pixel))
    import io

    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(h.values)).save(buf, format="PNG", pnginfo=info)
    return buf.getvalue()


def save_heightmap(h: Heightmap, path: str | Path) -> None:
    _grid.atomic_write_bytes(path, heightmap_png_bytes(h))


def load_heightmap(path: str | Path) -> Heightmap:
    """Read a 16-bit grayscale PNG."""
    with Image.open(path) as im:
        if im.mode not in ("I;16", "I;16B", "I;16L"):
            raise BadBitDepth(f"{path}: expected 16-bit grayscale PNG, got mode {im.mode}")
        arr = np.asarray(im).astype(np.uint16)
        mpp = float(im.info.get("meters_per_pixel", 1.0))
    return Heightmap(arr, meters_per_pixel=mpp)


def flat_heightmap(w: int, h: int, value: int = 0, meters_per_pixel: float = 1.0) -> Heightmap:
    if not 0 <= value <= MAX_ELEVATION:
        raise TerrainError("value must lie in [0, 65535]")
    return Heightmap(np.full((h, w), value, dtype=np.uint16), meters_per_pixel)


# -- sketches --------------------------------------------------------------

EMPTY, RIDGE, VALLEY = 0, 1, 2


@dataclass(frozen=True, eq=False)
class Sketch:
    """Stroke raster with classes EMPTY / RIDGE / VALLEY."""

    strokes: np.ndarray

    def __post_init__(self):
        s = np.array(self.strokes, dtype=np.uint8, copy=True)
        if s.ndim != 2:
            raise BadDimensions("sketch must be 2-D")
        if s.size and s.max() > VALLEY:
            raise TerrainError("sketch strokes must be 0 (empty), 1 (ridge) or 2 (valley)")
        s.setflags(write=False)
        object.__setattr__(self, "strokes", s)

    @property
    def width(self) -> int:
        return self.strokes.shape[1]

    @property
    def height(self) -> int:
        return self.strokes.shape[0]

    def __eq__(self, other):
        return isinstance(other, Sketch) and np.array_equal(self.strokes, other.strokes)


def decode_sketch_rgb(rgb: np.ndarray) -> Sketch:
    """Classify an RGB drawing: dark pixels are ridges, blue pixels valleys.

    Ridge: every channel < 96.  Valley: blue >= 128 and red, green < 96.
    Anything else is empty.
    """
    rgb = np.asarray(rgb).astype(np.int32)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    out = np.zeros(r.shape, dtype=np.uint8)
    out[(r < 96) & (g < 96) & (b < 96)] = RIDGE
    out[(b >= 128) & (r < 96) & (g < 96)] = VALLEY
    return Sketch(out)


def encode_sketch_rgb(s: Sketch) -> np.ndarray:
    palette = np.array([[255, 255, 255], [0, 0, 0], [0, 0, 255]], dtype=np.uint8)
    return palette[s.strokes]


def load_sketch(path: str | Path) -> Sketch:
    with Image.open(path) as im:
        return decode_sketch_rgb(np.asarray(im.convert("RGB")))


def save_sketch(s: Sketch, path: str | Path) -> None:
    _grid.atomic_write_bytes(path, _grid.png_bytes(Image.fromarray(encode_sketch_rgb(s))))


def sketch_to_heightmap(s: Sketch, low: int = 0, high: int = MAX_ELEVATION,
                        erode_iterations: int = 0, talus_angle: float = 35.0,
                        meters_per_pixel: float = 1.0) -> Heightmap:
    """Build a heightmap from ridge/valley strokes by distance-field blending.

    With both stroke kinds present, a pixel at distance d_r from the
    nearest ridge and d_v from the nearest valley gets
    ``low + (high - low) * d_v / (d_r + d_v)``, i.e. inverse-distance
    weighting of the two anchors.  With only ridges, elevation falls
    linearly from ``high`` to ``low`` at the farthest pixel (valleys alone
    rise symmetrically).
    """
    if not 0 <= low <= high <= MAX_ELEVATION:
        raise TerrainError("need 0 <= low <= high <= 65535")
    strokes = s.strokes
    ridge = strokes == RIDGE
    valley = strokes == VALLEY
    if not ridge.any() and not valley.any():
        raise EmptySketch("sketch has no ridge or valley strokes")

    if ridge.all():
        t = np.ones(strokes.shape)
    elif valley.all():
        t = np.zeros(strokes.shape)
    elif ridge.any() and valley.any():
        d_r = ndimage.distance_transform_edt(~ridge)
        d_v = ndimage.distance_transform_edt(~valley)
        t = d_v / (d_r + d_v)
    elif ridge.any():
        d_r = ndimage.distance_transform_edt(~ridge)
        t = 1.0 - d_r / d_r.max()
    else:
        d_v = ndimage.distance_transform_edt(~valley)
        t = d_v / d_v.max()

    h = Heightmap(np.rint(low + (high - low) * t), meters_per_pixel)
    if erode_iterations:
        h = erode(h, erode_iterations, talus_angle)
    return h


# -- flow routing ----------------------------------------------------------

def d8_receivers(values) -> np.ndarray:
    """Flat index of each cell's steepest-descent neighbour, or -1 for sinks.

    Drop is measured per unit distance (diagonals divide by sqrt 2).  Only
    strictly lower neighbours qualify; ties go to the first in
    N, NE, E, SE, S, SW, W, NW order.
    """
    z = np.asarray(values, dtype=np.float64)
    rows, cols = z.shape
    padded = np.pad(z, 1, constant_values=np.inf)
    best = np.zeros_like(z)
    recv = np.full(z.shape, -1, dtype=np.int64)
    rr, cc = np.indices(z.shape)
    for dr, dc in _D8:
        nb = padded[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
        dist = math.sqrt(2.0) if dr and dc else 1.0
        slope = (z - nb) / dist
        better = slope > best
        best = np.where(better, slope, best)
        recv = np.where(better, (rr + dr) * cols + (cc + dc), recv)
    return recv


def flow_accumulation(h) -> np.ndarray:
    """D8 accumulated flow with one unit of rain per cell.

    Sinks (pits, flats with no lower neighbour, border cells that cannot
    drain inward) keep what they receive, so the sum over sinks equals the
    number of cells.
    """
    z = _values(h).astype(np.float64)
    recv = d8_receivers(z).ravel()
    order = np.argsort(-z.ravel(), kind="stable")
    acc = [1.0] * z.size
    recv_list = recv.tolist()
    for i in order.tolist():
        r = recv_list[i]
        if r >= 0:
            acc[r] += acc[i]
    return np.asarray(acc).reshape(z.shape)


def sink_mask(h) -> np.ndarray:
    return d8_receivers(_values(h)).reshape(_values(h).shape) < 0


def extract_sketch(h, ridge_q: float = 0.95, valley_q: float = 0.9) -> Sketch:
    """Derive ridge and valley strokes from a heightmap.

    Valleys are cells whose flow accumulation exceeds its ``valley_q``
    quantile; ridges are the same test on the inverted surface with
    ``ridge_q``.  Both are skeletonised to 1-pixel strokes.
    """
    from skimage.morphology import skeletonize

    if not 0 < valley_q < ridge_q < 1:
        raise ValueError("need 0 < valley_q < ridge_q < 1")
    z = _values(h).astype(np.float64)
    if z.max() == z.min():
        raise DegenerateRelief("heightmap has no relief (max == min)")
    acc = flow_accumulation(z)
    acc_inv = flow_accumulation(z.max() - z)
    valley = skeletonize(acc > np.quantile(acc, valley_q))
    ridge = skeletonize(acc_inv > np.quantile(acc_inv, ridge_q)) & ~valley
    out = np.zeros(z.shape, dtype=np.uint8)
    out[ridge] = RIDGE
    out[valley] = VALLEY
    return Sketch(out)


# -- erosion ---------------------------------------------------------------

@dataclass
class ErosionStats:
    iterations: int
    clamp_events: int = 0
    moved: list = field(default_factory=list)


def thermal_erosion(z: np.ndarray, iterations: int, talus: float,
                    rate: float = 0.1) -> tuple[np.ndarray, ErosionStats]:
    """Float thermal erosion on a raw grid.

    ``talus`` is the critical height difference between edge neighbours
    (diagonals use talus * sqrt 2).  Each iteration every cell sends
    ``rate * excess`` to each lower neighbour whose drop exceeds the
    threshold; all flows are computed from the previous state.  With
    ``rate <= 1/8`` every new value is a convex combination of old ones, so
    the result stays inside the original [min, max].
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if not 0 < rate <= 0.125:
        raise ValueError("rate must lie in (0, 1/8]")
    z = np.array(z, dtype=np.float64, copy=True)
    rows, cols = z.shape
    stats = ErosionStats(iterations)
    for _ in range(iterations):
        padded = np.pad(z, 1, mode="edge")
        delta = np.zeros_like(z)
        moved = 0.0
        for dr, dc in _D8:
            nb = padded[1 + dr:1 + dr + rows, 1 + dc:1 + dc + cols]
            limit = talus * (math.sqrt(2.0) if dr and dc else 1.0)
            flow = rate * np.maximum(z - nb - limit, 0.0)
            # no flow across the border: padded edge cells equal z there
            flow = _mask_border(flow, dr, dc)
            delta -= flow
            # credit the receiver, which sits at (r + dr, c + dc)
            delta += _shift(flow, dr, dc)
            moved += float(flow.sum())
        z += delta
        stats.moved.append(moved)
        if moved == 0.0:
            break
    return z, stats


def _mask_border(flow: np.ndarray, dr: int, dc: int) -> np.ndarray:
    flow = flow.copy()
    if dr == -1:
        flow[0, :] = 0
    elif dr == 1:
        flow[-1, :] = 0
    if dc == -1:
        flow[:, 0] = 0
    elif dc == 1:
        flow[:, -1] = 0
    return flow


def _shift(a: np.ndarray, dr: int, dc: int) -> np.ndarray:
    """out[r + dr, c + dc] = a[r, c], zero fill."""
    out = np.zeros_like(a)
    rows, cols = a.shape
    src_r = slice(max(0, -dr), rows - max(0, dr))
    dst_r = slice(max(0, dr), rows - max(0, -dr))
    src_c = slice(max(0, -dc), cols - max(0, dc))
    dst_c = slice(max(0, dc), cols - max(0, -dc))
    out[dst_r, dst_c] = a[src_r, src_c]
    return out


def _round_preserving_sum(z: np.ndarray) -> np.ndarray:
    """Round to integers so the total equals round(sum(z)) (largest remainder)."""
    base = np.floor(z)
    frac = (z - base).ravel()
    need = int(round(float(z.sum()) - float(base.sum())))
    out = base.ravel().copy()
    if need > 0:
        idx = np.argsort(-frac, kind="stable")[:need]
        out[idx] += 1
    return out.reshape(z.shape)


def talus_height(talus_angle: float, meters_per_pixel: float, height_range_m: float) -> float:
    """Critical elevation-unit difference for a slope of ``talus_angle`` degrees."""
    units_per_meter = MAX_ELEVATION / height_range_m
    return math.tan(math.radians(talus_angle)) * meters_per_pixel * units_per_meter


def erode(h: Heightmap, iterations: int, talus_angle: float = 35.0,
          height_range_m: float = 1000.0, rate: float = 0.1,
          stats: ErosionStats | None = None) -> Heightmap:
    """Thermal erosion in the heightmap's own units.

    ``height_range_m`` is the vertical extent represented by 0..65535, used
    with ``meters_per_pixel`` to turn the talus angle into a height step.
    Total elevation is conserved (rounded back to integers without losing
    mass); values are clamped to [0, 65535] and clamp events counted.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return h
    talus = talus_height(talus_angle, h.meters_per_pixel, height_range_m)
    z, st = thermal_erosion(h.values, iterations, talus, rate)
    out = _round_preserving_sum(z)
    clamped = int(((out < 0) | (out > MAX_ELEVATION)).sum())
    if clamped:
        log.warning("erode: clamped %d cells into [0, 65535]", clamped)
        out = np.clip(out, 0, MAX_ELEVATION)
    st.clamp_events = clamped
    if stats is not None:
        stats.iterations, stats.clamp_events, stats.moved = st.iterations, st.clamp_events, st.moved
    return Heightmap(out, h.meters_per_pixel)


# -- summaries -------------------------------------------------------------

@dataclass(frozen=True)
class TerrainSummary:
    min: int
    max: int
    mean: float
    direction: str               # downhill compass point or "none"
    relief: tuple[tuple[str, ...], ...]   # 3x3 macro-cells, row-major from north-west

    def to_dict(self) -> dict:
        return {
            "min": self.min,
            "max": self.max,
            "mean": round(self.mean, 3),
            "direction": self.direction,
            "relief": [list(r) for r in self.relief],
        }


RELIEF_CLASSES = ((0.01, "flat"), (0.10, "gentle"), (0.30, "hilly"), (math.inf, "mountainous"))


def relief_class(span: float) -> str:
    frac = span / MAX_ELEVATION
    for bound, name in RELIEF_CLASSES:
        if frac < bound:
            return name
    return RELIEF_CLASSES[-1][1]


def downhill_direction(h) -> str:
    """Compass point the terrain descends towards on average, or "none"."""
    z = _values(h).astype(np.float64)
    gy, gx = np.gradient(z)
    # downhill vector in (east, north) components; rows grow southwards
    east, north = -gx.mean(), gy.mean()
    if math.hypot(east, north) < 1e-9:
        return "none"
    angle = math.degrees(math.atan2(-north, east)) % 360.0   # clockwise from east
    return COMPASS[int(((angle + 22.5) % 360.0) // 45.0)]


def summarize_terrain(h) -> TerrainSummary:
    z = _values(h)
    edges_r = _grid.patch_edges(z.shape[0], 3)
    edges_c = _grid.patch_edges(z.shape[1], 3)
    relief = tuple(
        tuple(
            relief_class(float(np.ptp(z[edges_r[i]:edges_r[i + 1], edges_c[j]:edges_c[j + 1]])))
            for j in range(3)
        )
        for i in range(3)
    )
    return TerrainSummary(
        min=int(z.min()),
        max=int(z.max()),
        mean=float(z.mean(dtype=np.float64)),
        direction=downhill_direction(z),
        relief=relief,
    )


def zone_means(h, p: int) -> np.ndarray:
    z = _values(h).astype(np.float64)
    if z.shape[0] < p or z.shape[1] < p:
        raise BadDimensions(f"heightmap {z.shape[1]}x{z.shape[0]} is smaller than p={p}")
    return _grid.patch_sums(z, p, p) / _grid.patch_counts(z.shape[0], z.shape[1], p, p)


def elevation_zones(h, p: int = 32, thresholds=DEFAULT_ZONE_THRESHOLDS) -> np.ndarray:
    """Patch-average to p x p and label each cell "low", "mid" or "high".

    A mean below ``thresholds[0]`` is low, below ``thresholds[1]`` mid,
    otherwise high.
    """
    lo, hi = thresholds
    if not 0 <= lo < hi <= MAX_ELEVATION:
        raise ValueError("thresholds must be strictly increasing within [0, 65535]")
    means = zone_means(h, p)
    codes = (means >= lo).astype(np.int8) + (means >= hi).astype(np.int8)
    return np.array(ZONE_LABELS)[codes]


def upsample_to(h: Heightmap, size: int) -> Heightmap:
    """Bilinear resample to size x size (used when a layout needs a map)."""
    z = h.values.astype(np.float64)
    zoom = (size / z.shape[0], size / z.shape[1])
    out = ndimage.zoom(z, zoom, order=1, mode="nearest", grid_mode=True)
    return Heightmap(np.clip(np.rint(out), 0, MAX_ELEVATION), h.meters_per_pixel)
