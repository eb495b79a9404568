"""Layout decoding: letter matrix -> per-class grayscale weight masks.

Pipeline: :func:`masks_from_layout` (binary cover at p x p) ->
:func:`upscale_nearest` -> :func:`blend_edges` (Gaussian blur, optional
value noise in the transition band) -> :func:`normalize_masks` (per-pixel
weights summing to one) -> :func:`export_masks`.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import _grid
from .errors import BadResolution, DecoderError, ZeroCoverage
from .layout import LayoutMatrix, layout_hash

DEFAULT_RESOLUTION = 512
MANIFEST_NAME = "masks.manifest.json"
MANIFEST_VERSION = 1


@dataclass(frozen=True, eq=False)
class MaskSet:
    classes: tuple[str, ...]
    masks: np.ndarray              # (n_classes, resolution, resolution) float64
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        m = np.array(self.masks, dtype=np.float64, copy=True)
        if m.ndim != 3 or m.shape[1] != m.shape[2] or m.shape[0] != len(self.classes):
            raise DecoderError(f"mask stack shape {m.shape} does not match {len(self.classes)} classes")
        m.setflags(write=False)
        object.__setattr__(self, "masks", m)
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "params", dict(self.params))

    @property
    def resolution(self) -> int:
        return self.masks.shape[1]

    def __getitem__(self, asset_class: str) -> np.ndarray:
        return self.masks[self.classes.index(asset_class)]

    def get(self, asset_class: str, default=None):
        if asset_class in self.classes:
            return self[asset_class]
        return default

    def coverage(self) -> np.ndarray:
        return self.masks.sum(axis=0)

    def with_params(self, **params) -> "MaskSet":
        return MaskSet(self.classes, self.masks, {**self.params, **params})


def masks_from_layout(m: LayoutMatrix) -> MaskSet:
    """One binary p x p mask per class present in the layout, table order."""
    present = [i for i in range(len(m.table.entries)) if (m.codes == i).any()]
    stack = np.stack([(m.codes == i).astype(np.float64) for i in present])
    return MaskSet(
        tuple(m.table.entries[i].asset_class for i in present),
        stack,
        {"source_layout_hash": layout_hash(m), "table": m.table.name, "p": m.p},
    )


def nearest_indices(src: int, dst: int) -> np.ndarray:
    """Source index sampled by each of ``dst`` output pixels (pixel centres)."""
    return np.floor((np.arange(dst) + 0.5) * src / dst).astype(np.int64)


def upscale_nearest(ms: MaskSet, resolution: int = DEFAULT_RESOLUTION) -> MaskSet:
    src = ms.resolution
    if resolution < src:
        raise BadResolution(f"resolution {resolution} is below source size {src}")
    idx = nearest_indices(src, resolution)
    out = ms.masks[:, idx][:, :, idx]
    return MaskSet(ms.classes, out, {**ms.params, "resolution": resolution})


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _blur(mask: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = ndimage.convolve1d(mask, kernel, axis=0, mode="nearest")
    return ndimage.convolve1d(out, kernel, axis=1, mode="nearest")


def value_noise(shape: tuple[int, int], cell: float, rng: np.random.Generator) -> np.ndarray:
    """Band-limited noise in [-1, 1]: random lattice values, bilinear interpolation."""
    rows, cols = shape
    gr = int(math.ceil(rows / cell)) + 2
    gc = int(math.ceil(cols / cell)) + 2
    lattice = rng.uniform(-1.0, 1.0, size=(gr, gc))
    yy = (np.arange(rows) + 0.5) / cell
    xx = (np.arange(cols) + 0.5) / cell
    coords = np.meshgrid(yy, xx, indexing="ij")
    return ndimage.map_coordinates(lattice, coords, order=1, mode="nearest")


def _blend_one(mask, kernel, noise_amp, noise_cell, seed, name):
    out = _blur(mask, kernel) if kernel is not None else mask.copy()
    if noise_amp > 0:
        band = (out > 0) & (out < 1)
        if band.any():
            noise = value_noise(out.shape, noise_cell, _grid.sub_rng(seed, "blend", name))
            out = np.where(band, out + noise_amp * noise, out)
            # keep band pixels strictly positive so coverage never vanishes
            out = np.where(band, np.clip(out, 1e-6, 1.0), out)
    return np.clip(out, 0.0, 1.0)


def blend_edges(ms: MaskSet, sigma_px: float = 2.0, noise_amp: float = 0.0,
                seed: int = 0, workers: int = 1) -> MaskSet:
    """Blur every mask (kernel radius ceil(3 sigma), clamp-to-edge) and add
    optional seeded noise where the blurred mask is strictly between 0 and 1.

    Each class is processed independently with its own noise stream, so
    ``workers > 1`` gives the same result as sequential execution.
    """
    if sigma_px < 0 or noise_amp < 0:
        raise DecoderError("sigma_px and noise_amp must be non-negative")
    kernel = gaussian_kernel(sigma_px) if sigma_px > 0 else None
    noise_cell = max(4.0 * sigma_px, 8.0)
    jobs = [(ms.masks[i], kernel, noise_amp, noise_cell, seed, name)
            for i, name in enumerate(ms.classes)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(lambda a: _blend_one(*a), jobs))
    else:
        out = [_blend_one(*a) for a in jobs]
    return MaskSet(ms.classes, np.stack(out),
                   {**ms.params, "sigma_px": float(sigma_px), "noise_amp": float(noise_amp), "seed": int(seed)})


def normalize_masks(ms: MaskSet) -> MaskSet:
    total = ms.masks.sum(axis=0)
    if (total <= 0).any():
        y, x = np.argwhere(total <= 0)[0]
        raise ZeroCoverage(f"no class covers pixel x={x}, y={y}")
    return MaskSet(ms.classes, ms.masks / total, ms.params)


def decode_layout(m: LayoutMatrix, resolution: int = DEFAULT_RESOLUTION, sigma_px: float = 2.0,
                  noise_amp: float = 0.0, seed: int = 0, workers: int = 1) -> MaskSet:
    """Full decoder pipeline from layout to normalised weight masks."""
    ms = upscale_nearest(masks_from_layout(m), resolution)
    ms = blend_edges(ms, sigma_px, noise_amp, seed, workers)
    return normalize_masks(ms)


def quantize(mask: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(mask, 0.0, 1.0) * 65535.0).astype(np.uint16)


def quantize_masks(ms: MaskSet) -> np.ndarray:
    """16-bit stack whose values sum to exactly 65535 at every pixel.

    Largest-remainder rounding per pixel (ties to the earlier class), so
    each value is within one unit of ``mask * 65535`` and the exported
    weights stay a partition of unity without renormalisation.
    """
    scaled = np.clip(ms.masks, 0.0, 1.0) * 65535.0
    base = np.floor(scaled)
    need = np.rint(65535.0 - base.sum(axis=0)).astype(np.int64)
    order = np.argsort(-(scaled - base), axis=0, kind="stable")
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(len(ms.classes))[:, None, None], axis=0)
    return (base + (rank < need[None])).astype(np.uint16)


def mask_manifest(ms: MaskSet) -> dict:
    return {
        "version": MANIFEST_VERSION,
        "classes": list(ms.classes),
        "resolution": ms.resolution,
        "sigma_px": ms.params.get("sigma_px", 0.0),
        "noise_amp": ms.params.get("noise_amp", 0.0),
        "seed": ms.params.get("seed"),
        "source_layout_hash": ms.params.get("source_layout_hash"),
        "table": ms.params.get("table"),
        "files": {c: f"{c}.png" for c in ms.classes},
    }


def export_masks(ms: MaskSet, directory: str | Path) -> list[Path]:
    """Write ``<class>.png`` (16-bit grayscale) per class plus the manifest.

    Masks should be normalised; values are rounded with
    :func:`quantize_masks`.
    """
    directory = Path(directory)
    written = []
    for name, q in zip(ms.classes, quantize_masks(ms)):
        path = directory / f"{name}.png"
        _grid.atomic_write_bytes(path, _grid.png_bytes(Image.fromarray(q)))
        written.append(path)
    path = directory / MANIFEST_NAME
    _grid.atomic_write_text(path, json.dumps(mask_manifest(ms), indent=2, sort_keys=True) + "\n")
    written.append(path)
    return written


def load_masks(directory: str | Path, renormalize: bool = True) -> MaskSet:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST_NAME).read_text(encoding="utf-8"))
    stack = []
    for name in manifest["classes"]:
        with Image.open(directory / manifest["files"][name]) as im:
            stack.append(np.asarray(im).astype(np.float64) / 65535.0)
    params = {k: manifest.get(k) for k in ("sigma_px", "noise_amp", "seed", "source_layout_hash", "table")}
    ms = MaskSet(tuple(manifest["classes"]), np.stack(stack), params)
    return normalize_masks(ms) if renormalize else ms
