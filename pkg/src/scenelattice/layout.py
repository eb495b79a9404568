"""Symbolic layout language: symbol tables, letter matrices and their rasters.

A layout is a p x p grid of single-letter symbols, each naming an asset
class in a :class:`SymbolTable`.  Its text form is p lines of p symbols,
every line terminated by ``"\\n"``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from . import _grid
from .errors import (
    RaggedRows,
    SymbolTableError,
    UnclassifiablePixel,
    UnknownSymbol,
    WrongDimension,
)

DEFAULT_P = 32
COLOR_TOLERANCE = 30.0
TABLE_FORMAT = "scenelattice.symbol_table"
TABLE_VERSION = 1


@dataclass(frozen=True)
class SymbolEntry:
    symbol: str
    asset_class: str
    color: tuple[int, int, int]
    description: str = ""


@dataclass(frozen=True)
class SymbolTable:
    name: str
    entries: tuple[SymbolEntry, ...]

    def __post_init__(self):
        if not self.entries:
            raise SymbolTableError(f"table {self.name!r} has no entries")
        symbols = [e.symbol for e in self.entries]
        for e in self.entries:
            if len(e.symbol) != 1 or not ("A" <= e.symbol <= "Z"):
                raise SymbolTableError(f"symbol {e.symbol!r} is not a single uppercase letter")
            if len(e.color) != 3 or not all(0 <= c <= 255 for c in e.color):
                raise SymbolTableError(f"bad color {e.color!r} for {e.symbol!r}")
        if len(set(symbols)) != len(symbols):
            raise SymbolTableError(f"duplicate symbols in table {self.name!r}")
        if len({e.color for e in self.entries}) != len(self.entries):
            raise SymbolTableError(f"duplicate display colors in table {self.name!r}")
        if len({e.asset_class for e in self.entries}) != len(self.entries):
            raise SymbolTableError(f"duplicate asset classes in table {self.name!r}")

    @property
    def symbols(self) -> str:
        return "".join(e.symbol for e in self.entries)

    @property
    def classes(self) -> tuple[str, ...]:
        return tuple(e.asset_class for e in self.entries)

    @property
    def colors(self) -> np.ndarray:
        return np.array([e.color for e in self.entries], dtype=np.uint8)

    def index_of_symbol(self, symbol: str) -> int:
        for i, e in enumerate(self.entries):
            if e.symbol == symbol:
                return i
        raise KeyError(symbol)

    def index_of_class(self, asset_class: str) -> int:
        for i, e in enumerate(self.entries):
            if e.asset_class == asset_class:
                return i
        raise KeyError(asset_class)

    def entry(self, key: str) -> SymbolEntry:
        """Look up by symbol or by asset class."""
        for e in self.entries:
            if key in (e.symbol, e.asset_class):
                return e
        raise KeyError(key)

    def to_dict(self) -> dict:
        return {
            "format": TABLE_FORMAT,
            "version": TABLE_VERSION,
            "name": self.name,
            "entries": [
                {
                    "symbol": e.symbol,
                    "asset_class": e.asset_class,
                    "color": list(e.color),
                    "description": e.description,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SymbolTable":
        try:
            version = doc.get("version", TABLE_VERSION)
            if version != TABLE_VERSION:
                raise SymbolTableError(f"unsupported symbol table version {version}")
            entries = tuple(
                SymbolEntry(
                    symbol=e["symbol"],
                    asset_class=e["asset_class"],
                    color=tuple(int(c) for c in e["color"]),
                    description=e.get("description", ""),
                )
                for e in doc["entries"]
            )
            return cls(name=doc["name"], entries=entries)
        except (KeyError, TypeError) as exc:
            raise SymbolTableError(f"malformed symbol table document: {exc}") from exc


def load_symbol_table(path: str | Path) -> SymbolTable:
    return SymbolTable.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def save_symbol_table(table: SymbolTable, path: str | Path) -> None:
    _grid.atomic_write_text(path, json.dumps(table.to_dict(), indent=2) + "\n")


def builtin_table(name: str) -> SymbolTable:
    """Return one of the shipped tables (``"loveda"`` or ``"wild"``)."""
    ref = resources.files("scenelattice") / "data" / "tables" / f"{name}.json"
    if not ref.is_file():
        raise SymbolTableError(f"no built-in symbol table named {name!r}")
    return SymbolTable.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def resolve_table(name_or_path: str | SymbolTable) -> SymbolTable:
    if isinstance(name_or_path, SymbolTable):
        return name_or_path
    if name_or_path.endswith(".json") or Path(name_or_path).is_file():
        return load_symbol_table(name_or_path)
    return builtin_table(name_or_path)


class LayoutMatrix:
    """Immutable p x p grid of symbol indices into a :class:`SymbolTable`."""

    __slots__ = ("table", "codes")

    def __init__(self, table: SymbolTable, codes):
        codes = np.array(codes, dtype=np.uint8, copy=True)
        if codes.ndim != 2 or codes.shape[0] != codes.shape[1] or codes.shape[0] == 0:
            raise WrongDimension(f"layout grid must be square and non-empty, got shape {codes.shape}")
        if codes.size and codes.max() >= len(table.entries):
            bad = np.argwhere(codes >= len(table.entries))[0]
            raise UnknownSymbol("?", int(bad[0]) + 1, int(bad[1]) + 1)
        codes.setflags(write=False)
        object.__setattr__(self, "table", table)
        object.__setattr__(self, "codes", codes)

    def __setattr__(self, name, value):
        raise AttributeError("LayoutMatrix is immutable")

    @classmethod
    def from_rows(cls, rows, table: SymbolTable) -> "LayoutMatrix":
        """Build from a sequence of row strings (or lists of symbols)."""
        return parse_layout("".join("".join(r) + "\n" for r in rows), table)

    @property
    def p(self) -> int:
        return self.codes.shape[0]

    @property
    def symbols(self) -> np.ndarray:
        lookup = np.array(list(self.table.symbols))
        return lookup[self.codes]

    def rows(self) -> list[str]:
        return ["".join(r) for r in self.symbols]

    def class_mask(self, asset_class: str) -> np.ndarray:
        try:
            idx = self.table.index_of_class(asset_class)
        except KeyError:
            return np.zeros(self.codes.shape, dtype=bool)
        return self.codes == idx

    def __eq__(self, other):
        if not isinstance(other, LayoutMatrix):
            return NotImplemented
        return self.table == other.table and np.array_equal(self.codes, other.codes)

    def __hash__(self):
        return hash((self.table.name, self.codes.tobytes()))

    def __repr__(self):
        return f"LayoutMatrix(table={self.table.name!r}, p={self.p})"


def parse_layout(text: str, table: SymbolTable) -> LayoutMatrix:
    """Parse layout text into a matrix.

    A single trailing line break is optional.  Errors report 1-based row
    and column numbers.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    lines = [ln[:-1] if ln.endswith("\r") else ln for ln in lines]
    if not lines or not lines[0]:
        raise WrongDimension("layout text is empty", row=1)
    width = len(lines[0])
    for i, line in enumerate(lines):
        if len(line) != width:
            raise RaggedRows(
                f"row has {len(line)} symbols, expected {width}", row=i + 1
            )
    if len(lines) != width:
        raise WrongDimension(f"{len(lines)} rows but rows have {width} symbols")

    body = "".join(lines)
    if not body.isascii():
        k = next(i for i, ch in enumerate(body) if not ch.isascii())
        raise UnknownSymbol(body[k], k // width + 1, k % width + 1)
    lut = np.full(256, 255, dtype=np.uint8)
    for i, e in enumerate(table.entries):
        lut[ord(e.symbol)] = i
    codes = lut[np.frombuffer(body.encode("ascii"), dtype=np.uint8)]
    unknown = codes == 255
    if unknown.any():
        k = int(unknown.argmax())
        raise UnknownSymbol(body[k], k // width + 1, k % width + 1)
    return LayoutMatrix(table, codes.reshape(width, width))


def serialize_layout(m: LayoutMatrix) -> str:
    return "".join(row + "\n" for row in m.rows())


def layout_hash(m: LayoutMatrix) -> str:
    return _grid.sha256_text(m.table.name + "\n" + serialize_layout(m))


def read_layout(path: str | Path, table: SymbolTable) -> LayoutMatrix:
    return parse_layout(Path(path).read_text(encoding="ascii"), table)


def write_layout(m: LayoutMatrix, path: str | Path) -> None:
    _grid.atomic_write_text(path, serialize_layout(m))


# -- rasters ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SegmentationRaster:
    """RGB segmentation image (height x width x 3, uint8) tied to a table."""

    pixels: np.ndarray
    table: SymbolTable

    def __post_init__(self):
        px = np.array(self.pixels, dtype=np.uint8, copy=True)
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected an H x W x 3 RGB array, got shape {px.shape}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    def class_indices(self, tolerance: float = COLOR_TOLERANCE) -> np.ndarray:
        return classify_pixels(self.pixels, self.table, tolerance)


def classify_pixels(pixels: np.ndarray, table: SymbolTable, tolerance: float = COLOR_TOLERANCE) -> np.ndarray:
    """Map every pixel to the index of the nearest table colour.

    Raises :class:`UnclassifiablePixel` for the first pixel (row-major)
    farther than ``tolerance`` from every colour.
    """
    px = pixels.astype(np.int32)
    colors = table.colors.astype(np.int32)
    d2 = ((px[:, :, None, :] - colors[None, None, :, :]) ** 2).sum(axis=-1)
    idx = d2.argmin(axis=-1)
    best = np.take_along_axis(d2, idx[..., None], axis=-1)[..., 0]
    bad = best > tolerance * tolerance
    if bad.any():
        y, x = np.argwhere(bad)[0]
        raise UnclassifiablePixel(int(x), int(y), pixels[y, x])
    return idx.astype(np.uint8)


def downsample_segmentation(r: SegmentationRaster, p: int = DEFAULT_P,
                            tolerance: float = COLOR_TOLERANCE) -> LayoutMatrix:
    """Majority-vote each patch of a p x p partition of the raster.

    Ties go to the class listed first in the table.
    """
    if r.width < p or r.height < p:
        raise WrongDimension(f"raster {r.width}x{r.height} is smaller than p={p}")
    idx = r.class_indices(tolerance)
    k = len(r.table.entries)
    onehot = (idx[None, :, :] == np.arange(k, dtype=np.uint8)[:, None, None]).astype(np.int32)
    counts = _grid.patch_sums(onehot, p, p)
    return LayoutMatrix(r.table, counts.argmax(axis=0))


def colorize_layout(m: LayoutMatrix, cell_px: int = 1) -> SegmentationRaster:
    if cell_px < 1:
        raise ValueError("cell_px must be >= 1")
    img = m.table.colors[m.codes]
    img = np.repeat(np.repeat(img, cell_px, axis=0), cell_px, axis=1)
    return SegmentationRaster(img, m.table)


def rotate_layout(m: LayoutMatrix, quarter_turns: int) -> LayoutMatrix:
    """Rotate clockwise by ``quarter_turns`` x 90 degrees."""
    return LayoutMatrix(m.table, np.rot90(m.codes, -(quarter_turns % 4)))


def mirror_layout(m: LayoutMatrix) -> LayoutMatrix:
    """Left-right mirror."""
    return LayoutMatrix(m.table, m.codes[:, ::-1])


def layout_region_histogram(m: LayoutMatrix) -> dict[str, tuple[int, float]]:
    """Cell count and fraction for every class present, in table order."""
    counts = np.bincount(m.codes.ravel(), minlength=len(m.table.entries))
    total = m.codes.size
    return {
        e.asset_class: (int(c), c / total)
        for e, c in zip(m.table.entries, counts)
        if c > 0
    }


def read_segmentation_png(path: str | Path, table: SymbolTable) -> SegmentationRaster:
    with Image.open(path) as im:
        return SegmentationRaster(np.asarray(im.convert("RGB")), table)


def write_segmentation_png(r: SegmentationRaster, path: str | Path) -> None:
    _grid.atomic_write_bytes(path, _grid.png_bytes(Image.fromarray(np.ascontiguousarray(r.pixels))))
