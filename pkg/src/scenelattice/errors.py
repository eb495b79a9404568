"""Exception hierarchy shared by every stage of the compiler."""
from __future__ import annotations


class SceneLatticeError(Exception):
    """Base class for all errors raised by this package."""


# -- layout language -------------------------------------------------------

class LayoutError(SceneLatticeError, ValueError):
    """A layout string or raster failed validation.

    ``row`` and ``col`` are 1-based so that they line up with line numbers
    in a layout text file.
    """

    def __init__(self, message: str, row: int | None = None, col: int | None = None):
        self.row = row
        self.col = col
        where = []
        if row is not None:
            where.append(f"row {row}")
        if col is not None:
            where.append(f"col {col}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class RaggedRows(LayoutError):
    pass


class UnknownSymbol(LayoutError):
    def __init__(self, symbol: str, row: int, col: int):
        self.symbol = symbol
        super().__init__(f"unknown symbol {symbol!r}", row=row, col=col)


class WrongDimension(LayoutError):
    pass


class UnclassifiablePixel(LayoutError):
    """No table colour lies within tolerance of the pixel at (x, y)."""

    def __init__(self, x: int, y: int, color):
        self.x = x
        self.y = y
        self.color = tuple(int(c) for c in color)
        super().__init__(f"pixel at x={x}, y={y} has unclassifiable color {self.color}")


class SymbolTableError(SceneLatticeError, ValueError):
    pass


# -- terrain ---------------------------------------------------------------

class TerrainError(SceneLatticeError, ValueError):
    pass


class BadBitDepth(TerrainError):
    pass


class BadDimensions(TerrainError):
    pass


class EmptySketch(TerrainError):
    pass


class DegenerateRelief(TerrainError):
    pass


# -- decoder ---------------------------------------------------------------

class DecoderError(SceneLatticeError, ValueError):
    pass


class BadResolution(DecoderError):
    pass


class ZeroCoverage(DecoderError):
    pass


# -- configuration ---------------------------------------------------------

class ConfigError(SceneLatticeError, ValueError):
    """Configuration validation failure; ``path`` is a dotted location."""

    def __init__(self, path: str, reason: str):
        self.path = path
        self.reason = reason
        super().__init__(f"{path or '<root>'}: {reason}")


class SchemaError(ConfigError):
    pass


class UnknownEnum(ConfigError):
    pass


class RangeViolation(ConfigError):
    pass


class RuleGap(SceneLatticeError, KeyError):
    """The rule table has no cell for (coarse value, asset type)."""

    def __init__(self, attribute: str, value: str, asset: str):
        self.coordinates = (attribute, value, asset)
        super().__init__(f"no rule for {attribute}={value!r}, asset={asset!r}")

    def __str__(self) -> str:
        return self.args[0]


class DimensionMismatch(SceneLatticeError, ValueError):
    pass


# -- placement -------------------------------------------------------------

class PlacementError(SceneLatticeError, ValueError):
    pass


class InfeasibleRules(PlacementError):
    pass


class HabitatExhausted(PlacementError):
    def __init__(self, category: str, region: str, available: int, requested: int):
        self.category = category
        self.region = region
        self.available = available
        self.requested = requested
        super().__init__(
            f"{category} in {region}: {available} habitat cells available, "
            f"{requested} requested"
        )


class ConsistencyError(PlacementError):
    """Raised by ``compile`` when the configuration contradicts the layout."""

    def __init__(self, report):
        self.report = report
        lines = [f"{v.rule_id} at {v.location}: {v.message}" for v in report.violations]
        super().__init__("configuration is inconsistent with layout:\n  " + "\n  ".join(lines))


class StageError(SceneLatticeError):
    """Wraps a sub-error with the pipeline stage it came from."""

    def __init__(self, stage: str, error: Exception):
        self.stage = stage
        self.error = error
        super().__init__(f"[{stage}] {type(error).__name__}: {error}")


# -- generator bridge ------------------------------------------------------

class BridgeError(SceneLatticeError):
    pass


class Unrepairable(BridgeError, ValueError):
    def __init__(self, message: str, **diagnostics):
        self.diagnostics = diagnostics
        detail = ", ".join(f"{k}={v}" for k, v in diagnostics.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class NoJsonFound(BridgeError, ValueError):
    pass


class GeneratorTimeout(BridgeError):
    pass


class TransportError(BridgeError):
    pass


class BackendError(BridgeError):
    def __init__(self, status: int, body: str):
        self.status = status
        self.body = body[:200]
        super().__init__(f"backend returned HTTP {status}: {self.body}")


class BackendConfigError(BridgeError, ValueError):
    pass


# -- dataset forge ---------------------------------------------------------

class DatasetError(SceneLatticeError, ValueError):
    def __init__(self, message: str, record_id: str | None = None):
        self.record_id = record_id
        if record_id is not None:
            message = f"record {record_id}: {message}"
        super().__init__(message)


class TooSmall(DatasetError):
    pass
