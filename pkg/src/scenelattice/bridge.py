"""Text-generator bridge: prompt assembly, backends and response hardening.

The layout and configuration generators are treated as opaque text
services.  This module builds their prompts from versioned templates,
calls either a remote HTTP endpoint or the rule-based :class:`MockBackend`,
and validates (with small, logged repairs) whatever text comes back.

The mock is a keyword-driven test double for offline runs; it makes no
claim of matching a trained model.
"""
from __future__ import annotations

import json
import logging
import os
import re
import socket
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from string import Template
from typing import Protocol

import numpy as np

from . import _grid
from .config import (
    COARSE_FIELDS,
    REGIONS,
    EnvironmentConfig,
    RuleTable,
    config_from_dict,
    default_rule_table,
    expand_coarse_to_fine,
    CoarseAttributes,
)
from .errors import (
    BackendConfigError,
    BackendError,
    GeneratorTimeout,
    NoJsonFound,
    TransportError,
    Unrepairable,
)
from .layout import (
    DEFAULT_P,
    LayoutMatrix,
    SymbolTable,
    layout_region_histogram,
    parse_layout,
    serialize_layout,
)
from .terrain import COMPASS_NAMES, TerrainSummary, summarize_terrain

log = logging.getLogger(__name__)

TEMPLATE_VERSION = "v1"
DEFAULT_REPAIR_BUDGET = 0.05


@lru_cache(maxsize=None)
def load_template(name: str, version: str = TEMPLATE_VERSION) -> Template:
    ref = resources.files("scenelattice") / "data" / "templates" / f"{name}.{version}.txt"
    return Template(ref.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PromptBundle:
    task: str                      # "layout", "config" or "caption"
    system: str
    user: str
    attachments: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    template_version: str = TEMPLATE_VERSION

    def to_dict(self) -> dict:
        return {"task": self.task, "template_version": self.template_version,
                "system": self.system, "user": self.user,
                "attachments": self.attachments, "meta": self.meta}

    @classmethod
    def from_dict(cls, d: dict) -> "PromptBundle":
        return cls(d["task"], d["system"], d["user"], d.get("attachments", {}),
                   d.get("meta", {}), d.get("template_version", TEMPLATE_VERSION))


@dataclass(frozen=True)
class GeneratorResponse:
    raw_text: str
    payload: LayoutMatrix | EnvironmentConfig
    repairs: tuple[str, ...] = ()
    touched_cells: int = 0
    extracted: bool = False        # surrounding prose was stripped

    def to_dict(self) -> dict:
        return {"repairs": list(self.repairs), "touched_cells": self.touched_cells,
                "extracted": self.extracted}


# -- prompt assembly -------------------------------------------------------

def legend_lines(table: SymbolTable) -> list[str]:
    return [f"{e.symbol}: {e.description or e.asset_class}" for e in table.entries]


def build_layout_prompt(instruction: str, table: SymbolTable, terrain_caption: str | None = None,
                        p: int = DEFAULT_P) -> PromptBundle:
    """System prompt with grid size, line-break rule and the table's legend."""
    if not instruction.strip():
        log.warning("layout prompt built with an empty instruction")
    system = load_template("layout_system").substitute(p=p, legend="\n".join(legend_lines(table)))
    attachments = {}
    if terrain_caption:
        system += "\n" + load_template("layout_terrain").substitute(caption=terrain_caption.strip())
        attachments["terrain_caption"] = terrain_caption.strip()
    return PromptBundle("layout", system, instruction, attachments, {"table": table.name, "p": p})


def build_config_prompt(instruction: str, layout: LayoutMatrix, rules: RuleTable | None = None,
                        terrain_caption: str | None = None) -> PromptBundle:
    rules = rules or default_rule_table()
    enums = "\n".join(f"  {f}: {', '.join(rules.enum(f))}" for f in COARSE_FIELDS)
    agents = "\n".join(f"  {c}: {', '.join(rules.allowed_states(c))}" for c in rules.categories)
    system = load_template("config_system").substitute(
        version=1, enums=enums, agents=agents, regions=", ".join(REGIONS),
        layout=serialize_layout(layout).rstrip("\n"),
    )
    attachments = {}
    if terrain_caption:
        system += "\nTerrain notes:\n" + terrain_caption.strip() + "\n"
        attachments["terrain_caption"] = terrain_caption.strip()
    return PromptBundle("config", system, instruction, attachments,
                        {"table": layout.table.name, "p": layout.p})


_SECTOR_NAMES = [r.replace("_", " ") for r in REGIONS]


def terrain_caption(summary: TerrainSummary) -> str:
    """Plain-text rendering of a terrain summary (used inside prompts)."""
    flat = all(c == "flat" for row in summary.relief for c in row)
    lines = [
        f"Elevation range: {summary.min} to {summary.max} (mean {summary.mean:.1f}) on a 0-65535 scale.",
        f"Dominant downhill direction: {COMPASS_NAMES[summary.direction]}.",
    ]
    if flat:
        lines.append("Relief: flat everywhere.")
    else:
        cells = [c for row in summary.relief for c in row]
        lines.append("Relief by sector: " + "; ".join(f"{n}: {c}" for n, c in zip(_SECTOR_NAMES, cells)) + ".")
    return "\n".join(lines)


def build_caption_prompt(kind: str, payload, max_words: int = 120) -> PromptBundle:
    """Two-part captioning prompt: mapping section, then contextual guidance."""
    if kind == "layout":
        if not isinstance(payload, LayoutMatrix):
            raise TypeError("layout captions need a LayoutMatrix")
        present = layout_region_histogram(payload)
        mapping = "\n".join(
            f"  RGB{tuple(e.color)} -> {e.description or e.asset_class}"
            for e in payload.table.entries if e.asset_class in present
        )
        hist = "\n".join(f"  {c}: {n} cells ({f:.1%})" for c, (n, f) in present.items())
        system = load_template("caption_layout").substitute(
            p=payload.p, mapping=mapping, max_words=max_words, histogram=hist)
        return PromptBundle("caption", system, "Describe the attached layout.",
                            {"kind": "layout", "histogram": {c: n for c, (n, _) in present.items()}},
                            {"table": payload.table.name, "p": payload.p})
    if kind == "heightmap":
        summary = payload if isinstance(payload, TerrainSummary) else summarize_terrain(payload)
        system = load_template("caption_heightmap").substitute(
            max_words=max_words, summary=terrain_caption(summary))
        return PromptBundle("caption", system, "Describe the attached elevation map.",
                            {"kind": "heightmap", "summary": summary.to_dict()})
    raise ValueError(f"unknown caption kind {kind!r}")


# -- layout response validation -------------------------------------------

def _is_matrix_line(s: str, symbols: str, p: int) -> bool:
    if len(s) < max(2, p // 2) or any(ch.isspace() for ch in s):
        return False
    return sum(ch in symbols for ch in s) >= 0.5 * len(s)


def _find_block(lines: list[str], symbols: str, p: int) -> tuple[int, int]:
    best = (0, 0)
    start = None
    for i, ln in enumerate(lines + [""]):
        if i < len(lines) and _is_matrix_line(ln, symbols, p):
            if start is None:
                start = i
        elif start is not None:
            if i - start > best[1] - best[0]:
                best = (start, i)
            start = None
    return best


def _fill_unknown(grid: np.ndarray, known: np.ndarray, k: int) -> np.ndarray:
    """Replace unknown cells by the majority of their known 8-neighbours."""
    grid = grid.copy()
    known = known.copy()
    p = grid.shape[0]
    while not known.all():
        new_grid, new_known = grid.copy(), known.copy()
        for r, c in np.argwhere(~known):
            votes = np.zeros(k, dtype=np.int64)
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    rr, cc = r + dr, c + dc
                    if (dr or dc) and 0 <= rr < p and 0 <= cc < p and known[rr, cc]:
                        votes[grid[rr, cc]] += 1
            if votes.any():
                new_grid[r, c] = int(votes.argmax())
                new_known[r, c] = True
        if new_known.sum() == known.sum():
            fallback = np.bincount(grid[known], minlength=k).argmax() if known.any() else 0
            new_grid[~known] = fallback
            new_known[:] = True
        grid, known = new_grid, new_known
    return grid


def validate_layout_response(raw_text: str, table: SymbolTable, p: int = DEFAULT_P,
                             budget: float = DEFAULT_REPAIR_BUDGET) -> GeneratorResponse:
    """Extract, repair and parse a generated layout.

    The matrix is the longest run of consecutive lines that look like
    symbol rows; prose around it is ignored.  Repairs, in order: pad short
    rows with their last symbol or truncate long ones; duplicate the last
    row or drop trailing rows to reach p rows; replace unknown symbols by
    their neighbourhood majority.  Every padded, truncated, duplicated,
    dropped or replaced cell counts against ``budget`` (a fraction of p^2).
    """
    symbols = table.symbols
    lines = [ln.strip() for ln in raw_text.replace("\r\n", "\n").split("\n")]
    start, stop = _find_block(lines, symbols, p)
    if stop == start:
        raise Unrepairable("no layout block found", touched=p * p, cells=p * p, budget=budget)
    rows = lines[start:stop]
    others = [ln for i, ln in enumerate(lines) if ln and not start <= i < stop]
    repairs: list[str] = []
    touched = 0

    for i, row in enumerate(rows):
        if len(row) < p:
            touched += p - len(row)
            repairs.append(f"row {i + 1}: padded {p - len(row)} cell(s) with {row[-1]!r}")
            rows[i] = row + row[-1] * (p - len(row))
        elif len(row) > p:
            touched += len(row) - p
            repairs.append(f"row {i + 1}: truncated {len(row) - p} extra cell(s)")
            rows[i] = row[:p]
    if len(rows) > p:
        touched += (len(rows) - p) * p
        repairs.append(f"dropped {len(rows) - p} extra row(s)")
        rows = rows[:p]
    elif len(rows) < p:
        touched += (p - len(rows)) * p
        repairs.append(f"duplicated last row {p - len(rows)} time(s)")
        rows = rows + [rows[-1]] * (p - len(rows))

    lut = {s: i for i, s in enumerate(symbols)}
    grid = np.array([[lut.get(ch, 255) for ch in row] for row in rows], dtype=np.int64)
    unknown = grid == 255
    n_unknown = int(unknown.sum())
    if n_unknown:
        touched += n_unknown
        repairs.append(f"replaced {n_unknown} unknown symbol(s) by neighbourhood majority")

    limit = budget * p * p
    if touched > limit:
        raise Unrepairable("repair budget exceeded", touched=touched, cells=p * p,
                           budget=budget, unknown=n_unknown, rows=stop - start)
    if n_unknown:
        grid = _fill_unknown(np.where(unknown, 0, grid), ~unknown, len(symbols))
    text = "".join("".join(symbols[v] for v in row) + "\n" for row in grid)
    payload = parse_layout(text, table)
    return GeneratorResponse(raw_text, payload, tuple(repairs), touched, bool(others))


# -- config response validation -------------------------------------------

def extract_first_json_object(text: str) -> tuple[dict, bool]:
    """First decodable JSON object in ``text`` and whether prose surrounded it."""
    decoder = json.JSONDecoder()
    for m in re.finditer(r"\{", text):
        try:
            obj, end = decoder.raw_decode(text, m.start())
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            extracted = bool(text[:m.start()].strip() or text[end:].strip())
            return obj, extracted
    raise NoJsonFound("no JSON object found in generator output")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _clamp_numbers(doc: dict, rules: RuleTable) -> list[str]:
    repairs = []
    fine = doc.get("fine")
    if isinstance(fine, dict):
        for name, params in fine.items():
            if not isinstance(params, dict) or name not in rules.asset_names:
                continue
            spec = rules.asset(name)
            for key, count in (("seasonal_variant", spec["seasonal_variants"]),
                               ("material_variant", spec["material_variants"])):
                v = params.get(key)
                if _is_num(v) and not 0 <= v < count:
                    params[key] = min(max(int(v), 0), count - 1)
                    repairs.append(f"fine.{name}.{key}: clamped {v} to {params[key]}")
            for key in ("density", "scale", "height", "wind", "slope"):
                v = params.get(key)
                if _is_num(v):
                    lo, hi = rules.param_range(key)
                    if key == "scale":
                        lo = max(lo, 1e-6)
                    c = min(max(float(v), lo), hi)
                    if c != v:
                        params[key] = c
                        repairs.append(f"fine.{name}.{key}: clamped {v} to {c}")
            rot = params.get("rotation")
            if isinstance(rot, list):
                for i, v in enumerate(rot):
                    if _is_num(v) and not 0.0 <= v < 360.0:
                        rot[i] = float(v) % 360.0
                        repairs.append(f"fine.{name}.rotation[{i}]: wrapped {v} to {rot[i]}")
    agents = doc.get("agents")
    if isinstance(agents, list):
        for i, a in enumerate(agents):
            if isinstance(a, dict) and _is_num(a.get("quantity")) and a["quantity"] < 1:
                repairs.append(f"agents[{i}].quantity: clamped {a['quantity']} to 1")
                a["quantity"] = 1
    return repairs


def validate_config_response(raw_text: str, rules: RuleTable | None = None) -> GeneratorResponse:
    """Extract the first JSON object, clamp out-of-range numbers, then parse.

    Unknown enumeration values are never guessed: they raise
    :class:`UnknownEnum`.  Rotation components are wrapped into [0, 360).
    """
    rules = rules or default_rule_table()
    doc, extracted = extract_first_json_object(raw_text)
    repairs = _clamp_numbers(doc, rules)
    cfg = config_from_dict(doc, rules)
    return GeneratorResponse(raw_text, cfg, tuple(repairs), 0, extracted)


# -- backends --------------------------------------------------------------

class Backend(Protocol):
    def generate(self, bundle: PromptBundle) -> str: ...


def invoke_generator(bundle: PromptBundle, backend: Backend) -> str:
    return backend.generate(bundle)


class RemoteBackend:
    """JSON-over-HTTP generator.

    Request body: ``{"prompt": {"system", "user"}, "params": {"temperature",
    "max_tokens"}}``; response body: ``{"text": ...}``.  Transport failures,
    timeouts and 5xx answers are retried up to ``max_retries`` times.
    """

    def __init__(self, url: str, token: str | None = None, timeout_ms: int = 30000,
                 max_retries: int = 2, temperature: float = 0.0, max_tokens: int = 2048,
                 backoff_s: float = 0.05):
        if not url:
            raise BackendConfigError("remote backend needs an endpoint URL (LATTICE_LLM_URL)")
        self.url = url
        self.token = token
        self.timeout_ms = int(timeout_ms)
        self.max_retries = int(max_retries)
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.backoff_s = backoff_s

    @classmethod
    def from_env(cls, settings: dict | None = None, env=None) -> "RemoteBackend":
        env = os.environ if env is None else env
        settings = settings or {}
        url = settings.get("url") or env.get("LATTICE_LLM_URL")
        if not url:
            raise BackendConfigError("remote backend selected but LATTICE_LLM_URL is not set")
        return cls(
            url,
            token=settings.get("token") or env.get("LATTICE_LLM_TOKEN"),
            timeout_ms=int(settings.get("timeout_ms", env.get("LATTICE_LLM_TIMEOUT_MS", 30000))),
            max_retries=int(settings.get("max_retries", env.get("LATTICE_LLM_MAX_RETRIES", 2))),
        )

    def request_body(self, bundle: PromptBundle) -> bytes:
        return json.dumps({
            "prompt": {"system": bundle.system, "user": bundle.user},
            "params": {"temperature": self.temperature, "max_tokens": self.max_tokens},
        }).encode("utf-8")

    def generate(self, bundle: PromptBundle) -> str:
        body = self.request_body(bundle)
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_s * attempt)
            req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout_ms / 1000.0) as resp:
                    payload = json.loads(resp.read().decode("utf-8"))
                if not isinstance(payload, dict) or not isinstance(payload.get("text"), str):
                    raise BackendError(200, "response lacks a 'text' string")
                return payload["text"]
            except urllib.error.HTTPError as exc:
                err = BackendError(exc.code, exc.read().decode("utf-8", "replace"))
                if exc.code < 500:
                    raise err from exc
                last = err
            except (socket.timeout, TimeoutError):
                last = GeneratorTimeout(f"no answer within {self.timeout_ms} ms")
            except urllib.error.URLError as exc:
                if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                    last = GeneratorTimeout(f"no answer within {self.timeout_ms} ms")
                else:
                    last = TransportError(f"{self.url}: {exc.reason}")
            except (ConnectionError, OSError) as exc:
                last = TransportError(f"{self.url}: {exc}")
            except json.JSONDecodeError as exc:
                raise BackendError(200, f"invalid JSON body: {exc}") from exc
            log.info("generator attempt %d/%d failed: %s", attempt + 1, self.max_retries + 1, last)
        raise last


# -- mock backend ----------------------------------------------------------

CLASS_KEYWORDS = {
    "water": ("water", "lake", "lakes", "river", "rivers", "pond", "sea", "ocean"),
    "forest": ("forest", "forests", "forested", "wood", "woods", "woodland", "trees"),
    "grassland": ("grass", "grassland", "grasslands", "meadow", "meadows", "bushes", "vegetation"),
    "farmland": ("farm", "farms", "farmland", "farmlands", "crops", "fields"),
    "building": ("building", "buildings", "house", "houses", "town", "village", "urban"),
    "road": ("road", "roads", "street", "streets"),
    "barren": ("barren", "bare"),
    "rocky": ("rock", "rocks", "rocky", "stone", "stones"),
    "snow": ("snow", "snowy", "snow-capped", "glacier", "glaciers"),
}

_NUMBER_WORDS = {
    "a": 1, "an": 1, "one": 1, "single": 1, "two": 2, "pair": 2, "three": 3, "four": 4,
    "five": 5, "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10, "eleven": 11, "twelve": 12,
}

AGENT_KEYWORDS = {
    "goblin": ("goblin", "goblins"),
    "humanoid_robot": ("humanoid robot", "humanoid robots"),
    "robotic_dog": ("robotic dog", "robotic dogs", "robot dog", "robot dogs"),
    "ancient_warrior": ("ancient warrior", "ancient warriors", "warrior", "warriors"),
    "eagle": ("eagle", "eagles"),
    "aerial_robot": ("aerial robot", "aerial robots", "drone", "drones"),
    "sheep": ("sheep",),
    "horse": ("horse", "horses"),
    "whale": ("whale", "whales"),
}

STATE_KEYWORDS = {
    "idle": ("idle", "stands", "standing", "resting", "rests"),
    "patrolling": ("patrol", "patrols", "patrolling"),
    "grazing": ("graze", "grazes", "grazing"),
    "swimming": ("swim", "swims", "swimming"),
}

COARSE_KEYWORDS = {
    "terrain_type": {"mountainous": ("mountain", "mountains", "mountainous"),
                     "suburbs": ("suburb", "suburbs", "suburban"),
                     "desert": ("desert",), "plains": ("plain", "plains"),
                     "wilderness": ("wild", "wilderness")},
    "season": {s: (s,) for s in ("spring", "summer", "autumn", "winter")} | {"autumn": ("autumn", "fall")},
    "artistic_style": {"realism": ("realism", "realistic"), "cartoon": ("cartoon",),
                       "cyberpunk": ("cyberpunk",)},
    "weather": {"sunny": ("sunny", "sun"), "cloudy": ("cloudy", "overcast"), "rain": ("rain", "rainy", "raining"),
                "mist": ("mist", "misty", "fog", "foggy"), "snowfall": ("snowfall", "snowing"),
                "sandstorm": ("sandstorm", "sandstorms")},
    "time_of_day": {"afternoon": ("afternoon",), "night": ("night", "midnight"),
                    "dusk": ("dusk", "evening", "sunset"), "daytime": ("day", "daytime", "morning")},
}


def _words(text: str) -> list[str]:
    return re.findall(r"[a-z0-9\-]+", text.lower())


def _sentences(text: str) -> list[str]:
    return [s.strip() for s in re.split(r"[.;!?\n]+", text) if s.strip()]


def _clauses(text: str) -> list[str]:
    out = []
    for s in _sentences(text):
        out.extend(c.strip() for c in re.split(r",|\bwhile\b|\bwhereas\b", s) if c.strip())
    return out


def _position_mask(words: list[str], p: int) -> np.ndarray | None:
    ws = set(words)
    rows = np.arange(p)[:, None] + 0.5
    cols = np.arange(p)[None, :] + 0.5
    mask = np.ones((p, p), dtype=bool)
    used = False
    if ws & {"upper", "top", "north", "northern"}:
        mask &= rows < 0.4 * p
        used = True
    if ws & {"lower", "bottom", "south", "southern"}:
        mask &= rows >= 0.6 * p
        used = True
    if ws & {"left", "west", "western"}:
        mask &= cols < 0.4 * p
        used = True
    if ws & {"right", "east", "eastern"}:
        mask &= cols >= 0.6 * p
        used = True
    if ws & {"center", "centre", "central", "middle"}:
        if used:
            if not ws & {"upper", "top", "lower", "bottom", "north", "south"}:
                mask &= (rows >= 0.3 * p) & (rows < 0.7 * p)
            if not ws & {"left", "right", "west", "east"}:
                mask &= (cols >= 0.3 * p) & (cols < 0.7 * p)
        else:
            mask &= (rows >= 0.3 * p) & (rows < 0.7 * p) & (cols >= 0.3 * p) & (cols < 0.7 * p)
        used = True
    if ws & {"edge", "edges", "border", "borders", "periphery"} and not used:
        ring = max(1, p // 5)
        mask &= (rows < ring) | (rows >= p - ring) | (cols < ring) | (cols >= p - ring)
        used = True
    return mask if used else None


def mock_layout(instruction: str, table: SymbolTable, p: int = DEFAULT_P, seed: int = 0) -> str:
    """Keyword-driven layout: each clause paints its classes into the region it names.

    Clauses without a position paint a seeded disc; "scattered" or
    "throughout" paints a sparse random speckle over the whole map.
    """
    classes = table.classes
    background = "grassland" if "grassland" in classes else classes[0]
    grid = np.full((p, p), classes.index(background), dtype=np.int64)
    rng = _grid.sub_rng(seed, "mock_layout", instruction)
    rr, cc = np.indices((p, p)) + 0.5
    for clause in _clauses(instruction):
        # "forest and meadows on the left and water on the right": a part
        # without its own position borrows the next part's position
        parts = []
        for part in re.split(r"\band\b", clause):
            words = _words(part)
            mentioned = [c for c in classes if any(k in words for k in CLASS_KEYWORDS.get(c, (c,)))]
            sparse = bool(set(words) & {"scattered", "throughout", "interspersed", "patches", "everywhere"})
            parts.append([mentioned, _position_mask(words, p), sparse])
        for i in range(len(parts) - 2, -1, -1):
            if parts[i][0] and parts[i][1] is None and not parts[i][2]:
                parts[i][1], parts[i][2] = parts[i + 1][1], parts[i + 1][2]
        for mentioned, region, sparse in parts:
            for c in mentioned:
                idx = classes.index(c)
                if sparse:
                    area = region if region is not None else np.ones((p, p), dtype=bool)
                    grid[area & (rng.random((p, p)) < 0.25)] = idx
                elif region is not None:
                    grid[region] = idx
                else:
                    cy, cx = rng.uniform(0.2 * p, 0.8 * p, size=2)
                    grid[(rr - cy) ** 2 + (cc - cx) ** 2 < (p / 6.0) ** 2] = idx
    symbols = table.symbols
    return "".join("".join(symbols[v] for v in row) + "\n" for row in grid)


def _find_quantity(words: list[str], pos: int) -> int:
    for w in reversed(words[max(0, pos - 4):pos]):
        if w.isdigit():
            return max(1, int(w))
        if w in _NUMBER_WORDS:
            return _NUMBER_WORDS[w]
    return 1


def _find_region(text: str) -> str | None:
    t = text.lower()
    for v in ("upper", "middle", "lower", "top", "bottom"):
        for h in ("left", "right", "center", "centre"):
            if re.search(rf"\b{v}[\s-]+{h}\b", t):
                vv = {"top": "upper", "bottom": "lower"}.get(v, v)
                hh = "center" if h == "centre" else h
                name = f"{vv}_{hh}"
                return "center" if name == "middle_center" else name
    if re.search(r"\b(center|centre|central|middle)\b", t):
        return "center"
    return None


def mock_config(instruction: str, rules: RuleTable | None = None, seed: int = 0) -> str:
    """Keyword-driven configuration JSON (fine attributes come from the rules)."""
    rules = rules or default_rule_table()
    words = _words(instruction)
    coarse = {}
    for f in COARSE_FIELDS:
        allowed = rules.enum(f)
        value = allowed[0]
        for v, keys in COARSE_KEYWORDS[f].items():
            if v in allowed and any(k in words for k in keys):
                value = v
                break
        coarse[f] = value

    agents = []
    for sentence in _sentences(instruction):
        low = sentence.lower()
        sw = _words(sentence)
        region = _find_region(sentence) or "center"
        for cat in rules.categories:
            keys = AGENT_KEYWORDS.get(cat, (cat.replace("_", " "),))
            hit = None
            for k in sorted(keys, key=len, reverse=True):
                m = re.search(rf"\b{re.escape(k)}\b", low)
                if m:
                    hit = m
                    break
            if hit is None:
                continue
            if cat == "ancient_warrior" and re.search(r"\b(ancient )?warriors?\b", low) is None:
                continue
            pos = len(_words(low[:hit.start()]))
            quantity = _find_quantity(sw, pos)
            states = rules.allowed_states(cat)
            state = next((s for s in states if any(k in sw for k in STATE_KEYWORDS.get(s, (s,)))), states[0])
            agents.append({"category": cat, "quantity": quantity, "state": state, "region": region})

    c = CoarseAttributes(**coarse)
    fine = expand_coarse_to_fine(c, rules, seed)
    doc = {"version": 1, "coarse": coarse,
           "fine": {k: v.to_dict() for k, v in sorted(fine.items())},
           "agents": agents}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def mock_caption(bundle: PromptBundle) -> str:
    att = bundle.attachments
    if att.get("kind") == "heightmap":
        s = att["summary"]
        if s["max"] == s["min"]:
            return "The terrain is completely flat."
        return f"The ground falls towards the {COMPASS_NAMES[s['direction']]}."
    hist = att.get("histogram", {})
    total = sum(hist.values()) or 1
    parts = [f"{k} covers {100 * v / total:.0f}%" for k, v in sorted(hist.items(), key=lambda kv: -kv[1])]
    return "The map shows " + ", ".join(parts) + "."


class MockBackend:
    """Deterministic offline generator keyed on task, instruction and seed."""

    def __init__(self, seed: int = 0, rules: RuleTable | None = None, tables: dict | None = None):
        self.seed = seed
        self.rules = rules
        self.tables = tables or {}

    def generate(self, bundle: PromptBundle) -> str:
        if bundle.task == "layout":
            from .layout import builtin_table

            name = bundle.meta.get("table", "loveda")
            table = self.tables.get(name) or builtin_table(name)
            return mock_layout(bundle.user, table, int(bundle.meta.get("p", DEFAULT_P)), self.seed)
        if bundle.task == "config":
            return mock_config(bundle.user, self.rules, self.seed)
        if bundle.task == "caption":
            return mock_caption(bundle)
        raise ValueError(f"mock backend cannot handle task {bundle.task!r}")
