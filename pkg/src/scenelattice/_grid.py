"""Grid partitioning, seeding and file helpers shared across modules."""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zlib
from pathlib import Path

import numpy as np


def patch_edges(n: int, parts: int) -> np.ndarray:
    """Boundaries splitting ``n`` items into ``parts`` contiguous runs.

    Run sizes differ by at most one, larger runs first (32 -> 11, 11, 10).
    Layout downsampling, elevation zoning and region sectors all use this
    partition, so cell (i, j) means the same footprint everywhere.
    """
    if parts < 1 or n < parts:
        raise ValueError(f"cannot split {n} items into {parts} parts")
    i = np.arange(parts + 1, dtype=np.int64)
    return -((-i * n) // parts)


def patch_sums(values: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Sum a 2-D array (or a stack of them, leading axes) over a rows x cols patch grid."""
    h, w = values.shape[-2:]
    r = patch_edges(h, rows)[:-1]
    c = patch_edges(w, cols)[:-1]
    out = np.add.reduceat(values, r, axis=-2)
    return np.add.reduceat(out, c, axis=-1)


def patch_counts(h: int, w: int, rows: int, cols: int) -> np.ndarray:
    re = np.diff(patch_edges(h, rows))
    ce = np.diff(patch_edges(w, cols))
    return np.outer(re, ce)


def sub_rng(seed: int, *keys) -> np.random.Generator:
    """Independent generator for (seed, key...) so stages and classes never share streams."""
    entropy = [int(seed) & 0xFFFFFFFF]
    for key in keys:
        if isinstance(key, (int, np.integer)):
            entropy.append(int(key) & 0xFFFFFFFF)
        else:
            entropy.append(zlib.crc32(str(key).encode("utf-8")))
    return np.random.default_rng(entropy)


def sha256_text(text: str | bytes) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def png_bytes(image) -> bytes:
    import io

    buf = io.BytesIO()
    image.save(buf, format="PNG")
    return buf.getvalue()
