"""Plain-file writers and readers: PPM/PBM images, CSV grids, JSON."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from pathlib import Path

import numpy as np

from ._validation import ParameterError


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6, maxval 255."""
    img = to_uint8(image)
    h, w = img.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + img.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = data.split(maxsplit=4)
    if tokens[0] != b"P6":
        raise ParameterError(f"{path}: not a binary PPM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    raw = np.frombuffer(tokens[4][: w * h * 3], dtype=np.uint8)
    return raw.reshape(h, w, 3).astype(np.float64) / maxval


def write_pbm(path, mask: np.ndarray) -> None:
    """Binary P4; set bits are ``True`` pixels."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    packed = np.packbits(mask, axis=1)
    Path(path).write_bytes(f"P4\n{w} {h}\n".encode() + packed.tobytes())


def read_pbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = data.split(maxsplit=3)
    if tokens[0] != b"P4":
        raise ParameterError(f"{path}: not a binary PBM")
    w, h = int(tokens[1]), int(tokens[2])
    row_bytes = (w + 7) // 8
    raw = np.frombuffer(tokens[3][: row_bytes * h], dtype=np.uint8).reshape(h, row_bytes)
    return np.unpackbits(raw, axis=1)[:, :w].astype(bool)


def _fmt(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return repr(float(x))


def grid_to_csv(grid: np.ndarray) -> str:
    return "".join(",".join(_fmt(v) for v in row) + "\n" for row in np.asarray(grid, dtype=np.float64))


def write_grid_csv(path, grid: np.ndarray) -> None:
    Path(path).write_text(grid_to_csv(grid))


def read_grid_csv(path) -> np.ndarray:
    rows = [r for r in csv.reader(io.StringIO(Path(path).read_text())) if r]
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise ParameterError(f"{path}: ragged rows")
    return np.array([[float(v) for v in r] for r in rows], dtype=np.float64)


def read_map_blocks(text: str) -> list[np.ndarray]:
    """Parse CSV text holding one 2-D map per blank-line-separated block."""
    blocks, current = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            if current:
                blocks.append(current)
                current = []
            continue
        try:
            current.append([float(v) for v in line.split(",")])
        except ValueError as exc:
            raise ParameterError(f"line {lineno}: {exc}") from exc
    if current:
        blocks.append(current)
    maps = []
    for k, block in enumerate(blocks, 1):
        if len({len(r) for r in block}) != 1:
            raise ParameterError(f"map block {k} is ragged")
        maps.append(np.array(block, dtype=np.float64))
    if len({m.shape for m in maps}) > 1:
        raise ParameterError("map blocks differ in shape")
    return maps


def json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def dumps(obj) -> str:
    """Canonical JSON: sorted keys, fixed separators, non-finite floats as strings."""
    return json.dumps(_finite(obj), sort_keys=True, indent=2, default=json_default) + "\n"


def _finite(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return _fmt(obj)
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _finite(obj.tolist())
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=json_default).encode()).hexdigest()[:16]
