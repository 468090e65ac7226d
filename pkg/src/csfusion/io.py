"""On-disk formats.

Cubes are a pair of files: a JSON header and a raw raster of little-endian
float32 values in band-sequential, column-major-within-band order. Label
maps and filter banks are plain CSV. Networks use a small binary record.
"""
from __future__ import annotations

import csv
import io as _io
import json
import struct
from pathlib import Path

import numpy as np

from .datamodel import FilterBank, LabelMap, PatternCube, SpectralCube, ValidationError

DTYPE_TAG = "float32-le"
ORDER_TAG = "band-sequential/column-major"
_RASTER_DTYPE = np.dtype("<f4")


class LoadError(ValueError):
    """Base class for malformed artifact files."""


class HeaderError(LoadError, ValidationError):
    """Header fields are missing, malformed or outside the documented set."""


class LengthMismatchError(LoadError):
    pass


class NonFiniteError(LoadError):
    pass


class LabelParseError(LoadError):
    pass


def _header(cube: SpectralCube, provenance: dict | None) -> dict:
    return {
        "rows": cube.rows,
        "cols": cube.cols,
        "bands": cube.bands,
        "dtype": DTYPE_TAG,
        "ordering": ORDER_TAG,
        "provenance": {str(k): v for k, v in (provenance or {}).items()},
    }


def write_cube(cube: SpectralCube, header_path, data_path, provenance: dict | None = None) -> None:
    header_path, data_path = Path(header_path), Path(data_path)
    header_path.write_text(json.dumps(_header(cube, provenance), indent=2, sort_keys=True) + "\n")
    data_path.write_bytes(cube.data.ravel(order="F").astype(_RASTER_DTYPE).tobytes())


def read_header(header_path) -> dict:
    try:
        h = json.loads(Path(header_path).read_text())
    except json.JSONDecodeError as exc:
        raise HeaderError(f"{header_path}: not a valid header ({exc})") from exc
    if not isinstance(h, dict):
        raise HeaderError(f"{header_path}: header must be a JSON object")
    for key in ("rows", "cols", "bands"):
        v = h.get(key)
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise HeaderError(f"{header_path}: '{key}' must be a positive integer, got {v!r}")
    if h.get("dtype") != DTYPE_TAG:
        raise HeaderError(f"{header_path}: unsupported dtype {h.get('dtype')!r} (expected {DTYPE_TAG!r})")
    if h.get("ordering") != ORDER_TAG:
        raise HeaderError(f"{header_path}: unsupported ordering {h.get('ordering')!r} (expected {ORDER_TAG!r})")
    prov = h.get("provenance", {})
    if not isinstance(prov, dict):
        raise HeaderError(f"{header_path}: provenance must be a mapping")
    h["provenance"] = prov
    return h


def read_cube(header_path, data_path, with_header: bool = False):
    h = read_header(header_path)
    shape = (h["rows"], h["cols"], h["bands"])
    raw = Path(data_path).read_bytes()
    expected = 4 * shape[0] * shape[1] * shape[2]
    if len(raw) != expected:
        raise LengthMismatchError(f"{data_path}: expected {expected} bytes, found {len(raw)}")
    v = np.frombuffer(raw, dtype=_RASTER_DTYPE)
    if not np.all(np.isfinite(v)):
        raise NonFiniteError(f"{data_path}: raster contains NaN or Inf")
    cube = SpectralCube(v.astype(np.float64).reshape(shape, order="F"))
    return (cube, h) if with_header else cube


def cube_paths(stem) -> tuple[Path, Path]:
    """``(stem.json, stem.raw)`` for a path stem."""
    stem = Path(stem)
    return stem.with_name(stem.name + ".json"), stem.with_name(stem.name + ".raw")


def save_cube(cube: SpectralCube, stem, provenance: dict | None = None) -> None:
    write_cube(cube, *cube_paths(stem), provenance=provenance)


def load_cube(stem, with_header: bool = False):
    return read_cube(*cube_paths(stem), with_header=with_header)


def save_patterns(S: PatternCube, stem, provenance: dict | None = None) -> None:
    prov = dict(provenance or {})
    prov.update(kind="pattern", filter_count=S.filter_count)
    save_cube(SpectralCube(S.indices.astype(np.float64)), stem, prov)


def load_patterns(stem) -> PatternCube:
    cube, h = load_cube(stem, with_header=True)
    prov = h["provenance"]
    if prov.get("kind") != "pattern" or "filter_count" not in prov:
        raise HeaderError(f"{stem}: not a pattern cube")
    return PatternCube(cube.data, int(prov["filter_count"]))


def _read_int_grid(path) -> list[list[int]]:
    rows = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            try:
                rows.append([int(f) for f in rec])
            except ValueError as exc:
                raise LabelParseError(f"{path}:{lineno}: non-integer field ({exc})") from exc
    if not rows:
        raise LabelParseError(f"{path}: empty file")
    width = len(rows[0])
    for lineno, r in enumerate(rows, start=1):
        if len(r) != width:
            raise LabelParseError(f"{path}: ragged row {lineno} has {len(r)} fields, expected {width}")
    return rows


def _write_int_grid(a: np.ndarray, path) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in a:
        w.writerow([int(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_labels(path, class_count: int | None = None) -> LabelMap:
    grid = np.array(_read_int_grid(path), dtype=np.int64)
    if grid.min() < 0:
        raise LabelParseError(f"{path}: negative label {grid.min()}")
    return LabelMap(grid, class_count)


def write_labels(labels: LabelMap, path) -> None:
    _write_int_grid(labels.labels, path)


def write_filter_bank(bank: FilterBank, path) -> None:
    _write_int_grid(bank.responses, path)


def read_filter_bank(path) -> FilterBank:
    try:
        return FilterBank(np.array(_read_int_grid(path), dtype=np.int64))
    except ValidationError as exc:
        raise LoadError(f"{path}: {exc}") from exc


_NET_MAGIC = b"CSFMLP01"


def save_network(net, path) -> None:
    """Binary record: magic, layer count, per-layer (fan_in, fan_out), then float64 LE
    weights (row-major) and biases per layer, then input mean and scale."""
    parts = [_NET_MAGIC, struct.pack("<I", len(net.weights))]
    for w in net.weights:
        parts.append(struct.pack("<II", *w.shape))
    for w, b in zip(net.weights, net.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(net.input_mean, dtype="<f8").tobytes())
    parts.append(np.ascontiguousarray(net.input_scale, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_network(path):
    from .classifier import MlpNetwork

    raw = Path(path).read_bytes()
    if raw[:8] != _NET_MAGIC:
        raise HeaderError(f"{path}: not a network file")
    try:
        (n,) = struct.unpack_from("<I", raw, 8)
        shapes = [struct.unpack_from("<II", raw, 12 + 8 * i) for i in range(n)]
    except struct.error as exc:
        raise LengthMismatchError(f"{path}: truncated layer table") from exc
    if n == 0 or min(min(s) for s in shapes) < 1:
        raise HeaderError(f"{path}: layer table must list positive shapes, got {shapes}")
    off = 12 + 8 * n
    expected = off + 8 * (sum(a * b + b for a, b in shapes) + 2 * shapes[0][0])
    if len(raw) != expected:
        raise LengthMismatchError(f"{path}: expected {expected} bytes, found {len(raw)}")

    def take(count):
        nonlocal off
        v = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return v

    ws, bs = [], []
    for a, b in shapes:
        ws.append(take(a * b).reshape(a, b))
        bs.append(take(b))
    mean = take(shapes[0][0])
    scale = take(shapes[0][0])
    return MlpNetwork(tuple(ws), tuple(bs), mean, scale)


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
