"""EEGT segment files, tag tables, metric CSVs and run manifests."""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

EEGT_MAGIC = b"EEGT"
EEGT_VERSION = 1
_HEADER = struct.Struct("<4s4I")


class FormatError(ValueError):
    pass


def write_eegt(path, segments: np.ndarray) -> None:
    """(n, c, t) array as little-endian float32, segment-major."""
    x = np.asarray(segments)
    if x.ndim != 3:
        raise FormatError(f"expected (n, c, t) segments, got shape {x.shape}")
    n, c, t = x.shape
    Path(path).write_bytes(_HEADER.pack(EEGT_MAGIC, EEGT_VERSION, c, t, n)
                           + np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_eegt(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    if len(buf) < _HEADER.size:
        raise FormatError(f"{path}: too short for an EEGT header")
    magic, version, c, t, n = _HEADER.unpack_from(buf)
    if magic != EEGT_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != EEGT_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(buf) != _HEADER.size + 4 * n * c * t:
        raise FormatError(f"{path}: payload size does not match header {n}x{c}x{t}")
    data = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(n, c, t)
    return data.astype(np.float64)


def write_tags(path, tags, split) -> None:
    lines = ["index,tag,split"] + [f"{i},{t},{s}" for i, (t, s) in enumerate(zip(tags, split))]
    Path(path).write_text("\n".join(lines) + "\n")


def read_tags(path) -> tuple[list[str], np.ndarray]:
    rows = [line.split(",") for line in Path(path).read_text().splitlines()[1:] if line]
    return [r[1] for r in rows], np.array([r[2] for r in rows], dtype=str)


def fmt(v) -> str:
    """Shortest round-tripping text for floats; plain str otherwise."""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_csv(path, header: list[str], rows, footer: list[str] | None = None) -> None:
    lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    if footer:
        lines += footer
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(path, entries: dict) -> None:
    """Flat ``key=value`` text, keys sorted, written via a temporary file and rename."""
    path = Path(path)
    lines = [f"{k}={v}" for k, v in sorted(entries.items())]
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    os.replace(tmp, path)


def read_manifest(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed manifest line {line!r}")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out
