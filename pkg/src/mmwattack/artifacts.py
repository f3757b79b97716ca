"""Image and report files written by the experiment runner.

``.pgm``
    16-bit binary greymap (P5, maxval 65535, big-endian samples) of a
    magnitude image in [0, 1].
``.mmwimg``
    Raw complex image: a 64-byte little-endian header (magic
    ``b"MMWIMG1\\0"``, u32 nvx, u32 nvy, f64 dvx, f64 dvy, f64 z0, zero
    padding) followed by row-major float64 (re, im) pairs.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .core import ImageGrid, ReflectivityImage, ShapeError

__all__ = [
    "MMWIMG_MAGIC",
    "write_pgm",
    "read_pgm",
    "write_mmwimg",
    "read_mmwimg",
    "write_json",
    "sha256_file",
]

MMWIMG_MAGIC = b"MMWIMG1\0"
_HEADER = struct.Struct("<8sIIddd24x")
assert _HEADER.size == 64


def write_pgm(path, mag: np.ndarray) -> None:
    mag = np.asarray(mag, dtype=float)
    if mag.ndim != 2:
        raise ShapeError("PGM output needs a 2-D image")
    levels = np.round(np.clip(mag, 0.0, 1.0) * 65535).astype(">u2")
    rows, cols = mag.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n65535\n".encode("ascii"))
        fh.write(levels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a file written by :func:`write_pgm` back to [0, 1] floats."""
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5" or parts[2] != b"65535":
        raise ValueError(f"{path} is not a 16-bit P5 greymap")
    cols, rows = (int(v) for v in parts[1].split())
    levels = np.frombuffer(parts[3], dtype=">u2", count=rows * cols)
    return levels.reshape(rows, cols) / 65535.0


def write_mmwimg(path, image: ReflectivityImage) -> None:
    g = image.grid
    header = _HEADER.pack(MMWIMG_MAGIC, g.nvx, g.nvy, g.dvx, g.dvy, g.z0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(image.values, dtype="<c16").tobytes())


def read_mmwimg(path) -> ReflectivityImage:
    """Inverse of :func:`write_mmwimg`; the grid origin is not stored and is centred."""
    data = Path(path).read_bytes()
    magic, nvx, nvy, dvx, dvy, z0 = _HEADER.unpack_from(data)
    if magic != MMWIMG_MAGIC:
        raise ValueError(f"{path} does not start with the MMWIMG1 magic")
    values = np.frombuffer(data, dtype="<c16", offset=_HEADER.size, count=nvx * nvy)
    return ReflectivityImage(ImageGrid.centered(nvx, nvy, dvx, dvy, z0), values)


def write_json(path, obj) -> None:
    # allow_nan stays on so a non-finite value shows up rather than crashing the write.
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
