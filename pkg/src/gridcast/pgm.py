"""Minimal binary PGM (P5) reading and writing.

8-bit rasters hold semantic category ids, 16-bit rasters hold scaled
probability images. 16-bit samples are big-endian per the netpbm format.
"""

from __future__ import annotations

import numpy as np


def write_pgm(path, raster: np.ndarray, maxval: int) -> None:
    """Write a 2D integer raster as a binary PGM file."""
    if raster.ndim != 2:
        raise ValueError(f"PGM raster must be 2D, got shape {raster.shape}")
    if not 0 < maxval < 65536:
        raise ValueError(f"maxval must be in [1, 65535], got {maxval}")
    if raster.min() < 0 or raster.max() > maxval:
        raise ValueError("raster values outside [0, maxval]")
    dtype = ">u2" if maxval > 255 else np.uint8
    rows, cols = raster.shape
    header = f"P5\n{cols} {rows}\n{maxval}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(raster.astype(dtype).tobytes())


def read_pgm(path) -> tuple[np.ndarray, int]:
    """Read a binary PGM file; returns (raster, maxval)."""
    with open(path, "rb") as fh:
        data = fh.read()
    fields: list[bytes] = []
    pos = 0
    # Header is 4 whitespace-separated tokens; '#' starts a comment line.
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    if fields[0] != b"P5":
        raise ValueError(f"not a binary PGM file: magic {fields[0]!r}")
    cols, rows, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    dtype = ">u2" if maxval > 255 else np.uint8
    raster = np.frombuffer(data, dtype=dtype, offset=pos, count=rows * cols)
    return raster.reshape(rows, cols).copy(), maxval
