"""Grayscale PGM (P2/P5, 8/16-bit) and PFM (Pf) reading and writing."""

from __future__ import annotations

import contextlib
import os
import re
import tempfile

import numpy as np

__all__ = [
    "read_pgm",
    "write_pgm",
    "read_pfm",
    "write_pfm",
    "read_image",
    "write_counts_pgm",
    "atomic_write_bytes",
    "atomic_output",
]

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _header_tokens(buf: bytes, count: int, pos: int = 0) -> tuple[list[bytes], int]:
    tokens = []
    for _ in range(count):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise ValueError("truncated PGM header")
        tokens.append(m.group(1))
        pos = m.end()
    return tokens, pos


def read_pgm(path) -> np.ndarray:
    """Read a P2 or P5 grayscale PGM into a 2-D integer array.

    16-bit P5 files are big-endian, as the netpbm format prescribes.
    """
    with open(path, "rb") as f:
        buf = f.read()
    magic = buf[:2]
    if magic not in (b"P2", b"P5"):
        raise ValueError(f"{path}: not a grayscale PGM (magic {magic!r})")
    (w, h, maxval), pos = _header_tokens(buf, 3, 2)
    width, height, maxval = int(w), int(h), int(maxval)
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise ValueError(f"{path}: bad PGM header")
    n = width * height
    if magic == b"P5":
        # exactly one whitespace byte separates the header from the raster
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        raster = buf[pos:pos + n * dtype.itemsize]
        if len(raster) != n * dtype.itemsize:
            raise ValueError(f"{path}: truncated PGM raster")
        data = np.frombuffer(raster, dtype=dtype)
    else:
        values = buf[pos:].split()
        if len(values) < n:
            raise ValueError(f"{path}: truncated PGM raster")
        data = np.array([int(v) for v in values[:n]])
    if np.any(data > maxval):
        raise ValueError(f"{path}: sample exceeds maxval {maxval}")
    return data.astype(np.int64).reshape(height, width)


def _pgm_bytes(image, maxval: int | None, ascii: bool) -> bytes:
    arr = np.asarray(image)
    if arr.ndim != 2:
        raise ValueError("PGM holds 2-D grayscale images only")
    if arr.dtype.kind == "f":
        if np.any(arr != np.round(arr)):
            raise ValueError("PGM samples must be integers")
    arr = arr.astype(np.int64)
    if arr.size and arr.min() < 0:
        raise ValueError("PGM samples must be nonnegative")
    top = int(arr.max()) if arr.size else 0
    if maxval is None:
        maxval = 255 if top <= 255 else 65535
    if top > 65535:
        raise ValueError(f"value {top} does not fit a 16-bit PGM")
    if top > maxval:
        raise ValueError(f"value {top} exceeds maxval {maxval}")
    height, width = arr.shape
    if ascii:
        header = f"P2\n{width} {height}\n{maxval}\n".encode()
        rows = (" ".join(map(str, row)) for row in arr.tolist())
        return header + "\n".join(rows).encode() + b"\n"
    header = f"P5\n{width} {height}\n{maxval}\n".encode()
    dtype = ">u2" if maxval > 255 else "u1"
    return header + arr.astype(dtype).tobytes()


def write_pgm(path, image, maxval: int | None = None, ascii: bool = False) -> None:
    """Write integer ``image`` as PGM; ``maxval`` defaults to 255 or 65535."""
    atomic_write_bytes(path, _pgm_bytes(image, maxval, ascii))


def write_counts_pgm(path, counts) -> None:
    """Write a count image as 16-bit binary PGM (values above 65535 rejected)."""
    atomic_write_bytes(path, _pgm_bytes(counts, 65535, ascii=False))


def read_pfm(path) -> np.ndarray:
    """Read a single-channel PFM into a float64 array (top row first)."""
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:2] != b"Pf":
        raise ValueError(f"{path}: not a grayscale PFM")
    (w, h, scale), pos = _header_tokens(buf, 3, 2)
    width, height, scale = int(w), int(h), float(scale)
    pos += 1
    dtype = np.dtype("<f4") if scale < 0 else np.dtype(">f4")
    n = width * height
    raster = buf[pos:pos + 4 * n]
    if len(raster) != 4 * n:
        raise ValueError(f"{path}: truncated PFM raster")
    data = np.frombuffer(raster, dtype=dtype).reshape(height, width)
    # PFM rows are stored bottom-up
    return np.flipud(data).astype(np.float64)


def write_pfm(path, image) -> None:
    """Write a 2-D real image as little-endian ``Pf`` (bottom-up rows)."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("PFM writer handles 2-D grayscale images only")
    height, width = arr.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode()
    atomic_write_bytes(path, header + np.flipud(arr).astype("<f4").tobytes())


def read_image(path) -> np.ndarray:
    """Read a PGM or PFM file, dispatching on the magic bytes."""
    with open(path, "rb") as f:
        magic = f.read(2)
    if magic == b"Pf":
        return read_pfm(path)
    return read_pgm(path)


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write ``payload`` to ``path`` through a temp file and an atomic rename."""
    with atomic_output(path) as f:
        f.write(payload)


@contextlib.contextmanager
def atomic_output(path):
    """Binary file handle whose contents replace ``path`` only on success."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            yield f
        # mkstemp creates 0600; give the result the usual umask-derived mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
