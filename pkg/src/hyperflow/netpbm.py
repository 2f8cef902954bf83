"""Minimal binary PGM (P5) and PPM (P6) reading and writing, 8-bit only."""

from __future__ import annotations

import numpy as np

from .errors import DataError, FormatError


def _header(magic: bytes, width: int, height: int) -> bytes:
    return magic + b"\n%d %d\n255\n" % (width, height)


def write_pgm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise DataError(f"PGM needs a 2-D array, got shape {img.shape}")
    if img.size and (img.min() < 0 or img.max() > 255):
        raise DataError("PGM values must lie in 0..255")
    with open(path, "wb") as fh:
        fh.write(_header(b"P5", img.shape[1], img.shape[0]))
        fh.write(img.astype(np.uint8).tobytes())


def write_ppm(path, image) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DataError(f"PPM needs an H x W x 3 array, got shape {img.shape}")
    with open(path, "wb") as fh:
        fh.write(_header(b"P6", img.shape[1], img.shape[0]))
        fh.write(np.clip(img, 0, 255).astype(np.uint8).tobytes())


def _tokens(buf: bytes, count: int):
    """Split the first ``count`` header tokens, skipping '#' comments."""
    tokens = []
    pos = 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated netpbm header")
        tokens.append(buf[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic != b"P5":
        raise FormatError(f"not a binary PGM (magic {magic!r})")
    if int(maxval) > 255:
        raise FormatError("only 8-bit PGM is supported")
    w, h = int(w), int(h)
    data = np.frombuffer(buf, dtype=np.uint8, offset=offset)
    if data.size != w * h:
        raise FormatError(f"PGM payload has {data.size} bytes, expected {w * h}")
    return data.reshape(h, w).copy()


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    (magic, w, h, maxval), offset = _tokens(buf, 4)
    if magic != b"P6" or int(maxval) > 255:
        raise FormatError("only 8-bit binary PPM is supported")
    w, h = int(w), int(h)
    data = np.frombuffer(buf, dtype=np.uint8, offset=offset)
    if data.size != w * h * 3:
        raise FormatError("PPM payload size mismatch")
    return data.reshape(h, w, 3).copy()
