"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255."""

from __future__ import annotations

import os

import numpy as np


class NetpbmError(ValueError):
    pass


def to_uint8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(arr, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def encode_pgm(gray: np.ndarray) -> bytes:
    """``gray`` is an HxW array in [0, 1] or uint8."""
    arr = gray if gray.dtype == np.uint8 else to_uint8(gray)
    if arr.ndim != 2:
        raise NetpbmError(f"PGM needs a 2-D array, got shape {arr.shape}")
    h, w = arr.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + arr.tobytes()


def encode_ppm(rgb: np.ndarray) -> bytes:
    """``rgb`` is an HxWx3 array in [0, 1] or uint8."""
    arr = rgb if rgb.dtype == np.uint8 else to_uint8(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise NetpbmError(f"PPM needs an HxWx3 array, got shape {arr.shape}")
    h, w, _ = arr.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(arr).tobytes()


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments."""
    out, i = [], 0
    while len(out) < count:
        while i < len(buf) and buf[i : i + 1].isspace():
            i += 1
        if i < len(buf) and buf[i : i + 1] == b"#":
            while i < len(buf) and buf[i : i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(buf) and not buf[j : j + 1].isspace():
            j += 1
        if j == i:
            raise NetpbmError("truncated netpbm header")
        out.append(buf[i:j])
        i = j
    return out, i + 1  # exactly one whitespace byte before the raster


def decode(buf: bytes) -> np.ndarray:
    """Decode P5/P6 bytes to a uint8 array (HxW or HxWx3)."""
    (magic, w, h, maxval), start = _tokens(buf, 4)
    if magic not in (b"P5", b"P6"):
        raise NetpbmError(f"unsupported netpbm magic {magic!r}")
    w, h, maxval = int(w), int(h), int(maxval)
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    depth = 3 if magic == b"P6" else 1
    need = w * h * depth
    raster = buf[start : start + need]
    if len(raster) != need:
        raise NetpbmError(f"raster truncated: expected {need} bytes, got {len(raster)}")
    arr = np.frombuffer(raster, dtype=np.uint8)
    return arr.reshape(h, w, 3) if depth == 3 else arr.reshape(h, w)


def write_pgm(path: str | os.PathLike, gray: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_pgm(gray))


def write_ppm(path: str | os.PathLike, rgb: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(encode_ppm(rgb))


def read(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        return decode(f.read())
