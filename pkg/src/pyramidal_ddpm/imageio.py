"""Image file formats.

* PGM (P5) / PPM (P6): 8-bit viewing formats. Values in [-1, 1] map to
  ``round(255 * (v + 1) / 2)`` clamped to [0, 255].
* Raw ``PDG1``: lossless float32 interchange. 16-byte header (magic, then
  little-endian u32 H, W, C) followed by H*W*C little-endian float32 values,
  row-major and channel-last.
"""

from __future__ import annotations

import os
import struct

import numpy as np

from .errors import FileFormatError, ShapeError

RAW_MAGIC = b"PDG1"
_RAW_HEADER = struct.Struct("<4sIII")


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(255.0 * (np.asarray(x, dtype=np.float64) + 1.0) / 2.0), 0, 255).astype(np.uint8)


def from_uint8(b: np.ndarray) -> np.ndarray:
    return b.astype(np.float64) / 255.0 * 2.0 - 1.0


def write_pnm(path: str | os.PathLike, x: np.ndarray) -> None:
    """Write an ``(H, W, 1)`` image as PGM or ``(H, W, 3)`` as PPM."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[-1] not in (1, 3):
        raise ShapeError(f"PNM output needs (H, W, 1) or (H, W, 3) data, got {x.shape}")
    H, W, C = x.shape
    magic = b"P5" if C == 1 else b"P6"
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (W, H))
        fh.write(to_uint8(x).tobytes())


def _pnm_tokens(buf: bytes, count: int, pos: int) -> tuple[list[int], int]:
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace():
            pos += 1
        out.append(int(buf[start:pos]))
    return out, pos + 1


def read_pnm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    magic = buf[:2]
    if magic not in (b"P5", b"P6"):
        raise FileFormatError(f"{path}: not a binary PGM/PPM file")
    try:
        (W, H, maxval), pos = _pnm_tokens(buf, 3, 2)
    except ValueError:
        raise FileFormatError(f"{path}: malformed PNM header") from None
    if maxval != 255:
        raise FileFormatError(f"{path}: only 8-bit PNM files are supported (maxval={maxval})")
    C = 1 if magic == b"P5" else 3
    if len(buf) - pos < H * W * C:
        raise FileFormatError(f"{path}: truncated pixel data")
    pixels = np.frombuffer(buf, dtype=np.uint8, count=H * W * C, offset=pos)
    return from_uint8(pixels.reshape(H, W, C))


def write_raw(path: str | os.PathLike, x: np.ndarray) -> None:
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"raw output needs (H, W, C) data, got {x.shape}")
    H, W, C = x.shape
    with open(path, "wb") as fh:
        fh.write(_RAW_HEADER.pack(RAW_MAGIC, H, W, C))
        fh.write(np.ascontiguousarray(x, dtype="<f4").tobytes())


def read_raw(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _RAW_HEADER.size:
        raise FileFormatError(f"{path}: truncated raw header")
    magic, H, W, C = _RAW_HEADER.unpack_from(buf)
    if magic != RAW_MAGIC:
        raise FileFormatError(f"{path}: bad raw magic {magic!r}")
    expected = _RAW_HEADER.size + 4 * H * W * C
    if len(buf) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes, found {len(buf)}")
    data = np.frombuffer(buf, dtype="<f4", offset=_RAW_HEADER.size)
    return data.reshape(H, W, C).astype(np.float64)


def read_image(path: str | os.PathLike) -> np.ndarray:
    """Read any supported format, dispatching on the file magic."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == RAW_MAGIC:
        return read_raw(path)
    return read_pnm(path)


def write_image(path: str | os.PathLike, x: np.ndarray, fmt: str) -> None:
    if fmt == "raw":
        write_raw(path, x)
    elif fmt in ("pgm", "ppm"):
        write_pnm(path, x)
    else:
        raise ValueError(f"unknown image format {fmt!r}")


FORMAT_SUFFIX = {"raw": ".pdg", "pgm": ".pgm", "ppm": ".ppm"}


IMAGE_SUFFIXES = (".pgm", ".ppm", ".pdg")


class ImageFolder:
    """Every supported image in a directory, used as a training/eval sample pool.

    All images must share one ``(H, W, C)`` footprint. ``sample`` draws with
    replacement so it can stand in for a toy dataset.
    """

    def __init__(self, directory: str | os.PathLike):
        names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))
        if not names:
            raise FileNotFoundError(f"{directory}: no .pgm/.ppm/.pdg images found")
        images = [read_image(os.path.join(directory, n)) for n in names]
        shapes = {im.shape for im in images}
        if len(shapes) != 1:
            raise ShapeError(f"{directory}: images have mixed shapes {sorted(shapes)}")
        self.directory = os.fspath(directory)
        self.names = names
        self.images = np.stack(images)

    @property
    def resolution(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, n: int, rng: np.random.Generator, level: int = 0) -> np.ndarray:
        if level:
            raise ShapeError("image folders provide finest-resolution samples only")
        return self.images[rng.integers(len(self.images), size=n)]
