"""Images carrying normalized pixel coordinates, resampling operators and
sinusoidal positional encodings.

Image data is stored channel-last with optional leading batch axes,
``(..., H, W, C)``. Coordinate fields are ``(H, W)`` and shared by every item
of a batch.

Resampling is separable: ``downsample2x`` averages 2x2 blocks and
``upsample2x`` is corner-aligned bilinear interpolation. Both are applied to
the data and to the coordinate fields with the same kernel.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ParameterError, ShapeError

DEFAULT_PE_DEGREE = 6


def make_coordinates(H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Row and column coordinate fields ``r/(H-1)`` and ``c/(W-1)``.

    A single row (or column) gets coordinate 0.
    """
    if H < 1 or W < 1:
        raise ParameterError(f"grid size must be positive, got {H}x{W}")
    rows = np.arange(H, dtype=np.float64) / (H - 1) if H > 1 else np.zeros(1)
    cols = np.arange(W, dtype=np.float64) / (W - 1) if W > 1 else np.zeros(1)
    coord_i = np.repeat(rows[:, None], W, axis=1)
    coord_j = np.repeat(cols[None, :], H, axis=0)
    return coord_i, coord_j


def positional_encode(gamma: np.ndarray, L: int) -> np.ndarray:
    """Interleaved ``[sin(2^0 g), cos(2^0 g), ..., sin(2^(L-1) g), cos(2^(L-1) g)]``.

    Appends a trailing axis of length ``2L``.
    """
    if L < 1:
        raise ParameterError(f"encoding degree must be >= 1, got {L}")
    gamma = np.asarray(gamma, dtype=np.float64)
    freqs = 2.0 ** np.arange(L, dtype=np.float64)
    arg = gamma[..., None] * freqs
    out = np.empty(gamma.shape + (2 * L,), dtype=np.float64)
    out[..., 0::2] = np.sin(arg)
    out[..., 1::2] = np.cos(arg)
    return out


@dataclass(frozen=True, eq=False)
class PositionalEncoding:
    """Encoded coordinate fields, ``2L`` channels per axis."""

    L: int
    enc_i: np.ndarray
    enc_j: np.ndarray

    @classmethod
    def from_coordinates(cls, coord_i: np.ndarray, coord_j: np.ndarray, L: int = DEFAULT_PE_DEGREE):
        return cls(L, positional_encode(coord_i, L), positional_encode(coord_j, L))

    @property
    def shape(self) -> tuple[int, int]:
        return self.enc_i.shape[:2]

    @property
    def channels(self) -> int:
        return 4 * self.L

    def stacked(self) -> np.ndarray:
        """``(H, W, 4L)`` array: the i channels followed by the j channels."""
        return np.concatenate([self.enc_i, self.enc_j], axis=-1)


@dataclass(frozen=True, eq=False)
class ImageGrid:
    """Pixel data with its coordinate fields.

    ``data`` has shape ``(..., H, W, C)``; ``coord_i``/``coord_j`` are ``(H, W)``.
    """

    data: np.ndarray
    coord_i: np.ndarray
    coord_j: np.ndarray

    def __post_init__(self):
        if self.data.ndim < 3:
            raise ShapeError(f"image data needs at least 3 axes (H, W, C), got shape {self.data.shape}")
        hw = self.data.shape[-3:-1]
        if self.coord_i.shape != hw or self.coord_j.shape != hw:
            raise ShapeError(
                f"coordinate fields {self.coord_i.shape}/{self.coord_j.shape} do not match data footprint {hw}"
            )

    @classmethod
    def full_frame(cls, data: np.ndarray) -> ImageGrid:
        data = np.asarray(data, dtype=np.float64)
        if data.ndim < 3:
            raise ShapeError(f"image data needs at least 3 axes (H, W, C), got shape {data.shape}")
        ci, cj = make_coordinates(*data.shape[-3:-1])
        return cls(data, ci, cj)

    @property
    def height(self) -> int:
        return self.data.shape[-3]

    @property
    def width(self) -> int:
        return self.data.shape[-2]

    @property
    def channels(self) -> int:
        return self.data.shape[-1]

    def with_data(self, data: np.ndarray) -> ImageGrid:
        return ImageGrid(data, self.coord_i, self.coord_j)

    def encoding(self, L: int = DEFAULT_PE_DEGREE) -> PositionalEncoding:
        return PositionalEncoding.from_coordinates(self.coord_i, self.coord_j, L)


# --- separable resampling matrices -------------------------------------------


@lru_cache(maxsize=64)
def _down_matrix(n: int) -> np.ndarray:
    m = np.zeros((n // 2, n))
    r = np.arange(n // 2)
    m[r, 2 * r] = 0.5
    m[r, 2 * r + 1] = 0.5
    m.setflags(write=False)
    return m


@lru_cache(maxsize=64)
def _up_matrix(n: int) -> np.ndarray:
    out = 2 * n
    m = np.zeros((out, n))
    if n == 1:
        m[:, 0] = 1.0
    else:
        src = np.arange(out) * (n - 1) / (out - 1)
        lo = np.minimum(np.floor(src).astype(int), n - 2)
        frac = src - lo
        m[np.arange(out), lo] = 1.0 - frac
        m[np.arange(out), lo + 1] += frac
    m.setflags(write=False)
    return m


def _apply_hw(a: np.ndarray, mh: np.ndarray, mw: np.ndarray, channel_last: bool) -> np.ndarray:
    if channel_last:
        return np.einsum("ah,...hwc,bw->...abc", mh, a, mw, optimize=True)
    return mh @ a @ mw.T


def downsample_array(x: np.ndarray, levels: int = 1) -> np.ndarray:
    """Block-average ``(..., H, W, C)`` data ``levels`` times."""
    for _ in range(levels):
        H, W = x.shape[-3:-1]
        if H % 2 or W % 2:
            raise ShapeError(f"2x downsampling needs even height and width, got {H}x{W}")
        x = _apply_hw(x, _down_matrix(H), _down_matrix(W), True)
    return x


def downsample_adjoint(r: np.ndarray, levels: int = 1) -> np.ndarray:
    """Exact adjoint of :func:`downsample_array`: each value spread as value/4 on its 2x2 block."""
    for _ in range(levels):
        h, w = r.shape[-3:-1]
        r = _apply_hw(r, _down_matrix(2 * h).T, _down_matrix(2 * w).T, True)
    return r


def upsample_array(x: np.ndarray, levels: int = 1) -> np.ndarray:
    for _ in range(levels):
        H, W = x.shape[-3:-1]
        x = _apply_hw(x, _up_matrix(H), _up_matrix(W), True)
    return x


def downsample2x(g: ImageGrid) -> ImageGrid:
    H, W = g.height, g.width
    if H % 2 or W % 2:
        raise ShapeError(f"2x downsampling needs even height and width, got {H}x{W}")
    mh, mw = _down_matrix(H), _down_matrix(W)
    return ImageGrid(
        _apply_hw(g.data, mh, mw, True),
        _apply_hw(g.coord_i, mh, mw, False),
        _apply_hw(g.coord_j, mh, mw, False),
    )


def upsample2x(g: ImageGrid) -> ImageGrid:
    mh, mw = _up_matrix(g.height), _up_matrix(g.width)
    # convex weights keep coordinates inside [0, 1]; clip guards rounding
    return ImageGrid(
        _apply_hw(g.data, mh, mw, True),
        np.clip(_apply_hw(g.coord_i, mh, mw, False), 0.0, 1.0),
        np.clip(_apply_hw(g.coord_j, mh, mw, False), 0.0, 1.0),
    )


def resize_levels(H: int, target: int) -> int:
    """Number of 2x halvings taking ``H`` to ``target``; raises if unreachable."""
    if target < 1 or target > H:
        raise ParameterError(f"resolution {target} is not reachable from {H} by 2x downsampling")
    k, h = 0, H
    while h > target:
        if h % 2:
            break
        h //= 2
        k += 1
    if h != target:
        raise ParameterError(f"resolution {target} is not reachable from {H} by 2x downsampling")
    return k


def downsample_to(g: ImageGrid, resolution: int) -> ImageGrid:
    for _ in range(resize_levels(g.height, resolution)):
        g = downsample2x(g)
    return g


def random_resize(g: ImageGrid, ladder, rng: np.random.Generator) -> ImageGrid:
    """Downsample ``g`` to a ladder resolution drawn uniformly at random."""
    ladder = list(ladder)
    if not ladder:
        raise ParameterError("resolution ladder is empty")
    levels = [resize_levels(g.height, r) for r in ladder]
    k = levels[int(rng.integers(len(ladder)))]
    for _ in range(k):
        g = downsample2x(g)
    return g


def random_crop(g: ImageGrid, size: int, rng: np.random.Generator) -> ImageGrid:
    """``size x size`` window at a uniform offset; coordinates are kept, not re-normalized."""
    if size < 1 or size > min(g.height, g.width):
        raise ParameterError(f"crop size {size} does not fit a {g.height}x{g.width} grid")
    r = int(rng.integers(g.height - size + 1))
    c = int(rng.integers(g.width - size + 1))
    return ImageGrid(
        g.data[..., r : r + size, c : c + size, :],
        g.coord_i[r : r + size, c : c + size],
        g.coord_j[r : r + size, c : c + size],
    )
