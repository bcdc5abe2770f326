"""Region descriptors from pooled rasters.

Two extractors produce the same ``G x G x C`` descriptor shape:

* ``extract_zoom`` re-pools the region from full-resolution pixels, so the
  descriptor always has ``G x G`` independent source cells.
* ``extract_crop`` reuses two precomputed average-pooled maps (a shallow
  one at stride ``S1`` and a deep one at stride ``S2``) and bilinearly
  resamples the map cells under the region. Small regions cover fewer
  than ``G x G`` cells, so their descriptor is an upsample of a coarser
  source.

Descriptors are flattened in (row, column, channel) order.

A pixel belongs to a region when its center lies inside the half-open
region ``[x0, x1) x [y0, y1)``. A crop reads as many whole map cells as fit
inside the region, centered on it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hierdet.errors import DegenerateRegion
from hierdet.geometry import Box

DEFAULT_GRID = 7
DEFAULT_STRIDES = (8, 16)


@dataclass(frozen=True, eq=False)
class ImageRaster:
    """Image intensities in [0, 1] with shape (height, width, channels)."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3:
            raise ValueError(f"expected (H, W, C) image, got shape {data.shape}")
        h, w, _ = data.shape
        if w < 16 or h < 16:
            raise ValueError(f"image must be at least 16x16, got {w}x{h}")
        if not np.all(np.isfinite(data)) or data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("image intensities must be finite and within [0, 1]")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def bounds(self) -> Box:
        return Box(0.0, 0.0, float(self.width), float(self.height))

    def __eq__(self, other):
        if not isinstance(other, ImageRaster):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))


@dataclass(frozen=True, eq=False)
class FeatureMapSet:
    shallow: np.ndarray
    deep: np.ndarray
    shallow_stride: int
    deep_stride: int
    width: int
    height: int


def _clip(region: Box, width: int, height: int) -> Box:
    clipped = region.clip(width, height)
    if clipped is None:
        raise DegenerateRegion(f"region {region.as_tuple()} does not overlap the {width}x{height} image")
    return clipped


def _pooling_matrix(lo: float, hi: float, n: int, grid: int) -> np.ndarray:
    """Row-normalised (grid, n) matrix averaging the pixels under each cell.

    A cell that holds no pixel center samples the pixel under its own center.
    """
    first = max(math.ceil(lo - 0.5), 0)
    last = min(math.ceil(hi - 0.5) - 1, n - 1)
    mat = np.zeros((grid, n))
    if last >= first:
        idx = np.arange(first, last + 1)
        cells = np.floor((idx + 0.5 - lo) * grid / (hi - lo)).astype(int)
        np.clip(cells, 0, grid - 1, out=cells)
        mat[cells, idx] = 1.0
    step = (hi - lo) / grid
    for g in np.flatnonzero(mat.sum(axis=1) == 0):
        pix = min(max(int(math.floor(lo + (g + 0.5) * step)), 0), n - 1)
        mat[g, pix] = 1.0
    return mat / mat.sum(axis=1, keepdims=True)


def _separable(rows: np.ndarray, grid: np.ndarray, cols: np.ndarray) -> np.ndarray:
    return np.einsum("yi,ijc,xj->yxc", rows, grid, cols, optimize=True)


def extract_zoom(image: ImageRaster, region: Box, grid: int = DEFAULT_GRID) -> np.ndarray:
    region = _clip(region, image.width, image.height)
    rows = _pooling_matrix(region.y0, region.y1, image.height, grid)
    cols = _pooling_matrix(region.x0, region.x1, image.width, grid)
    return _separable(rows, image.data, cols).reshape(-1)


def _block_matrix(n: int, stride: int) -> np.ndarray:
    cells = -(-n // stride)
    mat = np.zeros((cells, n))
    mat[np.arange(n) // stride, np.arange(n)] = 1.0
    return mat / mat.sum(axis=1, keepdims=True)


def precompute_maps(image: ImageRaster, s1: int = DEFAULT_STRIDES[0], s2: int = DEFAULT_STRIDES[1]) -> FeatureMapSet:
    if not 0 < s1 < s2:
        raise ValueError(f"strides must satisfy 0 < S1 < S2, got {s1}, {s2}")
    maps = []
    for s in (s1, s2):
        maps.append(_separable(_block_matrix(image.height, s), image.data, _block_matrix(image.width, s)))
    for m in maps:
        m.setflags(write=False)
    return FeatureMapSet(maps[0], maps[1], s1, s2, image.width, image.height)


def _select_map(maps: FeatureMapSet, region: Box, grid: int) -> tuple[np.ndarray, int]:
    if min(region.width, region.height) >= grid * maps.deep_stride:
        return maps.deep, maps.deep_stride
    return maps.shallow, maps.shallow_stride


def _cell_span(lo: float, hi: float, n_pixels: int, stride: int) -> tuple[int, int]:
    """Inclusive range of map cells read for the pixel interval ``[lo, hi)``.

    The crop is as many whole cells as fit in the interval (at least one),
    placed as close to the interval's center as the map allows. A region
    narrower than ``k * stride`` therefore never reads ``k`` cells, however
    it straddles the cell boundaries.
    """
    n_cells = -(-n_pixels // stride)
    count = min(max(int(np.floor((hi - lo) / stride + 1e-9)), 1), n_cells)
    start = int(np.floor((lo + hi) / (2.0 * stride) - count / 2.0 + 0.5))
    start = min(max(start, 0), n_cells - count)
    return start, start + count - 1


def _crop(maps: FeatureMapSet, region: Box, grid: int) -> np.ndarray:
    region = _clip(region, maps.width, maps.height)
    fmap, stride = _select_map(maps, region, grid)
    r0, r1 = _cell_span(region.y0, region.y1, maps.height, stride)
    c0, c1 = _cell_span(region.x0, region.x1, maps.width, stride)
    return fmap[r0:r1 + 1, c0:c1 + 1]


def _bilinear_matrix(n: int, grid: int) -> np.ndarray:
    """Corner-aligned linear interpolation weights from ``n`` samples to ``grid``."""
    mat = np.zeros((grid, n))
    if n == 1:
        mat[:, 0] = 1.0
        return mat
    pos = np.arange(grid) * (n - 1) / (grid - 1)
    left = np.minimum(np.floor(pos).astype(int), n - 2)
    frac = pos - left
    mat[np.arange(grid), left] = 1.0 - frac
    mat[np.arange(grid), left + 1] += frac
    return mat


def extract_crop(maps: FeatureMapSet, region: Box, grid: int = DEFAULT_GRID) -> np.ndarray:
    crop = _crop(maps, region, grid)
    rows = _bilinear_matrix(crop.shape[0], grid)
    cols = _bilinear_matrix(crop.shape[1], grid)
    return _separable(rows, crop, cols).reshape(-1)


def effective_source_cells(maps: FeatureMapSet, region: Box, grid: int = DEFAULT_GRID) -> int:
    """Source resolution of the crop descriptor, in map cells.

    Each axis counts the cells read, capped at ``grid``: resampling to
    ``grid`` samples cannot carry more independent values than that, so an
    elongated region does not make up for its short side with its long one.
    """
    crop = _crop(maps, region, grid)
    return min(crop.shape[0], grid) * min(crop.shape[1], grid)


def zoom_source_cells(grid: int = DEFAULT_GRID) -> int:
    return grid * grid
