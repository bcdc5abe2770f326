"""Box arithmetic, IoU and the five-way region hierarchy.

Child order is fixed as top-left, top-right, bottom-left, bottom-right,
center. Movement action ``i`` always zooms into ``children(...)[i]``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle, origin top-left, ``x0 < x1`` and ``y0 < y1``."""

    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        coords = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise ValueError(f"box must have positive area, got {coords}")

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def contains(self, other: "Box", tol: float = 1e-9) -> bool:
        return (other.x0 >= self.x0 - tol and other.y0 >= self.y0 - tol
                and other.x1 <= self.x1 + tol and other.y1 <= self.y1 + tol)

    def intersection_area(self, other: "Box") -> float:
        w = min(self.x1, other.x1) - max(self.x0, other.x0)
        h = min(self.y1, other.y1) - max(self.y0, other.y0)
        if w <= 0 or h <= 0:
            return 0.0
        return w * h

    def clip(self, width: float, height: float) -> "Box | None":
        """Intersect with ``[0, width] x [0, height]``; None if nothing is left."""
        x0, y0 = max(self.x0, 0.0), max(self.y0, 0.0)
        x1, y1 = min(self.x1, float(width)), min(self.y1, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return Box(x0, y0, x1, y1)


class HierarchyScheme(enum.Enum):
    NON_OVERLAPPED = "non-overlapped"
    OVERLAPPED = "overlapped"

    @classmethod
    def parse(cls, name: "str | HierarchyScheme") -> "HierarchyScheme":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("_", "-")
        for scheme in cls:
            if scheme.value == key:
                return scheme
        raise ValueError(f"unknown hierarchy scheme {name!r}")

    @property
    def area_ratio(self) -> float:
        """Child area as a fraction of its parent's area."""
        return 0.25 if self is HierarchyScheme.NON_OVERLAPPED else 9.0 / 16.0


def iou(a: Box, b: Box) -> float:
    inter = a.intersection_area(b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def children(parent: Box, scheme: HierarchyScheme) -> list[Box]:
    """The five child regions of ``parent`` in action order (TL, TR, BL, BR, C)."""
    x0, y0, x1, y1 = parent.as_tuple()
    w, h = parent.width, parent.height
    if scheme is HierarchyScheme.NON_OVERLAPPED:
        xm, ym = x0 + w / 2, y0 + h / 2
        return [
            Box(x0, y0, xm, ym),
            Box(xm, y0, x1, ym),
            Box(x0, ym, xm, y1),
            Box(xm, ym, x1, y1),
            Box(x0 + w / 4, y0 + h / 4, x1 - w / 4, y1 - h / 4),
        ]
    # Overlapped: 3/4-size children flush with each corner, plus one centered.
    cw, ch = 0.75 * w, 0.75 * h
    return [
        Box(x0, y0, x0 + cw, y0 + ch),
        Box(x1 - cw, y0, x1, y0 + ch),
        Box(x0, y1 - ch, x0 + cw, y1),
        Box(x1 - cw, y1 - ch, x1, y1),
        Box(x0 + w / 8, y0 + h / 8, x1 - w / 8, y1 - h / 8),
    ]


def iter_nodes(root: Box, scheme: HierarchyScheme, max_depth: int) -> Iterator[tuple[int, Box]]:
    """Breadth-first ``(depth, box)`` over every node down to ``max_depth``."""
    level = [root]
    for depth in range(max_depth + 1):
        for box in level:
            yield depth, box
        if depth < max_depth:
            level = [c for box in level for c in children(box, scheme)]


def count_nodes(max_depth: int) -> int:
    return sum(5 ** d for d in range(max_depth + 1))


# Vectorised variants used by the coverage analysis. Boxes are (N, 4) arrays.

def child_arrays(parents: np.ndarray, scheme: HierarchyScheme) -> np.ndarray:
    """(N, 4) parents -> (5N, 4) children, grouped per parent in action order."""
    x0, y0, x1, y1 = (parents[:, i] for i in range(4))
    w, h = x1 - x0, y1 - y0
    if scheme is HierarchyScheme.NON_OVERLAPPED:
        xm, ym = x0 + w / 2, y0 + h / 2
        kids = [
            (x0, y0, xm, ym),
            (xm, y0, x1, ym),
            (x0, ym, xm, y1),
            (xm, ym, x1, y1),
            (x0 + w / 4, y0 + h / 4, x1 - w / 4, y1 - h / 4),
        ]
    else:
        cw, ch = 0.75 * w, 0.75 * h
        kids = [
            (x0, y0, x0 + cw, y0 + ch),
            (x1 - cw, y0, x1, y0 + ch),
            (x0, y1 - ch, x0 + cw, y1),
            (x1 - cw, y1 - ch, x1, y1),
            (x0 + w / 8, y0 + h / 8, x1 - w / 8, y1 - h / 8),
        ]
    out = np.stack([np.stack(k, axis=1) for k in kids], axis=1)
    return out.reshape(-1, 4)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) box arrays."""
    a = np.asarray(a, dtype=np.float64)[:, None, :]
    b = np.asarray(b, dtype=np.float64)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    return inter / (area_a + area_b - inter)
