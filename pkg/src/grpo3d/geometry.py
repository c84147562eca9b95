"""Axis-aligned 3D boxes and their intersection-over-union."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Aabb3:
    """Axis-aligned box given by its min and max corners (meters).

    Zero-volume boxes are allowed.
    """

    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.min)
        hi = tuple(float(v) for v in self.max)
        if len(lo) != 3 or len(hi) != 3:
            raise ValueError("Aabb3 corners must be 3-vectors")
        if not all(math.isfinite(v) for v in lo + hi):
            raise ValueError(f"non-finite box coordinates: {lo} {hi}")
        if any(l > h for l, h in zip(lo, hi)):
            raise ValueError(f"box min exceeds max: {lo} > {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_center_size(cls, center, size) -> "Aabb3":
        c = np.asarray(center, dtype=float)
        h = np.asarray(size, dtype=float) / 2.0
        return cls(tuple(c - h), tuple(c + h))

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.min) + np.asarray(self.max)) / 2.0

    @property
    def size(self) -> np.ndarray:
        return np.asarray(self.max) - np.asarray(self.min)

    def volume(self) -> float:
        return float(np.prod(self.size))

    def shifted(self, delta) -> "Aabb3":
        d = np.asarray(delta, dtype=float)
        return Aabb3(tuple(np.asarray(self.min) + d), tuple(np.asarray(self.max) + d))

    def contains_box(self, other: "Aabb3") -> bool:
        return all(a <= b for a, b in zip(self.min, other.min)) and all(
            a >= b for a, b in zip(self.max, other.max)
        )

    def to_dict(self) -> dict:
        return {"min": list(self.min), "max": list(self.max)}

    @classmethod
    def from_dict(cls, d: dict) -> "Aabb3":
        return cls(tuple(d["min"]), tuple(d["max"]))


def intersection_volume(a: Aabb3, b: Aabb3) -> float:
    vol = 1.0
    for k in range(3):
        side = min(a.max[k], b.max[k]) - max(a.min[k], b.min[k])
        if side <= 0.0:
            return 0.0
        vol *= side
    return vol


def iou(a: Aabb3, b: Aabb3) -> float:
    """Volume IoU of two boxes; 0 when the union has zero volume."""
    inter = intersection_volume(a, b)
    union = a.volume() + b.volume() - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))
