"""Ellipse regions, pixel-grid membership tests, and grid isometries.

Coordinates are (row, col) with pixel centers at integer positions; angles
are measured from the +col axis toward the +row axis.

The mask helpers used for dataset construction (`axis_ellipse_mask`,
`circle_mask`) evaluate membership with sums/products of coordinate
differences only (no trig), so they commute bitwise with the six grid
isometries used for augmentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

AUG_TAGS = ("orig", "rot90", "rot180", "rot270", "flipH", "flipV")


@dataclass(frozen=True)
class EllipseRegion:
    """Rotated ellipse: center (row, col), semi-axes in pixels, radians."""

    center: tuple[float, float]
    semi_major: float
    semi_minor: float
    rotation: float = 0.0

    def __post_init__(self):
        if not (self.semi_major >= self.semi_minor > 0):
            raise ContractError(
                "ellipse requires semi_major >= semi_minor > 0, got "
                f"({self.semi_major}, {self.semi_minor})"
            )

    def contains(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        dr = np.asarray(rows, dtype=np.float64) - self.center[0]
        dc = np.asarray(cols, dtype=np.float64) - self.center[1]
        ct, st = math.cos(self.rotation), math.sin(self.rotation)
        along = dc * ct + dr * st
        across = -dc * st + dr * ct
        return (along / self.semi_major) ** 2 + (across / self.semi_minor) ** 2 <= 1.0

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        rr, cc = np.meshgrid(np.arange(shape[0]), np.arange(shape[1]),
                             indexing="ij")
        return self.contains(rr, cc)

    def to_json_dict(self) -> dict:
        return {
            "center": [self.center[0], self.center[1]],
            "semi_major": self.semi_major,
            "semi_minor": self.semi_minor,
            "rotation": self.rotation,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EllipseRegion":
        return cls(center=(float(doc["center"][0]), float(doc["center"][1])),
                   semi_major=float(doc["semi_major"]),
                   semi_minor=float(doc["semi_minor"]),
                   rotation=float(doc.get("rotation", 0.0)))


@dataclass(frozen=True)
class CircleRegion:
    """Disk: center (row, col) and radius in pixels."""

    center: tuple[float, float]
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ContractError(f"circle radius must be positive, got {self.radius}")

    def mask(self, shape: tuple[int, int]) -> np.ndarray:
        return circle_mask(shape, self.center, self.radius)

    def to_json_dict(self) -> dict:
        return {"center": [self.center[0], self.center[1]],
                "radius": self.radius}

    @classmethod
    def from_json_dict(cls, doc: dict) -> "CircleRegion":
        return cls(center=(float(doc["center"][0]), float(doc["center"][1])),
                   radius=float(doc["radius"]))


def ellipse_from_endpoints(p: tuple[float, float], q: tuple[float, float],
                           axis_ratio: float = 3.0) -> EllipseRegion:
    """Ellipse whose major axis is the segment p-q (3:1 axes by default).

    The minor semi-axis is computed first and the major one as exactly
    ``axis_ratio * semi_minor`` so the stored ratio is exact.
    """
    d = math.hypot(q[0] - p[0], q[1] - p[1])
    if d == 0.0:
        raise ContractError("ellipse endpoints coincide")
    semi_minor = d / (2.0 * axis_ratio)
    center = ((p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0)
    rotation = math.atan2(q[0] - p[0], q[1] - p[1]) % math.pi
    return EllipseRegion(center=center, semi_major=axis_ratio * semi_minor,
                         semi_minor=semi_minor, rotation=rotation)


def axis_ellipse_mask(shape: tuple[int, int], p: tuple[float, float],
                      q: tuple[float, float], axis_ratio: float = 3.0
                      ) -> np.ndarray:
    """Pixel mask of the ellipse with major axis p-q and the given axis ratio.

    Membership is ``(u.v)^2 + ratio^2 * cross(u, v)^2 <= (v.v)^2`` with
    v = (q - p)/2 and u the pixel offset from the midpoint: an exact-arithmetic
    form that commutes with grid rotations and mirrors.
    """
    vr = (q[0] - p[0]) / 2.0
    vc = (q[1] - p[1]) / 2.0
    cr = (p[0] + q[0]) / 2.0
    cc_ = (p[1] + q[1]) / 2.0
    rr, cc = np.meshgrid(np.arange(shape[0], dtype=np.float64),
                         np.arange(shape[1], dtype=np.float64), indexing="ij")
    ur = rr - cr
    uc = cc - cc_
    dot = ur * vr + uc * vc
    cross = ur * vc - uc * vr
    vv = vr * vr + vc * vc
    return dot * dot + (axis_ratio * axis_ratio) * (cross * cross) <= vv * vv


def circle_mask(shape: tuple[int, int], center: tuple[float, float],
                radius: float) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(shape[0], dtype=np.float64),
                         np.arange(shape[1], dtype=np.float64), indexing="ij")
    ur = rr - center[0]
    uc = cc - center[1]
    return ur * ur + uc * uc <= radius * radius


# ---------------------------------------------------------------------------
# Grid isometries (augmentation)
# ---------------------------------------------------------------------------


def transform_image(arr: np.ndarray, tag: str) -> np.ndarray:
    if tag == "orig":
        return arr.copy()
    if tag == "rot90":
        return np.rot90(arr, 1).copy()
    if tag == "rot180":
        return np.rot90(arr, 2).copy()
    if tag == "rot270":
        return np.rot90(arr, 3).copy()
    if tag == "flipH":
        return np.fliplr(arr).copy()
    if tag == "flipV":
        return np.flipud(arr).copy()
    raise ContractError(f"unknown augmentation tag {tag!r}")


def transform_point(point: tuple[float, float], tag: str,
                    shape: tuple[int, int]) -> tuple[float, float]:
    """Map a (row, col) pixel-center coordinate the way transform_image does."""
    r, c = point
    h, w = shape
    if tag == "orig":
        return (r, c)
    if tag == "rot90":
        return (w - 1 - c, r)
    if tag == "rot180":
        return (h - 1 - r, w - 1 - c)
    if tag == "rot270":
        return (c, h - 1 - r)
    if tag == "flipH":
        return (r, w - 1 - c)
    if tag == "flipV":
        return (h - 1 - r, c)
    raise ContractError(f"unknown augmentation tag {tag!r}")


def transform_angle(theta: float, tag: str) -> float:
    """Transform an axis angle consistently with transform_point (mod pi)."""
    if tag == "orig":
        out = theta
    elif tag == "rot90":
        out = theta - math.pi / 2.0
    elif tag == "rot180":
        out = theta
    elif tag == "rot270":
        out = theta + math.pi / 2.0
    elif tag == "flipH":
        out = math.pi - theta
    elif tag == "flipV":
        out = -theta
    else:
        raise ContractError(f"unknown augmentation tag {tag!r}")
    return out % math.pi
