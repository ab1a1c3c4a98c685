"""Channel geometries and the geometry-dependent interaction-radius field.

A :class:`CaseGeometry` is a rectangular channel (2D) or box (3D), optionally
with a circular cylinder spanning the full width (axis along z). That family
covers every case in the workbench: unit boxes for cloud tests, the straight
desk channel, and the channel-with-cylinder benchmark.

Both the geometry and the :class:`RefinementField` can be flattened to small
float arrays (``pack()``) so the numba kernels can evaluate containment and
the local interaction radius without Python objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Point kinds (also the integer encoding used by the kernels).
KIND_INTERIOR = 0
KIND_WALL = 1
KIND_INFLOW = 2
KIND_OUTFLOW = 3
KIND_OBSTACLE = 4

KIND_NAMES = {
    KIND_INTERIOR: "interior",
    KIND_WALL: "wall",
    KIND_INFLOW: "inflow",
    KIND_OUTFLOW: "outflow",
    KIND_OBSTACLE: "obstacle",
}
KIND_CODES = {v: k for k, v in KIND_NAMES.items()}


@dataclass(frozen=True)
class RefinementField:
    """Interaction-radius field: ``h_min`` within ``inner_radius`` of the
    refinement center (distance measured from a core of radius
    ``core_radius``, e.g. a cylinder surface), ``h_max`` beyond
    ``inner_radius + transfer_width``, linear in between.
    """

    h_min: float
    h_max: float
    center: tuple[float, float] = (0.0, 0.0)
    core_radius: float = 0.0
    inner_radius: float = 0.0
    transfer_width: float = 0.5

    def __post_init__(self):
        if not (0.0 < self.h_min <= self.h_max):
            raise ValueError(f"need 0 < h_min <= h_max, got {self.h_min}, {self.h_max}")
        if self.inner_radius < 0 or self.transfer_width < 0:
            raise ValueError("inner_radius and transfer_width must be >= 0")

    @classmethod
    def uniform(cls, h: float) -> "RefinementField":
        return cls(h_min=h, h_max=h)

    def __call__(self, x) -> np.ndarray | float:
        """Interaction radius at position(s) x (shape (d,) or (n, d))."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None, :] if single else x
        dx = pts[:, 0] - self.center[0]
        dy = pts[:, 1] - self.center[1]
        dist = np.maximum(np.hypot(dx, dy) - self.core_radius, 0.0)
        if self.transfer_width <= 0.0:
            h = np.where(dist <= self.inner_radius, self.h_min, self.h_max)
        else:
            t = np.clip((dist - self.inner_radius) / self.transfer_width, 0.0, 1.0)
            h = self.h_min + (self.h_max - self.h_min) * t
        return float(h[0]) if single else h

    def pack(self) -> np.ndarray:
        return np.array(
            [
                self.center[0],
                self.center[1],
                self.core_radius,
                self.inner_radius,
                self.transfer_width,
                self.h_min,
                self.h_max,
            ],
            dtype=np.float64,
        )


def interaction_radius(field_: RefinementField, x) -> float:
    """Local interaction radius h(x); total on all of R^d."""
    return field_(x)


@dataclass(frozen=True)
class CaseGeometry:
    """Rectangular channel [0,L]x[0,H](x[0,W]) with an optional cylinder."""

    dim: int
    length: float
    height: float
    width: float = 0.0  # z extent, 3D only
    cylinder_center: tuple[float, float] | None = None
    cylinder_diameter: float = 0.0
    # kind per boundary patch; walls by default, override e.g. for test boxes
    inflow_kind: int = KIND_INFLOW
    outflow_kind: int = KIND_OUTFLOW
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if self.length <= 0 or self.height <= 0 or (self.dim == 3 and self.width <= 0):
            raise ValueError("channel extents must be positive")
        if self.has_cylinder:
            cx, cy = self.cylinder_center
            r = self.cylinder_radius
            if not (r < cx < self.length - r and r < cy < self.height - r):
                raise ValueError("cylinder must lie strictly inside the channel")

    @property
    def has_cylinder(self) -> bool:
        return self.cylinder_center is not None and self.cylinder_diameter > 0.0

    @property
    def cylinder_radius(self) -> float:
        return 0.5 * self.cylinder_diameter

    @property
    def bounds(self) -> np.ndarray:
        zhi = self.width if self.dim == 3 else 0.0
        return np.array([[0.0, self.length], [0.0, self.height], [0.0, zhi]])

    def volume(self) -> float:
        base = self.length * self.height
        if self.has_cylinder:
            base -= math.pi * self.cylinder_radius**2
        return base * (self.width if self.dim == 3 else 1.0)

    def min_feature(self) -> float:
        """Smallest geometric length scale (controls feasibility of spacing)."""
        scales = [self.length, self.height]
        if self.dim == 3:
            scales.append(self.width)
        if self.has_cylinder:
            scales.append(self.cylinder_diameter)
        return min(scales)

    def contains(self, pts: np.ndarray, pad: float = 0.0) -> np.ndarray:
        """Strict interior test for points of shape (n, 3); z ignored in 2D."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = (
            (pts[:, 0] > pad)
            & (pts[:, 0] < self.length - pad)
            & (pts[:, 1] > pad)
            & (pts[:, 1] < self.height - pad)
        )
        if self.dim == 3:
            ok &= (pts[:, 2] > pad) & (pts[:, 2] < self.width - pad)
        if self.has_cylinder:
            cx, cy = self.cylinder_center
            rr = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
            ok &= rr > (self.cylinder_radius + pad) ** 2
        return ok

    def pack(self) -> np.ndarray:
        """Flat encoding for the kernels:
        [dim, xhi, yhi, zhi, cyl_flag, cyl_cx, cyl_cy, cyl_r]."""
        cx, cy = self.cylinder_center if self.has_cylinder else (0.0, 0.0)
        return np.array(
            [
                float(self.dim),
                self.length,
                self.height,
                self.width if self.dim == 3 else 0.0,
                1.0 if self.has_cylinder else 0.0,
                cx,
                cy,
                self.cylinder_radius,
            ],
            dtype=np.float64,
        )

    # --- boundary patches -------------------------------------------------

    def patches(self) -> list[dict]:
        """Boundary patch descriptors consumed by the cloud generator.

        2D patches are segments (with a fixed inward normal) or the cylinder
        circle; 3D adds box faces and the cylinder tube. Normals point into
        the fluid.
        """
        L, H = self.length, self.height
        out = []
        if self.dim == 2:
            out.append(_seg((0, 0), (0, H), self.inflow_kind, (1.0, 0.0)))
            out.append(_seg((L, 0), (L, H), self.outflow_kind, (-1.0, 0.0)))
            out.append(_seg((0, 0), (L, 0), KIND_WALL, (0.0, 1.0)))
            out.append(_seg((0, H), (L, H), KIND_WALL, (0.0, -1.0)))
            if self.has_cylinder:
                out.append(
                    {
                        "type": "circle",
                        "center": self.cylinder_center,
                        "radius": self.cylinder_radius,
                        "kind": KIND_OBSTACLE,
                    }
                )
        else:
            W = self.width
            out.append(_face(0, 0.0, (0, H), (0, W), self.inflow_kind, (1, 0, 0)))
            out.append(_face(0, L, (0, H), (0, W), self.outflow_kind, (-1, 0, 0)))
            out.append(_face(1, 0.0, (0, L), (0, W), KIND_WALL, (0, 1, 0)))
            out.append(_face(1, H, (0, L), (0, W), KIND_WALL, (0, -1, 0)))
            out.append(_face(2, 0.0, (0, L), (0, H), KIND_WALL, (0, 0, 1)))
            out.append(_face(2, W, (0, L), (0, H), KIND_WALL, (0, 0, -1)))
            if self.has_cylinder:
                out.append(
                    {
                        "type": "tube",
                        "center": self.cylinder_center,
                        "radius": self.cylinder_radius,
                        "z": (0.0, W),
                        "kind": KIND_OBSTACLE,
                    }
                )
        return out

    def to_dict(self) -> dict:
        d = {
            "dim": self.dim,
            "length": self.length,
            "height": self.height,
            "width": self.width,
        }
        if self.has_cylinder:
            d["cylinder_center"] = list(self.cylinder_center)
            d["cylinder_diameter"] = self.cylinder_diameter
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaseGeometry":
        center = d.get("cylinder_center")
        return cls(
            dim=int(d["dim"]),
            length=float(d["length"]),
            height=float(d["height"]),
            width=float(d.get("width", 0.0)),
            cylinder_center=tuple(center) if center else None,
            cylinder_diameter=float(d.get("cylinder_diameter", 0.0)),
        )


def _seg(p0, p1, kind, normal):
    return {
        "type": "segment",
        "p0": (float(p0[0]), float(p0[1])),
        "p1": (float(p1[0]), float(p1[1])),
        "kind": kind,
        "normal": (float(normal[0]), float(normal[1])),
    }


def _face(axis, value, us, vs, kind, normal):
    return {
        "type": "face",
        "axis": axis,
        "value": float(value),
        "u_range": (float(us[0]), float(us[1])),
        "v_range": (float(vs[0]), float(vs[1])),
        "kind": kind,
        "normal": tuple(float(c) for c in normal),
    }
