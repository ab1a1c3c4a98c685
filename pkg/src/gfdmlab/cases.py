"""Channel-with-cylinder benchmark definitions.

Two variants:

* ``desk2d`` — the 2D cross-section with unit depth and the channel
  shortened to 1.2 m so a run finishes at desk scale. The inflow parabola
  uses the 2D convention (U_m = 1.5 m/s) so the mean velocity and the
  Reynolds number match the 3D setup (u_bar = 1, Re = 100).
* ``paper3d`` — the full 3D channel (2.5 x 0.41 x 0.41 m, cylinder diameter
  0.1 m positioned 0.41 m downstream and 0.15 m above the bottom wall),
  intended for coarse smoke runs only.

The radial refinement keeps h = Hmin up to 0.17 m from the cylinder surface
and ramps linearly to Hmax across a configurable transfer width.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from gfdmlab import errors
from gfdmlab.geometry import CaseGeometry, RefinementField

INNER_REFINEMENT_RADIUS = 0.17  # m, from the cylinder surface
DEFAULT_TRANSFER_WIDTH = 0.5    # m


@dataclass(frozen=True)
class FluidParams:
    nu: float = 1e-3     # kinematic viscosity, m^2/s
    rho: float = 1.0     # density, kg/m^3
    u_m: float = 2.25    # peak inflow velocity, m/s
    t_end: float = 2.0   # simulated horizon, s


@dataclass(frozen=True)
class Case:
    name: str
    geometry: CaseGeometry
    fluid: FluidParams
    transfer_width: float = DEFAULT_TRANSFER_WIDTH
    warm_start: bool = True  # start from the inflow profile instead of rest

    def refinement(self, h_min: float, h_max: float) -> RefinementField:
        """Interaction-radius field for given Hmin/Hmax."""
        g = self.geometry
        if g.has_cylinder:
            return RefinementField(
                h_min=h_min,
                h_max=h_max,
                center=g.cylinder_center,
                core_radius=g.cylinder_radius,
                inner_radius=INNER_REFINEMENT_RADIUS,
                transfer_width=self.transfer_width,
            )
        return RefinementField.uniform(h_min)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "geometry": self.geometry.to_dict(),
            "fluid": {
                "nu": self.fluid.nu,
                "rho": self.fluid.rho,
                "u_m": self.fluid.u_m,
                "t_end": self.fluid.t_end,
            },
            "transfer_width": self.transfer_width,
            "warm_start": self.warm_start,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Case":
        return cls(
            name=d["name"],
            geometry=CaseGeometry.from_dict(d["geometry"]),
            fluid=FluidParams(**d["fluid"]),
            transfer_width=float(d.get("transfer_width", DEFAULT_TRANSFER_WIDTH)),
            warm_start=bool(d.get("warm_start", True)),
        )


def inflow_velocity(y: float, z: float, geom: CaseGeometry, fluid: FluidParams) -> float:
    """Streamwise inflow velocity at (y, z); tangential components are zero.

    3D: 16 U_m y z (H-y)(H-z) / H^4.  2D: the parabola 4 U_m y (H-y) / H^2
    (z is ignored).
    """
    H = geom.height
    if y < 0.0 or y > H:
        raise errors.OutOfChannel(f"y={y} outside [0, {H}]")
    if geom.dim == 3:
        if z < 0.0 or z > geom.width:
            raise errors.OutOfChannel(f"z={z} outside [0, {geom.width}]")
        return 16.0 * fluid.u_m * y * z * (H - y) * (geom.width - z) / H**4
    return 4.0 * fluid.u_m * y * (H - y) / H**2


def mean_velocity_and_reynolds(geom: CaseGeometry, fluid: FluidParams) -> tuple[float, float]:
    """(u_bar, Re) with Re based on the cylinder diameter (channel height
    when there is no cylinder).

    u_bar = 4 u_center / 9 in 3D and 2 u_center / 3 in 2D, where u_center is
    the inflow profile at the cross-section center (= U_m).
    """
    if geom.dim == 3:
        u_center = inflow_velocity(0.5 * geom.height, 0.5 * geom.width, geom, fluid)
        u_bar = 4.0 * u_center / 9.0
    else:
        u_center = inflow_velocity(0.5 * geom.height, 0.0, geom, fluid)
        u_bar = 2.0 * u_center / 3.0
    length_scale = geom.cylinder_diameter if geom.has_cylinder else geom.height
    return u_bar, u_bar * length_scale / fluid.nu


_ALLOWED_OVERRIDES = {
    "length", "height", "width", "cylinder", "t_end", "u_m", "nu", "rho",
    "transfer_width", "warm_start",
}


def build_case(variant: str, overrides: dict | None = None) -> Case:
    """Resolve a named case variant, optionally overriding geometry/fluid
    fields (set ``cylinder=False`` for a straight channel)."""
    overrides = dict(overrides or {})
    bad = set(overrides) - _ALLOWED_OVERRIDES
    if bad:
        raise errors.InvalidOverride(f"unknown override(s): {sorted(bad)}")

    if variant == "desk2d":
        dims = dict(dim=2, length=1.2, height=0.41)
        fluid = FluidParams(u_m=1.5, t_end=0.5)
    elif variant == "paper3d":
        dims = dict(dim=3, length=2.5, height=0.41, width=0.41)
        fluid = FluidParams(u_m=2.25, t_end=2.0)
    else:
        raise errors.InvalidOverride(f"unknown case variant {variant!r}")

    for key in ("length", "height", "width"):
        if key in overrides:
            dims[key] = float(overrides[key])
    with_cyl = overrides.get("cylinder", True)
    if with_cyl:
        d_cyl = 0.1
        dims["cylinder_center"] = (0.41 + 0.5 * d_cyl, 0.15 + 0.5 * d_cyl)
        dims["cylinder_diameter"] = d_cyl
    geometry = CaseGeometry(**dims)

    fluid = FluidParams(
        nu=float(overrides.get("nu", fluid.nu)),
        rho=float(overrides.get("rho", fluid.rho)),
        u_m=float(overrides.get("u_m", fluid.u_m)),
        t_end=float(overrides.get("t_end", fluid.t_end)),
    )
    if fluid.nu <= 0 or fluid.rho <= 0 or fluid.t_end <= 0:
        raise errors.InvalidOverride("nu, rho and t_end must be positive")
    case = Case(
        name=variant,
        geometry=geometry,
        fluid=fluid,
        transfer_width=float(overrides.get("transfer_width", DEFAULT_TRANSFER_WIDTH)),
        warm_start=bool(overrides.get("warm_start", True)),
    )
    return case


def save_case(case: Case, path) -> None:
    with open(path, "w") as f:
        json.dump(case.to_dict(), f, indent=2)


def load_case(path) -> Case:
    with open(path) as f:
        return Case.from_dict(json.load(f))
