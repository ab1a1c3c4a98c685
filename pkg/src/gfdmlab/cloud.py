"""Meshfree point-cloud management.

A cloud is a set of scattered points with a per-point interaction radius
``h`` (from the :class:`~gfdmlab.geometry.RefinementField`), a kind tag
(interior or one of the boundary kinds), and unit normals on boundary
points. Two spacing rules are maintained throughout a simulation:

* no pair closer than ``r_min * min(h_i, h_j)`` (clustering), and
* every interior point has a neighbor within ``r_max * h_i`` (gaps).

Generation places boundary points by marching the boundary patches at
~0.36 h spacing, then fills the interior with a stratified candidate sweep
(exclusion radius ``fill * h``, run to saturation) plus a targeted repair
pass for any remaining gaps. :func:`reorganize` reuses the same sweep after
points have moved, with a merge pass for too-close pairs first.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from gfdmlab import errors
from gfdmlab.backend import get_kernels
from gfdmlab.geometry import (
    KIND_CODES,
    KIND_INTERIOR,
    KIND_NAMES,
    KIND_OBSTACLE,
    CaseGeometry,
    RefinementField,
)

DEFAULT_FILL_2D = 0.35
DEFAULT_FILL_3D = 0.44  # lands interior neighborhoods in the 40-50 band
_SWEEP_ROUNDS = 24


@dataclass(frozen=True)
class SpacingParams:
    """Dimensionless clustering / gap bounds relative to the local h."""

    r_min: float = 0.2
    r_max: float = 0.4

    def __post_init__(self):
        if not (0.0 < self.r_min < self.r_max < 1.0):
            raise ValueError(f"need 0 < r_min < r_max < 1, got {self.r_min}, {self.r_max}")

    def fill_factor(self, dim: int) -> float:
        # target spacing for insertion; may exceed r_max slightly (the gap
        # repair pass restores the r_max rule), never at or below r_min
        base = DEFAULT_FILL_2D if dim == 2 else DEFAULT_FILL_3D
        return min(max(base, self.r_min * 1.05), 1.1 * self.r_max)


@dataclass(frozen=True)
class ChangeReport:
    merged: int = 0
    inserted: int = 0
    unrepaired: int = 0


@dataclass(frozen=True)
class Point:
    id: int
    position: np.ndarray
    h: float
    kind: str
    normal: np.ndarray | None


@dataclass
class PointCloud:
    """Immutable-by-convention container; operations return new clouds."""

    geometry: CaseGeometry
    field: RefinementField
    pos: np.ndarray      # (n, 3), z = 0 in 2D
    h: np.ndarray        # (n,)
    kinds: np.ndarray    # (n,) int codes
    normals: np.ndarray  # (n, 3), zeros for interior
    weights: np.ndarray  # (n,) surface quadrature weight, 0 off-boundary
    ids: np.ndarray      # (n,) int64, strictly increasing
    seed: int = 0
    reorg_count: int = 0
    time: float = 0.0
    _nbr: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.geometry.dim

    @property
    def n(self) -> int:
        return self.pos.shape[0]

    @property
    def interior_mask(self) -> np.ndarray:
        return self.kinds == KIND_INTERIOR

    @property
    def boundary_mask(self) -> np.ndarray:
        return self.kinds != KIND_INTERIOR

    def index_of(self, point_id: int) -> int:
        k = int(np.searchsorted(self.ids, point_id))
        if k >= self.n or self.ids[k] != point_id:
            raise errors.UnknownPoint(f"no point with id {point_id}")
        return k

    def point(self, point_id: int) -> Point:
        i = self.index_of(point_id)
        normal = self.normals[i, : self.dim] if self.kinds[i] != KIND_INTERIOR else None
        return Point(
            id=int(self.ids[i]),
            position=self.pos[i, : self.dim].copy(),
            h=float(self.h[i]),
            kind=KIND_NAMES[int(self.kinds[i])],
            normal=None if normal is None else normal.copy(),
        )

    # --- neighborhoods -----------------------------------------------------

    def neighbor_cell_size(self) -> float:
        return 0.35 * float(self.h.min())

    def neighbors(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """CSR neighbor structure (indptr, indices, dist2); cached."""
        if self._nbr is None:
            k = get_kernels()
            alive = np.ones(self.n, dtype=np.bool_)
            indptr, indices, dist2 = k.neighbor_csr(
                self.pos, self.h, alive, self.n, self.dim, self.neighbor_cell_size()
            )
            object.__setattr__(self, "_nbr", (indptr, indices, dist2))
        return self._nbr

    def drop_neighbor_cache(self) -> None:
        object.__setattr__(self, "_nbr", None)


def find_neighbors(cloud: PointCloud, point_id: int) -> list[int]:
    """Ids of S_i = {j : |x_j - x_i| <= h_i}, ascending by distance,
    including the point itself."""
    i = cloud.index_of(point_id)
    indptr, indices, _ = cloud.neighbors()
    row = indices[indptr[i] : indptr[i + 1]]
    return [int(cloud.ids[j]) for j in row]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------

def _march_1d(length: float, step_at) -> np.ndarray:
    """Arc-length knots over [0, length] with local step step_at(t);
    both endpoints included, end gap kept >= 0.55 of a local step."""
    ts = [0.0]
    while True:
        s = step_at(ts[-1])
        t = ts[-1] + s
        if t >= length - 0.55 * s:
            break
        ts.append(t)
    ts.append(length)
    return np.asarray(ts)


def _boundary_points_2d(geom: CaseGeometry, fld: RefinementField, bstep: float):
    pts, kinds, normals, weights = [], [], [], []
    for patch in geom.patches():
        if patch["type"] == "segment":
            p0 = np.array(patch["p0"])
            p1 = np.array(patch["p1"])
            L = float(np.linalg.norm(p1 - p0))
            u = (p1 - p0) / L
            ts = _march_1d(L, lambda t: bstep * fld(p0 + u * t))
            for t in ts:
                p = p0 + u * t
                pts.append((p[0], p[1], 0.0))
                kinds.append(patch["kind"])
                normals.append((patch["normal"][0], patch["normal"][1], 0.0))
                weights.append(0.0)
        elif patch["type"] == "circle":
            c = np.array(patch["center"])
            r = patch["radius"]
            h_c = fld((c[0] + r, c[1]))
            n_c = max(8, int(math.ceil(2.0 * math.pi * r / (bstep * h_c))))
            ds = 2.0 * math.pi * r / n_c
            for q in range(n_c):
                ang = 2.0 * math.pi * q / n_c
                nx, ny = math.cos(ang), math.sin(ang)
                pts.append((c[0] + r * nx, c[1] + r * ny, 0.0))
                kinds.append(patch["kind"])
                normals.append((nx, ny, 0.0))
                weights.append(ds)
    return pts, kinds, normals, weights


def _boundary_points_3d(geom: CaseGeometry, fld: RefinementField, bstep: float, seed: int):
    """Faces of the box (column marching / 2D sweep for z-faces) + cylinder tube."""
    pts, kinds, normals, weights = [], [], [], []
    L, H, W = geom.length, geom.height, geom.width

    def add(p, kind, normal, w=0.0):
        pts.append((p[0], p[1], p[2]))
        kinds.append(kind)
        normals.append(normal)
        weights.append(w)

    for patch in geom.patches():
        if patch["type"] == "face":
            axis = patch["axis"]
            if axis == 2:
                continue  # z-faces handled by the 2D sweep below
            val = patch["value"]
            nrm = patch["normal"]
            if axis == 0:  # x = val: u -> y, columns along z; h = h(val, y)
                ys = _march_1d(H, lambda y: bstep * fld((val, y)))
                for y in ys:
                    hc = fld((val, y))
                    for z in _march_1d(W, lambda _t, hc=hc: bstep * hc):
                        add((val, y, z), patch["kind"], nrm)
            else:  # y = val: u -> x, columns along z; h = h(x, val)
                xs = _march_1d(L, lambda x: bstep * fld((x, val)))
                for x in xs:
                    hc = fld((x, val))
                    for z in _march_1d(W, lambda _t, hc=hc: bstep * hc):
                        add((x, val, z), patch["kind"], nrm)
        elif patch["type"] == "tube":
            c = patch["center"]
            r = patch["radius"]
            h_c = fld((c[0] + r, c[1]))
            n_phi = max(8, int(math.ceil(2.0 * math.pi * r / (bstep * h_c))))
            zs = _march_1d(W, lambda _t: bstep * h_c)
            ds_phi = 2.0 * math.pi * r / n_phi
            dz = W / max(len(zs) - 1, 1)
            for q in range(n_phi):
                ang = 2.0 * math.pi * q / n_phi
                nx, ny = math.cos(ang), math.sin(ang)
                for z in zs:
                    add((c[0] + r * nx, c[1] + r * ny, z), patch["kind"],
                        (nx, ny, 0.0), ds_phi * dz)

    # z = 0 and z = W walls: fill the channel cross-section with the 2D sweep
    xs_geom = CaseGeometry(
        dim=2, length=L, height=H,
        cylinder_center=geom.cylinder_center,
        cylinder_diameter=geom.cylinder_diameter,
    )
    for face_i, (zval, nz) in enumerate(((0.0, 1.0), (W, -1.0))):
        ring = [p for p in pts if abs(p[2] - zval) < 1e-12]
        face_pts = _sweep_fill_2d(xs_geom, fld, bstep, np.array(ring, dtype=float),
                                  seed=seed * 7919 + face_i)
        for p in face_pts:
            add((p[0], p[1], zval), patch_kind_wall(), (0.0, 0.0, nz))
    return pts, kinds, normals, weights


def patch_kind_wall() -> int:
    from gfdmlab.geometry import KIND_WALL

    return KIND_WALL


def _sweep_fill_2d(geom2: CaseGeometry, fld: RefinementField, fill: float,
                   existing: np.ndarray, seed: int) -> np.ndarray:
    """Stratified 2D fill of a cross-section given existing rim points;
    returns only the newly inserted (x, y) positions."""
    k = get_kernels()
    n0 = existing.shape[0]
    est = _count_estimate(geom2, fld, fill, 2)
    cap = n0 + int(est * 1.4) + 4096
    pos = np.zeros((cap, 3))
    if n0:
        pos[:n0, :2] = existing[:, :2]
    hs = np.zeros(cap)
    kinds = np.zeros(cap, dtype=np.int64)
    kinds[:n0] = 1
    alive = np.zeros(cap, dtype=np.bool_)
    alive[:n0] = True
    strat = fill * fld.h_min
    n, _, _, _ = k.reorg_core(
        pos, hs, kinds, alive, n0, 2, geom2.pack(), fld.pack(),
        0.0, 10.0, fill, _SWEEP_ROUNDS, seed, False, strat,
    )
    if n < 0:
        raise errors.InfeasibleSpacing("cross-section fill exceeded capacity estimate")
    return pos[n0:n, :2]


def _count_estimate(geom: CaseGeometry, fld: RefinementField, fill: float, dim: int) -> float:
    """Saturation density integrated on a coarse probe grid."""
    nb = 160
    xs = np.linspace(0, geom.length, nb)
    ys = np.linspace(0, geom.height, nb)
    X, Y = np.meshgrid(xs, ys)
    probes = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    inside = geom.contains(probes)
    h = fld(probes[:, :2])
    cell_a = (geom.length / nb) * (geom.height / nb)
    if dim == 2:
        dens = 0.696 / (fill * h) ** 2
        return float((dens * inside).sum() * cell_a)
    dens = 0.733 / (fill * h) ** 3
    return float((dens * inside).sum() * cell_a * geom.width)


def generate_cloud(
    geometry: CaseGeometry,
    fld: RefinementField,
    spacing: SpacingParams,
    seed: int,
    max_points: int = 2_000_000,
) -> PointCloud:
    """Boundary-first cloud generation satisfying the spacing rules.

    Deterministic for fixed (geometry, field, spacing, seed).
    """
    if geometry.min_feature() < spacing.r_min * fld.h_min:
        raise errors.InfeasibleSpacing(
            f"smallest feature {geometry.min_feature():g} m below "
            f"r_min*h_min = {spacing.r_min * fld.h_min:g} m"
        )
    fill = spacing.fill_factor(geometry.dim)
    bstep = 0.36
    est = _count_estimate(geometry, fld, fill, geometry.dim)
    if est > max_points:
        raise errors.InfeasibleSpacing(
            f"resolution asks for ~{est:.0f} interior points, cap is {max_points}"
        )

    if geometry.dim == 2:
        pts, kinds, normals, weights = _boundary_points_2d(geometry, fld, bstep)
    else:
        pts, kinds, normals, weights = _boundary_points_3d(geometry, fld, bstep, seed)

    bpos = np.asarray(pts, dtype=float)
    # dedupe corner points shared between patches (first wins)
    keep = np.ones(len(pts), dtype=bool)
    for i in range(len(pts)):
        if not keep[i]:
            continue
        d = np.linalg.norm(bpos[i + 1 :] - bpos[i], axis=1)
        keep[i + 1 :] &= d > 1e-12
    bpos = bpos[keep]
    bkinds = np.asarray(kinds, dtype=np.int64)[keep]
    bnormals = np.asarray(normals, dtype=float)[keep]
    bweights = np.asarray(weights, dtype=float)[keep]

    n0 = bpos.shape[0]
    cap = n0 + int(est * 1.4) + 4096
    k = get_kernels()
    for _attempt in range(4):
        pos = np.zeros((cap, 3))
        pos[:n0] = bpos
        hs = np.zeros(cap)
        kindbuf = np.zeros(cap, dtype=np.int64)
        kindbuf[:n0] = bkinds
        alive = np.zeros(cap, dtype=np.bool_)
        alive[:n0] = True
        strat = fill * fld.h_min
        n, _, n_ins, n_bad = k.reorg_core(
            pos, hs, kindbuf, alive, n0, geometry.dim, geometry.pack(), fld.pack(),
            spacing.r_min, spacing.r_max, fill, _SWEEP_ROUNDS, seed, False, strat,
        )
        if n >= 0:
            break
        cap = int(cap * 1.6) + 4096
    else:
        raise errors.InfeasibleSpacing("point generation exceeded capacity")

    normals_full = np.zeros((n, 3))
    normals_full[:n0] = bnormals
    weights_full = np.zeros(n)
    weights_full[:n0] = bweights
    cloud = PointCloud(
        geometry=geometry,
        field=fld,
        pos=pos[:n].copy(),
        h=hs[:n].copy(),
        kinds=kindbuf[:n].copy(),
        normals=normals_full,
        weights=weights_full,
        ids=np.arange(n, dtype=np.int64),
        seed=seed,
    )
    return cloud


# ---------------------------------------------------------------------------
# reorganize
# ---------------------------------------------------------------------------

_EXPS_CACHE: dict[tuple[int, int], np.ndarray] = {}


def monomial_exponents(order: int, dim: int) -> np.ndarray:
    """All exponent triples with |alpha| <= order (z exponents 0 in 2D),
    graded-lexicographic order."""
    key = (order, dim)
    if key not in _EXPS_CACHE:
        rows = []
        for total in range(order + 1):
            for ex in range(total, -1, -1):
                for ey in range(total - ex, -1, -1):
                    ez = total - ex - ey
                    if dim == 2 and ez > 0:
                        continue
                    rows.append((ex, ey, ez))
        _EXPS_CACHE[key] = np.asarray(rows, dtype=np.int64)
    return _EXPS_CACHE[key]


def interpolate_at(
    targets: np.ndarray,
    cloud_pos: np.ndarray,
    cloud_h: np.ndarray,
    alive: np.ndarray,
    n: int,
    dim: int,
    fld: RefinementField,
    order: int,
    cw: float,
    max_n: int,
    values: dict[str, np.ndarray],
    cell: float,
) -> dict[str, np.ndarray]:
    """Least-squares interpolation of named fields at target positions with
    order fallback order -> 1 -> nearest copy."""
    k = get_kernels()
    nt = targets.shape[0]
    out = {name: np.zeros((nt,) + v.shape[1:], dtype=v.dtype) for name, v in values.items()}
    if nt == 0:
        return out
    th = np.asarray(fld(targets[:, :2]), dtype=float)
    pending = np.arange(nt)
    nearest_all = np.full(nt, -1, dtype=np.int64)
    pattern = None
    for q in range(order, 0, -1):
        exps = monomial_exponents(q, dim)
        pattern = np.zeros(exps.shape[0])
        pattern[0] = 1.0  # evaluation functional
        indptr, indices, coeffs, status, nearest = k.eval_stencil_batch(
            targets[pending], th[pending], cloud_pos, cloud_h, alive, n, dim,
            cell, exps, pattern, cw, max_n,
        )
        nearest_all[pending] = nearest
        good = status == 0
        for t_local, t in enumerate(pending):
            if not good[t_local]:
                continue
            sl = slice(indptr[t_local], indptr[t_local + 1])
            js = indices[sl]
            cs = coeffs[sl]
            for name, v in values.items():
                out[name][t] = np.tensordot(cs, v[js], axes=(0, 0))
        pending = pending[~good]
        if pending.size == 0:
            return out
    # order-0 fallback: copy from the nearest point
    for t in pending:
        j = nearest_all[t]
        if j < 0:
            raise errors.InterpolationFailure(
                f"inserted point at {targets[t][:dim]} has no neighbor in range"
            )
        for name, v in values.items():
            out[name][t] = v[j]
    return out


def reorganize(
    cloud: PointCloud,
    spacing: SpacingParams,
    fld: RefinementField,
    ord_eval: int,
    values: dict[str, np.ndarray] | None = None,
    eval_cw: float = 4.0,
    max_n_stencil: int = 40,
) -> tuple[PointCloud, ChangeReport, dict[str, np.ndarray]]:
    """Merge clustered pairs, fill gaps, rebuild the index and neighborhoods.

    ``values`` maps names to per-point arrays carried by the caller (e.g.
    velocity components); survivors keep their entries and inserted points
    receive least-squares interpolated entries of order ``ord_eval`` (with
    order fallback down to nearest-neighbor copy).
    """
    values = values or {}
    fill = spacing.fill_factor(cloud.dim)
    n0 = cloud.n
    k = get_kernels()
    est = _count_estimate(cloud.geometry, fld, fill, cloud.dim)
    cap = max(n0, int(est * 1.4)) + 4096
    sweep_seed = (cloud.seed * 1_000_003 + cloud.reorg_count + 1) & 0x7FFFFFFF
    for _attempt in range(4):
        pos = np.zeros((cap, 3))
        pos[:n0] = cloud.pos
        hs = np.zeros(cap)
        hs[:n0] = cloud.h
        kindbuf = np.zeros(cap, dtype=np.int64)
        kindbuf[:n0] = cloud.kinds
        alive = np.zeros(cap, dtype=np.bool_)
        alive[:n0] = True
        n, n_merged, n_ins, n_bad = k.reorg_core(
            pos, hs, kindbuf, alive, n0, cloud.dim, cloud.geometry.pack(), fld.pack(),
            spacing.r_min, spacing.r_max, fill, _SWEEP_ROUNDS, sweep_seed, True,
            fill * fld.h_min,
        )
        if n >= 0:
            break
        cap = int(cap * 1.6) + 4096
    else:
        raise errors.InfeasibleSpacing("reorganize exceeded capacity")

    # interpolate carried fields for inserted points against the post-merge
    # survivors of the old cloud
    new_idx = np.arange(n0, n)
    interp = interpolate_at(
        pos[new_idx], pos, hs, alive, n0, cloud.dim, fld, ord_eval, eval_cw,
        max_n_stencil, values, 0.35 * fld.h_min,
    ) if new_idx.size else {name: v[:0] for name, v in values.items()}

    survivors = np.flatnonzero(alive[:n0])
    order = np.concatenate([survivors, new_idx])
    new_pos = pos[order].copy()
    new_h = hs[order].copy()
    new_kinds = kindbuf[order].copy()
    n_new = new_idx.size
    n_surv = survivors.size

    new_normals = np.zeros((order.size, 3))
    new_normals[:n_surv] = cloud.normals[survivors]
    new_weights = np.zeros(order.size)
    new_weights[:n_surv] = cloud.weights[survivors]
    next_id = int(cloud.ids[-1]) + 1 if n0 else 0
    new_ids = np.concatenate(
        [cloud.ids[survivors], np.arange(next_id, next_id + n_new, dtype=np.int64)]
    )

    out_values = {}
    for name, v in values.items():
        merged_v = np.concatenate([v[survivors], interp[name]])
        out_values[name] = merged_v

    out = PointCloud(
        geometry=cloud.geometry,
        field=fld,
        pos=new_pos,
        h=new_h,
        kinds=new_kinds,
        normals=new_normals,
        weights=new_weights,
        ids=new_ids,
        seed=cloud.seed,
        reorg_count=cloud.reorg_count + 1,
        time=cloud.time,
    )
    report = ChangeReport(merged=n_merged, inserted=n_ins + 0, unrepaired=n_bad)
    return out, report, out_values


# ---------------------------------------------------------------------------
# diagnostics / io
# ---------------------------------------------------------------------------

def spacing_violations(cloud: PointCloud, spacing: SpacingParams) -> tuple[int, int]:
    """(number of r_min pair violations, number of interior r_max gaps)."""
    indptr, indices, dist2 = cloud.neighbors()
    n_pairs = 0
    n_gaps = 0
    d = np.sqrt(dist2)
    for i in range(cloud.n):
        row = slice(indptr[i], indptr[i + 1])
        js = indices[row]
        ds = d[row]
        others = js != i
        hmin = np.minimum(cloud.h[i], cloud.h[js])
        n_pairs += int(np.sum((ds < spacing.r_min * hmin - 1e-15) & others & (js > i)))
        if cloud.kinds[i] == KIND_INTERIOR:
            if not np.any(others & (ds <= spacing.r_max * cloud.h[i] + 1e-15)):
                n_gaps += 1
    return n_pairs, n_gaps


def neighborhood_sizes(cloud: PointCloud) -> np.ndarray:
    indptr, _, _ = cloud.neighbors()
    return np.diff(indptr)


def dump_jsonl(cloud: PointCloud, path) -> None:
    """One point per line:
    {"id":int,"x":[...],"h":float,"kind":str,"normal":[...]|null}."""
    with open(path, "w") as f:
        for i in range(cloud.n):
            normal = None
            if cloud.kinds[i] != KIND_INTERIOR:
                normal = [float(c) for c in cloud.normals[i, : cloud.dim]]
            rec = {
                "id": int(cloud.ids[i]),
                "x": [float(c) for c in cloud.pos[i, : cloud.dim]],
                "h": float(cloud.h[i]),
                "kind": KIND_NAMES[int(cloud.kinds[i])],
                "normal": normal,
            }
            f.write(json.dumps(rec) + "\n")
