"""Weighted-least-squares differential stencils on point clouds.

For a point i with neighborhood S_i, the coefficients c_ij of a discrete
operator (gradient component, Laplacian, normal derivative, or plain
evaluation) minimize sum_j (c_ij / W_ij)^2 subject to exact reproduction of
the operator on all monomials up to the requested order, where

    W_ij = exp(-c_W |x_j - x_i|^2 / (h_i^2 + h_j^2))

is the truncated Gaussian neighbor weight (zero outside the neighborhood).
Fractional Laplacian orders q in (2, 3) blend the order-2 and order-3
stencils with weights (3 - q, q - 2) on identical neighbor sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from gfdmlab import errors
from gfdmlab.backend import get_kernels
from gfdmlab.cloud import PointCloud, monomial_exponents

OPERATORS = ("d/dx", "d/dy", "d/dz", "laplace", "neumann", "eval")

# default Gaussian kernel width for the gradient/evaluation operators; the
# solver's Laplace and Neumann kernels are run parameters
DEFAULT_GRADIENT_CW = 4.0

_AXIS_OF = {"d/dx": 0, "d/dy": 1, "d/dz": 2}


@dataclass(frozen=True)
class StencilKind:
    operator: str
    order: float = 2
    kernel_cw: float = DEFAULT_GRADIENT_CW

    def __post_init__(self):
        if self.operator not in OPERATORS:
            raise ValueError(f"unknown operator {self.operator!r}")
        q = self.order
        if not (q in (1, 2, 3) or 2.0 < q < 3.0):
            raise ValueError(f"order must be 1, 2, 3 or in (2,3); got {q}")
        if not (2.0 <= self.kernel_cw <= 8.0):
            raise ValueError(f"kernel_cw must be in [2, 8]; got {self.kernel_cw}")


@dataclass(frozen=True)
class Stencil:
    center: int                 # point id
    neighbor_ids: np.ndarray    # ids, ascending by distance
    coefficients: np.ndarray

    def apply(self, values) -> float:
        """Weighted sum over the neighbor values.

        ``values`` is either a mapping id -> value or an array indexed by id.
        """
        total = 0.0
        if isinstance(values, dict):
            for j, c in zip(self.neighbor_ids, self.coefficients):
                if int(j) not in values:
                    raise errors.MissingValue(f"no value for neighbor id {int(j)}")
                total += c * values[int(j)]
            return float(total)
        arr = np.asarray(values)
        return float(np.dot(self.coefficients, arr[self.neighbor_ids]))


def apply(stencil: Stencil, values) -> float:
    return stencil.apply(values)


def weight(xi, xj, hi: float, hj: float, cw: float, in_neighborhood: bool = True) -> float:
    """Truncated Gaussian weight W_ij."""
    if hi <= 0 or hj <= 0:
        raise ValueError("interaction radii must be positive")
    if not in_neighborhood:
        return 0.0
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    d2 = float(np.sum((xj - xi) ** 2))
    return math.exp(-cw * d2 / (hi * hi + hj * hj))


def _pattern_for(operator: str, order: int, dim: int):
    """(exponents, pattern, h_power) for one integer-order operator."""
    exps = monomial_exponents(order, dim)
    pattern = np.zeros(exps.shape[0])
    if operator == "eval":
        pattern[0] = 1.0
        return exps, pattern, 0
    if operator in _AXIS_OF:
        ax = _AXIS_OF[operator]
        tgt = [0, 0, 0]
        tgt[ax] = 1
        hit = np.all(exps == tgt, axis=1)
        pattern[hit] = 1.0
        return exps, pattern, 1
    if operator == "laplace":
        for ax in range(dim):
            tgt = [0, 0, 0]
            tgt[ax] = 2
            hit = np.all(exps == tgt, axis=1)
            pattern[hit] = 2.0
        return exps, pattern, 2
    raise ValueError(f"no direct pattern for operator {operator!r}")


def _batch(cloud: PointCloud, want: np.ndarray, operator: str, order: int,
           cw: float, max_n: int):
    k = get_kernels()
    indptr, indices, dist2 = cloud.neighbors()
    exps, pattern, hpow = _pattern_for(operator, order, cloud.dim)
    return k.stencil_batch(
        cloud.pos, cloud.h, indptr, indices, dist2, want.astype(np.int64),
        cloud.dim, exps, pattern, float(hpow), cw, max_n,
    )


def _blend_orders(order: float) -> list[tuple[int, float]]:
    if order in (1, 2, 3):
        return [(int(order), 1.0)]
    q = float(order)
    return [(2, 3.0 - q), (3, q - 2.0)]


def build_stencil(cloud: PointCloud, point_id: int, kind: StencilKind,
                  max_n_stencil: int = 40) -> Stencil:
    """Stencil for one point; raises on starved or degenerate neighborhoods."""
    if kind.operator == "neumann":
        raise ValueError("use neumann_stencil for normal-derivative stencils")
    i = cloud.index_of(point_id)
    want = np.array([i], dtype=np.int64)
    coeffs = None
    ids_row = None
    for q, w in _blend_orders(kind.order):
        indptr2, indices2, cs, status = _batch(
            cloud, want, kind.operator, q, kind.kernel_cw, max_n_stencil
        )
        if status[0] == 1:
            raise errors.InsufficientNeighbors(
                f"point {point_id}: {indptr2[1] - indptr2[0]} neighbors for order {q}"
            )
        if status[0] == 2:
            raise errors.SingularStencil(
                f"point {point_id}: degenerate neighborhood for {kind.operator} q={q}"
            )
        row = cs[indptr2[0] : indptr2[1]]
        ids_row = cloud.ids[indices2[indptr2[0] : indptr2[1]]]
        coeffs = w * row if coeffs is None else coeffs + w * row
    return Stencil(center=int(point_id), neighbor_ids=ids_row, coefficients=coeffs)


def neumann_stencil(cloud: PointCloud, point_id: int, cw_neumann: float,
                    order: float = 2, max_n_stencil: int = 40) -> Stencil:
    """n . grad at a boundary point: combination of the gradient component
    stencils built with the Neumann kernel width."""
    i = cloud.index_of(point_id)
    if cloud.kinds[i] == 0:
        raise ValueError(f"point {point_id} is interior; Neumann needs a boundary point")
    normal = cloud.normals[i]
    parts = []
    for ax, opname in enumerate(("d/dx", "d/dy", "d/dz")[: cloud.dim]):
        st = build_stencil(
            cloud, point_id, StencilKind(opname, order=order, kernel_cw=cw_neumann),
            max_n_stencil,
        )
        parts.append((normal[ax], st))
    ids_row = parts[0][1].neighbor_ids
    coeffs = np.zeros_like(parts[0][1].coefficients)
    for nc, st in parts:
        coeffs += nc * st.coefficients
    return Stencil(center=int(point_id), neighbor_ids=ids_row, coefficients=coeffs)


# ---------------------------------------------------------------------------
# batched operator matrices for the flow solver
# ---------------------------------------------------------------------------

@dataclass
class OperatorSet:
    """Sparse operators over the whole cloud (rows aligned with indices).

    Rows that could not be built at the requested order fall back to order 2
    then order 1 (counted in `order_fallbacks`); a row that stays singular
    raises SingularStencil.
    """

    ddx: sp.csr_matrix
    ddy: sp.csr_matrix
    ddz: sp.csr_matrix | None
    lap: sp.csr_matrix
    neumann: sp.csr_matrix  # zero rows for interior points
    order_fallbacks: int


def _matrix_for(cloud: PointCloud, operator: str, order: float, cw: float,
                max_n: int, rows: np.ndarray) -> tuple[sp.csr_matrix, int]:
    n = cloud.n
    fallbacks = 0
    acc: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    pending = rows
    blend = _blend_orders(order)
    # try requested order (blended if fractional), then 2, then 1
    ladder = [blend]
    if blend != [(2, 1.0)]:
        ladder.append([(2, 1.0)])
    ladder.append([(1, 1.0)])
    for level, parts in enumerate(ladder):
        if pending.size == 0:
            break
        rowdata = {}
        ok = np.ones(pending.size, dtype=bool)
        for q, w in parts:
            indptr2, indices2, cs, status = _batch(cloud, pending, operator, q, cw, max_n)
            ok &= status == 0
            for t in range(pending.size):
                sl = slice(indptr2[t], indptr2[t + 1])
                if t in rowdata:
                    rowdata[t] = (indices2[sl], rowdata[t][1] + w * cs[sl])
                else:
                    rowdata[t] = (indices2[sl], w * cs[sl])
        for t in np.flatnonzero(ok):
            acc[int(pending[t])] = rowdata[t]
        if level > 0:
            fallbacks += int(ok.sum())
        pending = pending[~ok]
    if pending.size:
        raise errors.SingularStencil(
            f"{pending.size} rows degenerate for {operator} (first row {pending[0]})"
        )
    indptr = np.zeros(n + 1, dtype=np.int64)
    for i, (js, _) in acc.items():
        indptr[i + 1] = js.size
    np.cumsum(indptr, out=indptr)
    data = np.zeros(indptr[-1])
    cols = np.zeros(indptr[-1], dtype=np.int64)
    for i, (js, cs) in acc.items():
        sl = slice(indptr[i], indptr[i + 1])
        cols[sl] = js
        data[sl] = cs
    mat = sp.csr_matrix((data, cols, indptr), shape=(n, n))
    return mat, fallbacks


def gradient_ops(cloud: PointCloud, order: float, cw: float = DEFAULT_GRADIENT_CW,
                 max_n: int = 12) -> list[sp.csr_matrix]:
    """Gradient component matrices with reduced neighbor support (the
    nearest max_n points), used where matvec cost matters more than the
    last digits of the approximation."""
    from gfdmlab.cloud import monomial_exponents

    need = monomial_exponents(int(np.ceil(order)), cloud.dim).shape[0] + 4
    cap = max(max_n, need)
    rows = np.arange(cloud.n, dtype=np.int64)
    out = []
    for opname in ("d/dx", "d/dy", "d/dz")[: cloud.dim]:
        m, _ = _matrix_for(cloud, opname, order, cw, cap, rows)
        out.append(m)
    return out


def build_operator_set(cloud: PointCloud, ord_grad: float, ord_laplace: float,
                       cw_laplace: float, cw_neumann: float,
                       max_n_stencil: int) -> OperatorSet:
    """Gradient components and Laplacian for every point, plus Neumann rows
    (n . grad with the Neumann kernel) for boundary points."""
    all_rows = np.arange(cloud.n, dtype=np.int64)
    fb = 0
    ddx, f = _matrix_for(cloud, "d/dx", ord_grad, DEFAULT_GRADIENT_CW, max_n_stencil, all_rows)
    fb += f
    ddy, f = _matrix_for(cloud, "d/dy", ord_grad, DEFAULT_GRADIENT_CW, max_n_stencil, all_rows)
    fb += f
    ddz = None
    if cloud.dim == 3:
        ddz, f = _matrix_for(cloud, "d/dz", ord_grad, DEFAULT_GRADIENT_CW, max_n_stencil, all_rows)
        fb += f
    lap, f = _matrix_for(cloud, "laplace", ord_laplace, cw_laplace, max_n_stencil, all_rows)
    fb += f

    brows = np.flatnonzero(cloud.boundary_mask).astype(np.int64)
    comps = []
    for opname, ax in (("d/dx", 0), ("d/dy", 1), ("d/dz", 2)):
        if ax >= cloud.dim:
            break
        m, f = _matrix_for(cloud, opname, 2, cw_neumann, max_n_stencil, brows)
        fb += f
        comps.append(sp.diags(cloud.normals[:, ax]) @ m)
    neumann = sum(comps[1:], comps[0]).tocsr()
    return OperatorSet(ddx=ddx, ddy=ddy, ddz=ddz, lap=lap, neumann=neumann,
                       order_fallbacks=fb)
