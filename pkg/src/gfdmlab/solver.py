"""Lagrangian incompressible-flow stepping with pressure projection.

One step: (1) dt from the Courant rule dt = dt_cfl * Hmin / max|u|;
(2) move interior points with their velocity and drop points that left the
domain; (3) every k-th step (k = the organize cadence parameter) reorganize
the cloud and rebuild neighborhoods/stencils, otherwise reuse them;
(4) implicit viscous solve (I - dt nu L) u* = u^n to relative residual
eps_v; (5) pressure Poisson L p = (rho/dt) div u* to eps_p with zero-normal-
gradient rows on walls and p = 0 at the outflow; (6) velocity correction
u = u* - (dt/rho) grad p on interior and outflow points.

All eleven tunable run parameters live in :class:`SolverConfig`; the wire
names (Table-style MESHFREE parameter names) are in PARAM_NAMES order.
"""

from __future__ import annotations

import time as _time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from gfdmlab import errors
from gfdmlab.cases import Case, build_case, inflow_velocity, mean_velocity_and_reynolds
from gfdmlab.cloud import PointCloud, SpacingParams, generate_cloud, reorganize
from gfdmlab.geometry import (
    KIND_INFLOW,
    KIND_INTERIOR,
    KIND_OBSTACLE,
    KIND_OUTFLOW,
    KIND_WALL,
)
from gfdmlab.linsolve import (JacobiPreconditioner, conjugate_gradient,
                              solve_linear_fixed_point)
from gfdmlab.stencils import OperatorSet, build_operator_set, gradient_ops

_DEBUG_FREEZE_POINTS = False  # testing hook: suppress Lagrangian motion

PARAM_NAMES = (
    "Hmin",
    "Hmax",
    "max_N_stencil",
    "COMP_DoOrganizeOnlyAfterHowManyCycles",
    "eps_v",
    "eps_p",
    "ord_grad",
    "ord_laplace",
    "ord_eval",
    "DIFFOP_kernel_Laplace",
    "DIFFOP_kernel_Neumann",
)


@dataclass(frozen=True)
class SolverConfig:
    hmin: float = 0.0075
    hmax: float = 0.065
    max_n_stencil: int = 40
    organize_every: int = 1          # reorganize cadence k
    eps_v: float = 1e-5
    eps_p: float = 1e-5
    ord_grad: float = 2
    ord_laplace: float = 2
    ord_eval: float = 2
    cw_laplace: float = 2.0
    cw_neumann: float = 2.0
    dt_cfl: float = 0.2
    t_end: float | None = None       # None: use the case horizon
    averaging_window: int = 100
    max_steps: int = 100_000

    def __post_init__(self):
        if self.hmax <= self.hmin:
            raise ValueError("Hmax must exceed Hmin")
        if self.organize_every < 1:
            raise ValueError("organize cadence must be >= 1")

    def to_params(self) -> dict:
        vals = (
            self.hmin, self.hmax, self.max_n_stencil, self.organize_every,
            self.eps_v, self.eps_p, self.ord_grad, self.ord_laplace,
            self.ord_eval, self.cw_laplace, self.cw_neumann,
        )
        return dict(zip(PARAM_NAMES, vals))

    @classmethod
    def from_params(cls, params: dict, **extra) -> "SolverConfig":
        return cls(
            hmin=float(params["Hmin"]),
            hmax=float(params["Hmax"]),
            max_n_stencil=int(params["max_N_stencil"]),
            organize_every=int(params["COMP_DoOrganizeOnlyAfterHowManyCycles"]),
            eps_v=float(params["eps_v"]),
            eps_p=float(params["eps_p"]),
            ord_grad=float(params["ord_grad"]),
            ord_laplace=float(params["ord_laplace"]),
            ord_eval=float(params["ord_eval"]),
            cw_laplace=float(params["DIFFOP_kernel_Laplace"]),
            cw_neumann=float(params["DIFFOP_kernel_Neumann"]),
            **extra,
        )


@dataclass
class FluidState:
    u: np.ndarray           # (n, 3)
    p: np.ndarray           # (n,)
    rho: float
    nu: float
    g: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class CoefficientSeries:
    t: list = field(default_factory=list)
    cd: list = field(default_factory=list)
    cl: list = field(default_factory=list)

    def means(self, window: int) -> tuple[float, float]:
        if not self.t:
            return float("nan"), float("nan")
        w = min(window, len(self.t))
        return float(np.mean(self.cd[-w:])), float(np.mean(self.cl[-w:]))


@dataclass
class StepCache:
    ops: OperatorSet
    A_p: sp.csr_matrix          # pressure-recovery operator (LSQ potential)
    p_precond: object
    p_rhs_ops: list | None      # G_d^T C, one per dimension
    A_proj: sp.csr_matrix       # SPD normal-equations projection operator
    proj_precond: object
    D_div: sp.csr_matrix        # stacked-velocity -> interior divergence
    corr_dirs: sp.csr_matrix    # lambda -> stacked correction field
    visc_pattern: sp.csr_matrix
    visc_parts: tuple  # (identity part, masked laplacian, outflow rows) data
    bc_u: np.ndarray   # (n, 3) Dirichlet values
    masks: dict
    shepard: sp.csr_matrix | None = None
    rgrads: list | None = None
    lam_warm: np.ndarray | None = None


def _subset_cloud(cloud: PointCloud, keep: np.ndarray) -> PointCloud:
    return PointCloud(
        geometry=cloud.geometry,
        field=cloud.field,
        pos=cloud.pos[keep].copy(),
        h=cloud.h[keep].copy(),
        kinds=cloud.kinds[keep].copy(),
        normals=cloud.normals[keep].copy(),
        weights=cloud.weights[keep].copy(),
        ids=cloud.ids[keep].copy(),
        seed=cloud.seed,
        reorg_count=cloud.reorg_count,
        time=cloud.time,
    )


def _dirichlet_velocity(cloud: PointCloud, case: Case) -> np.ndarray:
    """Velocity boundary values: zero on walls/obstacle, profile at inflow."""
    bc = np.zeros((cloud.n, 3))
    at_in = np.flatnonzero(cloud.kinds == KIND_INFLOW)
    for i in at_in:
        y = cloud.pos[i, 1]
        z = cloud.pos[i, 2]
        bc[i, 0] = inflow_velocity(y, z, cloud.geometry, case.fluid)
    return bc


def _mirror_rows(cloud: PointCloud, rows: np.ndarray, cw: float, order: int,
                 max_n: int, exclude: np.ndarray, delta: float = 0.6) -> sp.csr_matrix:
    """Rows realizing 'value at x_i equals the interpolated value delta*h
    inside the domain along the normal' (a stable zero-normal-gradient
    closure): row_i = e_i - w_mirror. Excluded points never appear on the
    interpolation side."""
    from gfdmlab.backend import get_kernels
    from gfdmlab.cloud import monomial_exponents

    n = cloud.n
    if rows.size == 0:
        return sp.csr_matrix((n, n))
    k = get_kernels()
    targets = cloud.pos[rows] + delta * cloud.h[rows, None] * cloud.normals[rows]
    th = cloud.h[rows].copy()
    alive = ~exclude
    mat = sp.lil_matrix((n, n))
    pending = np.arange(rows.size)
    nearest_all = np.full(rows.size, -1, dtype=np.int64)
    for q in range(order, 0, -1):
        if pending.size == 0:
            break
        exps = monomial_exponents(q, cloud.dim)
        pattern = np.zeros(exps.shape[0])
        pattern[0] = 1.0
        indptr, indices, coeffs, status, nearest = k.eval_stencil_batch(
            targets[pending], th[pending], cloud.pos, cloud.h, alive, n,
            cloud.dim, 0.35 * float(cloud.h.min()), exps, pattern, cw, max_n,
        )
        nearest_all[pending] = nearest
        good = status == 0
        for t_local, t in enumerate(pending):
            if not good[t_local]:
                continue
            i = rows[t]
            sl = slice(indptr[t_local], indptr[t_local + 1])
            mat[i, i] = 1.0
            for j, c in zip(indices[sl], coeffs[sl]):
                mat[i, j] -= c
        pending = pending[~good]
    for t in pending:  # nearest-value fallback
        i = rows[t]
        j = nearest_all[t]
        if j < 0:
            raise errors.CloudDegenerate(f"boundary point {i} has no interior support")
        mat[i, i] = 1.0
        mat[i, j] -= 1.0
    return mat.tocsr()


def _build_cache(cloud: PointCloud, config: SolverConfig, case: Case,
                 prev: StepCache | None = None) -> StepCache:
    ops = build_operator_set(
        cloud, config.ord_grad, config.ord_laplace,
        config.cw_laplace, config.cw_neumann, config.max_n_stencil,
    )
    kinds = cloud.kinds
    interior = kinds == KIND_INTERIOR
    outflow = kinds == KIND_OUTFLOW
    dirich = (kinds == KIND_WALL) | (kinds == KIND_OBSTACLE) | (kinds == KIND_INFLOW)
    n = cloud.n
    D_int = sp.diags(interior.astype(float))
    D_out = sp.diags(outflow.astype(float))
    eye = sp.identity(n, format="csr")

    # boundary closures: interpolation-based zero-normal-gradient rows (the
    # one-sided derivative rows amplify; interpolation rows are contractive)
    out_rows = np.flatnonzero(outflow)
    wall_rows = np.flatnonzero(dirich)
    mirror_u = _mirror_rows(cloud, out_rows, config.cw_neumann, 2,
                            config.max_n_stencil, exclude=outflow)
    mirror_p = _mirror_rows(cloud, wall_rows, config.cw_neumann, 2,
                            config.max_n_stencil, exclude=cloud.boundary_mask)

    # Reduced-support gradient components (order = ord_grad, nearest ~12
    # neighbors) for the projection and pressure systems: consistent, and
    # half the matvec cost of the full neighborhoods.
    rgrads = gradient_ops(cloud, config.ord_grad)

    # pressure recovery as a least-squares potential fit: find p whose
    # gradient best matches the momentum-balance field at interior points,
    # with p pinned to 0 on the outflow. The normal-equations operator
    # R^T C R is symmetric positive (semi-)definite and solver-friendly; the
    # pressure is diagnostic (forces/output) so it cannot feed the dynamics.
    C = sp.diags(interior.astype(float))
    gram = sum((g.T @ C @ g for g in rgrads), sp.csr_matrix((n, n)))
    A_p = (gram + D_out @ eye).tocsr()
    A_p.sort_indices()
    p_precond = JacobiPreconditioner(A_p)
    p_rhs_ops = [(g.T @ C).tocsr() for g in rgrads]

    # orthogonal projection: divergence map D over interior rows of the
    # stacked velocity, corrections along D^T restricted to interior points.
    # A_proj = D C D^T is SPD, so the projector has unit norm: the step map
    # inherits stability from the viscous contraction.
    int_rows = np.flatnonzero(interior)
    D_div = sp.hstack([g.tocsr()[int_rows] for g in rgrads]).tocsr()
    Ccat = sp.block_diag([C] * len(rgrads)).tocsr()
    corr_dirs = (Ccat @ D_div.T).tocsr()
    A_proj = (D_div @ corr_dirs).tocsr()
    A_proj.sort_indices()
    proj_precond = JacobiPreconditioner(A_proj)

    L_int = (D_int @ ops.lap).tocsr()
    I_fix = (sp.diags((interior | dirich).astype(float))).tocsr()
    N_out = mirror_u.tocsr()
    pattern = (I_fix + L_int + N_out).tocsr()
    pattern.sort_indices()
    u_keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(pattern.indptr)) * n \
        + pattern.indices

    def aligned(mat):
        mat = mat.tocsr()
        mat.sort_indices()
        keys = np.repeat(np.arange(n, dtype=np.int64), np.diff(mat.indptr)) * n \
            + mat.indices
        out = np.zeros(pattern.nnz)
        out[np.searchsorted(u_keys, keys)] = mat.data
        return out

    visc_parts = (aligned(I_fix), aligned(L_int), aligned(N_out))
    masks = {"interior": interior, "outflow": outflow, "dirichlet": dirich}

    # Shepard smoother for diagnostic fields (row-normalized Gaussian weights
    # over the neighborhoods); exact on constants, contractive
    indptr, indices, dist2 = cloud.neighbors()
    rows_rep = np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))
    wdat = np.exp(-4.0 * dist2 / (cloud.h[rows_rep] ** 2 + cloud.h[indices] ** 2))
    shepard = sp.csr_matrix((wdat, indices, indptr), shape=(n, n))
    rowsum = np.asarray(shepard.sum(axis=1)).ravel()
    shepard = sp.diags(1.0 / np.where(rowsum > 0, rowsum, 1.0)) @ shepard

    return StepCache(
        ops=ops,
        A_p=A_p,
        p_precond=p_precond,
        p_rhs_ops=p_rhs_ops,
        A_proj=A_proj,
        proj_precond=proj_precond,
        D_div=D_div,
        corr_dirs=corr_dirs,
        visc_pattern=pattern,
        visc_parts=visc_parts,
        bc_u=_dirichlet_velocity(cloud, case),
        masks=masks,
        shepard=shepard,
        rgrads=rgrads,
    )


def _delete_escaped(cloud: PointCloud, state: FluidState) -> tuple[PointCloud, FluidState]:
    inside = cloud.geometry.contains(cloud.pos)
    drop = (~inside) & (cloud.kinds == KIND_INTERIOR)
    if not np.any(drop):
        return cloud, state
    keep = ~drop
    cloud = _subset_cloud(cloud, keep)
    state = FluidState(u=state.u[keep], p=state.p[keep], rho=state.rho,
                       nu=state.nu, g=state.g)
    return cloud, state


def time_step(
    cloud: PointCloud,
    state: FluidState,
    config: SolverConfig,
    case: Case,
    step_index: int,
    cache: StepCache | None = None,
    spacing: SpacingParams | None = None,
    dt_max: float = np.inf,
) -> tuple[PointCloud, FluidState, float, StepCache]:
    """Advance one step; returns (cloud', state', dt, cache')."""
    spacing = spacing or SpacingParams()
    umax = float(np.max(np.abs(state.u))) if cloud.n else 0.0
    dt = config.dt_cfl * config.hmin / max(umax, 1e-12)
    dt = min(dt, dt_max)
    if dt <= 0.0:
        raise errors.CloudDegenerate("non-positive time step")

    # Lagrangian motion (interior points only; boundary points are pinned)
    moving = cloud.kinds == KIND_INTERIOR
    if _DEBUG_FREEZE_POINTS:
        moving = np.zeros(cloud.n, dtype=bool)
    new_pos = cloud.pos.copy()
    new_pos[moving] += dt * state.u[moving]
    cloud = replace(cloud, pos=new_pos, time=cloud.time + dt)
    cloud.drop_neighbor_cache()

    if cache is None or step_index % config.organize_every == 0:
        # escaped points are culled only on rebuild steps so that reused
        # stencils stay aligned with the point set in between
        cloud, state = _delete_escaped(cloud, state)
        fld = case.refinement(config.hmin, config.hmax)
        values = {"u": state.u, "p": state.p}
        cloud, report, vals = reorganize(
            cloud, spacing, fld, int(config.ord_eval), values,
            max_n_stencil=config.max_n_stencil,
        )
        state = FluidState(u=vals["u"], p=vals["p"], rho=state.rho,
                           nu=state.nu, g=state.g)
        n_interior = int(np.sum(cloud.kinds == KIND_INTERIOR))
        if n_interior < 4:
            raise errors.CloudDegenerate(f"only {n_interior} interior points left")
        cache = _build_cache(cloud, config, case, prev=cache)
        state.u[cache.masks["dirichlet"]] = cache.bc_u[cache.masks["dirichlet"]]

    m = cache.masks
    n = cloud.n
    dim = cloud.dim

    # --- implicit viscous solve ---
    ident_d, lap_d, nout_d = cache.visc_parts
    A_v = cache.visc_pattern.copy()
    A_v.data = ident_d - (dt * state.nu) * lap_d + nout_d
    jac = JacobiPreconditioner(A_v)
    u_star = np.zeros((n, 3))
    for c in range(dim):
        b = np.where(m["interior"], state.u[:, c] + dt * state.g[c], 0.0)
        b[m["dirichlet"]] = cache.bc_u[m["dirichlet"], c]
        # outflow rows: zero normal gradient -> rhs 0
        u_star[:, c], _ = solve_linear_fixed_point(
            A_v, b, config.eps_v, x0=state.u[:, c], preconditioner=jac
        )

    # --- projection: remove the interior divergence orthogonally ---
    ops = cache.ops
    stacked = u_star[:, :dim].T.reshape(-1)
    rhs = cache.D_div @ stacked
    lam0 = cache.lam_warm if cache.lam_warm is not None else None
    lam, _ = conjugate_gradient(
        cache.A_proj, rhs, config.eps_p, x0=lam0, preconditioner=cache.proj_precond
    )
    cache.lam_warm = lam
    corr_field = cache.corr_dirs @ lam
    u_new = u_star.copy()
    u_new[:, :dim] -= corr_field.reshape(dim, n).T
    u_new[m["dirichlet"]] = cache.bc_u[m["dirichlet"]]

    # --- pressure recovery: least-squares potential of the momentum
    # balance grad p = rho (nu lap u - (u . grad) u), evaluated on the
    # smoothed corrected field ---
    u_diag = np.column_stack([cache.shepard @ u_new[:, c] for c in range(dim)])
    gvecs = []
    lap_u = [ops.lap @ u_diag[:, c] for c in range(dim)]
    du = [[g @ u_diag[:, j] for j in range(dim)] for g in cache.rgrads]
    for c in range(dim):
        conv = sum(u_diag[:, a] * du[a][c] for a in range(dim))
        gvecs.append(state.rho * (state.nu * lap_u[c] - conv))
    b_p = sum(op @ g for op, g in zip(cache.p_rhs_ops, gvecs))
    p_new, _ = conjugate_gradient(
        cache.A_p, b_p, config.eps_p, x0=state.p, preconditioner=cache.p_precond
    )

    new_state = FluidState(u=u_new, p=p_new, rho=state.rho, nu=state.nu, g=state.g)
    return cloud, new_state, dt, cache


def compute_forces(cloud: PointCloud, state: FluidState, cache: StepCache) -> tuple[float, float]:
    """Drag and lift force on the obstacle surface (per unit depth in 2D):
    F_D = sum w_i (rho nu du_t/dn n_y - p n_x),
    F_L = -sum w_i (rho nu du_t/dn n_x + p n_y)."""
    surf = np.flatnonzero(cloud.kinds == KIND_OBSTACLE)
    if surf.size == 0:
        return 0.0, 0.0
    N = cache.ops.neumann
    u_diag = np.column_stack([cache.shepard @ state.u[:, c] for c in range(cloud.dim)])
    dudn = np.column_stack([N @ u_diag[:, c] for c in range(cloud.dim)])
    nx = cloud.normals[surf, 0]
    ny = cloud.normals[surf, 1]
    tx, ty = ny, -nx  # tangent in the cross-section plane
    dut_dn = dudn[surf, 0] * tx + dudn[surf, 1] * ty
    w = cloud.weights[surf]
    p = state.p[surf]
    mu = state.rho * state.nu
    f_d = float(np.sum(w * (mu * dut_dn * ny - p * nx)))
    f_l = float(-np.sum(w * (mu * dut_dn * nx + p * ny)))
    return f_d, f_l


def coefficients(f_d: float, f_l: float, rho: float, u_bar: float,
                 d_cyl: float, h_cyl: float) -> tuple[float, float]:
    """Drag/lift coefficients: C = 2 F / (rho u_bar^2 D_cyl H_cyl)."""
    denom = rho * u_bar * u_bar * d_cyl * h_cyl
    if denom == 0.0:
        raise errors.ZeroDenominator("coefficient normalization is zero")
    return 2.0 * f_d / denom, 2.0 * f_l / denom


@dataclass
class SimulationRecord:
    params: dict
    cd: float
    cl: float
    ct_seconds: float
    valid: bool
    seed: int
    case: str = "desk2d"
    record_id: int | None = None
    error: str | None = None
    n_points: int = 0
    n_steps: int = 0
    series_path: str | None = None

    def to_json_dict(self) -> dict:
        d = {
            "params": self.params,
            "cd": self.cd,
            "cl": self.cl,
            "ct_seconds": self.ct_seconds,
            "valid": self.valid,
            "seed": self.seed,
            "case": self.case,
        }
        if self.record_id is not None:
            d["id"] = self.record_id
        if self.series_path:
            d["series_path"] = self.series_path
        if self.error:
            d["error"] = self.error
        return d


def initial_state(cloud: PointCloud, case: Case, warm: bool | None = None) -> FluidState:
    warm = case.warm_start if warm is None else warm
    u = np.zeros((cloud.n, 3))
    fixed_zero = (cloud.kinds == KIND_WALL) | (cloud.kinds == KIND_OBSTACLE)
    if warm:
        prof = np.array([
            inflow_velocity(cloud.pos[i, 1], cloud.pos[i, 2], cloud.geometry, case.fluid)
            for i in range(cloud.n)
        ])
        if cloud.geometry.has_cylinder:
            # taper the profile to zero at the cylinder so the first
            # projection is not fed an O(u/h) divergence spike
            cx, cy = cloud.geometry.cylinder_center
            r_cyl = cloud.geometry.cylinder_radius
            r = np.hypot(cloud.pos[:, 0] - cx, cloud.pos[:, 1] - cy)
            prof *= np.clip((r - r_cyl) / (2.0 * r_cyl), 0.0, 1.0)
        u[:, 0] = np.where(fixed_zero, 0.0, prof)
    else:
        at_in = cloud.kinds == KIND_INFLOW
        for i in np.flatnonzero(at_in):
            u[i, 0] = inflow_velocity(cloud.pos[i, 1], cloud.pos[i, 2], cloud.geometry, case.fluid)
    return FluidState(u=u, p=np.zeros(cloud.n), rho=case.fluid.rho, nu=case.fluid.nu)


def run_simulation(case: Case, config: SolverConfig, seed: int,
                   collect_series: bool = False) -> tuple[SimulationRecord, CoefficientSeries]:
    """Advance to t_end and average the force coefficients over the final
    averaging window. Never raises: failures yield an invalid record."""
    t0 = _time.perf_counter()
    series = CoefficientSeries()
    params = config.to_params()
    t_end = config.t_end if config.t_end is not None else case.fluid.t_end
    u_bar, _re = mean_velocity_and_reynolds(case.geometry, case.fluid)
    geom = case.geometry
    h_cyl = geom.width if geom.dim == 3 else 1.0
    npts = 0
    steps = 0
    error = None
    try:
        fld = case.refinement(config.hmin, config.hmax)
        cloud = generate_cloud(geom, fld, SpacingParams(), seed)
        state = initial_state(cloud, case)
        cache = None
        t = 0.0
        while t < t_end - 1e-12:
            cloud, state, dt, cache = time_step(
                cloud, state, config, case, steps, cache, dt_max=t_end - t
            )
            t += dt
            steps += 1
            if geom.has_cylinder:
                f_d, f_l = compute_forces(cloud, state, cache)
                cd, cl = coefficients(f_d, f_l, state.rho, u_bar, geom.cylinder_diameter, h_cyl)
                series.t.append(t)
                series.cd.append(cd)
                series.cl.append(cl)
            if steps >= config.max_steps:
                raise errors.CloudDegenerate(f"step cap {config.max_steps} hit at t={t:.4g}")
            if not np.isfinite(state.u).all():
                raise errors.CloudDegenerate(f"velocity field lost finiteness at t={t:.4g}")
        npts = cloud.n
    except Exception as exc:  # failures become invalid records
        error = f"{type(exc).__name__}: {exc}"

    cd_mean, cl_mean = series.means(config.averaging_window)
    valid = error is None and np.isfinite(cd_mean) and np.isfinite(cl_mean)
    record = SimulationRecord(
        params=params,
        cd=cd_mean if np.isfinite(cd_mean) else 0.0,
        cl=cl_mean if np.isfinite(cl_mean) else 0.0,
        ct_seconds=_time.perf_counter() - t0,
        valid=bool(valid),
        seed=seed,
        case=case.name,
        error=error,
        n_points=npts,
        n_steps=steps,
    )
    return record, series
