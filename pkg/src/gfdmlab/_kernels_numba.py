"""numba implementations of the hot kernels.

Same signatures as :mod:`gfdmlab._kernels_numpy`; the cloud-maintenance
sweeps are bitwise-identical to the numpy path (same counter-based RNG and
iteration order), so the two backends produce identical clouds.
"""

import numpy as np
from numba import njit

U64 = np.uint64
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> U64(30))) * U64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> U64(27))) * U64(0x94D049BB133111EB)
    return z ^ (z >> U64(31))


@njit(cache=True, inline="always")
def _cand_key(seed, rnd, cell):
    k = U64(seed) * U64(0x9E3779B97F4A7C15)
    k ^= _mix64(U64(rnd + 1) * U64(0xD1B54A32D192ED03))
    k ^= _mix64(U64(cell + 1) * U64(0x8CB92BA72F3D8DD7))
    return _mix64(k)


@njit(cache=True, inline="always")
def _u01(key, i):
    return float(_mix64(key + U64(i) * U64(0x9E3779B97F4A7C15)) >> U64(11)) * _INV53


@njit(cache=True, inline="always")
def _field_h(fieldp, x, y):
    # fieldp: [cx, cy, core_r, inner_r, width, h_min, h_max]
    dx = x - fieldp[0]
    dy = y - fieldp[1]
    d = np.sqrt(dx * dx + dy * dy) - fieldp[2]
    if d < 0.0:
        d = 0.0
    if d <= fieldp[3]:
        return fieldp[5]
    if fieldp[4] <= 0.0 or d >= fieldp[3] + fieldp[4]:
        return fieldp[6]
    return fieldp[5] + (fieldp[6] - fieldp[5]) * (d - fieldp[3]) / fieldp[4]


@njit(cache=True, inline="always")
def _inside(geomp, x, y, z):
    # geomp: [dim, xhi, yhi, zhi, cyl_flag, cx, cy, r]
    if x <= 0.0 or x >= geomp[1] or y <= 0.0 or y >= geomp[2]:
        return False
    if geomp[0] == 3.0 and (z <= 0.0 or z >= geomp[3]):
        return False
    if geomp[4] > 0.0:
        dx = x - geomp[5]
        dy = y - geomp[6]
        if dx * dx + dy * dy <= geomp[7] * geomp[7]:
            return False
    return True


# ---------------------------------------------------------------------------
# bucket grid
# ---------------------------------------------------------------------------

@njit(cache=True)
def _grid_dims(lo, hi, cell, dim):
    nx = max(1, int(np.ceil((hi[0] - lo[0]) / cell)))
    ny = max(1, int(np.ceil((hi[1] - lo[1]) / cell)))
    nz = 1
    if dim == 3:
        nz = max(1, int(np.ceil((hi[2] - lo[2]) / cell)))
    return nx, ny, nz


@njit(cache=True, inline="always")
def _cell_of(x, y, z, lo, cell, nx, ny, nz):
    ix = int((x - lo[0]) / cell)
    iy = int((y - lo[1]) / cell)
    iz = int((z - lo[2]) / cell)
    if ix < 0:
        ix = 0
    if ix >= nx:
        ix = nx - 1
    if iy < 0:
        iy = 0
    if iy >= ny:
        iy = ny - 1
    if iz < 0:
        iz = 0
    if iz >= nz:
        iz = nz - 1
    return (iz * ny + iy) * nx + ix


@njit(cache=True)
def _build_grid(pos, alive, n, lo, cell, nx, ny, nz, cap):
    head = np.full(nx * ny * nz, -1, dtype=np.int64)
    nxt = np.full(cap, -1, dtype=np.int64)
    for i in range(n):
        if alive[i]:
            c = _cell_of(pos[i, 0], pos[i, 1], pos[i, 2], lo, cell, nx, ny, nz)
            nxt[i] = head[c]
            head[c] = i
    return head, nxt


@njit(cache=True, inline="always")
def _grid_insert(head, nxt, i, x, y, z, lo, cell, nx, ny, nz):
    c = _cell_of(x, y, z, lo, cell, nx, ny, nz)
    nxt[i] = head[c]
    head[c] = i


# ---------------------------------------------------------------------------
# neighbor search
# ---------------------------------------------------------------------------

@njit(cache=True)
def neighbor_csr(pos, hs, alive, n, dim, cell):
    """Neighbor lists S_i = {j alive : |x_j - x_i| <= h_i}, rows sorted by
    (distance, id), self included. Dead rows are empty.

    Returns (indptr, indices, dist2).
    """
    lo = np.empty(3)
    hi = np.empty(3)
    for d in range(3):
        lo[d] = 1e300
        hi[d] = -1e300
    for i in range(n):
        if alive[i]:
            for d in range(3):
                v = pos[i, d]
                if v < lo[d]:
                    lo[d] = v
                if v > hi[d]:
                    hi[d] = v
    if lo[0] > hi[0]:  # empty cloud
        return np.zeros(n + 1, dtype=np.int64), np.empty(0, dtype=np.int64), np.empty(0)
    nx, ny, nz = _grid_dims(lo, hi, cell, dim)
    head, nxt = _build_grid(pos, alive, n, lo, cell, nx, ny, nz, n)

    counts = np.zeros(n, dtype=np.int64)
    for i in range(n):
        if not alive[i]:
            continue
        r = hs[i]
        r2 = r * r
        cnt = 0
        ix0 = max(0, int((pos[i, 0] - r - lo[0]) / cell))
        ix1 = min(nx - 1, int((pos[i, 0] + r - lo[0]) / cell))
        iy0 = max(0, int((pos[i, 1] - r - lo[1]) / cell))
        iy1 = min(ny - 1, int((pos[i, 1] + r - lo[1]) / cell))
        iz0 = 0
        iz1 = 0
        if dim == 3:
            iz0 = max(0, int((pos[i, 2] - r - lo[2]) / cell))
            iz1 = min(nz - 1, int((pos[i, 2] + r - lo[2]) / cell))
        for iz in range(iz0, iz1 + 1):
            for iy in range(iy0, iy1 + 1):
                for ix in range(ix0, ix1 + 1):
                    j = head[(iz * ny + iy) * nx + ix]
                    while j >= 0:
                        dx = pos[j, 0] - pos[i, 0]
                        dy = pos[j, 1] - pos[i, 1]
                        dz = pos[j, 2] - pos[i, 2]
                        if dx * dx + dy * dy + dz * dz <= r2:
                            cnt += 1
                        j = nxt[j]
        counts[i] = cnt

    indptr = np.zeros(n + 1, dtype=np.int64)
    for i in range(n):
        indptr[i + 1] = indptr[i] + counts[i]
    total = indptr[n]
    indices = np.empty(total, dtype=np.int64)
    dist2 = np.empty(total)

    for i in range(n):
        if not alive[i]:
            continue
        r = hs[i]
        r2 = r * r
        base = indptr[i]
        cnt = 0
        ix0 = max(0, int((pos[i, 0] - r - lo[0]) / cell))
        ix1 = min(nx - 1, int((pos[i, 0] + r - lo[0]) / cell))
        iy0 = max(0, int((pos[i, 1] - r - lo[1]) / cell))
        iy1 = min(ny - 1, int((pos[i, 1] + r - lo[1]) / cell))
        iz0 = 0
        iz1 = 0
        if dim == 3:
            iz0 = max(0, int((pos[i, 2] - r - lo[2]) / cell))
            iz1 = min(nz - 1, int((pos[i, 2] + r - lo[2]) / cell))
        for iz in range(iz0, iz1 + 1):
            for iy in range(iy0, iy1 + 1):
                for ix in range(ix0, ix1 + 1):
                    j = head[(iz * ny + iy) * nx + ix]
                    while j >= 0:
                        dx = pos[j, 0] - pos[i, 0]
                        dy = pos[j, 1] - pos[i, 1]
                        dz = pos[j, 2] - pos[i, 2]
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 <= r2:
                            # insertion sort by (d2, j)
                            k = cnt
                            while k > 0:
                                pk = base + k - 1
                                if dist2[pk] > d2 or (dist2[pk] == d2 and indices[pk] > j):
                                    dist2[pk + 1] = dist2[pk]
                                    indices[pk + 1] = indices[pk]
                                    k -= 1
                                else:
                                    break
                            dist2[base + k] = d2
                            indices[base + k] = j
                            cnt += 1
                        j = nxt[j]
    return indptr, indices, dist2


# ---------------------------------------------------------------------------
# cloud maintenance: merge + stratified insertion + gap repair
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _conflict_scan(pos, hs, alive, head, nxt, lo, cell, nx, ny, nz,
                   x, y, z, hc, r_fac, dim, skip):
    """Smallest margin d - r_fac*min(hc, h_j) over alive points near (x,y,z).

    Returns (margin, worst_j). margin < 0 means conflict.
    """
    r = r_fac * hc
    best = 1e300
    worst = -1
    ix0 = max(0, int((x - r - lo[0]) / cell))
    ix1 = min(nx - 1, int((x + r - lo[0]) / cell))
    iy0 = max(0, int((y - r - lo[1]) / cell))
    iy1 = min(ny - 1, int((y + r - lo[1]) / cell))
    iz0 = 0
    iz1 = 0
    if dim == 3:
        iz0 = max(0, int((z - r - lo[2]) / cell))
        iz1 = min(nz - 1, int((z + r - lo[2]) / cell))
    for iz in range(iz0, iz1 + 1):
        for iy in range(iy0, iy1 + 1):
            for ix in range(ix0, ix1 + 1):
                j = head[(iz * ny + iy) * nx + ix]
                while j >= 0:
                    if j != skip and alive[j]:
                        dx = pos[j, 0] - x
                        dy = pos[j, 1] - y
                        dz = pos[j, 2] - z
                        d = np.sqrt(dx * dx + dy * dy + dz * dz)
                        hm = hc if hc < hs[j] else hs[j]
                        m = d - r_fac * hm
                        if m < best:
                            best = m
                            worst = j
                    j = nxt[j]
    return best, worst


@njit(cache=True)
def _nearest_alive(pos, alive, head, nxt, lo, cell, nx, ny, nz, i, rmax, dim):
    """Nearest alive j != i within rmax; returns (j, dist) or (-1, inf)."""
    x = pos[i, 0]
    y = pos[i, 1]
    z = pos[i, 2]
    best = 1e300
    bj = -1
    ix0 = max(0, int((x - rmax - lo[0]) / cell))
    ix1 = min(nx - 1, int((x + rmax - lo[0]) / cell))
    iy0 = max(0, int((y - rmax - lo[1]) / cell))
    iy1 = min(ny - 1, int((y + rmax - lo[1]) / cell))
    iz0 = 0
    iz1 = 0
    if dim == 3:
        iz0 = max(0, int((z - rmax - lo[2]) / cell))
        iz1 = min(nz - 1, int((z + rmax - lo[2]) / cell))
    for iz in range(iz0, iz1 + 1):
        for iy in range(iy0, iy1 + 1):
            for ix in range(ix0, ix1 + 1):
                j = head[(iz * ny + iy) * nx + ix]
                while j >= 0:
                    if j != i and alive[j]:
                        dx = pos[j, 0] - x
                        dy = pos[j, 1] - y
                        dz = pos[j, 2] - z
                        d = np.sqrt(dx * dx + dy * dy + dz * dz)
                        if d < best:
                            best = d
                            bj = j
                    j = nxt[j]
    if best > rmax:
        return -1, 1e300
    return bj, best


@njit(cache=True)
def reorg_core(pos, hs, kinds, alive, n0, dim, geomp, fieldp,
               r_min, r_max, r_ins, rounds, seed, do_merge, strat_cell):
    """Merge too-close pairs, fill free space by stratified candidate
    insertion (exclusion radius r_ins*h), then repair remaining r_max gaps.

    Arrays are preallocated with spare capacity and mutated in place; new
    points are appended after index n0. Interior h values are refreshed from
    the refinement field first (h is a function of position).

    Returns (n_total, n_merged, n_inserted, n_unrepaired); n_total == -1
    signals exhausted capacity (caller regrows and retries).
    """
    cap = pos.shape[0]
    # refresh h from the field
    for i in range(n0):
        if alive[i]:
            hs[i] = _field_h(fieldp, pos[i, 0], pos[i, 1])

    # domain box for grids: use the geometry extents (points live inside)
    lo = np.zeros(3)
    hi = np.empty(3)
    hi[0] = geomp[1]
    hi[1] = geomp[2]
    hi[2] = geomp[3] if dim == 3 else strat_cell
    nx, ny, nz = _grid_dims(lo, hi, strat_cell, dim)
    ncells = nx * ny * nz
    head, nxt = _build_grid(pos, alive, n0, lo, strat_cell, nx, ny, nz, cap)

    # --- merge pass ---
    n_merged = 0
    if do_merge:
        for i in range(n0):
            if not alive[i]:
                continue
            margin, j = _conflict_scan(
                pos, hs, alive, head, nxt, lo, strat_cell, nx, ny, nz,
                pos[i, 0], pos[i, 1], pos[i, 2], hs[i], r_min, dim, i,
            )
            while margin < 0.0 and j >= 0:
                # survivor: boundary beats interior, then lower index
                if kinds[i] > 0 and kinds[j] == 0:
                    alive[j] = False
                elif kinds[i] == 0 and kinds[j] > 0:
                    alive[i] = False
                elif i < j:
                    alive[j] = False
                else:
                    alive[i] = False
                n_merged += 1
                if not alive[i]:
                    break
                margin, j = _conflict_scan(
                    pos, hs, alive, head, nxt, lo, strat_cell, nx, ny, nz,
                    pos[i, 0], pos[i, 1], pos[i, 2], hs[i], r_min, dim, i,
                )

    # --- stratified insertion sweep ---
    n = n0
    n_inserted = 0
    open_cell = np.ones(ncells, dtype=np.bool_)
    diag = strat_cell * np.sqrt(float(dim))
    for rnd in range(rounds):
        inserted_round = 0
        for c in range(ncells):
            if not open_cell[c]:
                continue
            cz = c // (nx * ny)
            cy = (c - cz * nx * ny) // nx
            cx = c - cz * nx * ny - cy * nx
            key = _cand_key(seed, rnd, c)
            x = lo[0] + (cx + _u01(key, 0)) * strat_cell
            y = lo[1] + (cy + _u01(key, 1)) * strat_cell
            z = lo[2] + (cz + _u01(key, 2)) * strat_cell if dim == 3 else 0.0
            if not _inside(geomp, x, y, z):
                # cells fully outside will never produce candidates; keep
                # probing (cells straddling the boundary may still accept)
                continue
            hc = _field_h(fieldp, x, y)
            margin, _ = _conflict_scan(
                pos, hs, alive, head, nxt, lo, strat_cell, nx, ny, nz,
                x, y, z, hc, r_ins, dim, -1,
            )
            if margin >= 0.0:
                if n >= cap:
                    return -1, n_merged, n_inserted, 0
                pos[n, 0] = x
                pos[n, 1] = y
                pos[n, 2] = z
                hs[n] = hc
                kinds[n] = 0
                alive[n] = True
                _grid_insert(head, nxt, n, x, y, z, lo, strat_cell, nx, ny, nz)
                n += 1
                n_inserted += 1
                inserted_round += 1
            elif margin <= -diag:
                # every location in this cell conflicts with that point
                open_cell[c] = False
        if inserted_round == 0 and rnd > 0:
            break

    # --- gap repair: every interior point needs a neighbor within r_max*h ---
    n_unrepaired = 0
    for i in range(n):
        if not alive[i] or kinds[i] != 0:
            continue
        hi_ = hs[i]
        j, d = _nearest_alive(pos, alive, head, nxt, lo, strat_cell,
                              nx, ny, nz, i, r_max * hi_, dim)
        if j >= 0:
            continue  # no gap
        # look further out for a direction to bridge toward
        j, d = _nearest_alive(pos, alive, head, nxt, lo, strat_cell,
                              nx, ny, nz, i, 3.0 * hi_, dim)
        placed = False
        x = 0.0
        y = 0.0
        z = 0.0
        if j >= 0:
            step = d * 0.5
            if step > 0.35 * hi_:
                step = 0.35 * hi_
            ux = (pos[j, 0] - pos[i, 0]) / d
            uy = (pos[j, 1] - pos[i, 1]) / d
            uz = (pos[j, 2] - pos[i, 2]) / d
            x = pos[i, 0] + step * ux
            y = pos[i, 1] + step * uy
            z = pos[i, 2] + step * uz
            if _inside(geomp, x, y, z):
                hc = _field_h(fieldp, x, y)
                margin, _ = _conflict_scan(
                    pos, hs, alive, head, nxt, lo, strat_cell, nx, ny, nz,
                    x, y, z, hc, r_min, dim, -1,
                )
                if margin >= 0.0:
                    placed = True
        if not placed:
            # ring candidates around i (deterministic angles + seeded phase)
            key = _cand_key(seed, 9999, i)
            phase = _u01(key, 0) * 6.283185307179586
            for attempt in range(8):
                ang = phase + attempt * 0.7853981633974483
                x = pos[i, 0] + 0.3 * hi_ * np.cos(ang)
                y = pos[i, 1] + 0.3 * hi_ * np.sin(ang)
                z = pos[i, 2]
                if dim == 3:
                    z = pos[i, 2] + 0.3 * hi_ * (_u01(key, attempt + 1) - 0.5)
                if not _inside(geomp, x, y, z):
                    continue
                hc = _field_h(fieldp, x, y)
                margin, _ = _conflict_scan(
                    pos, hs, alive, head, nxt, lo, strat_cell, nx, ny, nz,
                    x, y, z, hc, r_min, dim, -1,
                )
                if margin >= 0.0:
                    placed = True
                    break
        if placed:
            if n >= cap:
                return -1, n_merged, n_inserted, 0
            pos[n, 0] = x
            pos[n, 1] = y
            pos[n, 2] = z
            hs[n] = _field_h(fieldp, x, y)
            kinds[n] = 0
            alive[n] = True
            _grid_insert(head, nxt, n, x, y, z, lo, strat_cell, nx, ny, nz)
            n += 1
            n_inserted += 1
        else:
            n_unrepaired += 1

    return n, n_merged, n_inserted, n_unrepaired


# ---------------------------------------------------------------------------
# stencil assembly
# ---------------------------------------------------------------------------

@njit(cache=True)
def _solve_spd(G, b, M):
    """Cholesky solve of G x = b; returns (x, ok). ok=False on rank deficiency."""
    L = np.zeros((M, M))
    dmax = 0.0
    for a in range(M):
        if G[a, a] > dmax:
            dmax = G[a, a]
    tol = 1e-13 * dmax if dmax > 0.0 else 0.0
    for a in range(M):
        s = G[a, a]
        for k in range(a):
            s -= L[a, k] * L[a, k]
        if s <= tol:
            return np.zeros(M), False
        L[a, a] = np.sqrt(s)
        for r in range(a + 1, M):
            t = G[r, a]
            for k in range(a):
                t -= L[r, k] * L[a, k]
            L[r, a] = t / L[a, a]
    # forward/backward substitution
    y = np.empty(M)
    for a in range(M):
        t = b[a]
        for k in range(a):
            t -= L[a, k] * y[k]
        y[a] = t / L[a, a]
    x = np.empty(M)
    for a in range(M - 1, -1, -1):
        t = y[a]
        for k in range(a + 1, M):
            t -= L[k, a] * x[k]
        x[a] = t / L[a, a]
    return x, True


@njit(cache=True)
def _solve_pinv(G, b):
    """Minimum-norm SVD solve with relative cutoff 1e-12."""
    U, s, Vt = np.linalg.svd(G)
    M = G.shape[0]
    x = np.zeros(M)
    if s[0] <= 0.0:
        return x
    cut = 1e-12 * s[0]
    for m in range(M):
        if s[m] > cut:
            coef = 0.0
            for a in range(M):
                coef += U[a, m] * b[a]
            coef /= s[m]
            for a in range(M):
                x[a] += Vt[m, a] * coef
    return x


@njit(cache=True)
def stencil_batch(pos, hs, indptr, indices, dist2, want, dim,
                  exps, pattern, hpow, cw, max_n):
    """Constrained weighted-least-squares stencils for rows in `want`.

    Minimizes sum_j (c_j / W_ij)^2 subject to exact reproduction of the
    derivative pattern on all monomials `exps` (exponent rows, scaled basis
    ((x_j-x_i)/h_i)^alpha). Neighbors are capped to the max_n nearest.

    Returns (indptr2 over want rows, indices2, coeffs, status) with status
    0=ok, 1=insufficient neighbors, 2=singular/inexact.
    """
    nw = want.shape[0]
    M = exps.shape[0]
    indptr2 = np.zeros(nw + 1, dtype=np.int64)
    for w in range(nw):
        i = want[w]
        k = indptr[i + 1] - indptr[i]
        if k > max_n:
            k = max_n
        indptr2[w + 1] = indptr2[w] + k
    total = indptr2[nw]
    indices2 = np.empty(total, dtype=np.int64)
    coeffs = np.zeros(total)
    status = np.zeros(nw, dtype=np.int64)

    for w in range(nw):
        i = want[w]
        base = indptr[i]
        k = indptr2[w + 1] - indptr2[w]
        ob = indptr2[w]
        for t in range(k):
            indices2[ob + t] = indices[base + t]
        if k < M:
            status[w] = 1
            continue
        hi_ = hs[i]
        b = np.empty(M)
        scale = hi_ ** hpow
        for a in range(M):
            b[a] = pattern[a] / scale

        E = np.empty((M, k))
        w2 = np.empty(k)
        for t in range(k):
            j = indices[base + t]
            xi = (pos[j, 0] - pos[i, 0]) / hi_
            yi = (pos[j, 1] - pos[i, 1]) / hi_
            zi = (pos[j, 2] - pos[i, 2]) / hi_ if dim == 3 else 0.0
            wj = np.exp(-cw * dist2[base + t] / (hi_ * hi_ + hs[j] * hs[j]))
            w2[t] = wj * wj
            for a in range(M):
                v = 1.0
                e0 = exps[a, 0]
                e1 = exps[a, 1]
                e2 = exps[a, 2]
                for _ in range(e0):
                    v *= xi
                for _ in range(e1):
                    v *= yi
                for _ in range(e2):
                    v *= zi
                E[a, t] = v

        G = np.zeros((M, M))
        for a in range(M):
            for bb in range(a, M):
                s = 0.0
                for t in range(k):
                    s += w2[t] * E[a, t] * E[bb, t]
                G[a, bb] = s
                G[bb, a] = s

        lam, ok = _solve_spd(G, b, M)
        if not ok:
            lam = _solve_pinv(G, b)

        for t in range(k):
            s = 0.0
            for a in range(M):
                s += E[a, t] * lam[a]
            coeffs[ob + t] = w2[t] * s

        # exactness check (relative to the constraint scale)
        bn = 0.0
        rn = 0.0
        for a in range(M):
            s = 0.0
            for t in range(k):
                s += E[a, t] * coeffs[ob + t]
            r = s - b[a]
            rn += r * r
            bn += b[a] * b[a]
        if rn > (1e-9 * 1e-9) * (bn if bn > 0.0 else 1.0):
            status[w] = 2
    return indptr2, indices2, coeffs, status


@njit(cache=True)
def eval_stencil_batch(tpos, th, pos, hs, alive, n, dim, cell,
                       exps, pattern, cw, max_n):
    """Interpolation stencils at arbitrary target positions against the
    cloud (neighbors of target t: alive j with |x_j - t| <= th[t]).

    Returns (indptr, indices, coeffs, status, nearest) where nearest[t] is
    the closest alive point (for order-0 fallback), -1 if none in range.
    """
    nt = tpos.shape[0]
    lo = np.empty(3)
    hi = np.empty(3)
    for d in range(3):
        lo[d] = 1e300
        hi[d] = -1e300
    for i in range(n):
        if alive[i]:
            for d in range(3):
                v = pos[i, d]
                if v < lo[d]:
                    lo[d] = v
                if v > hi[d]:
                    hi[d] = v
    if lo[0] > hi[0]:
        return (
            np.zeros(nt + 1, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0),
            np.full(nt, 1, dtype=np.int64),
            np.full(nt, -1, dtype=np.int64),
        )
    nx, ny, nz = _grid_dims(lo, hi, cell, dim)
    head, nxt = _build_grid(pos, alive, n, lo, cell, nx, ny, nz, n)

    # gather neighbors per target (two passes: count then fill+sort)
    counts = np.zeros(nt, dtype=np.int64)
    nearest = np.full(nt, -1, dtype=np.int64)
    for t in range(nt):
        r = th[t]
        r2 = r * r
        x = tpos[t, 0]
        y = tpos[t, 1]
        z = tpos[t, 2]
        cnt = 0
        ix0 = max(0, int((x - r - lo[0]) / cell))
        ix1 = min(nx - 1, int((x + r - lo[0]) / cell))
        iy0 = max(0, int((y - r - lo[1]) / cell))
        iy1 = min(ny - 1, int((y + r - lo[1]) / cell))
        iz0 = 0
        iz1 = 0
        if dim == 3:
            iz0 = max(0, int((z - r - lo[2]) / cell))
            iz1 = min(nz - 1, int((z + r - lo[2]) / cell))
        for iz in range(iz0, iz1 + 1):
            for iy in range(iy0, iy1 + 1):
                for ix in range(ix0, ix1 + 1):
                    j = head[(iz * ny + iy) * nx + ix]
                    while j >= 0:
                        dx = pos[j, 0] - x
                        dy = pos[j, 1] - y
                        dz = pos[j, 2] - z
                        if dx * dx + dy * dy + dz * dz <= r2:
                            cnt += 1
                        j = nxt[j]
        counts[t] = cnt if cnt < max_n else max_n

    indptr = np.zeros(nt + 1, dtype=np.int64)
    for t in range(nt):
        indptr[t + 1] = indptr[t] + counts[t]
    total = indptr[nt]
    indices = np.empty(total, dtype=np.int64)
    coeffs = np.zeros(total)
    status = np.zeros(nt, dtype=np.int64)
    M = exps.shape[0]

    tmp_idx = np.empty(n, dtype=np.int64)
    tmp_d2 = np.empty(n)
    for t in range(nt):
        r = th[t]
        r2 = r * r
        x = tpos[t, 0]
        y = tpos[t, 1]
        z = tpos[t, 2]
        cnt = 0
        ix0 = max(0, int((x - r - lo[0]) / cell))
        ix1 = min(nx - 1, int((x + r - lo[0]) / cell))
        iy0 = max(0, int((y - r - lo[1]) / cell))
        iy1 = min(ny - 1, int((y + r - lo[1]) / cell))
        iz0 = 0
        iz1 = 0
        if dim == 3:
            iz0 = max(0, int((z - r - lo[2]) / cell))
            iz1 = min(nz - 1, int((z + r - lo[2]) / cell))
        for iz in range(iz0, iz1 + 1):
            for iy in range(iy0, iy1 + 1):
                for ix in range(ix0, ix1 + 1):
                    j = head[(iz * ny + iy) * nx + ix]
                    while j >= 0:
                        dx = pos[j, 0] - x
                        dy = pos[j, 1] - y
                        dz = pos[j, 2] - z
                        d2 = dx * dx + dy * dy + dz * dz
                        if d2 <= r2:
                            kk = cnt
                            while kk > 0:
                                if tmp_d2[kk - 1] > d2 or (
                                    tmp_d2[kk - 1] == d2 and tmp_idx[kk - 1] > j
                                ):
                                    tmp_d2[kk] = tmp_d2[kk - 1]
                                    tmp_idx[kk] = tmp_idx[kk - 1]
                                    kk -= 1
                                else:
                                    break
                            tmp_d2[kk] = d2
                            tmp_idx[kk] = j
                            cnt += 1
                        j = nxt[j]
        if cnt > 0:
            nearest[t] = tmp_idx[0]
        k = cnt if cnt < max_n else max_n
        ob = indptr[t]
        for q in range(k):
            indices[ob + q] = tmp_idx[q]
        if k < M:
            status[t] = 1
            continue

        b = np.empty(M)
        for a in range(M):
            b[a] = pattern[a]
        hi_ = th[t]
        E = np.empty((M, k))
        w2 = np.empty(k)
        for q in range(k):
            j = tmp_idx[q]
            xi = (pos[j, 0] - x) / hi_
            yi = (pos[j, 1] - y) / hi_
            zi = (pos[j, 2] - z) / hi_ if dim == 3 else 0.0
            wj = np.exp(-cw * tmp_d2[q] / (hi_ * hi_ + hs[j] * hs[j]))
            w2[q] = wj * wj
            for a in range(M):
                v = 1.0
                for _ in range(exps[a, 0]):
                    v *= xi
                for _ in range(exps[a, 1]):
                    v *= yi
                for _ in range(exps[a, 2]):
                    v *= zi
                E[a, q] = v
        G = np.zeros((M, M))
        for a in range(M):
            for bb in range(a, M):
                s = 0.0
                for q in range(k):
                    s += w2[q] * E[a, q] * E[bb, q]
                G[a, bb] = s
                G[bb, a] = s
        lam, ok = _solve_spd(G, b, M)
        if not ok:
            lam = _solve_pinv(G, b)
        for q in range(k):
            s = 0.0
            for a in range(M):
                s += E[a, q] * lam[a]
            coeffs[ob + q] = w2[q] * s
        bn = 0.0
        rn = 0.0
        for a in range(M):
            s = 0.0
            for q in range(k):
                s += E[a, q] * coeffs[ob + q]
            rr = s - b[a]
            rn += rr * rr
            bn += b[a] * b[a]
        if rn > (1e-9 * 1e-9) * (bn if bn > 0.0 else 1.0):
            status[t] = 2
    return indptr, indices, coeffs, status, nearest
