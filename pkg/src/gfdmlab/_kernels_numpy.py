"""Pure-numpy fallback implementations of the hot kernels.

Functionally equivalent to :mod:`gfdmlab._kernels_numba` (the cloud sweeps
use the same counter-based RNG and iteration order, so generated point sets
are identical). Neighbor search is blocked brute force and stencil assembly
is batched linear algebra; both are considerably slower than the numba path
on large clouds — see ``benchmarks/bench_kernels.py``.
"""

import numpy as np

_MASK = 0xFFFFFFFFFFFFFFFF
_INV53 = 1.0 / 9007199254740992.0


def _mix64(z: int) -> int:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9 & _MASK
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB & _MASK
    return z ^ (z >> 31)


def _cand_key(seed: int, rnd: int, cell: int) -> int:
    k = seed * 0x9E3779B97F4A7C15 & _MASK
    k ^= _mix64((rnd + 1) * 0xD1B54A32D192ED03 & _MASK)
    k ^= _mix64((cell + 1) * 0x8CB92BA72F3D8DD7 & _MASK)
    return _mix64(k)


def _u01(key: int, i: int) -> float:
    return float(_mix64((key + i * 0x9E3779B97F4A7C15) & _MASK) >> 11) * _INV53


def _field_h_one(fieldp, x, y):
    d = np.sqrt((x - fieldp[0]) ** 2 + (y - fieldp[1]) ** 2) - fieldp[2]
    d = max(d, 0.0)
    if d <= fieldp[3]:
        return fieldp[5]
    if fieldp[4] <= 0.0 or d >= fieldp[3] + fieldp[4]:
        return fieldp[6]
    return fieldp[5] + (fieldp[6] - fieldp[5]) * (d - fieldp[3]) / fieldp[4]


def _inside_one(geomp, x, y, z):
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
# neighbor search (blocked brute force)
# ---------------------------------------------------------------------------

def neighbor_csr(pos, hs, alive, n, dim, cell):
    alive_idx = np.flatnonzero(alive[:n])
    indptr = np.zeros(n + 1, dtype=np.int64)
    rows_idx: list[np.ndarray] = []
    rows_d2: list[np.ndarray] = []
    apos = pos[alive_idx]
    counts = np.zeros(n, dtype=np.int64)
    block = 512
    per_row: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for s in range(0, alive_idx.size, block):
        rows = alive_idx[s : s + block]
        diff = pos[rows][:, None, :] - apos[None, :, :]
        d2 = (
            diff[:, :, 0] * diff[:, :, 0]
            + diff[:, :, 1] * diff[:, :, 1]
            + diff[:, :, 2] * diff[:, :, 2]
        )
        within = d2 <= (hs[rows] ** 2)[:, None]
        for r, i in enumerate(rows):
            sel = np.flatnonzero(within[r])
            js = alive_idx[sel]
            dd = d2[r, sel]
            order = np.lexsort((js, dd))
            per_row[int(i)] = (js[order], dd[order])
            counts[i] = js.size
    for i in range(n):
        indptr[i + 1] = indptr[i] + counts[i]
        if counts[i]:
            js, dd = per_row[i]
            rows_idx.append(js)
            rows_d2.append(dd)
    indices = np.concatenate(rows_idx) if rows_idx else np.empty(0, dtype=np.int64)
    dist2 = np.concatenate(rows_d2) if rows_d2 else np.empty(0)
    return indptr, indices.astype(np.int64), dist2


# ---------------------------------------------------------------------------
# cloud maintenance
# ---------------------------------------------------------------------------

def _conflict_scan(pos, hs, alive, n, x, y, z, hc, r_fac, skip):
    """Same contract as the numba helper but brute force over alive points."""
    best = 1e300
    worst = -1
    idx = np.flatnonzero(alive[:n])
    if skip >= 0:
        idx = idx[idx != skip]
    if idx.size == 0:
        return best, worst
    d = pos[idx]
    dx = d[:, 0] - x
    dy = d[:, 1] - y
    dz = d[:, 2] - z
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    hm = np.minimum(hc, hs[idx])
    # min margin is always attained nearby, so scanning everything gives the
    # same accept/close decisions as the grid-ring scan in the numba path
    margins = dist - r_fac * hm
    k = int(np.argmin(margins))
    if margins[k] < best:
        best = float(margins[k])
        worst = int(idx[k])
    return best, worst


def _nearest_alive(pos, alive, n, i, rmax):
    idx = np.flatnonzero(alive[:n])
    idx = idx[idx != i]
    if idx.size == 0:
        return -1, 1e300
    d = pos[idx] - pos[i]
    dist = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2 + d[:, 2] ** 2)
    k = int(np.argmin(dist))
    if dist[k] <= rmax:
        return int(idx[k]), float(dist[k])
    return -1, 1e300


def reorg_core(pos, hs, kinds, alive, n0, dim, geomp, fieldp,
               r_min, r_max, r_ins, rounds, seed, do_merge, strat_cell):
    cap = pos.shape[0]
    live = np.flatnonzero(alive[:n0])
    hs[live] = [_field_h_one(fieldp, pos[i, 0], pos[i, 1]) for i in live]

    hi = [geomp[1], geomp[2], geomp[3] if dim == 3 else strat_cell]
    nx = max(1, int(np.ceil(hi[0] / strat_cell)))
    ny = max(1, int(np.ceil(hi[1] / strat_cell)))
    nz = max(1, int(np.ceil(hi[2] / strat_cell))) if dim == 3 else 1
    ncells = nx * ny * nz

    n_merged = 0
    if do_merge:
        for i in range(n0):
            if not alive[i]:
                continue
            margin, j = _conflict_scan(pos, hs, alive, n0, pos[i, 0], pos[i, 1],
                                       pos[i, 2], hs[i], r_min, i)
            while margin < 0.0 and j >= 0:
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
                margin, j = _conflict_scan(pos, hs, alive, n0, pos[i, 0],
                                           pos[i, 1], pos[i, 2], hs[i], r_min, i)

    n = n0
    n_inserted = 0
    open_cell = np.ones(ncells, dtype=bool)
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
            x = (cx + _u01(key, 0)) * strat_cell
            y = (cy + _u01(key, 1)) * strat_cell
            z = (cz + _u01(key, 2)) * strat_cell if dim == 3 else 0.0
            if not _inside_one(geomp, x, y, z):
                continue
            hc = _field_h_one(fieldp, x, y)
            margin, _ = _conflict_scan(pos, hs, alive, n, x, y, z, hc, r_ins, -1)
            if margin >= 0.0:
                if n >= cap:
                    return -1, n_merged, n_inserted, 0
                pos[n] = (x, y, z)
                hs[n] = hc
                kinds[n] = 0
                alive[n] = True
                n += 1
                n_inserted += 1
                inserted_round += 1
            elif margin <= -diag:
                open_cell[c] = False
        if inserted_round == 0 and rnd > 0:
            break

    n_unrepaired = 0
    n_scan = n
    for i in range(n_scan):
        if not alive[i] or kinds[i] != 0:
            continue
        hi_ = hs[i]
        j, d = _nearest_alive(pos, alive, n, i, r_max * hi_)
        if j >= 0:
            continue
        j, d = _nearest_alive(pos, alive, n, i, 3.0 * hi_)
        placed = False
        x = y = z = 0.0
        if j >= 0:
            step = min(d * 0.5, 0.35 * hi_)
            u = (pos[j] - pos[i]) / d
            x, y, z = pos[i] + step * u
            if _inside_one(geomp, x, y, z):
                hc = _field_h_one(fieldp, x, y)
                margin, _ = _conflict_scan(pos, hs, alive, n, x, y, z, hc, r_min, -1)
                if margin >= 0.0:
                    placed = True
        if not placed:
            key = _cand_key(seed, 9999, i)
            phase = _u01(key, 0) * 6.283185307179586
            for attempt in range(8):
                ang = phase + attempt * 0.7853981633974483
                x = pos[i, 0] + 0.3 * hi_ * np.cos(ang)
                y = pos[i, 1] + 0.3 * hi_ * np.sin(ang)
                z = pos[i, 2]
                if dim == 3:
                    z = pos[i, 2] + 0.3 * hi_ * (_u01(key, attempt + 1) - 0.5)
                if not _inside_one(geomp, x, y, z):
                    continue
                hc = _field_h_one(fieldp, x, y)
                margin, _ = _conflict_scan(pos, hs, alive, n, x, y, z, hc, r_min, -1)
                if margin >= 0.0:
                    placed = True
                    break
        if placed:
            if n >= cap:
                return -1, n_merged, n_inserted, 0
            pos[n] = (x, y, z)
            hs[n] = _field_h_one(fieldp, x, y)
            kinds[n] = 0
            alive[n] = True
            n += 1
            n_inserted += 1
        else:
            n_unrepaired += 1

    return n, n_merged, n_inserted, n_unrepaired


# ---------------------------------------------------------------------------
# stencil assembly (batched, SVD-based)
# ---------------------------------------------------------------------------

def _pinv_solve_batch(G, b):
    """Minimum-norm solve of G x = b for stacked (n, M, M)."""
    U, s, Vt = np.linalg.svd(G)
    cut = 1e-12 * s[:, :1]
    inv = np.where(s > cut, 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return np.einsum("nma,nm,nbm,nb->na", Vt, inv, U, b)


def stencil_batch(pos, hs, indptr, indices, dist2, want, dim,
                  exps, pattern, hpow, cw, max_n):
    nw = want.shape[0]
    M = exps.shape[0]
    lens = np.minimum(indptr[want + 1] - indptr[want], max_n)
    indptr2 = np.zeros(nw + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr2[1:])
    total = int(indptr2[nw])
    indices2 = np.empty(total, dtype=np.int64)
    coeffs = np.zeros(total)
    status = np.zeros(nw, dtype=np.int64)
    status[lens < M] = 1

    kmax = int(lens.max()) if nw else 0
    if kmax == 0:
        return indptr2, indices2, coeffs, status

    # padded gather
    nb = np.zeros((nw, kmax), dtype=np.int64)
    d2 = np.zeros((nw, kmax))
    madeup = np.ones((nw, kmax), dtype=bool)  # True where padding
    for w in range(nw):
        i = want[w]
        k = lens[w]
        sl = slice(indptr[i], indptr[i] + k)
        nb[w, :k] = indices[sl]
        d2[w, :k] = dist2[sl]
        madeup[w, :k] = False
        indices2[indptr2[w] : indptr2[w] + k] = indices[sl]

    ctr = pos[want]
    hcen = hs[want]
    xi = (pos[nb] - ctr[:, None, :]) / hcen[:, None, None]
    if dim == 2:
        xi[:, :, 2] = 0.0
    w2 = np.exp(-cw * d2 / (hcen[:, None] ** 2 + hs[nb] ** 2)) ** 2
    w2[madeup] = 0.0

    # E[n, a, k] = prod_d xi[n, k, d]^exps[a, d]
    E = np.ones((nw, M, kmax))
    for a in range(M):
        for d in range(3):
            e = int(exps[a, d])
            if e:
                E[:, a, :] *= xi[:, :, d] ** e
    G = np.einsum("nak,nk,nbk->nab", E, w2, E)
    b = pattern[None, :] / (hcen[:, None] ** hpow)

    ok_rows = np.flatnonzero(lens >= M)
    lam = np.zeros((nw, M))
    if ok_rows.size:
        lam[ok_rows] = _pinv_solve_batch(G[ok_rows], b[ok_rows])
    C = np.einsum("nak,na->nk", E, lam) * w2

    # exactness check
    resid = np.einsum("nak,nk->na", E, C) - b
    rn = np.einsum("na,na->n", resid, resid)
    bn = np.einsum("na,na->n", b, b)
    bad = rn > (1e-18) * np.where(bn > 0, bn, 1.0)
    status[(lens >= M) & bad] = 2

    for w in ok_rows:
        k = lens[w]
        coeffs[indptr2[w] : indptr2[w] + k] = C[w, :k]
    return indptr2, indices2, coeffs, status


def eval_stencil_batch(tpos, th, pos, hs, alive, n, dim, cell,
                       exps, pattern, cw, max_n):
    nt = tpos.shape[0]
    M = exps.shape[0]
    alive_idx = np.flatnonzero(alive[:n])
    indptr = np.zeros(nt + 1, dtype=np.int64)
    status = np.zeros(nt, dtype=np.int64)
    nearest = np.full(nt, -1, dtype=np.int64)
    all_idx: list[np.ndarray] = []
    all_coef: list[np.ndarray] = []
    apos = pos[alive_idx]
    for t in range(nt):
        if alive_idx.size == 0:
            status[t] = 1
            indptr[t + 1] = indptr[t]
            continue
        diff = apos - tpos[t]
        d2 = diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2
        sel = np.flatnonzero(d2 <= th[t] ** 2)
        js = alive_idx[sel]
        dd = d2[sel]
        order = np.lexsort((js, dd))
        js = js[order]
        dd = dd[order]
        if js.size:
            nearest[t] = js[0]
        k = min(js.size, max_n)
        js = js[:k]
        dd = dd[:k]
        indptr[t + 1] = indptr[t] + k
        all_idx.append(js)
        if k < M:
            status[t] = 1
            all_coef.append(np.zeros(k))
            continue
        hi_ = th[t]
        xi = (pos[js] - tpos[t]) / hi_
        if dim == 2:
            xi = xi.copy()
            xi[:, 2] = 0.0
        w2 = np.exp(-cw * dd / (hi_**2 + hs[js] ** 2)) ** 2
        E = np.ones((M, k))
        for a in range(M):
            for d in range(3):
                e = int(exps[a, d])
                if e:
                    E[a] *= xi[:, d] ** e
        G = (E * w2) @ E.T
        lam = _pinv_solve_batch(G[None], pattern[None].astype(float))[0]
        c = w2 * (E.T @ lam)
        resid = E @ c - pattern
        bn = float(pattern @ pattern)
        if float(resid @ resid) > 1e-18 * (bn if bn > 0 else 1.0):
            status[t] = 2
        all_coef.append(c)
    indices = (
        np.concatenate(all_idx).astype(np.int64) if all_idx else np.empty(0, np.int64)
    )
    coeffs = np.concatenate(all_coef) if all_coef else np.empty(0)
    return indptr, indices, coeffs, status, nearest
