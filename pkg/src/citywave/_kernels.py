"""Compiled hot loops for ray tracing.

Everything here works on flat float64/int64 arrays prepared by
raytrace.compile_scene / build_index. Surfaces carry stable ids:
0 = ground plane, 1..n_fac = facades, n_fac+1.. = roofs (by building).
Hit comparisons use strict 'less', with smaller surface id winning exact
ties, so the grid traversal and the brute-force oracle agree bitwise.
"""

import numpy as np
from numba import njit

INF = np.inf


@njit(cache=True, nogil=True, inline="always")
def _test_building(
    b, px, py, pz, dx, dy, dz, t_min, best_t, best_sid,
    fac_x0, fac_y0, fac_nx, fac_ny, fac_ux, fac_uy, fac_len, fac_h,
    bld_fac_start, roof_vx, roof_vy, roof_off, roof_h, n_fac,
):
    for f in range(bld_fac_start[b], bld_fac_start[b + 1]):
        nx = fac_nx[f]
        ny = fac_ny[f]
        den = dx * nx + dy * ny
        if den == 0.0:
            continue
        t = ((fac_x0[f] - px) * nx + (fac_y0[f] - py) * ny) / den
        if t <= t_min:
            continue
        if t > best_t or (t == best_t and 1 + f >= best_sid):
            continue
        z = pz + t * dz
        if z < 0.0 or z > fac_h[f]:
            continue
        hx = px + t * dx - fac_x0[f]
        hy = py + t * dy - fac_y0[f]
        s = hx * fac_ux[f] + hy * fac_uy[f]
        if s < 0.0 or s > fac_len[f]:
            continue
        best_t = t
        best_sid = 1 + f
    # roof: horizontal polygon at roof_h[b]
    if dz != 0.0:
        t = (roof_h[b] - pz) / dz
        sid = 1 + n_fac + b
        if t > t_min and (t < best_t or (t == best_t and sid < best_sid)):
            x = px + t * dx
            y = py + t * dy
            inside = True
            lo = roof_off[b]
            hi = roof_off[b + 1]
            for k in range(lo, hi):
                k2 = k + 1 if k + 1 < hi else lo
                cross = (roof_vx[k2] - roof_vx[k]) * (y - roof_vy[k]) - (roof_vy[k2] - roof_vy[k]) * (x - roof_vx[k])
                if cross < 0.0:
                    inside = False
                    break
            if inside:
                best_t = t
                best_sid = sid
    return best_t, best_sid


@njit(cache=True, nogil=True)
def nearest_hit(
    px, py, pz, dx, dy, dz, t_min,
    fac_x0, fac_y0, fac_nx, fac_ny, fac_ux, fac_uy, fac_len, fac_h,
    bld_fac_start, roof_vx, roof_vy, roof_off, roof_h,
    cell_start, cell_items, gx0, gy0, gs, gn,
    stamps, stamp,
):
    """First surface hit along the ray, via the leaf-grid traversal.

    stamps/stamp skip re-testing a building referenced by several visited
    leaves; the stamp value must be fresh for every call.
    """
    n_fac = fac_x0.shape[0]
    n_bld = roof_h.shape[0]
    best_t = INF
    best_sid = -1
    if dz < 0.0 and pz > 0.0:
        t = -pz / dz
        if t > t_min:
            best_t = t
            best_sid = 0
    if n_bld == 0:
        return best_t, best_sid

    h2 = dx * dx + dy * dy
    if h2 < 1e-24:
        # vertical ray: single grid column
        ix = int(np.floor((px - gx0) / gs))
        iy = int(np.floor((py - gy0) / gs))
        if 0 <= ix < gn and 0 <= iy < gn:
            c = iy * gn + ix
            for q in range(cell_start[c], cell_start[c + 1]):
                best_t, best_sid = _test_building(
                    cell_items[q], px, py, pz, dx, dy, dz, t_min, best_t, best_sid,
                    fac_x0, fac_y0, fac_nx, fac_ny, fac_ux, fac_uy, fac_len, fac_h,
                    bld_fac_start, roof_vx, roof_vy, roof_off, roof_h, n_fac,
                )
        return best_t, best_sid

    # clip to the grid square [gx0, gx0+gn*gs] x [gy0, gy0+gn*gs]
    size = gn * gs
    t_enter = t_min
    t_exit = best_t if best_t < INF else 1e30
    if dx != 0.0:
        ta = (gx0 - px) / dx
        tb = (gx0 + size - px) / dx
        if ta > tb:
            ta, tb = tb, ta
        if ta > t_enter:
            t_enter = ta
        if tb < t_exit:
            t_exit = tb
    elif px < gx0 or px > gx0 + size:
        return best_t, best_sid
    if dy != 0.0:
        ta = (gy0 - py) / dy
        tb = (gy0 + size - py) / dy
        if ta > tb:
            ta, tb = tb, ta
        if ta > t_enter:
            t_enter = ta
        if tb < t_exit:
            t_exit = tb
    elif py < gy0 or py > gy0 + size:
        return best_t, best_sid
    if t_enter > t_exit:
        return best_t, best_sid

    t0 = t_enter if t_enter > t_min else t_min
    sx = px + t0 * dx
    sy = py + t0 * dy
    ix = int(np.floor((sx - gx0) / gs))
    iy = int(np.floor((sy - gy0) / gs))
    if ix < 0:
        ix = 0
    if ix >= gn:
        ix = gn - 1
    if iy < 0:
        iy = 0
    if iy >= gn:
        iy = gn - 1

    if dx > 0.0:
        step_x = 1
        t_max_x = ((gx0 + (ix + 1) * gs) - px) / dx
        t_dx = gs / dx
    elif dx < 0.0:
        step_x = -1
        t_max_x = ((gx0 + ix * gs) - px) / dx
        t_dx = -gs / dx
    else:
        step_x = 0
        t_max_x = 1e30
        t_dx = 1e30
    if dy > 0.0:
        step_y = 1
        t_max_y = ((gy0 + (iy + 1) * gs) - py) / dy
        t_dy = gs / dy
    elif dy < 0.0:
        step_y = -1
        t_max_y = ((gy0 + iy * gs) - py) / dy
        t_dy = -gs / dy
    else:
        step_y = 0
        t_max_y = 1e30
        t_dy = 1e30

    t_here = t0
    while True:
        c = iy * gn + ix
        for q in range(cell_start[c], cell_start[c + 1]):
            b = cell_items[q]
            if stamps[b] == stamp:
                continue
            stamps[b] = stamp
            best_t, best_sid = _test_building(
                b, px, py, pz, dx, dy, dz, t_min, best_t, best_sid,
                fac_x0, fac_y0, fac_nx, fac_ny, fac_ux, fac_uy, fac_len, fac_h,
                bld_fac_start, roof_vx, roof_vy, roof_off, roof_h, n_fac,
            )
        if t_max_x < t_max_y:
            t_here = t_max_x
            t_max_x += t_dx
            ix += step_x
            if ix < 0 or ix >= gn:
                break
        else:
            t_here = t_max_y
            t_max_y += t_dy
            iy += step_y
            if iy < 0 or iy >= gn:
                break
        if t_here > best_t or t_here > t_exit:
            break
    return best_t, best_sid


@njit(cache=True, nogil=True)
def trace_chunk(
    ox, oy, oz, dirs, omegas, start_ray,
    gamma, power_floor, max_bounces, r_domain, max_roof,
    fac_x0, fac_y0, fac_nx, fac_ny, fac_ux, fac_uy, fac_len, fac_h,
    bld_fac_start, roof_vx, roof_vy, roof_off, roof_h,
    cell_start, cell_items, gx0, gy0, gs, gn,
    out_x, out_y, out_dx, out_dy, out_dz, out_n, out_w,
):
    """Trace rays [start_ray..) until the output buffer nears capacity.

    Returns (next_ray_index, hits_written, grazing_terminations).
    """
    n_fac = fac_x0.shape[0]
    cap = out_x.shape[0]
    n_rays = dirs.shape[0]
    r_dom2 = r_domain * r_domain
    n_hits = 0
    grazes = 0
    stamps = np.full(roof_h.shape[0], -1, dtype=np.int64)
    stamp = 0
    i = start_ray
    while i < n_rays:
        if n_hits + max_bounces + 2 > cap:
            break
        px = ox
        py = oy
        pz = oz
        dx = dirs[i, 0]
        dy = dirs[i, 1]
        dz = dirs[i, 2]
        w = omegas[i]
        pw = 1.0
        nb = 0
        while True:
            stamp += 1
            t, sid = nearest_hit(
                px, py, pz, dx, dy, dz, 1e-9,
                fac_x0, fac_y0, fac_nx, fac_ny, fac_ux, fac_uy, fac_len, fac_h,
                bld_fac_start, roof_vx, roof_vy, roof_off, roof_h,
                cell_start, cell_items, gx0, gy0, gs, gn,
                stamps, stamp,
            )
            if sid < 0:
                break
            px += t * dx
            py += t * dy
            pz += t * dz
            if sid == 0:
                out_x[n_hits] = px
                out_y[n_hits] = py
                out_dx[n_hits] = dx
                out_dy[n_hits] = dy
                out_dz[n_hits] = dz
                out_n[n_hits] = nb
                out_w[n_hits] = w
                n_hits += 1
                pz = 0.0
                if -dz < 1e-12:
                    grazes += 1
                    break
                dz = -dz
            elif sid <= n_fac:
                f = sid - 1
                nx = fac_nx[f]
                ny = fac_ny[f]
                dd = dx * nx + dy * ny
                if abs(dd) < 1e-12:
                    grazes += 1
                    break
                dx -= 2.0 * dd * nx
                dy -= 2.0 * dd * ny
            else:
                pz = roof_h[sid - 1 - n_fac]
                if abs(dz) < 1e-12:
                    grazes += 1
                    break
                dz = -dz
            nb += 1
            pw *= gamma
            if pw < power_floor or nb > max_bounces:
                break
            rr = px * px + py * py
            if rr > r_dom2 and (px * dx + py * dy) > 0.0:
                break
            if pz >= max_roof and dz >= 0.0:
                break
        i += 1
    return i, n_hits, grazes
