"""Compiled kernels for contact generation, impulse solving and ray casts.

Body data lives in flat arrays owned by :class:`clutterlab.physics.world.World`.
Shape kinds: 0 cuboid, 1 cylinder, 2 sphere.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

CUBOID = 0
CYLINDER = 1
SPHERE = 2

STATUS_OK = 0
STATUS_DIVERGED = 1

# Stability threshold vector layout used by the settle kernel.
#   [lin_vel_max, lin_acc_max, ang_vel_max, ang_acc_max, reach_window, hold_window]


@njit(cache=True)
def quat_to_mat(q, out):
    w, x, y, z = q[0], q[1], q[2], q[3]
    out[0, 0] = 1.0 - 2.0 * (y * y + z * z)
    out[0, 1] = 2.0 * (x * y - w * z)
    out[0, 2] = 2.0 * (x * z + w * y)
    out[1, 0] = 2.0 * (x * y + w * z)
    out[1, 1] = 1.0 - 2.0 * (x * x + z * z)
    out[1, 2] = 2.0 * (y * z - w * x)
    out[2, 0] = 2.0 * (x * z - w * y)
    out[2, 1] = 2.0 * (y * z + w * x)
    out[2, 2] = 1.0 - 2.0 * (x * x + y * y)


@njit(cache=True)
def shape_sdf(kind, d0, d1, d2, qx, qy, qz):
    """Signed distance and outward unit gradient at a local point."""
    if kind == CUBOID:
        ax = abs(qx) - d0
        ay = abs(qy) - d1
        az = abs(qz) - d2
        ox = max(ax, 0.0)
        oy = max(ay, 0.0)
        oz = max(az, 0.0)
        out = math.sqrt(ox * ox + oy * oy + oz * oz)
        if out > 0.0:
            return (
                out,
                math.copysign(ox, qx) / out,
                math.copysign(oy, qy) / out,
                math.copysign(oz, qz) / out,
            )
        if ax >= ay and ax >= az:
            return ax, math.copysign(1.0, qx), 0.0, 0.0
        if ay >= az:
            return ay, 0.0, math.copysign(1.0, qy), 0.0
        return az, 0.0, 0.0, math.copysign(1.0, qz)
    if kind == CYLINDER:
        rho = math.sqrt(qx * qx + qy * qy)
        if rho > 1e-12:
            ux = qx / rho
            uy = qy / rho
        else:
            ux = 1.0
            uy = 0.0
        ar = rho - d0
        az = abs(qz) - d1
        if ar > 0.0 or az > 0.0:
            orr = max(ar, 0.0)
            oz = max(az, 0.0)
            out = math.sqrt(orr * orr + oz * oz)
            return out, ux * orr / out, uy * orr / out, math.copysign(oz, qz) / out
        if ar >= az:
            return ar, ux, uy, 0.0
        return az, 0.0, 0.0, math.copysign(1.0, qz)
    rr = math.sqrt(qx * qx + qy * qy + qz * qz)
    if rr > 1e-12:
        return rr - d0, qx / rr, qy / rr, qz / rr
    return -d0, 0.0, 0.0, 1.0


@njit(cache=True)
def _world_to_local(R, pos, wx, wy, wz):
    dx = wx - pos[0]
    dy = wy - pos[1]
    dz = wz - pos[2]
    return (
        R[0, 0] * dx + R[1, 0] * dy + R[2, 0] * dz,
        R[0, 1] * dx + R[1, 1] * dy + R[2, 1] * dz,
        R[0, 2] * dx + R[1, 2] * dy + R[2, 2] * dz,
    )


@njit(cache=True)
def _to_local_i(Rm, pos, j, wx, wy, wz):
    dx = wx - pos[j, 0]
    dy = wy - pos[j, 1]
    dz = wz - pos[j, 2]
    return (
        Rm[j, 0, 0] * dx + Rm[j, 1, 0] * dy + Rm[j, 2, 0] * dz,
        Rm[j, 0, 1] * dx + Rm[j, 1, 1] * dy + Rm[j, 2, 1] * dz,
        Rm[j, 0, 2] * dx + Rm[j, 1, 2] * dy + Rm[j, 2, 2] * dz,
    )


@njit(cache=True)
def _rot_i(Rm, j, x, y, z):
    return (
        Rm[j, 0, 0] * x + Rm[j, 0, 1] * y + Rm[j, 0, 2] * z,
        Rm[j, 1, 0] * x + Rm[j, 1, 1] * y + Rm[j, 1, 2] * z,
        Rm[j, 2, 0] * x + Rm[j, 2, 1] * y + Rm[j, 2, 2] * z,
    )


@njit(cache=True)
def _cross(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


@njit(cache=True)
def _mat_vec(M, x, y, z):
    return (
        M[0, 0] * x + M[0, 1] * y + M[0, 2] * z,
        M[1, 0] * x + M[1, 1] * y + M[1, 2] * z,
        M[2, 0] * x + M[2, 1] * y + M[2, 2] * z,
    )


@njit(cache=True)
def _push_contact(
    count, a, b, p, wx, wy, wz, nx, ny, nz, dist,
    pos, c_ab, c_key, c_r, c_n, c_dist,
):
    if count >= c_ab.shape[0]:
        return count
    c_ab[count, 0] = a
    c_ab[count, 1] = b
    c_key[count] = p
    c_r[count, 0] = wx - pos[a, 0]
    c_r[count, 1] = wy - pos[a, 1]
    c_r[count, 2] = wz - pos[a, 2]
    c_r[count, 3] = wx - pos[b, 0]
    c_r[count, 4] = wy - pos[b, 1]
    c_r[count, 5] = wz - pos[b, 2]
    c_n[count, 0] = nx
    c_n[count, 1] = ny
    c_n[count, 2] = nz
    c_dist[count] = dist
    return count + 1


@njit(cache=True)
def _swap_contact(i, j, c_ab, c_key, c_r, c_n, c_dist):
    if i == j:
        return
    for k in range(2):
        t = c_ab[i, k]
        c_ab[i, k] = c_ab[j, k]
        c_ab[j, k] = t
    t = c_key[i]
    c_key[i] = c_key[j]
    c_key[j] = t
    for k in range(6):
        f = c_r[i, k]
        c_r[i, k] = c_r[j, k]
        c_r[j, k] = f
    for k in range(3):
        f = c_n[i, k]
        c_n[i, k] = c_n[j, k]
        c_n[j, k] = f
    f = c_dist[i]
    c_dist[i] = c_dist[j]
    c_dist[j] = f


@njit(cache=True)
def _tri_area2(c_r, p, q, s):
    ux = c_r[q, 0] - c_r[p, 0]
    uy = c_r[q, 1] - c_r[p, 1]
    uz = c_r[q, 2] - c_r[p, 2]
    vx = c_r[s, 0] - c_r[p, 0]
    vy = c_r[s, 1] - c_r[p, 1]
    vz = c_r[s, 2] - c_r[p, 2]
    cx, cy, cz = _cross(ux, uy, uz, vx, vy, vz)
    return cx * cx + cy * cy + cz * cz


@njit(cache=True)
def _reduce_manifold(start, end, c_ab, c_key, c_r, c_n, c_dist):
    """Keep four contacts of a pair: deepest, then those spanning the most area.

    Near-ties go to the earlier candidate so the selection stays steady at rest.
    Returns the new end of the group.
    """
    if end - start <= 4:
        return end
    best = start
    for c in range(start + 1, end):
        if c_dist[c] < c_dist[best] - 1e-5:
            best = c
    _swap_contact(start, best, c_ab, c_key, c_r, c_n, c_dist)
    p0 = start
    best = start + 1
    best_v = -1.0
    for c in range(start + 1, end):
        dx = c_r[c, 0] - c_r[p0, 0]
        dy = c_r[c, 1] - c_r[p0, 1]
        dz = c_r[c, 2] - c_r[p0, 2]
        v = dx * dx + dy * dy + dz * dz
        if v > best_v + 1e-9:
            best_v = v
            best = c
    _swap_contact(start + 1, best, c_ab, c_key, c_r, c_n, c_dist)
    best = start + 2
    best_v = -1.0
    for c in range(start + 2, end):
        v = _tri_area2(c_r, p0, start + 1, c)
        if v > best_v + 1e-12:
            best_v = v
            best = c
    _swap_contact(start + 2, best, c_ab, c_key, c_r, c_n, c_dist)
    # Fourth point: the one farthest from the triangle on the far side of p0-p1.
    ux = c_r[start + 1, 0] - c_r[p0, 0]
    uy = c_r[start + 1, 1] - c_r[p0, 1]
    uz = c_r[start + 1, 2] - c_r[p0, 2]
    wx = c_r[start + 2, 0] - c_r[p0, 0]
    wy = c_r[start + 2, 1] - c_r[p0, 1]
    wz = c_r[start + 2, 2] - c_r[p0, 2]
    ref = _cross(ux, uy, uz, wx, wy, wz)
    best = start + 3
    best_v = -1.0
    for c in range(start + 3, end):
        vx = c_r[c, 0] - c_r[p0, 0]
        vy = c_r[c, 1] - c_r[p0, 1]
        vz = c_r[c, 2] - c_r[p0, 2]
        cx, cy, cz = _cross(ux, uy, uz, vx, vy, vz)
        v = -(cx * ref[0] + cy * ref[1] + cz * ref[2])
        if v > best_v + 1e-12:
            best_v = v
            best = c
    _swap_contact(start + 3, best, c_ab, c_key, c_r, c_n, c_dist)
    return start + 4


@njit(cache=True)
def collide(
    n, kind, dims, inv_mass, radius, npts, pts, pos, Rm, margin,
    c_ab, c_key, c_r, c_n, c_dist, reduce=True,
):
    """Generate contact candidates for all body pairs; returns the count.

    The normal of each contact points from body ``b`` toward body ``a``.
    """
    count = 0
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            if inv_mass[i] == 0.0 and inv_mass[j] == 0.0:
                continue
            dx = pos[i, 0] - pos[j, 0]
            dy = pos[i, 1] - pos[j, 1]
            dz = pos[i, 2] - pos[j, 2]
            reach = radius[i] + radius[j] + margin
            if dx * dx + dy * dy + dz * dz > reach * reach:
                continue
            ki = kind[i]
            kj = kind[j]
            if ki == SPHERE and kj == SPHERE:
                if j < i:
                    continue
                dd = math.sqrt(dx * dx + dy * dy + dz * dz)
                if dd > 1e-12:
                    nx, ny, nz = dx / dd, dy / dd, dz / dd
                else:
                    nx, ny, nz = 0.0, 0.0, 1.0
                dist = dd - dims[i, 0] - dims[j, 0]
                if dist < margin:
                    r = dims[i, 0]
                    count = _push_contact(
                        count, i, j, 0,
                        pos[i, 0] - nx * r, pos[i, 1] - ny * r, pos[i, 2] - nz * r,
                        nx, ny, nz, dist, pos, c_ab, c_key, c_r, c_n, c_dist,
                    )
                continue
            if ki == SPHERE:
                qx, qy, qz = _to_local_i(Rm, pos, j, pos[i, 0], pos[i, 1], pos[i, 2])
                d, gx, gy, gz = shape_sdf(kj, dims[j, 0], dims[j, 1], dims[j, 2], qx, qy, qz)
                dist = d - dims[i, 0]
                if dist < margin:
                    nx, ny, nz = _rot_i(Rm, j, gx, gy, gz)
                    r = dims[i, 0]
                    count = _push_contact(
                        count, i, j, 0,
                        pos[i, 0] - nx * r, pos[i, 1] - ny * r, pos[i, 2] - nz * r,
                        nx, ny, nz, dist, pos, c_ab, c_key, c_r, c_n, c_dist,
                    )
                continue
            if kj == SPHERE or inv_mass[i] == 0.0:
                continue
            start = count
            for p in range(npts[i]):
                ox, oy, oz = _rot_i(Rm, i, pts[i, p, 0], pts[i, p, 1], pts[i, p, 2])
                wx = pos[i, 0] + ox
                wy = pos[i, 1] + oy
                wz = pos[i, 2] + oz
                qx, qy, qz = _to_local_i(Rm, pos, j, wx, wy, wz)
                d, gx, gy, gz = shape_sdf(kj, dims[j, 0], dims[j, 1], dims[j, 2], qx, qy, qz)
                if d < margin:
                    nx, ny, nz = _rot_i(Rm, j, gx, gy, gz)
                    count = _push_contact(
                        count, i, j, p, wx, wy, wz, nx, ny, nz, d,
                        pos, c_ab, c_key, c_r, c_n, c_dist,
                    )
            if reduce:
                count = _reduce_manifold(start, count, c_ab, c_key, c_r, c_n, c_dist)
    return count


@njit(cache=True)
def _tangents(nx, ny, nz):
    ax = abs(nx)
    ay = abs(ny)
    az = abs(nz)
    if ax <= ay and ax <= az:
        tx, ty, tz = _cross(nx, ny, nz, 1.0, 0.0, 0.0)
    elif ay <= az:
        tx, ty, tz = _cross(nx, ny, nz, 0.0, 1.0, 0.0)
    else:
        tx, ty, tz = _cross(nx, ny, nz, 0.0, 0.0, 1.0)
    inv = 1.0 / math.sqrt(tx * tx + ty * ty + tz * tz)
    tx *= inv
    ty *= inv
    tz *= inv
    sx, sy, sz = _cross(nx, ny, nz, tx, ty, tz)
    return tx, ty, tz, sx, sy, sz


@njit(cache=True)
def _row_velocity(a, b, J, c, r, vel, angvel):
    return (
        J[c, r, 0] * (vel[a, 0] - vel[b, 0])
        + J[c, r, 1] * (vel[a, 1] - vel[b, 1])
        + J[c, r, 2] * (vel[a, 2] - vel[b, 2])
        + J[c, r, 3] * angvel[a, 0] + J[c, r, 4] * angvel[a, 1] + J[c, r, 5] * angvel[a, 2]
        - J[c, r, 6] * angvel[b, 0] - J[c, r, 7] * angvel[b, 1] - J[c, r, 8] * angvel[b, 2]
    )


@njit(cache=True)
def _row_apply(a, b, lam, J, c, r, ima, imb, vel, angvel):
    if ima > 0.0:
        s = lam * ima
        vel[a, 0] += s * J[c, r, 0]
        vel[a, 1] += s * J[c, r, 1]
        vel[a, 2] += s * J[c, r, 2]
        angvel[a, 0] += lam * J[c, r, 9]
        angvel[a, 1] += lam * J[c, r, 10]
        angvel[a, 2] += lam * J[c, r, 11]
    if imb > 0.0:
        s = lam * imb
        vel[b, 0] -= s * J[c, r, 0]
        vel[b, 1] -= s * J[c, r, 1]
        vel[b, 2] -= s * J[c, r, 2]
        angvel[b, 0] -= lam * J[c, r, 12]
        angvel[b, 1] -= lam * J[c, r, 13]
        angvel[b, 2] -= lam * J[c, r, 14]


@njit(cache=True)
def _iw_vec(Iw, i, x, y, z):
    return (
        Iw[i, 0, 0] * x + Iw[i, 0, 1] * y + Iw[i, 0, 2] * z,
        Iw[i, 1, 0] * x + Iw[i, 1, 1] * y + Iw[i, 1, 2] * z,
        Iw[i, 2, 0] * x + Iw[i, 2, 1] * y + Iw[i, 2, 2] * z,
    )


@njit(cache=True)
def _build_row(J, c, r, ux, uy, uz, rax, ray, raz, rbx, rby, rbz, Iw, a, b, ima, imb):
    """Fill a constraint row: direction, r x u for both bodies and I^-1 (r x u).

    Returns the effective mass along the row.
    """
    J[c, r, 0] = ux
    J[c, r, 1] = uy
    J[c, r, 2] = uz
    cx, cy, cz = _cross(rax, ray, raz, ux, uy, uz)
    J[c, r, 3] = cx
    J[c, r, 4] = cy
    J[c, r, 5] = cz
    ix, iy, iz = _iw_vec(Iw, a, cx, cy, cz)
    J[c, r, 9] = ix
    J[c, r, 10] = iy
    J[c, r, 11] = iz
    k = ima + imb + cx * ix + cy * iy + cz * iz
    cx, cy, cz = _cross(rbx, rby, rbz, ux, uy, uz)
    J[c, r, 6] = cx
    J[c, r, 7] = cy
    J[c, r, 8] = cz
    ix, iy, iz = _iw_vec(Iw, b, cx, cy, cz)
    J[c, r, 12] = ix
    J[c, r, 13] = iy
    J[c, r, 14] = iz
    k += cx * ix + cy * iy + cz * iz
    if k <= 0.0:
        return 0.0
    return 1.0 / k


@njit(cache=True)
def step_kernel(
    n, kind, dims, inv_mass, inv_inertia, friction, restitution, radius, npts, pts,
    pos, quat, vel, angvel,
    gravity, dt, iterations, baumgarte, slop, margin, max_correction, rest_threshold,
    cache, prev_ab, prev_key, prev_count,
    c_ab, c_key, c_r, c_n, c_J, c_dist, c_mass, c_target, c_P, c_mu,
):
    """Advance the world by one semi-implicit Euler step.

    Returns ``STATUS_DIVERGED`` if any dynamic body state becomes non-finite.
    """
    Rm = np.empty((n, 3, 3))
    Iw = np.zeros((n, 3, 3))
    for i in range(n):
        quat_to_mat(quat[i], Rm[i])
        if inv_mass[i] > 0.0:
            vel[i, 0] += gravity[0] * dt
            vel[i, 1] += gravity[1] * dt
            vel[i, 2] += gravity[2] * dt
            R = Rm[i]
            for r in range(3):
                for c in range(3):
                    s = 0.0
                    for k in range(3):
                        s += R[r, k] * inv_inertia[i, k] * R[c, k]
                    Iw[i, r, c] = s

    count = collide(
        n, kind, dims, inv_mass, radius, npts, pts, pos, Rm, margin,
        c_ab, c_key, c_r, c_n, c_dist,
    )

    for c in range(count):
        a = c_ab[c, 0]
        b = c_ab[c, 1]
        ima = inv_mass[a]
        imb = inv_mass[b]
        nx, ny, nz = c_n[c, 0], c_n[c, 1], c_n[c, 2]
        tx, ty, tz, sx, sy, sz = _tangents(nx, ny, nz)
        rax, ray, raz = c_r[c, 0], c_r[c, 1], c_r[c, 2]
        rbx, rby, rbz = c_r[c, 3], c_r[c, 4], c_r[c, 5]
        c_mass[c, 0] = _build_row(c_J, c, 0, nx, ny, nz, rax, ray, raz, rbx, rby, rbz, Iw, a, b, ima, imb)
        c_mass[c, 1] = _build_row(c_J, c, 1, tx, ty, tz, rax, ray, raz, rbx, rby, rbz, Iw, a, b, ima, imb)
        c_mass[c, 2] = _build_row(c_J, c, 2, sx, sy, sz, rax, ray, raz, rbx, rby, rbz, Iw, a, b, ima, imb)
        c_mu[c] = math.sqrt(friction[a] * friction[b])
        dist = c_dist[c]
        if dist > 0.0:
            target = -dist / dt
        else:
            target = min(baumgarte / dt * max(-dist - slop, 0.0), max_correction)
        vn = _row_velocity(a, b, c_J, c, 0, vel, angvel)
        e = max(restitution[a], restitution[b])
        if vn < -rest_threshold and dist <= slop:
            target = max(target, -e * vn)
        c_target[c] = target
        # Warm start from the previous step's accumulated impulses.
        p = c_key[c]
        for r in range(3):
            c_P[c, r] = cache[a, b, p, r]
            if c_P[c, r] != 0.0:
                _row_apply(a, b, c_P[c, r], c_J, c, r, ima, imb, vel, angvel)

    for _ in range(iterations):
        for c in range(count):
            a = c_ab[c, 0]
            b = c_ab[c, 1]
            ima = inv_mass[a]
            imb = inv_mass[b]
            max_f = c_mu[c] * c_P[c, 0]
            for r in range(1, 3):
                lam = -c_mass[c, r] * _row_velocity(a, b, c_J, c, r, vel, angvel)
                old = c_P[c, r]
                new = min(max(old + lam, -max_f), max_f)
                lam = new - old
                c_P[c, r] = new
                if lam != 0.0:
                    _row_apply(a, b, lam, c_J, c, r, ima, imb, vel, angvel)
            lam = c_mass[c, 0] * (c_target[c] - _row_velocity(a, b, c_J, c, 0, vel, angvel))
            old = c_P[c, 0]
            new = max(old + lam, 0.0)
            lam = new - old
            c_P[c, 0] = new
            if lam != 0.0:
                _row_apply(a, b, lam, c_J, c, 0, ima, imb, vel, angvel)

    # Refresh the warm-start cache.
    for k in range(prev_count[0]):
        a = prev_ab[k, 0]
        b = prev_ab[k, 1]
        p = prev_key[k]
        cache[a, b, p, 0] = 0.0
        cache[a, b, p, 1] = 0.0
        cache[a, b, p, 2] = 0.0
    for c in range(count):
        a = c_ab[c, 0]
        b = c_ab[c, 1]
        p = c_key[c]
        cache[a, b, p, 0] = c_P[c, 0]
        cache[a, b, p, 1] = c_P[c, 1]
        cache[a, b, p, 2] = c_P[c, 2]
        prev_ab[c, 0] = a
        prev_ab[c, 1] = b
        prev_key[c] = p
    prev_count[0] = count

    status = STATUS_OK
    for i in range(n):
        if inv_mass[i] == 0.0:
            continue
        pos[i, 0] += vel[i, 0] * dt
        pos[i, 1] += vel[i, 1] * dt
        pos[i, 2] += vel[i, 2] * dt
        wx, wy, wz = angvel[i, 0], angvel[i, 1], angvel[i, 2]
        qw, qx, qy, qz = quat[i, 0], quat[i, 1], quat[i, 2], quat[i, 3]
        h = 0.5 * dt
        nw = qw + h * (-wx * qx - wy * qy - wz * qz)
        nx_ = qx + h * (wx * qw + wy * qz - wz * qy)
        ny_ = qy + h * (-wx * qz + wy * qw + wz * qx)
        nz_ = qz + h * (wx * qy - wy * qx + wz * qw)
        norm = math.sqrt(nw * nw + nx_ * nx_ + ny_ * ny_ + nz_ * nz_)
        if not (norm > 0.0) or not math.isfinite(norm):
            status = STATUS_DIVERGED
            continue
        quat[i, 0] = nw / norm
        quat[i, 1] = nx_ / norm
        quat[i, 2] = ny_ / norm
        quat[i, 3] = nz_ / norm
        for k in range(3):
            if not math.isfinite(pos[i, k]) or not math.isfinite(vel[i, k]) or not math.isfinite(angvel[i, k]):
                status = STATUS_DIVERGED
            if abs(vel[i, k]) > 1e3 or abs(angvel[i, k]) > 1e4:
                status = STATUS_DIVERGED
    return status


@njit(cache=True)
def below_thresholds(twist, accel, thr):
    """True when a step's twist and acceleration satisfy every threshold."""
    lv = math.sqrt(twist[0] * twist[0] + twist[1] * twist[1] + twist[2] * twist[2])
    av = math.sqrt(twist[3] * twist[3] + twist[4] * twist[4] + twist[5] * twist[5])
    la = math.sqrt(accel[0] * accel[0] + accel[1] * accel[1] + accel[2] * accel[2])
    aa = math.sqrt(accel[3] * accel[3] + accel[4] * accel[4] + accel[5] * accel[5])
    return lv < thr[0] and la < thr[1] and av < thr[2] and aa < thr[3]


@njit(cache=True)
def norm6(v):
    s = 0.0
    for k in range(6):
        s += v[k] * v[k]
    return math.sqrt(s)


@njit(cache=True)
def settle_kernel(
    body, k, thr, early_stop, out,
    n, kind, dims, inv_mass, inv_inertia, friction, restitution, radius, npts, pts,
    pos, quat, vel, angvel,
    gravity, dt, iterations, baumgarte, slop, margin, max_correction, rest_threshold,
    cache, prev_ab, prev_key, prev_count,
    c_ab, c_key, c_r, c_n, c_J, c_dist, c_mass, c_target, c_P, c_mu,
):
    """Step up to ``k`` times recording ``body``'s 13-vector each step.

    Returns ``(length, status, stable_step)``; ``stable_step`` is -1 when no
    hold window completed inside the reach window among recorded steps.
    """
    reach = int(thr[4])
    hold = int(thr[5])
    prev = np.zeros(6)
    twist = np.empty(6)
    accel = np.empty(6)
    run_start = -1
    run_len = 0
    stable_step = -1
    for i in range(k):
        status = step_kernel(
            n, kind, dims, inv_mass, inv_inertia, friction, restitution, radius, npts, pts,
            pos, quat, vel, angvel,
            gravity, dt, iterations, baumgarte, slop, margin, max_correction, rest_threshold,
            cache, prev_ab, prev_key, prev_count,
            c_ab, c_key, c_r, c_n, c_J, c_dist, c_mass, c_target, c_P, c_mu,
        )
        for c in range(3):
            out[i, c] = pos[body, c]
            out[i, 7 + c] = vel[body, c]
            out[i, 10 + c] = angvel[body, c]
        for c in range(4):
            out[i, 3 + c] = quat[body, c]
        if status != STATUS_OK:
            return i + 1, status, stable_step
        for c in range(6):
            twist[c] = out[i, 7 + c]
            accel[c] = (twist[c] - prev[c]) / dt
            prev[c] = twist[c]
        if stable_step < 0:
            if below_thresholds(twist, accel, thr):
                if run_len == 0:
                    run_start = i
                run_len += 1
                if run_len >= hold and run_start <= reach:
                    stable_step = run_start + hold
                    if early_stop:
                        return i + 1, STATUS_OK, stable_step
            else:
                run_len = 0
    return k, STATUS_OK, stable_step


@njit(cache=True)
def _sat_box_depth(Ra, ca, ha, Rb, cb, hb):
    """Exact penetration depth of two oriented boxes (negative if apart)."""
    axes = np.empty((15, 3))
    for i in range(3):
        for r in range(3):
            axes[i, r] = Ra[r, i]
            axes[3 + i, r] = Rb[r, i]
    m = 6
    for i in range(3):
        for j in range(3):
            x, y, z = _cross(Ra[0, i], Ra[1, i], Ra[2, i], Rb[0, j], Rb[1, j], Rb[2, j])
            nn = math.sqrt(x * x + y * y + z * z)
            if nn > 1e-9:
                axes[m, 0] = x / nn
                axes[m, 1] = y / nn
                axes[m, 2] = z / nn
                m += 1
    dx = cb[0] - ca[0]
    dy = cb[1] - ca[1]
    dz = cb[2] - ca[2]
    depth = 1e30
    for a in range(m):
        lx, ly, lz = axes[a, 0], axes[a, 1], axes[a, 2]
        ra = 0.0
        rb = 0.0
        for i in range(3):
            ra += ha[i] * abs(lx * Ra[0, i] + ly * Ra[1, i] + lz * Ra[2, i])
            rb += hb[i] * abs(lx * Rb[0, i] + ly * Rb[1, i] + lz * Rb[2, i])
        ov = ra + rb - abs(lx * dx + ly * dy + lz * dz)
        if ov < depth:
            depth = ov
    return depth


@njit(cache=True)
def pair_penetration(ki, di, npi, pi, posi, Ri, kj, dj, npj, pj, posj, Rj):
    """Largest penetration depth between two shapes (<= 0 when apart)."""
    if ki == CUBOID and kj == CUBOID:
        return _sat_box_depth(Ri, posi, di, Rj, posj, dj)
    if ki == SPHERE and kj == SPHERE:
        dx = posi[0] - posj[0]
        dy = posi[1] - posj[1]
        dz = posi[2] - posj[2]
        return di[0] + dj[0] - math.sqrt(dx * dx + dy * dy + dz * dz)
    if ki == SPHERE:
        qx, qy, qz = _world_to_local(Rj, posj, posi[0], posi[1], posi[2])
        d, _, _, _ = shape_sdf(kj, dj[0], dj[1], dj[2], qx, qy, qz)
        return di[0] - d
    if kj == SPHERE:
        qx, qy, qz = _world_to_local(Ri, posi, posj[0], posj[1], posj[2])
        d, _, _, _ = shape_sdf(ki, di[0], di[1], di[2], qx, qy, qz)
        return dj[0] - d
    depth = -1e30
    for p in range(npi):
        lx, ly, lz = pi[p, 0], pi[p, 1], pi[p, 2]
        wx, wy, wz = _mat_vec(Ri, lx, ly, lz)
        qx, qy, qz = _world_to_local(Rj, posj, posi[0] + wx, posi[1] + wy, posi[2] + wz)
        d, _, _, _ = shape_sdf(kj, dj[0], dj[1], dj[2], qx, qy, qz)
        if -d > depth:
            depth = -d
    for p in range(npj):
        lx, ly, lz = pj[p, 0], pj[p, 1], pj[p, 2]
        wx, wy, wz = _mat_vec(Rj, lx, ly, lz)
        qx, qy, qz = _world_to_local(Ri, posi, posj[0] + wx, posj[1] + wy, posj[2] + wz)
        d, _, _, _ = shape_sdf(ki, di[0], di[1], di[2], qx, qy, qz)
        if -d > depth:
            depth = -d
    return depth


@njit(cache=True)
def max_penetration(
    n, kind, dims, radius, npts, pts, pos, quat,
    ck, cd, crad, cnp, cpts, cpos, cquat,
):
    """Deepest penetration of a candidate body into any of the first ``n`` bodies."""
    Rc = np.empty((3, 3))
    quat_to_mat(cquat, Rc)
    Rb = np.empty((3, 3))
    best = -1e30
    for j in range(n):
        dx = cpos[0] - pos[j, 0]
        dy = cpos[1] - pos[j, 1]
        dz = cpos[2] - pos[j, 2]
        reach = crad + radius[j]
        if dx * dx + dy * dy + dz * dz > reach * reach:
            continue
        quat_to_mat(quat[j], Rb)
        d = pair_penetration(
            ck, cd, cnp, cpts, cpos, Rc,
            kind[j], dims[j], npts[j], pts[j], pos[j], Rb,
        )
        if d > best:
            best = d
    return best


@njit(cache=True)
def _ray_down(kind, d, pos, R, x, y, top):
    """Height where a vertical ray at (x, y) first hits a shape, or -inf."""
    ox, oy, oz = _world_to_local(R, pos, x, y, top)
    # Ray direction (0, 0, -1) in the local frame.
    dx = -R[2, 0]
    dy = -R[2, 1]
    dz = -R[2, 2]
    if kind == CUBOID:
        tmin = -1e30
        tmax = 1e30
        o = (ox, oy, oz)
        dd = (dx, dy, dz)
        for a in range(3):
            if abs(dd[a]) < 1e-12:
                if abs(o[a]) > d[a]:
                    return -np.inf
            else:
                t1 = (-d[a] - o[a]) / dd[a]
                t2 = (d[a] - o[a]) / dd[a]
                if t1 > t2:
                    t1, t2 = t2, t1
                tmin = max(tmin, t1)
                tmax = min(tmax, t2)
        if tmin <= tmax and tmax >= 0.0:
            return top - max(tmin, 0.0)
        return -np.inf
    if kind == SPHERE:
        rx = x - pos[0]
        ry = y - pos[1]
        q = d[0] * d[0] - rx * rx - ry * ry
        if q < 0.0:
            return -np.inf
        return pos[2] + math.sqrt(q)
    r = d[0]
    h = d[1]
    best = 1e30
    a = dx * dx + dy * dy
    if a > 1e-12:
        b = 2.0 * (ox * dx + oy * dy)
        c = ox * ox + oy * oy - r * r
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            for t in ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)):
                if t >= 0.0 and abs(oz + t * dz) <= h and t < best:
                    best = t
    elif ox * ox + oy * oy > r * r:
        return -np.inf
    if abs(dz) > 1e-12:
        for zc in (-h, h):
            t = (zc - oz) / dz
            px = ox + t * dx
            py = oy + t * dy
            if t >= 0.0 and px * px + py * py <= r * r and t < best:
                best = t
    if best < 1e30:
        return top - best
    return -np.inf


@njit(cache=True)
def heights_at(n, kind, dims, radius, pos, quat, xs, ys, floor, skip):
    """Maximum surface height under each query point over all bodies."""
    m = xs.shape[0]
    out = np.full(m, floor)
    R = np.empty((3, 3))
    top = 0.0
    for i in range(n):
        top = max(top, pos[i, 2] + radius[i])
    top += 1.0
    for i in range(n):
        if i == skip:
            continue
        quat_to_mat(quat[i], R)
        rad = radius[i]
        for q in range(m):
            dx = xs[q] - pos[i, 0]
            dy = ys[q] - pos[i, 1]
            if dx * dx + dy * dy > rad * rad:
                continue
            z = _ray_down(kind[i], dims[i], pos[i], R, xs[q], ys[q], top)
            if z > out[q]:
                out[q] = z
    return out
