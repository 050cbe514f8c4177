"""Compiled ORCA kernels.

Half-planes are stored as rows ``(point_x, point_y, dir_x, dir_y)``; the
permitted side lies to the left of ``dir``. The linear programs follow the
incremental scheme used by RVO2 (2D LP with a 3D LP fallback that minimises
the largest violation when the constraints are infeasible).
"""

import numpy as np
from numba import njit

EPSILON = 1e-5


@njit(cache=True)
def _det(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True)
def orca_lines(px, py, vx, vy, radius, tau, dt, nb, n_nb, out):
    """Fill ``out[:n_nb]`` with ORCA lines; ``nb`` rows are (px, py, vx, vy, r)."""
    inv_tau = 1.0 / tau
    for k in range(n_nb):
        rpx = nb[k, 0] - px
        rpy = nb[k, 1] - py
        rvx = vx - nb[k, 2]
        rvy = vy - nb[k, 3]
        dist_sq = rpx * rpx + rpy * rpy
        comb = radius + nb[k, 4]
        comb_sq = comb * comb
        if dist_sq > comb_sq:
            wx = rvx - inv_tau * rpx
            wy = rvy - inv_tau * rpy
            w_len_sq = wx * wx + wy * wy
            dot1 = wx * rpx + wy * rpy
            if dot1 < 0.0 and dot1 * dot1 > comb_sq * w_len_sq:
                # cut-off circle
                w_len = np.sqrt(w_len_sq)
                ux_ = wx / w_len
                uy_ = wy / w_len
                dx = uy_
                dy = -ux_
                scale = comb * inv_tau - w_len
                ux = scale * ux_
                uy = scale * uy_
            else:
                leg = np.sqrt(dist_sq - comb_sq)
                if _det(rpx, rpy, wx, wy) > 0.0:
                    dx = (rpx * leg - rpy * comb) / dist_sq
                    dy = (rpx * comb + rpy * leg) / dist_sq
                else:
                    dx = -(rpx * leg + rpy * comb) / dist_sq
                    dy = -(-rpx * comb + rpy * leg) / dist_sq
                dot2 = rvx * dx + rvy * dy
                ux = dot2 * dx - rvx
                uy = dot2 * dy - rvy
        else:
            # already overlapping: resolve within one time step
            inv_dt = 1.0 / dt
            wx = rvx - inv_dt * rpx
            wy = rvy - inv_dt * rpy
            w_len = np.sqrt(wx * wx + wy * wy)
            ux_ = wx / w_len
            uy_ = wy / w_len
            dx = uy_
            dy = -ux_
            scale = comb * inv_dt - w_len
            ux = scale * ux_
            uy = scale * uy_
        out[k, 0] = vx + 0.5 * ux
        out[k, 1] = vy + 0.5 * uy
        out[k, 2] = dx
        out[k, 3] = dy


@njit(cache=True)
def _lp1(lines, line_no, radius, optx, opty, direction_opt):
    px = lines[line_no, 0]
    py = lines[line_no, 1]
    dx = lines[line_no, 2]
    dy = lines[line_no, 3]
    dot = px * dx + py * dy
    disc = dot * dot + radius * radius - (px * px + py * py)
    if disc < 0.0:
        return False, 0.0, 0.0
    sq = np.sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq
    for i in range(line_no):
        denom = _det(dx, dy, lines[i, 2], lines[i, 3])
        numer = _det(lines[i, 2], lines[i, 3], px - lines[i, 0], py - lines[i, 1])
        if abs(denom) <= EPSILON:
            if numer < 0.0:
                return False, 0.0, 0.0
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return False, 0.0, 0.0
    if direction_opt:
        if optx * dx + opty * dy > 0.0:
            return True, px + t_right * dx, py + t_right * dy
        return True, px + t_left * dx, py + t_left * dy
    t = dx * (optx - px) + dy * (opty - py)
    if t < t_left:
        t = t_left
    elif t > t_right:
        t = t_right
    return True, px + t * dx, py + t * dy


@njit(cache=True)
def _lp2(lines, n, radius, optx, opty, direction_opt):
    if direction_opt:
        rx = optx * radius
        ry = opty * radius
    elif optx * optx + opty * opty > radius * radius:
        norm = np.sqrt(optx * optx + opty * opty)
        rx = optx / norm * radius
        ry = opty / norm * radius
    else:
        rx = optx
        ry = opty
    for i in range(n):
        if _det(lines[i, 2], lines[i, 3], lines[i, 0] - rx, lines[i, 1] - ry) > 0.0:
            ok, nx, ny = _lp1(lines, i, radius, optx, opty, direction_opt)
            if not ok:
                return i, rx, ry
            rx = nx
            ry = ny
    return n, rx, ry


@njit(cache=True)
def _lp3(lines, n, begin, radius, rx, ry):
    distance = 0.0
    proj = np.empty((max(n, 1), 4))
    for i in range(begin, n):
        dix = lines[i, 2]
        diy = lines[i, 3]
        if _det(dix, diy, lines[i, 0] - rx, lines[i, 1] - ry) > distance:
            m = 0
            for j in range(i):
                djx = lines[j, 2]
                djy = lines[j, 3]
                determinant = _det(dix, diy, djx, djy)
                if abs(determinant) <= EPSILON:
                    if dix * djx + diy * djy > 0.0:
                        continue
                    qx = 0.5 * (lines[i, 0] + lines[j, 0])
                    qy = 0.5 * (lines[i, 1] + lines[j, 1])
                else:
                    s = _det(djx, djy, lines[i, 0] - lines[j, 0], lines[i, 1] - lines[j, 1]) / determinant
                    qx = lines[i, 0] + s * dix
                    qy = lines[i, 1] + s * diy
                ex = djx - dix
                ey = djy - diy
                en = np.sqrt(ex * ex + ey * ey)
                proj[m, 0] = qx
                proj[m, 1] = qy
                proj[m, 2] = ex / en
                proj[m, 3] = ey / en
                m += 1
            fail, nx, ny = _lp2(proj, m, radius, -diy, dix, True)
            if fail >= m:
                rx = nx
                ry = ny
            distance = _det(dix, diy, lines[i, 0] - rx, lines[i, 1] - ry)
    return rx, ry


@njit(cache=True)
def solve_lines(lines, n, prefx, prefy, max_speed):
    """Velocity closest to the preferred one inside all lines and the speed disc."""
    fail, rx, ry = _lp2(lines, n, max_speed, prefx, prefy, False)
    if fail < n:
        rx, ry = _lp3(lines, n, fail, max_speed, rx, ry)
    return rx, ry


@njit(cache=True)
def pref_velocity(px, py, gx, gy, pref_speed, eps_goal):
    dx = gx - px
    dy = gy - py
    d = np.sqrt(dx * dx + dy * dy)
    if d < eps_goal:
        return 0.0, 0.0
    return dx / d * pref_speed, dy / d * pref_speed


@njit(cache=True)
def motion_map(x, radius, max_speed, pref_speed, tau, dt, eps_goal, nb, n_nb, lines, out):
    """One ORCA step of a single (p, v, g) state against fixed neighbours."""
    prefx, prefy = pref_velocity(x[0], x[1], x[4], x[5], pref_speed, eps_goal)
    orca_lines(x[0], x[1], x[2], x[3], radius, tau, dt, nb, n_nb, lines)
    nvx, nvy = solve_lines(lines, n_nb, prefx, prefy, max_speed)
    out[0] = x[0] + nvx * dt
    out[1] = x[1] + nvy * dt
    out[2] = nvx
    out[3] = nvy
    out[4] = x[4]
    out[5] = x[5]


@njit(cache=True)
def _gather(i, pos, vel, radii, nb_idx, nb):
    n_nb = 0
    for k in range(nb_idx.shape[1]):
        j = nb_idx[i, k]
        if j < 0:
            break
        nb[n_nb, 0] = pos[j, 0]
        nb[n_nb, 1] = pos[j, 1]
        nb[n_nb, 2] = vel[j, 0]
        nb[n_nb, 3] = vel[j, 1]
        nb[n_nb, 4] = radii[j]
        n_nb += 1
    return n_nb


@njit(cache=True)
def predict_batch(means, nb_idx, radius, max_speed, pref_speed, tau, dt, eps_goal, fd_step,
                  out_means, out_jac):
    """Propagate every mean through the motion map and take central-difference Jacobians.

    Neighbour kinematics come from the frame-start ``means`` (Jacobi update).
    """
    n = means.shape[0]
    k_max = max(nb_idx.shape[1], 1)
    nb = np.empty((k_max, 5))
    lines = np.empty((k_max, 4))
    xp = np.empty(6)
    fp = np.empty(6)
    fm = np.empty(6)
    pos = means[:, 0:2]
    vel = means[:, 2:4]
    for i in range(n):
        n_nb = _gather(i, pos, vel, radius, nb_idx, nb)
        x = means[i]
        motion_map(x, radius[i], max_speed[i], pref_speed[i], tau[i], dt, eps_goal, nb, n_nb,
                   lines, out_means[i])
        for j in range(6):
            for c in range(6):
                xp[c] = x[c]
            xp[j] = x[j] + fd_step
            motion_map(xp, radius[i], max_speed[i], pref_speed[i], tau[i], dt, eps_goal, nb,
                       n_nb, lines, fp)
            xp[j] = x[j] - fd_step
            motion_map(xp, radius[i], max_speed[i], pref_speed[i], tau[i], dt, eps_goal, nb,
                       n_nb, lines, fm)
            for r in range(6):
                out_jac[i, r, j] = (fp[r] - fm[r]) / (2.0 * fd_step)


@njit(cache=True)
def step_batch(pos, vel, pref, nb_idx, radius, max_speed, tau, dt, out_vel):
    """New velocities for every agent from one snapshot (no integration)."""
    n = pos.shape[0]
    k_max = max(nb_idx.shape[1], 1)
    nb = np.empty((k_max, 5))
    lines = np.empty((k_max, 4))
    for i in range(n):
        n_nb = _gather(i, pos, vel, radius, nb_idx, nb)
        orca_lines(pos[i, 0], pos[i, 1], vel[i, 0], vel[i, 1], radius[i], tau[i], dt, nb, n_nb,
                   lines)
        out_vel[i, 0], out_vel[i, 1] = solve_lines(lines, n_nb, pref[i, 0], pref[i, 1],
                                                   max_speed[i])
