"""Optimal reciprocal collision avoidance.

Each neighbor induces a half-plane of permitted velocities; the returned
velocity is the point of the feasible region (intersected with the speed
disk) closest to the preferred velocity, found by an incremental 2D linear
program.  When the agent constraints are jointly infeasible the solver
relaxes to the least-violating velocity (the classic 3D fallback) while
keeping obstacle constraints hard.

A half-plane is stored as (point, direction): permitted velocities v satisfy
det(direction, point - v) <= 0, i.e. lie on the left of the directed line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .world import RectObstacle, closest_point_on_obstacle

LP_EPS = 1e-10


def _constraint_points(px, py, obstacle):
    """Representative static points an obstacle presents to an agent: the
    closest point of each rectangle edge, or the closest circle point."""
    if isinstance(obstacle, RectObstacle):
        lx, hx = obstacle.cx - obstacle.hx, obstacle.cx + obstacle.hx
        ly, hy = obstacle.cy - obstacle.hy, obstacle.cy + obstacle.hy
        cx = min(max(px, lx), hx)
        cy = min(max(py, ly), hy)
        return [(cx, ly), (cx, hy), (lx, cy), (hx, cy)]
    return [closest_point_on_obstacle(px, py, obstacle)]


@dataclass(frozen=True)
class OrcaParams:
    neighbor_dist: float = 5.0
    time_horizon_agents: float = 5.0
    time_horizon_obstacles: float = 2.0
    max_speed: float = 0.5

    def __post_init__(self):
        for name in ("neighbor_dist", "time_horizon_agents", "time_horizon_obstacles", "max_speed"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"OrcaParams.{name} must be strictly positive")


def _agent_line(px, py, vx, vy, combined_radius, inv_tau, dt):
    """ORCA half-plane for one neighbor.

    (px, py): neighbor position relative to self; (vx, vy): self velocity
    relative to neighbor.  Returns (point_x, point_y, dir_x, dir_y, ux, uy)
    where u is the full velocity correction (caller scales by the
    responsibility share before forming the line point).
    """
    dist_sq = px * px + py * py
    r_sq = combined_radius * combined_radius

    if dist_sq > r_sq:
        # no current overlap: truncated velocity-obstacle cone
        wx = vx - inv_tau * px
        wy = vy - inv_tau * py
        w_len_sq = wx * wx + wy * wy
        dot1 = wx * px + wy * py
        if dot1 < 0.0 and dot1 * dot1 > r_sq * w_len_sq:
            # project on the cut-off circle
            w_len = math.sqrt(w_len_sq)
            uwx, uwy = wx / w_len, wy / w_len
            dir_x, dir_y = uwy, -uwx
            scale = combined_radius * inv_tau - w_len
            ux, uy = scale * uwx, scale * uwy
        else:
            # project on the nearer cone leg
            leg = math.sqrt(dist_sq - r_sq)
            if px * wy - py * wx > 0.0:
                dir_x = (px * leg - py * combined_radius) / dist_sq
                dir_y = (px * combined_radius + py * leg) / dist_sq
            else:
                dir_x = -(px * leg + py * combined_radius) / dist_sq
                dir_y = -(-px * combined_radius + py * leg) / dist_sq
            dot2 = vx * dir_x + vy * dir_y
            ux = dot2 * dir_x - vx
            uy = dot2 * dir_y - vy
    else:
        # already overlapping: push apart within one timestep
        inv_dt = 1.0 / dt
        wx = vx - inv_dt * px
        wy = vy - inv_dt * py
        w_len = math.hypot(wx, wy)
        if w_len < 1e-12:
            uwx, uwy = 1.0, 0.0
        else:
            uwx, uwy = wx / w_len, wy / w_len
        dir_x, dir_y = uwy, -uwx
        scale = combined_radius * inv_dt - w_len
        ux, uy = scale * uwx, scale * uwy

    return dir_x, dir_y, ux, uy


def orca_lines(self_body, neighbors, obstacles, params: OrcaParams, dt: float):
    """Build the constraint lines for one agent.

    Returns (lines, n_obstacle_lines) where lines is a float64 array of rows
    (point_x, point_y, dir_x, dir_y); obstacle lines come first and are never
    relaxed by the infeasibility fallback.
    """
    px0, py0 = self_body.pose.x, self_body.pose.y
    vx0, vy0 = self_body.velocity
    rows = []

    inv_tau_obs = 1.0 / params.time_horizon_obstacles
    for obs in obstacles:
        for qx, qy in _constraint_points(px0, py0, obs):
            rel_x, rel_y = qx - px0, qy - py0
            if math.hypot(rel_x, rel_y) > params.neighbor_dist:
                continue
            # static boundary point: a zero-radius agent for which self
            # carries the full avoidance responsibility
            dir_x, dir_y, ux, uy = _agent_line(
                rel_x, rel_y, vx0, vy0, self_body.radius, inv_tau_obs, dt
            )
            rows.append((vx0 + ux, vy0 + uy, dir_x, dir_y))
    n_obstacle_lines = len(rows)

    inv_tau = 1.0 / params.time_horizon_agents
    for other in neighbors:
        rel_x = other.pose.x - px0
        rel_y = other.pose.y - py0
        if math.hypot(rel_x, rel_y) > params.neighbor_dist:
            continue
        ovx, ovy = other.velocity
        dir_x, dir_y, ux, uy = _agent_line(
            rel_x, rel_y, vx0 - ovx, vy0 - ovy, self_body.radius + other.radius, inv_tau, dt
        )
        # reciprocity: each agent takes half of the correction
        rows.append((vx0 + 0.5 * ux, vy0 + 0.5 * uy, dir_x, dir_y))

    return np.array(rows, dtype=np.float64).reshape(-1, 4), n_obstacle_lines


def _lp1(lines, line_no, radius, opt_x, opt_y, direction_opt, res_x, res_y):
    """Optimize along one line subject to the disk and lines[:line_no].

    Returns (ok, x, y)."""
    pt_x, pt_y = lines[line_no, 0], lines[line_no, 1]
    dx, dy = lines[line_no, 2], lines[line_no, 3]
    dot = pt_x * dx + pt_y * dy
    disc = dot * dot + radius * radius - (pt_x * pt_x + pt_y * pt_y)
    if disc < 0.0:
        return False, res_x, res_y
    sq = math.sqrt(disc)
    t_left = -dot - sq
    t_right = -dot + sq

    for i in range(line_no):
        idx, idy = lines[i, 2], lines[i, 3]
        ipx, ipy = lines[i, 0], lines[i, 1]
        denom = dx * idy - dy * idx
        numer = idx * (pt_y - ipy) - idy * (pt_x - ipx)
        if abs(denom) <= LP_EPS:
            if numer < 0.0:
                return False, res_x, res_y
            continue
        t = numer / denom
        if denom >= 0.0:
            t_right = min(t_right, t)
        else:
            t_left = max(t_left, t)
        if t_left > t_right:
            return False, res_x, res_y

    if direction_opt:
        if opt_x * dx + opt_y * dy > 0.0:
            t = t_right
        else:
            t = t_left
    else:
        t = dx * (opt_x - pt_x) + dy * (opt_y - pt_y)
        if t < t_left:
            t = t_left
        elif t > t_right:
            t = t_right
    return True, pt_x + t * dx, pt_y + t * dy


def _lp2(lines, radius, opt_x, opt_y, direction_opt):
    """Incremental 2D LP over all lines inside the speed disk.

    Returns (fail_index, x, y); fail_index == len(lines) on success."""
    if direction_opt:
        res_x, res_y = opt_x * radius, opt_y * radius
    elif opt_x * opt_x + opt_y * opt_y > radius * radius:
        norm = math.hypot(opt_x, opt_y)
        res_x, res_y = opt_x / norm * radius, opt_y / norm * radius
    else:
        res_x, res_y = opt_x, opt_y

    for i in range(lines.shape[0]):
        if lines[i, 2] * (lines[i, 1] - res_y) - lines[i, 3] * (lines[i, 0] - res_x) > 0.0:
            ok, nx, ny = _lp1(lines, i, radius, opt_x, opt_y, direction_opt, res_x, res_y)
            if not ok:
                return i, res_x, res_y
            res_x, res_y = nx, ny
    return lines.shape[0], res_x, res_y


def _lp3(lines, n_obstacle_lines, begin, radius, res_x, res_y):
    """Infeasible fallback: minimize the largest agent-constraint violation
    while keeping obstacle constraints satisfied."""
    distance = 0.0
    for i in range(begin, lines.shape[0]):
        if lines[i, 2] * (lines[i, 1] - res_y) - lines[i, 3] * (lines[i, 0] - res_x) > distance:
            proj = [tuple(lines[j]) for j in range(n_obstacle_lines)]
            for j in range(n_obstacle_lines, i):
                denom = lines[i, 2] * lines[j, 3] - lines[i, 3] * lines[j, 2]
                if abs(denom) <= LP_EPS:
                    if lines[i, 2] * lines[j, 2] + lines[i, 3] * lines[j, 3] > 0.0:
                        continue
                    ptx = 0.5 * (lines[i, 0] + lines[j, 0])
                    pty = 0.5 * (lines[i, 1] + lines[j, 1])
                else:
                    s = (
                        lines[j, 2] * (lines[i, 1] - lines[j, 1])
                        - lines[j, 3] * (lines[i, 0] - lines[j, 0])
                    ) / denom
                    ptx = lines[i, 0] + s * lines[i, 2]
                    pty = lines[i, 1] + s * lines[i, 3]
                ddx = lines[j, 2] - lines[i, 2]
                ddy = lines[j, 3] - lines[i, 3]
                norm = math.hypot(ddx, ddy)
                proj.append((ptx, pty, ddx / norm, ddy / norm))
            proj_arr = np.array(proj, dtype=np.float64).reshape(-1, 4)
            fail, nx, ny = _lp2(proj_arr, radius, -lines[i, 3], lines[i, 2], True)
            if fail >= proj_arr.shape[0]:
                res_x, res_y = nx, ny
            distance = lines[i, 2] * (lines[i, 1] - res_y) - lines[i, 3] * (lines[i, 0] - res_x)
    return res_x, res_y


def solve_lines(lines, n_obstacle_lines, pref_vx, pref_vy, max_speed):
    """Feasible velocity closest to the preferred one; falls back to the
    least-violating velocity when the agent constraints are infeasible.

    Returns ((vx, vy), feasible)."""
    fail, res_x, res_y = _lp2(lines, max_speed, pref_vx, pref_vy, False)
    feasible = fail >= lines.shape[0]
    if not feasible:
        res_x, res_y = _lp3(lines, n_obstacle_lines, fail, max_speed, res_x, res_y)
    return (res_x, res_y), feasible


def orca_velocity(self_body, pref_velocity, neighbors, obstacles, params: OrcaParams, dt: float):
    """New velocity for ``self_body`` given its preferred velocity.

    Satisfies every ORCA half-plane when feasible, otherwise the safest
    available velocity; magnitude never exceeds ``params.max_speed``.
    """
    lines, n_obs = orca_lines(self_body, neighbors, obstacles, params, dt)
    (vx, vy), _ = solve_lines(lines, n_obs, pref_velocity[0], pref_velocity[1], params.max_speed)
    return vx, vy


def feasible_mask(lines, vx, vy):
    """Whether velocities satisfy every half-plane (vectorized; used by the
    dense-sampling test oracle)."""
    vx = np.asarray(vx, dtype=np.float64)
    vy = np.asarray(vy, dtype=np.float64)
    ok = np.ones(vx.shape, dtype=bool)
    for i in range(lines.shape[0]):
        det = lines[i, 2] * (lines[i, 1] - vy) - lines[i, 3] * (lines[i, 0] - vx)
        ok &= det <= 0.0
    return ok
