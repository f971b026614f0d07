"""Flat-world geometry: poses, differential-drive kinematics, collision
checks, and simulated 2D lidar raycasting.

Conventions: world frame is right-handed, angles in radians normalized to
(-pi, pi], +theta counter-clockwise.  All distances in meters, speeds in m/s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import accel
from .accel import njit

TWO_PI = 2.0 * math.pi

# Differential-drive command bounds (moving backwards is not allowed).
V_MAX = 0.6
W_MAX = 0.9

# Discrete command grid: 4 linear x 7 angular velocities = 28 actions,
# enumerated v-major (index = 7 * v_index + w_index).
V_CHOICES = (0.0, 0.2, 0.4, 0.6)
W_CHOICES = (-0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9)
ACTION_TABLE = tuple((v, w) for v in V_CHOICES for w in W_CHOICES)

ROBOT_RADIUS = 0.17
PEDESTRIAN_RADIUS = 0.3


def normalize_angle(theta: float) -> float:
    """Map an angle to (-pi, pi]."""
    r = math.remainder(theta, TWO_PI)
    if r <= -math.pi:
        r += TWO_PI
    return r


def normalize_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`normalize_angle`."""
    r = np.mod(np.asarray(theta, dtype=float) + np.pi, TWO_PI) - np.pi
    return np.where(r <= -np.pi, r + TWO_PI, r)


@dataclass(frozen=True)
class Pose2D:
    """Planar pose; theta is renormalized to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @property
    def heading(self) -> tuple[float, float]:
        return (math.cos(self.theta), math.sin(self.theta))

    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def distance_to(self, other: "Pose2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class Action:
    """Differential-drive command: linear speed v >= 0 and angular rate w."""

    v: float
    w: float

    def clipped(self) -> "Action":
        return Action(min(max(self.v, 0.0), V_MAX), min(max(self.w, -W_MAX), W_MAX))

    def in_bounds(self) -> bool:
        return 0.0 <= self.v <= V_MAX and -W_MAX <= self.w <= W_MAX


@dataclass
class AgentBody:
    """Disk-shaped agent: robot or pedestrian body."""

    pose: Pose2D
    velocity: tuple[float, float] = (0.0, 0.0)
    radius: float = ROBOT_RADIUS
    kind: str = "robot"
    uid: int = 0

    def position(self) -> np.ndarray:
        return np.array([self.pose.x, self.pose.y])


@dataclass(frozen=True)
class CircleObstacle:
    cx: float
    cy: float
    r: float


@dataclass(frozen=True)
class RectObstacle:
    """Axis-aligned rectangle given by center and half-extents."""

    cx: float
    cy: float
    hx: float
    hy: float


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned arena [-half, half]^2; leaving it counts as a collision."""

    half: float = 6.0

    def contains_disk(self, x: float, y: float, r: float) -> bool:
        return max(abs(x), abs(y)) + r < self.half + 1e-12


@dataclass
class WorldState:
    """Everything in the arena at one tick.

    ``pedestrians`` holds :class:`crowdnav.pedestrians.Pedestrian` objects
    (body + gait + patrol goal); this module only relies on their ``body``
    and ``leg_disks()`` surface.
    """

    robots: list[AgentBody] = field(default_factory=list)
    pedestrians: list = field(default_factory=list)
    obstacles: list = field(default_factory=list)
    bounds: Bounds = field(default_factory=Bounds)
    time: float = 0.0


def step_diff_drive(pose: Pose2D, action: Action, dt: float) -> Pose2D:
    """Exact unicycle integration of a constant (v, w) command over dt.

    Straight-line advance when |w| is negligible, otherwise the closed-form
    circular arc of radius v/w.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    v, w = action.v, action.w
    if abs(w) < 1e-9:
        return Pose2D(
            pose.x + v * dt * math.cos(pose.theta),
            pose.y + v * dt * math.sin(pose.theta),
            pose.theta,
        )
    r = v / w
    theta1 = pose.theta + w * dt
    return Pose2D(
        pose.x + r * (math.sin(theta1) - math.sin(pose.theta)),
        pose.y - r * (math.cos(theta1) - math.cos(pose.theta)),
        theta1,
    )


def point_rect_distance(px: float, py: float, rect: RectObstacle) -> float:
    """Distance from a point to an axis-aligned rectangle (0 when inside)."""
    dx = max(abs(px - rect.cx) - rect.hx, 0.0)
    dy = max(abs(py - rect.cy) - rect.hy, 0.0)
    return math.hypot(dx, dy)


def closest_point_on_rect(px: float, py: float, rect: RectObstacle) -> tuple[float, float]:
    """Closest boundary point of the rectangle; for interior points the
    nearest edge projection is returned."""
    lx, hx = rect.cx - rect.hx, rect.cx + rect.hx
    ly, hy = rect.cy - rect.hy, rect.cy + rect.hy
    qx = min(max(px, lx), hx)
    qy = min(max(py, ly), hy)
    if lx < px < hx and ly < py < hy:
        # interior: snap to the nearest edge
        gaps = (px - lx, hx - px, py - ly, hy - py)
        k = gaps.index(min(gaps))
        if k == 0:
            qx = lx
        elif k == 1:
            qx = hx
        elif k == 2:
            qy = ly
        else:
            qy = hy
    return qx, qy


def closest_point_on_obstacle(px: float, py: float, obstacle) -> tuple[float, float]:
    if isinstance(obstacle, RectObstacle):
        return closest_point_on_rect(px, py, obstacle)
    dx, dy = px - obstacle.cx, py - obstacle.cy
    d = math.hypot(dx, dy)
    if d < 1e-12:
        return obstacle.cx + obstacle.r, obstacle.cy
    s = obstacle.r / d
    return obstacle.cx + dx * s, obstacle.cy + dy * s


def obstacle_clearance(px: float, py: float, r: float, obstacle) -> float:
    """Surface-to-surface distance between a disk and a static obstacle."""
    if isinstance(obstacle, RectObstacle):
        return point_rect_distance(px, py, obstacle) - r
    d = math.hypot(px - obstacle.cx, py - obstacle.cy)
    return d - obstacle.r - r


def detect_collisions(world: WorldState, robot_index: int) -> tuple[bool, float]:
    """Collision flag plus the minimum surface distance to any pedestrian.

    Collision covers pedestrian bodies and legs, other robots, static
    obstacles, and the arena bound.  ``d_min`` (used by the safety reward)
    considers pedestrian bodies only and is clamped at zero; it is +inf when
    no pedestrians exist.
    """
    robot = world.robots[robot_index]
    rx, ry = robot.pose.x, robot.pose.y
    rr = robot.radius

    collided = not world.bounds.contains_disk(rx, ry, rr)

    d_min = math.inf
    for ped in world.pedestrians:
        body = ped.body
        gap = math.hypot(rx - body.pose.x, ry - body.pose.y) - rr - body.radius
        d_min = min(d_min, max(gap, 0.0))
        if gap < 0.0:
            collided = True
        if not collided:
            for lx, ly, lr in ped.leg_disks():
                if math.hypot(rx - lx, ry - ly) < rr + lr:
                    collided = True
                    break

    if not collided:
        for j, other in enumerate(world.robots):
            if j == robot_index:
                continue
            if math.hypot(rx - other.pose.x, ry - other.pose.y) < rr + other.radius:
                collided = True
                break

    if not collided:
        for obs in world.obstacles:
            if obstacle_clearance(rx, ry, rr, obs) < 0.0:
                collided = True
                break

    return collided, d_min


# ---------------------------------------------------------------------------
# Raycasting.  Shapes are packed into flat arrays so the hot loop is a pair
# of (beams x shapes) intersection kernels with numba and numpy variants.
# ---------------------------------------------------------------------------


def pack_shapes(world: WorldState, exclude_robot: int | None = None):
    """Pack lidar-visible shapes: obstacle circles/rects, pedestrian leg
    disks, and robot disks other than ``exclude_robot``.

    Returns (circles (M,3), rects (K,4)) float64 arrays.
    """
    circles = []
    rects = []
    for obs in world.obstacles:
        if isinstance(obs, RectObstacle):
            rects.append((obs.cx, obs.cy, obs.hx, obs.hy))
        else:
            circles.append((obs.cx, obs.cy, obs.r))
    for ped in world.pedestrians:
        for lx, ly, lr in ped.leg_disks():
            circles.append((lx, ly, lr))
    for j, robot in enumerate(world.robots):
        if exclude_robot is not None and j == exclude_robot:
            continue
        circles.append((robot.pose.x, robot.pose.y, robot.radius))
    circ = np.array(circles, dtype=np.float64).reshape(-1, 3)
    rect = np.array(rects, dtype=np.float64).reshape(-1, 4)
    return circ, rect


def _raycast_numpy(ox, oy, angles, max_range, circles, rects):
    angles = np.asarray(angles, dtype=np.float64)
    dx = np.cos(angles)
    dy = np.sin(angles)
    t_hit = np.full(angles.shape, max_range, dtype=np.float64)

    if circles.shape[0]:
        mx = circles[None, :, 0] - ox
        my = circles[None, :, 1] - oy
        b = mx * dx[:, None] + my * dy[:, None]
        c2 = mx * mx + my * my - circles[None, :, 2] ** 2
        disc = b * b - c2
        ok = disc >= 0.0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = b - sq
        t1 = b + sq
        t = np.where(t0 >= 0.0, t0, np.where(t1 >= 0.0, 0.0, np.inf))
        t = np.where(ok, t, np.inf)
        t_hit = np.minimum(t_hit, t.min(axis=1))

    if rects.shape[0]:
        with np.errstate(divide="ignore", invalid="ignore"):
            inv_dx = np.where(np.abs(dx) > 1e-300, 1.0 / dx, np.inf)[:, None]
            inv_dy = np.where(np.abs(dy) > 1e-300, 1.0 / dy, np.inf)[:, None]
            lo_x = (rects[None, :, 0] - rects[None, :, 2] - ox) * inv_dx
            hi_x = (rects[None, :, 0] + rects[None, :, 2] - ox) * inv_dx
            lo_y = (rects[None, :, 1] - rects[None, :, 3] - oy) * inv_dy
            hi_y = (rects[None, :, 1] + rects[None, :, 3] - oy) * inv_dy
        tx1 = np.minimum(lo_x, hi_x)
        tx2 = np.maximum(lo_x, hi_x)
        ty1 = np.minimum(lo_y, hi_y)
        ty2 = np.maximum(lo_y, hi_y)
        # degenerate axes: ray parallel to slab -> hit iff origin inside slab
        par_x = np.abs(dx)[:, None] <= 1e-300
        in_x = np.abs(ox - rects[None, :, 0]) <= rects[None, :, 2]
        tx1 = np.where(par_x, np.where(in_x, -np.inf, np.inf), tx1)
        tx2 = np.where(par_x, np.where(in_x, np.inf, -np.inf), tx2)
        par_y = np.abs(dy)[:, None] <= 1e-300
        in_y = np.abs(oy - rects[None, :, 1]) <= rects[None, :, 3]
        ty1 = np.where(par_y, np.where(in_y, -np.inf, np.inf), ty1)
        ty2 = np.where(par_y, np.where(in_y, np.inf, -np.inf), ty2)
        tmin = np.maximum(tx1, ty1)
        tmax = np.minimum(tx2, ty2)
        hit = (tmax >= tmin) & (tmax >= 0.0)
        t = np.where(hit, np.maximum(tmin, 0.0), np.inf)
        t_hit = np.minimum(t_hit, t.min(axis=1))
    return t_hit


@njit(cache=True)
def _raycast_numba(ox, oy, angles, max_range, circles, rects):  # pragma: no cover
    n = angles.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        dx = np.cos(angles[i])
        dy = np.sin(angles[i])
        best = max_range
        for k in range(circles.shape[0]):
            mx = circles[k, 0] - ox
            my = circles[k, 1] - oy
            b = mx * dx + my * dy
            c2 = mx * mx + my * my - circles[k, 2] * circles[k, 2]
            disc = b * b - c2
            if disc < 0.0:
                continue
            sq = np.sqrt(disc)
            t0 = b - sq
            t1 = b + sq
            if t0 >= 0.0:
                t = t0
            elif t1 >= 0.0:
                t = 0.0
            else:
                continue
            if t < best:
                best = t
        for k in range(rects.shape[0]):
            tmin = -np.inf
            tmax = np.inf
            ok = True
            if abs(dx) <= 1e-300:
                if abs(ox - rects[k, 0]) > rects[k, 2]:
                    ok = False
            else:
                a1 = (rects[k, 0] - rects[k, 2] - ox) / dx
                a2 = (rects[k, 0] + rects[k, 2] - ox) / dx
                if a1 > a2:
                    a1, a2 = a2, a1
                tmin = max(tmin, a1)
                tmax = min(tmax, a2)
            if ok:
                if abs(dy) <= 1e-300:
                    if abs(oy - rects[k, 1]) > rects[k, 3]:
                        ok = False
                else:
                    a1 = (rects[k, 1] - rects[k, 3] - oy) / dy
                    a2 = (rects[k, 1] + rects[k, 3] - oy) / dy
                    if a1 > a2:
                        a1, a2 = a2, a1
                    tmin = max(tmin, a1)
                    tmax = min(tmax, a2)
            if ok and tmax >= tmin and tmax >= 0.0:
                t = tmin if tmin > 0.0 else 0.0
                if t < best:
                    best = t
        out[i] = best
    return out


def raycast_batch(ox, oy, angles, max_range, circles, rects) -> np.ndarray:
    """Hit distance per beam (``max_range`` when nothing is hit)."""
    angles = np.ascontiguousarray(angles, dtype=np.float64)
    if accel.use_numba():
        return _raycast_numba(float(ox), float(oy), angles, float(max_range), circles, rects)
    return _raycast_numpy(float(ox), float(oy), angles, float(max_range), circles, rects)


def raycast(
    world: WorldState,
    origin: tuple[float, float],
    angle: float,
    max_range: float,
    exclude_robot: int | None = None,
) -> float:
    """Distance from origin along angle to the nearest obstacle, pedestrian
    leg disk, or robot disk; ``max_range`` if the ray is unobstructed."""
    if max_range <= 0.0:
        raise ValueError(f"max_range must be positive, got {max_range}")
    circles, rects = pack_shapes(world, exclude_robot=exclude_robot)
    t = raycast_batch(origin[0], origin[1], np.array([angle]), max_range, circles, rects)
    return float(t[0])


def transform_world(world: WorldState, angle: float, offset=(0.0, 0.0)) -> WorldState:
    """Rigidly rotate-then-translate every entity (circle obstacles only;
    rectangles do not stay axis-aligned under rotation).  Test helper for
    the equivariance properties."""
    c, s = math.cos(angle), math.sin(angle)

    def rot(x, y):
        return (c * x - s * y + offset[0], s * x + c * y + offset[1])

    def move_body(b: AgentBody) -> AgentBody:
        x, y = rot(b.pose.x, b.pose.y)
        vx, vy = b.velocity
        return AgentBody(
            Pose2D(x, y, b.pose.theta + angle),
            (c * vx - s * vy, s * vx + c * vy),
            b.radius,
            b.kind,
            b.uid,
        )

    obstacles = []
    for obs in world.obstacles:
        if isinstance(obs, RectObstacle):
            raise ValueError("cannot rigidly rotate an axis-aligned rectangle")
        x, y = rot(obs.cx, obs.cy)
        obstacles.append(CircleObstacle(x, y, obs.r))

    new = WorldState(
        robots=[move_body(r) for r in world.robots],
        pedestrians=[p.transformed(rot, angle, (c, s)) for p in world.pedestrians],
        obstacles=obstacles,
        bounds=world.bounds,
        time=world.time,
    )
    return new
