"""Social force model: goal-directed driving force plus exponential
repulsion from other agents and from the closest points of static obstacles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .world import closest_point_on_obstacle

SPEED_CAP_FACTOR = 1.3  # post-integration speed <= 1.3 x desired speed


@dataclass(frozen=True)
class SfmParams:
    relaxation_time: float = 0.5
    agent_strength: float = 2.1
    agent_range: float = 0.3
    obstacle_strength: float = 10.0
    obstacle_range: float = 0.2
    desired_speed: float = 0.5

    def __post_init__(self):
        for name in (
            "relaxation_time",
            "agent_strength",
            "agent_range",
            "obstacle_strength",
            "obstacle_range",
            "desired_speed",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"SfmParams.{name} must be strictly positive")


def _repulsion(dx, dy, surface_gap_arg, strength, rng_scale, fallback_dir):
    """exp((r - d)/B) force along (dx, dy); fallback direction on coincident
    centers."""
    dist = math.hypot(dx, dy)
    if dist < 1e-12:
        nx, ny = fallback_dir
    else:
        nx, ny = dx / dist, dy / dist
    mag = strength * math.exp(surface_gap_arg / rng_scale)
    return mag * nx, mag * ny


def sfm_acceleration(self_body, goal, neighbors, obstacles, params: SfmParams, dt: float):
    """Resultant acceleration for one pedestrian.

    goal: (x, y) target position, must differ from the current position.
    The magnitude is clamped so the speed after integrating over ``dt``
    stays at or below 1.3 x desired speed.  Coincident agent centers repel
    along +x/-x by uid order (documented tie-break).
    """
    px, py = self_body.pose.x, self_body.pose.y
    vx, vy = self_body.velocity
    gx, gy = goal[0] - px, goal[1] - py
    g_dist = math.hypot(gx, gy)
    if g_dist < 1e-12:
        raise ValueError("goal coincides with the current position")

    ax = (params.desired_speed * gx / g_dist - vx) / params.relaxation_time
    ay = (params.desired_speed * gy / g_dist - vy) / params.relaxation_time

    for other in neighbors:
        dx = px - other.pose.x
        dy = py - other.pose.y
        dist = math.hypot(dx, dy)
        fallback = (1.0, 0.0) if self_body.uid < other.uid else (-1.0, 0.0)
        fx, fy = _repulsion(
            dx,
            dy,
            (self_body.radius + other.radius) - dist,
            params.agent_strength,
            params.agent_range,
            fallback,
        )
        ax += fx
        ay += fy

    for obs in obstacles:
        qx, qy = closest_point_on_obstacle(px, py, obs)
        dx, dy = px - qx, py - qy
        dist = math.hypot(dx, dy)
        fx, fy = _repulsion(
            dx, dy, self_body.radius - dist, params.obstacle_strength, params.obstacle_range, (1.0, 0.0)
        )
        ax += fx
        ay += fy

    # clamp so |v + a*dt| <= cap
    cap = SPEED_CAP_FACTOR * params.desired_speed
    nvx, nvy = vx + ax * dt, vy + ay * dt
    speed = math.hypot(nvx, nvy)
    if speed > cap:
        scale = cap / speed
        nvx *= scale
        nvy *= scale
        ax = (nvx - vx) / dt
        ay = (nvy - vy) / dt
    return ax, ay
