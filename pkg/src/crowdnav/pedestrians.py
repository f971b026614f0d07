"""Simulated pedestrians: strategy dispatch (ORCA or SFM), patrol goals,
and the two-leg gait animation that makes them lidar-visible as people.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .orca import OrcaParams, orca_velocity
from .sfm import SfmParams, sfm_acceleration
from .world import AgentBody, Pose2D, normalize_angle

LEG_RADIUS = 0.08
STRIDE_AMPLITUDE = 0.12
STRIDE_LENGTH = 0.5
GOAL_TOLERANCE = 0.3


@dataclass
class GaitState:
    """Walking-cycle state; phase advances with distance travelled."""

    phase: float = 0.0
    stride_amplitude: float = STRIDE_AMPLITUDE
    leg_radius: float = LEG_RADIUS
    heading: float = 0.0  # latest motion direction, kept while standing

    def __post_init__(self):
        self.phase = self.phase % (2.0 * math.pi)
        if self.stride_amplitude + self.leg_radius > 0.3:
            raise ValueError("leg disks must stay inside the body envelope")


def update_gait(gait: GaitState, body: AgentBody, dt: float):
    """Advance the walking cycle and return the two leg disks.

    Legs sit symmetrically about the body center along the motion direction
    at offsets +-amplitude*sin(phase); the phase rate is 2*pi*speed/stride,
    so a standing pedestrian freezes mid-stride.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    vx, vy = body.velocity
    speed = math.hypot(vx, vy)
    if speed > 1e-9:
        gait.heading = math.atan2(vy, vx)
        gait.phase = (gait.phase + 2.0 * math.pi * speed / STRIDE_LENGTH * dt) % (2.0 * math.pi)
    return leg_disks(gait, body)


def leg_disks(gait: GaitState, body: AgentBody):
    """Current leg disks as ((x, y, r), (x, y, r))."""
    off = gait.stride_amplitude * math.sin(gait.phase)
    hx, hy = math.cos(gait.heading), math.sin(gait.heading)
    px, py = body.pose.x, body.pose.y
    return (
        (px + off * hx, py + off * hy, gait.leg_radius),
        (px - off * hx, py - off * hy, gait.leg_radius),
    )


@dataclass
class Pedestrian:
    """Body + gait + patrol goal; strategy state lives in the environment."""

    body: AgentBody
    goal: tuple[float, float]
    start: tuple[float, float]
    gait: GaitState = field(default_factory=GaitState)

    def leg_disks(self):
        return leg_disks(self.gait, self.body)

    def at_goal(self) -> bool:
        return (
            math.hypot(self.body.pose.x - self.goal[0], self.body.pose.y - self.goal[1])
            <= GOAL_TOLERANCE
        )

    def swap_patrol(self) -> None:
        self.goal, self.start = self.start, self.goal

    def transformed(self, rot, angle, cs):
        """Rigid-transform copy (test helper, mirrors world.transform_world)."""
        c, s = cs
        x, y = rot(self.body.pose.x, self.body.pose.y)
        vx, vy = self.body.velocity
        body = AgentBody(
            Pose2D(x, y, self.body.pose.theta + angle),
            (c * vx - s * vy, s * vx + c * vy),
            self.body.radius,
            self.body.kind,
            self.body.uid,
        )
        gait = GaitState(
            self.gait.phase,
            self.gait.stride_amplitude,
            self.gait.leg_radius,
            normalize_angle(self.gait.heading + angle),
        )
        return Pedestrian(body, rot(*self.goal), rot(*self.start), gait)


def step_pedestrians(world, strategy: str, orca_params: OrcaParams, sfm_params: SfmParams, dt: float):
    """Advance every pedestrian one tick under the given strategy.

    Pedestrians treat each other and all robots as agents to avoid; static
    obstacles repel (SFM) or constrain (ORCA).  Velocities are decided from
    the pre-step snapshot so the update order is irrelevant, then positions
    integrate holonomically and patrol goals swap on arrival.
    """
    peds = world.pedestrians
    if not peds or strategy == "none":
        for ped in peds:
            update_gait(ped.gait, ped.body, dt)
        return

    agents = [p.body for p in peds] + [r for r in world.robots]
    new_velocities = []
    for i, ped in enumerate(peds):
        others = [a for j, a in enumerate(agents) if j != i]
        if strategy == "orca":
            gx = ped.goal[0] - ped.body.pose.x
            gy = ped.goal[1] - ped.body.pose.y
            dist = math.hypot(gx, gy)
            if dist < 1e-9:
                pref = (0.0, 0.0)
            else:
                speed = min(orca_params.max_speed, dist / dt)
                pref = (gx / dist * speed, gy / dist * speed)
            new_velocities.append(
                orca_velocity(ped.body, pref, others, world.obstacles, orca_params, dt)
            )
        elif strategy == "sfm":
            ax, ay = sfm_acceleration(ped.body, ped.goal, others, world.obstacles, sfm_params, dt)
            vx, vy = ped.body.velocity
            new_velocities.append((vx + ax * dt, vy + ay * dt))
        else:
            raise ValueError(f"unknown pedestrian strategy {strategy!r}")

    for ped, (vx, vy) in zip(peds, new_velocities):
        pose = ped.body.pose
        heading = math.atan2(vy, vx) if math.hypot(vx, vy) > 1e-9 else pose.theta
        ped.body.pose = Pose2D(pose.x + vx * dt, pose.y + vy * dt, heading)
        ped.body.velocity = (vx, vy)
        update_gait(ped.gait, ped.body, dt)
        if ped.at_goal():
            ped.swap_patrol()
