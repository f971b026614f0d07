import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crowdnav.pedestrians import GaitState, Pedestrian
from crowdnav.world import (
    ACTION_TABLE,
    Action,
    AgentBody,
    Bounds,
    CircleObstacle,
    Pose2D,
    RectObstacle,
    WorldState,
    detect_collisions,
    normalize_angle,
    normalize_angles,
    raycast,
    step_diff_drive,
    transform_world,
)


def euler_substep(pose, action, dt, n=10000):
    """Independent oracle: fine-grained Euler integration of the unicycle."""
    x, y, th = pose.x, pose.y, pose.theta
    h = dt / n
    for _ in range(n):
        x += action.v * math.cos(th) * h
        y += action.v * math.sin(th) * h
        th += action.w * h
    return x, y, normalize_angle(th)


class TestAngles:
    @given(st.floats(-1000.0, 1000.0))
    def test_normalize_in_range(self, t):
        r = normalize_angle(t)
        assert -math.pi < r <= math.pi

    def test_boundary_maps_to_pi(self):
        assert normalize_angle(math.pi) == math.pi
        assert normalize_angle(-math.pi) == math.pi
        assert normalize_angle(3 * math.pi) == pytest.approx(math.pi)

    def test_array_matches_scalar(self):
        ts = np.linspace(-10, 10, 201)
        got = normalize_angles(ts)
        want = np.array([normalize_angle(t) for t in ts])
        assert np.allclose(got, want, atol=1e-12)


class TestDiffDrive:
    def test_straight_advance(self):
        p = step_diff_drive(Pose2D(0, 0, 0), Action(0.6, 0.0), 0.1)
        assert (p.x, p.y, p.theta) == (pytest.approx(0.06), 0.0, 0.0)

    def test_arc_closed_form(self):
        # radius v/w arc; frozen from the analytic expression
        p = step_diff_drive(Pose2D(0, 0, 0), Action(0.6, 0.9), 0.1)
        r = 0.6 / 0.9
        assert p.theta == pytest.approx(0.09, abs=1e-15)
        assert p.x == pytest.approx(r * math.sin(0.09), abs=1e-15)
        assert p.y == pytest.approx(r * (1 - math.cos(0.09)), abs=1e-15)

    def test_full_circle_closure(self):
        # (0.3, 0.9) over 2*pi/0.9 seconds returns to the start
        n = 70
        dt = 2 * math.pi / 0.9 / n
        p = Pose2D(0.2, -0.5, 0.3)
        q = p
        for _ in range(n):
            q = step_diff_drive(q, Action(0.3, 0.9), dt)
        assert q.x == pytest.approx(p.x, abs=1e-9)
        assert q.y == pytest.approx(p.y, abs=1e-9)
        assert q.theta == pytest.approx(p.theta, abs=1e-9)

    def test_agrees_with_euler_substepping(self):
        for v, w in ACTION_TABLE:
            pose = Pose2D(0.3, -0.2, 0.7)
            got = step_diff_drive(pose, Action(v, w), 0.1)
            ex, ey, eth = euler_substep(pose, Action(v, w), 0.1)
            assert math.hypot(got.x - ex, got.y - ey) < 1e-6
            assert abs(normalize_angle(got.theta - eth)) < 1e-6

    def test_zero_w_preserves_theta_and_path_length(self):
        for theta in np.linspace(-3, 3, 7):
            pose = Pose2D(0.0, 0.0, theta)
            q = step_diff_drive(pose, Action(0.4, 0.0), 0.25)
            assert q.theta == pose.theta
            assert math.hypot(q.x - pose.x, q.y - pose.y) == pytest.approx(0.1, abs=1e-12)

    def test_rejects_bad_dt(self):
        with pytest.raises(ValueError):
            step_diff_drive(Pose2D(0, 0, 0), Action(0.1, 0.0), 0.0)


def make_ped(x, y, uid=100, vx=0.0, vy=0.0):
    body = AgentBody(Pose2D(x, y, 0.0), (vx, vy), 0.3, "pedestrian", uid)
    return Pedestrian(body, goal=(x + 5, y), start=(x, y), gait=GaitState())


class TestCollisions:
    def test_empty_world(self):
        w = WorldState(robots=[AgentBody(Pose2D(0, 0, 0))])
        collided, d_min = detect_collisions(w, 0)
        assert not collided
        assert d_min == math.inf

    def test_sum_of_radii_boundary(self):
        w = WorldState(robots=[AgentBody(Pose2D(0, 0, 0))], pedestrians=[make_ped(0.46, 0.0)])
        collided, d_min = detect_collisions(w, 0)
        assert collided
        assert d_min == 0.0
        # past the sum of radii there is no collision
        w2 = WorldState(robots=[AgentBody(Pose2D(0, 0, 0))], pedestrians=[make_ped(0.471, 0.0)])
        collided2, d2 = detect_collisions(w2, 0)
        assert not collided2
        assert d2 == pytest.approx(0.001, abs=1e-9)

    def test_rect_clearance(self):
        w = WorldState(
            robots=[AgentBody(Pose2D(0, 0, 0))],
            obstacles=[RectObstacle(1.0, 0.0, 0.5, 0.5)],
        )
        collided, _ = detect_collisions(w, 0)
        assert not collided
        from crowdnav.world import obstacle_clearance

        assert obstacle_clearance(0, 0, 0.17, RectObstacle(1.0, 0.0, 0.5, 0.5)) == pytest.approx(0.33)

    def test_out_of_bounds_is_collision(self):
        w = WorldState(robots=[AgentBody(Pose2D(5.9, 0, 0))], bounds=Bounds(6.0))
        assert detect_collisions(w, 0)[0]
        w2 = WorldState(robots=[AgentBody(Pose2D(5.8, 0, 0))], bounds=Bounds(6.0))
        assert not detect_collisions(w2, 0)[0]

    def test_symmetric_in_agent_ordering(self):
        a = AgentBody(Pose2D(0, 0, 0), uid=0)
        b = AgentBody(Pose2D(0.3, 0, 0), uid=1)
        w_ab = WorldState(robots=[a, b])
        w_ba = WorldState(robots=[b, a])
        assert detect_collisions(w_ab, 0)[0] == detect_collisions(w_ba, 1)[0]

    def test_rigid_transform_invariance(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            robots = [
                AgentBody(Pose2D(*rng.uniform(-2, 2, 2), rng.uniform(-3, 3)), uid=i)
                for i in range(2)
            ]
            peds = [make_ped(*rng.uniform(-2, 2, 2), uid=10 + i) for i in range(2)]
            obs = [CircleObstacle(*rng.uniform(-2, 2, 2), 0.4)]
            w = WorldState(robots=robots, pedestrians=peds, obstacles=obs, bounds=Bounds(1e9))
            w2 = transform_world(w, rng.uniform(0, 2 * math.pi), rng.uniform(-1, 1, 2))
            for i in range(2):
                c1, d1 = detect_collisions(w, i)
                c2, d2 = detect_collisions(w2, i)
                assert c1 == c2
                assert d1 == pytest.approx(d2, abs=1e-9)


class TestRaycast:
    def test_no_obstacles(self):
        w = WorldState(robots=[AgentBody(Pose2D(0, 0, 0))])
        assert raycast(w, (0, 0), 0.3, 5.0, exclude_robot=0) == 5.0

    def test_circle_dead_ahead(self):
        w = WorldState(obstacles=[CircleObstacle(2.0, 0.0, 0.5)])
        assert raycast(w, (0, 0), 0.0, 6.0) == pytest.approx(1.5)

    def test_tangent_ray_counts(self):
        # ray along +x, circle centered (2, 0.5) radius 0.5 touches the axis
        w = WorldState(obstacles=[CircleObstacle(2.0, 0.5, 0.5)])
        d = raycast(w, (0, 0), 0.0, 6.0)
        assert d == pytest.approx(2.0, abs=1e-6)

    def test_rect_slab(self):
        w = WorldState(obstacles=[RectObstacle(3.0, 0.0, 0.5, 2.0)])
        assert raycast(w, (0, 0), 0.0, 10.0) == pytest.approx(2.5)
        # miss above the rectangle
        assert raycast(w, (0, 3.0), 0.0, 10.0) == 10.0

    def test_never_exceeds_max_range(self):
        w = WorldState(obstacles=[CircleObstacle(8.0, 0.0, 0.5)])
        assert raycast(w, (0, 0), 0.0, 6.0) == 6.0

    def test_backends_agree(self):
        from crowdnav import accel
        from crowdnav.world import pack_shapes, raycast_batch

        rng = np.random.default_rng(3)
        w = WorldState(
            robots=[AgentBody(Pose2D(0, 0, 0)), AgentBody(Pose2D(1.5, 1.0, 0.4), uid=1)],
            pedestrians=[make_ped(*rng.uniform(-3, 3, 2), uid=10 + i) for i in range(3)],
            obstacles=[
                RectObstacle(*rng.uniform(-3, 3, 2), 0.5, 0.8),
                CircleObstacle(*rng.uniform(-3, 3, 2), 0.4),
            ],
        )
        circles, rects = pack_shapes(w, exclude_robot=0)
        angles = np.linspace(-math.pi, math.pi, 720)
        old = accel.backend()
        try:
            accel.set_backend("numpy")
            a = raycast_batch(0.0, 0.0, angles, 6.0, circles, rects)
            if accel.NUMBA_AVAILABLE:
                accel.set_backend("numba")
                b = raycast_batch(0.0, 0.0, angles, 6.0, circles, rects)
                assert np.allclose(a, b, atol=1e-12)
        finally:
            accel.set_backend(old)


class TestActionTable:
    def test_grid_size(self):
        assert len(ACTION_TABLE) == 28

    def test_bounds(self):
        for v, w in ACTION_TABLE:
            assert Action(v, w).in_bounds()

    def test_clip(self):
        a = Action(1.0, -2.0).clipped()
        assert (a.v, a.w) == (0.6, -0.9)
