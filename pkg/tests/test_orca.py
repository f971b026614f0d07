import math

import numpy as np
import pytest

from crowdnav.orca import OrcaParams, orca_lines, orca_velocity, solve_lines
from crowdnav.world import AgentBody, CircleObstacle, Pose2D

PARAMS = OrcaParams(neighbor_dist=5.0, time_horizon_agents=5.0, time_horizon_obstacles=2.0, max_speed=0.5)
DT = 0.1


def agent(x, y, vx=0.0, vy=0.0, r=0.3, uid=0):
    return AgentBody(Pose2D(x, y, 0.0), (vx, vy), r, "pedestrian", uid)


def dense_oracle(lines, pref, max_speed, step=0.002):
    """Brute-force LP: scan the speed disk on a grid and keep the feasible
    point closest to the preferred velocity (None when nothing is feasible)."""
    ax = np.arange(-max_speed, max_speed + step / 2, step)
    vx, vy = np.meshgrid(ax, ax)
    ok = vx * vx + vy * vy <= max_speed * max_speed
    for px, py, dx, dy in lines:
        ok &= dx * (py - vy) - dy * (px - vx) <= 0.0
    if not ok.any():
        return None
    d2 = (vx - pref[0]) ** 2 + (vy - pref[1]) ** 2
    d2[~ok] = np.inf
    k = np.argmin(d2)
    return float(vx.flat[k]), float(vy.flat[k])


def random_config(rng):
    n = int(rng.integers(2, 6))
    while True:
        pos = rng.uniform(-2.0, 2.0, (n, 2))
        dists = np.linalg.norm(pos[:, None] - pos[None, :], axis=-1)
        if (dists[np.triu_indices(n, 1)] > 0.7).all():
            break
    vels = rng.uniform(-0.5, 0.5, (n, 2))
    vels *= np.minimum(1.0, 0.5 / (np.linalg.norm(vels, axis=1, keepdims=True) + 1e-12))
    agents = [agent(*pos[i], *vels[i], uid=i) for i in range(n)]
    ang = rng.uniform(0, 2 * math.pi)
    speed = rng.uniform(0, 0.5)
    pref = (speed * math.cos(ang), speed * math.sin(ang))
    return agents, pref


class TestSolver:
    def test_unconstrained_returns_preference(self):
        a = agent(0, 0)
        v = orca_velocity(a, (0.3, -0.2), [], [], PARAMS, DT)
        assert v == pytest.approx((0.3, -0.2), abs=1e-12)

    def test_preference_clipped_to_max_speed(self):
        a = agent(0, 0)
        v = orca_velocity(a, (1.0, 0.0), [], [], PARAMS, DT)
        assert v == pytest.approx((0.5, 0.0), abs=1e-12)

    def test_head_on_pair_symmetry(self):
        a = agent(-1.0, 0.0, uid=0)
        b = agent(1.0, 0.0, uid=1)
        va = orca_velocity(a, (0.5, 0.0), [b], [], PARAMS, DT)
        vb = orca_velocity(b, (-0.5, 0.0), [a], [], PARAMS, DT)
        assert va[0] == pytest.approx(-vb[0], abs=1e-12)
        assert va[1] == pytest.approx(-vb[1], abs=1e-12)

    def test_mirror_reciprocity(self):
        # reflect a two-agent configuration about the x-axis: outputs mirror
        rng = np.random.default_rng(11)
        for _ in range(25):
            (a, b), pref = random_config(rng)[0][:2], None
            pref = tuple(rng.uniform(-0.35, 0.35, 2))
            va = orca_velocity(a, pref, [b], [], PARAMS, DT)

            def mirror(ag, uid):
                return agent(ag.pose.x, -ag.pose.y, ag.velocity[0], -ag.velocity[1], ag.radius, uid)

            vm = orca_velocity(mirror(a, 0), (pref[0], -pref[1]), [mirror(b, 1)], [], PARAMS, DT)
            assert vm[0] == pytest.approx(va[0], abs=1e-9)
            assert vm[1] == pytest.approx(-va[1], abs=1e-9)

    def test_matches_dense_oracle(self):
        # acceptance-grade check at module scale (the full 100-config sweep
        # lives in the acceptance suite)
        rng = np.random.default_rng(5)
        checked = 0
        while checked < 20:
            agents, pref = random_config(rng)
            lines, n_obs = orca_lines(agents[0], agents[1:], [], PARAMS, DT)
            best = dense_oracle(lines, pref, PARAMS.max_speed)
            if best is None:
                continue
            (vx, vy), feasible = solve_lines(lines, n_obs, pref[0], pref[1], PARAMS.max_speed)
            assert feasible
            assert math.hypot(vx - best[0], vy - best[1]) <= 1e-2
            checked += 1

    def test_output_speed_bounded(self):
        rng = np.random.default_rng(17)
        for _ in range(50):
            agents, pref = random_config(rng)
            vx, vy = orca_velocity(agents[0], pref, agents[1:], [], PARAMS, DT)
            assert math.hypot(vx, vy) <= PARAMS.max_speed + 1e-9

    def test_infeasible_fallback_runs(self):
        # ring of close agents around an overlapped center: constraints clash
        center = agent(0, 0, uid=0)
        ring = [
            agent(0.5 * math.cos(t), 0.5 * math.sin(t), -0.4 * math.cos(t), -0.4 * math.sin(t), uid=i + 1)
            for i, t in enumerate(np.linspace(0, 2 * math.pi, 7)[:-1])
        ]
        lines, n_obs = orca_lines(center, ring, [], PARAMS, DT)
        (vx, vy), feasible = solve_lines(lines, n_obs, 0.5, 0.0, PARAMS.max_speed)
        assert math.hypot(vx, vy) <= PARAMS.max_speed + 1e-9
        assert np.isfinite([vx, vy]).all()

    def test_obstacle_constraint_blocks_approach(self):
        a = agent(0, 0)
        wall = CircleObstacle(0.6, 0.0, 0.2)
        vx, vy = orca_velocity(a, (0.5, 0.0), [], [wall], PARAMS, DT)
        # moving straight at the obstacle at full speed would enter it within
        # the obstacle horizon; the solver must slow or deflect
        assert vx < 0.5 - 1e-6


class TestParams:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            OrcaParams(neighbor_dist=0.0)
