import math

import numpy as np
import pytest

from crowdnav.env import (
    CrowdNavEnv,
    EnvConfig,
    compute_reward,
    generate_circular_scenario,
    generate_random_scenario,
    make_smoke_envs,
    make_training_envs,
    parse_scenario_line,
    scenario_line,
)
from crowdnav.pedestrians import GaitState, Pedestrian
from crowdnav.world import (
    Action,
    AgentBody,
    Bounds,
    Pose2D,
    RectObstacle,
    WorldState,
)

CFG = EnvConfig()


def world_with_robot(x, y, peds=(), obstacles=()):
    return WorldState(
        robots=[AgentBody(Pose2D(x, y, 0.0), uid=0)],
        pedestrians=list(peds),
        obstacles=list(obstacles),
        bounds=Bounds(6.0),
    )


def ped_at(x, y, uid=100):
    body = AgentBody(Pose2D(x, y, 0.0), (0.0, 0.0), 0.3, "pedestrian", uid)
    return Pedestrian(body, goal=(x + 3, y), start=(x, y), gait=GaitState())


class TestReward:
    def test_arrival_with_progress(self):
        # reached, d_min >= 1, moved 0.05 m closer: 500 - 5 + 10 = 505
        prev = world_with_robot(1.05, 0.0)
        nxt = world_with_robot(1.0, 0.0)
        goal = Pose2D(0.0, 0.0, 0.0)
        total, comps = compute_reward(prev, nxt, 0, goal, "reached", CFG, d_min=math.inf)
        assert total == pytest.approx(505.0, abs=1e-9)
        assert (comps.goal, comps.step) == (500.0, -5.0)
        assert comps.shaping == pytest.approx(10.0, abs=1e-9)

    def test_proximity_penalty(self):
        # stationary, d_min = 0.5: -5 - 50*0.5 = -30
        prev = world_with_robot(0.0, 0.0)
        nxt = world_with_robot(0.0, 0.0)
        total, comps = compute_reward(prev, nxt, 0, Pose2D(3, 0, 0), "running", CFG, d_min=0.5)
        assert total == pytest.approx(-30.0)
        assert comps.safe == pytest.approx(-25.0)

    def test_collision_supersedes_proximity(self):
        prev = world_with_robot(0.0, 0.0)
        nxt = world_with_robot(0.0, 0.0)
        total, comps = compute_reward(prev, nxt, 0, Pose2D(3, 0, 0), "collided", CFG, d_min=0.0)
        assert total == pytest.approx(-505.0)
        assert comps.safe == -500.0

    def test_branch_exclusivity(self):
        prev = world_with_robot(0.0, 0.0)
        nxt = world_with_robot(0.0, 0.0)
        goal = Pose2D(3, 0, 0)
        for outcome, d_min in (("reached", 2.0), ("collided", 0.3), ("running", 0.4), ("running", 1.5)):
            _, comps = compute_reward(prev, nxt, 0, goal, outcome, CFG, d_min=d_min)
            contributions = [comps.goal == 500.0, comps.safe == -500.0, -50.0 < comps.safe < 0.0]
            assert sum(contributions) <= 1

    def test_shaping_telescopes(self):
        rng = np.random.default_rng(0)
        goal = Pose2D(2.0, -1.0, 0.0)
        pts = rng.uniform(-5, 5, (50, 2))
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            _, comps = compute_reward(
                world_with_robot(*a), world_with_robot(*b), 0, goal, "running", CFG, d_min=math.inf
            )
            total += comps.shaping
        expect = CFG.eps2 * (
            math.hypot(pts[0][0] - goal.x, pts[0][1] - goal.y)
            - math.hypot(pts[-1][0] - goal.x, pts[-1][1] - goal.y)
        )
        assert total == pytest.approx(expect, abs=1e-9)


class TestScenarios:
    def test_random_counts_and_clearance(self):
        cfg = EnvConfig(scenario="random", strategy="orca")
        scen = generate_random_scenario(np.random.default_rng(1), cfg)
        assert len(scen.world.robots) == 2
        assert len(scen.world.pedestrians) == 4
        assert len(scen.world.obstacles) == 4
        from crowdnav.world import detect_collisions

        for i in range(2):
            assert not detect_collisions(scen.world, i)[0]

    def test_random_determinism(self):
        cfg = EnvConfig(scenario="random")
        a = generate_random_scenario(np.random.default_rng(7), cfg)
        b = generate_random_scenario(np.random.default_rng(7), cfg)
        for ra, rb in zip(a.world.robots, b.world.robots):
            assert (ra.pose.x, ra.pose.y, ra.pose.theta) == (rb.pose.x, rb.pose.y, rb.pose.theta)
        for ga, gb in zip(a.goals, b.goals):
            assert (ga.x, ga.y) == (gb.x, gb.y)

    def test_random_start_goal_separation(self):
        cfg = EnvConfig(scenario="random")
        for seed in range(200):
            scen = generate_random_scenario(np.random.default_rng(seed), cfg)
            for robot, goal in zip(scen.world.robots, scen.goals):
                assert math.hypot(robot.pose.x - goal.x, robot.pose.y - goal.y) >= 3.0

    def test_circular_geometry(self):
        cfg = EnvConfig(scenario="circular")
        for seed in range(200):
            scen = generate_circular_scenario(np.random.default_rng(seed), cfg)
            bodies = [r for r in scen.world.robots] + [p.body for p in scen.world.pedestrians]
            radii = [math.hypot(b.pose.x, b.pose.y) for b in bodies]
            assert max(radii) - min(radii) < 1e-9
            assert 2.5 <= radii[0] <= 4.5
            for robot, goal in zip(scen.world.robots, scen.goals):
                d = math.hypot(robot.pose.x - goal.x, robot.pose.y - goal.y)
                assert d == pytest.approx(2 * radii[0], abs=1e-9)
            # no initial overlap
            for i, a in enumerate(bodies):
                for b in bodies[i + 1 :]:
                    gap = math.hypot(a.pose.x - b.pose.x, a.pose.y - b.pose.y) - a.radius - b.radius
                    assert gap > 0.0

    def test_ppo_circular_is_five_robots(self):
        cfg = EnvConfig(scenario="ppo_circular", strategy="none")
        scen = generate_circular_scenario(np.random.default_rng(3), cfg)
        assert len(scen.world.robots) == 5
        assert len(scen.world.pedestrians) == 0

    def test_scenario_line_round_trip(self):
        line = scenario_line("circular", "sfm", 42)
        assert parse_scenario_line(line) == ("circular", "sfm", 42)


class TestEnvStepping:
    def test_scripted_drive_to_goal(self):
        env = CrowdNavEnv(EnvConfig(scenario="empty", strategy="none"), seed=5)
        env.reset(seed=11)
        robot = env.world.robots[0]
        goal = env.goals[0]
        d_start = math.hypot(robot.pose.x - goal.x, robot.pose.y - goal.y)
        # point the robot straight at its goal, then drive forward
        env.world.robots[0].pose = Pose2D(
            robot.pose.x, robot.pose.y, math.atan2(goal.y - robot.pose.y, goal.x - robot.pose.x)
        )
        shaping_sum = 0.0
        outcome = "running"
        for _ in range(200):
            res = env.step({0: Action(0.6, 0.0)})[0]
            shaping_sum += res.components.shaping
            if res.done:
                outcome = res.outcome
                break
        assert outcome == "reached"
        d_end = math.hypot(
            env.world.robots[0].pose.x - goal.x, env.world.robots[0].pose.y - goal.y
        )
        assert shaping_sum == pytest.approx(env.cfg.eps2 * (d_start - d_end), abs=1e-9)

    def test_drive_into_wall_collides(self):
        cfg = EnvConfig(scenario="empty", strategy="none")
        env = CrowdNavEnv(cfg, seed=5)
        env.reset(seed=11)
        env.world.obstacles = [RectObstacle(3.0, 0.0, 0.5, 3.0)]
        env.world.robots[0].pose = Pose2D(0.0, 0.0, 0.0)
        env.goals[0] = Pose2D(5.5, 0.0, 0.0)
        distance = 3.0 - 0.5 - cfg.robot_radius
        limit = math.ceil(distance / (0.6 * cfg.dt)) + 1
        for k in range(limit):
            res = env.step({0: Action(0.6, 0.0)})[0]
            if res.done:
                break
        assert res.outcome == "collided"
        assert k + 1 <= limit

    def test_noop_after_done(self):
        env = CrowdNavEnv(EnvConfig(scenario="empty", strategy="none"), seed=2)
        env.reset(seed=3)
        env.world.robots[0].pose = Pose2D(5.95, 0.0, 0.0)  # outside bound - radius
        res = env.step({0: Action(0.0, 0.0)})[0]
        assert res.outcome == "collided"
        res2 = env.step({})
        assert res2[0].done and res2[0].reward == 0.0

    def test_episode_length_cap(self):
        env = CrowdNavEnv(EnvConfig(scenario="empty", strategy="none"), seed=9)
        env.reset(seed=1)
        steps = 0
        while not env.done:
            res = env.step({0: Action(0.0, 0.1)})[0]
            steps += 1
            assert steps <= 200
        assert res.outcome == "timeout"
        assert steps == 200

    def test_action_clamped_and_flagged(self):
        env = CrowdNavEnv(EnvConfig(scenario="empty", strategy="none"), seed=9)
        env.reset(seed=1)
        env.step({0: Action(2.0, -3.0)})
        assert env.clamp_events == 1

    def test_determinism_bit_identical(self):
        def run():
            env = CrowdNavEnv(EnvConfig(scenario="random", strategy="sfm"), seed=123)
            env.reset()
            trace = []
            rng = np.random.default_rng(99)
            while not env.done:
                actions = {
                    i: Action(float(rng.uniform(0, 0.6)), float(rng.uniform(-0.9, 0.9)))
                    for i in env.live_robots()
                }
                for res in env.step(actions):
                    if res.observation is not None:
                        trace.append(res.reward)
                trace.extend(
                    (r.pose.x, r.pose.y, r.pose.theta) for r in env.world.robots
                )
                trace.extend((p.body.pose.x, p.body.pose.y) for p in env.world.pedestrians)
            return trace

        a, b = run(), run()
        assert a == b

    def test_requires_action_per_live_robot(self):
        env = CrowdNavEnv(EnvConfig(scenario="random", strategy="orca"), seed=1)
        env.reset(seed=1)
        with pytest.raises(ValueError):
            env.step({0: Action(0.1, 0.0)})

    def test_ablation_pedestrian_channels_zero(self):
        env = CrowdNavEnv(
            EnvConfig(scenario="circular", strategy="orca", use_pedestrian_map=False), seed=4
        )
        obs = env.reset(seed=8)
        assert (obs[0].pedestrian_map.channels == 0).all()
        res = env.step({i: Action(0.3, 0.0) for i in env.live_robots()})
        for r in res:
            if r.observation is not None:
                assert (r.observation.pedestrian_map.channels == 0).all()
                assert r.observation.pedestrian_map.channels.shape == (3, 48, 48)

    def test_pedestrians_patrol_keeps_scene_populated(self):
        env = CrowdNavEnv(EnvConfig(scenario="circular", strategy="orca"), seed=12)
        env.reset(seed=2)
        n0 = len(env.world.pedestrians)
        for _ in range(200):
            if env.done:
                break
            env.step({i: Action(0.0, 0.0) for i in env.live_robots()})
        assert len(env.world.pedestrians) == n0


class TestEnvFactories:
    def test_training_env_combos(self):
        envs = make_training_envs(EnvConfig(), seed=1)
        combos = [(e.cfg.scenario, e.cfg.strategy) for e in envs]
        assert combos == [
            ("random", "orca"),
            ("random", "sfm"),
            ("circular", "orca"),
            ("circular", "sfm"),
        ]

    def test_smoke_envs(self):
        envs = make_smoke_envs(EnvConfig(), seed=1)
        assert len(envs) == 4
        for e in envs:
            obs = e.reset()
            assert len(obs) == 1
            assert len(e.world.pedestrians) == 0
            assert len(e.world.obstacles) == 0
