"""The navigation MDP: scenario generation, episode stepping, reward, and
termination, wrapping the world, pedestrian strategies, and perception.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .maps import ObservationBundle, build_observation
from .orca import OrcaParams
from .pedestrians import GaitState, Pedestrian, step_pedestrians
from .sfm import SfmParams
from .world import (
    Action,
    AgentBody,
    Bounds,
    Pose2D,
    RectObstacle,
    WorldState,
    detect_collisions,
    step_diff_drive,
)

log = logging.getLogger(__name__)

SCENARIO_KINDS = ("random", "circular", "ppo_circular", "empty")
STRATEGIES = ("orca", "sfm", "none")

MAX_PLACEMENT_ATTEMPTS = 10_000


@dataclass(frozen=True)
class EnvConfig:
    scenario: str = "random"
    strategy: str = "orca"
    dt: float = 0.1
    max_steps: int = 200
    goal_tolerance: float = 0.3
    r_arr: float = 500.0
    r_col: float = -500.0
    eps1: float = 50.0
    eps2: float = 200.0
    r_step: float = -5.0
    use_pedestrian_map: bool = True
    robot_radius: float = 0.17
    ped_radius: float = 0.3
    arena_half: float = 6.0
    n_robots: int | None = None  # None: scenario default
    n_pedestrians: int | None = None
    n_obstacles: int | None = None
    orca: OrcaParams = field(default_factory=OrcaParams)
    sfm: SfmParams = field(default_factory=SfmParams)

    def __post_init__(self):
        if self.scenario not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    def counts(self) -> tuple[int, int, int]:
        """(robots, pedestrians, obstacles) after scenario defaults."""
        defaults = {
            "random": (2, 4, 4),
            "circular": (2, 4, 0),
            "ppo_circular": (5, 0, 0),
            "empty": (1, 0, 0),
        }[self.scenario]
        n_rob = defaults[0] if self.n_robots is None else self.n_robots
        n_ped = defaults[1] if self.n_pedestrians is None else self.n_pedestrians
        n_obs = defaults[2] if self.n_obstacles is None else self.n_obstacles
        if self.strategy == "none" and self.scenario in ("ppo_circular", "empty"):
            n_ped = 0
        return n_rob, n_ped, n_obs


@dataclass
class RewardComponents:
    goal: float
    safe: float
    step: float
    shaping: float

    @property
    def total(self) -> float:
        return self.goal + self.safe + self.step + self.shaping


@dataclass
class StepResult:
    observation: ObservationBundle | None
    reward: float
    done: bool
    outcome: str  # running | reached | collided | timeout
    components: RewardComponents | None = None
    d_min: float = math.inf


@dataclass
class Scenario:
    world: WorldState
    goals: list[Pose2D]  # one per robot


def scenario_line(kind: str, strategy: str, seed: int) -> str:
    """One-line reproducible description of a seeded scenario."""
    return f"{kind} {strategy} {seed}"


def parse_scenario_line(line: str) -> tuple[str, str, int]:
    kind, strategy, seed = line.split()
    if kind not in SCENARIO_KINDS or strategy not in STRATEGIES:
        raise ValueError(f"bad scenario line {line!r}")
    return kind, strategy, int(seed)


def _clear_of(x, y, r, placed, obstacles, min_clearance=0.1):
    for px, py, pr in placed:
        if math.hypot(x - px, y - py) - r - pr < min_clearance:
            return False
    from .world import obstacle_clearance

    for obs in obstacles:
        if obstacle_clearance(x, y, r, obs) < min_clearance:
            return False
    return True


def _sample_clear(rng, r, placed, obstacles, lo, hi, predicate=None):
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        x, y = rng.uniform(lo, hi, 2)
        if not _clear_of(x, y, r, placed, obstacles):
            continue
        if predicate is not None and not predicate(x, y):
            continue
        return x, y
    raise _PlacementFailed


class _PlacementFailed(Exception):
    pass


def generate_random_scenario(rng: np.random.Generator, cfg: EnvConfig) -> Scenario:
    """Robots, pedestrians, and rectangular obstacles at random spots with
    pairwise clearance >= 0.1 m; robot start-goal distance >= 3 m;
    pedestrians patrol between random start/goal pairs."""
    n_rob, n_ped, n_obs = cfg.counts()
    margin = 1.0
    lo, hi = -cfg.arena_half + margin, cfg.arena_half - margin
    while True:
        try:
            return _try_random_scenario(rng, cfg, n_rob, n_ped, n_obs, lo, hi)
        except _PlacementFailed:
            log.warning("scenario placement exceeded %d attempts; redrawing", MAX_PLACEMENT_ATTEMPTS)


def _try_random_scenario(rng, cfg, n_rob, n_ped, n_obs, lo, hi) -> Scenario:
    obstacles = []
    for _ in range(n_obs):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            hx, hy = rng.uniform(0.3, 0.8, 2)
            cx, cy = rng.uniform(lo + hx, hi - hx), rng.uniform(lo + hy, hi - hy)
            cand = RectObstacle(cx, cy, hx, hy)
            ok = all(
                max(abs(cand.cx - o.cx) - cand.hx - o.hx, abs(cand.cy - o.cy) - cand.hy - o.hy) >= 0.1
                for o in obstacles
            )
            if ok:
                obstacles.append(cand)
                break
        else:
            raise _PlacementFailed

    placed = []  # (x, y, effective radius) of everything placed so far
    robots, goals = [], []
    for i in range(n_rob):
        x, y = _sample_clear(rng, cfg.robot_radius, placed, obstacles, lo, hi)
        placed.append((x, y, cfg.robot_radius))
        gx, gy = _sample_clear(
            rng,
            cfg.robot_radius,
            placed,
            obstacles,
            lo,
            hi,
            predicate=lambda gx, gy, x=x, y=y: math.hypot(gx - x, gy - y) >= 3.0,
        )
        placed.append((gx, gy, cfg.robot_radius))
        theta = rng.uniform(-math.pi, math.pi)
        robots.append(AgentBody(Pose2D(x, y, theta), (0.0, 0.0), cfg.robot_radius, "robot", i))
        goals.append(Pose2D(gx, gy, math.atan2(gy - y, gx - x)))

    pedestrians = []
    for i in range(n_ped):
        x, y = _sample_clear(rng, cfg.ped_radius, placed, obstacles, lo, hi)
        placed.append((x, y, cfg.ped_radius))
        gx, gy = _sample_clear(
            rng,
            cfg.ped_radius,
            placed,
            obstacles,
            lo,
            hi,
            predicate=lambda gx, gy, x=x, y=y: math.hypot(gx - x, gy - y) >= 2.0,
        )
        body = AgentBody(
            Pose2D(x, y, math.atan2(gy - y, gx - x)), (0.0, 0.0), cfg.ped_radius, "pedestrian", 100 + i
        )
        pedestrians.append(
            Pedestrian(body, goal=(gx, gy), start=(x, y), gait=GaitState(phase=rng.uniform(0, 2 * math.pi)))
        )

    world = WorldState(
        robots=robots, pedestrians=pedestrians, obstacles=obstacles, bounds=Bounds(cfg.arena_half)
    )
    return Scenario(world, goals)


def generate_circular_scenario(rng: np.random.Generator, cfg: EnvConfig) -> Scenario:
    """Agents on a circle of random radius with angular jitter; every goal
    is the antipodal point."""
    n_rob, n_ped, _ = cfg.counts()
    n = n_rob + n_ped
    radius = rng.uniform(2.5, 4.5)
    base = rng.uniform(0, 2 * math.pi)
    angles = base + np.arange(n) * (2 * math.pi / n) + rng.uniform(-0.25, 0.25, n)

    robots, goals, pedestrians = [], [], []
    for k in range(n):
        x = radius * math.cos(angles[k])
        y = radius * math.sin(angles[k])
        gx, gy = -x, -y
        heading = math.atan2(gy - y, gx - x)
        if k < n_rob:
            robots.append(AgentBody(Pose2D(x, y, heading), (0.0, 0.0), cfg.robot_radius, "robot", k))
            goals.append(Pose2D(gx, gy, heading))
        else:
            body = AgentBody(Pose2D(x, y, heading), (0.0, 0.0), cfg.ped_radius, "pedestrian", 100 + k)
            pedestrians.append(
                Pedestrian(body, goal=(gx, gy), start=(x, y), gait=GaitState(phase=rng.uniform(0, 2 * math.pi)))
            )

    world = WorldState(
        robots=robots, pedestrians=pedestrians, obstacles=[], bounds=Bounds(cfg.arena_half)
    )
    return Scenario(world, goals)


def generate_scenario(kind: str, rng: np.random.Generator, cfg: EnvConfig) -> Scenario:
    if kind in ("random", "empty"):
        return generate_random_scenario(rng, cfg)
    if kind in ("circular", "ppo_circular"):
        return generate_circular_scenario(rng, cfg)
    raise ValueError(f"unknown scenario {kind!r}")


def compute_reward(
    prev: WorldState,
    nxt: WorldState,
    robot_index: int,
    goal: Pose2D,
    outcome: str,
    cfg: EnvConfig,
    d_min: float | None = None,
) -> tuple[float, RewardComponents]:
    """Per-step reward: arrival bonus, safety penalty (collision dominates
    the proximity term), constant step cost, and potential-based shaping on
    the distance to goal."""
    if d_min is None:
        _, d_min = detect_collisions(nxt, robot_index)
    p_prev = prev.robots[robot_index].pose
    p_next = nxt.robots[robot_index].pose

    r_goal = cfg.r_arr if outcome == "reached" else 0.0
    if outcome == "collided":
        r_safe = cfg.r_col
    elif d_min < 1.0:
        r_safe = -cfg.eps1 * (1.0 - d_min)
    else:
        r_safe = 0.0
    shaping = cfg.eps2 * (
        math.hypot(p_prev.x - goal.x, p_prev.y - goal.y)
        - math.hypot(p_next.x - goal.x, p_next.y - goal.y)
    )
    comps = RewardComponents(goal=r_goal, safe=r_safe, step=cfg.r_step, shaping=shaping)
    return comps.total, comps


class CrowdNavEnv:
    """Single seeded environment instance; not thread-shared.

    Robots act through :meth:`step` with one action per live robot; done
    robots freeze in place (still visible to everyone) until every robot is
    done, after which the episode must be reset.
    """

    def __init__(self, cfg: EnvConfig, seed: int = 0):
        self.cfg = cfg
        self._seed_stream = np.random.default_rng(seed)
        self.episode_seed: int | None = None
        self.world: WorldState | None = None
        self.goals: list[Pose2D] = []
        self.outcomes: list[str] = []
        self.step_count = 0
        self.clamp_events = 0

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int | None = None) -> list[ObservationBundle]:
        if seed is None:
            seed = int(self._seed_stream.integers(0, 2**63 - 1))
        self.episode_seed = seed
        rng = np.random.default_rng(seed)
        scen = generate_scenario(self.cfg.scenario, rng, self.cfg)
        self.world = scen.world
        self.goals = scen.goals
        self.outcomes = ["running"] * len(self.world.robots)
        self.step_count = 0
        return [self._observe(i) for i in range(len(self.world.robots))]

    @property
    def done(self) -> bool:
        return all(o != "running" for o in self.outcomes)

    def live_robots(self) -> list[int]:
        return [i for i, o in enumerate(self.outcomes) if o == "running"]

    def _observe(self, robot_index: int) -> ObservationBundle:
        return build_observation(
            self.world, robot_index, self.goals[robot_index], self.cfg.use_pedestrian_map
        )

    # -- stepping -----------------------------------------------------------

    def step(self, actions: dict[int, Action]) -> list[StepResult]:
        """Advance one tick.  ``actions`` maps live robot index -> Action;
        out-of-bounds continuous actions are clamped and counted."""
        if self.world is None:
            raise RuntimeError("reset() must be called before step()")
        cfg = self.cfg
        live = self.live_robots()
        if set(actions) != set(live):
            raise ValueError(f"need exactly one action per live robot {live}, got {sorted(actions)}")
        if not live:
            return [
                StepResult(None, 0.0, True, self.outcomes[i], None) for i in range(len(self.outcomes))
            ]

        prev_poses = [r.pose for r in self.world.robots]

        step_pedestrians(self.world, cfg.strategy, cfg.orca, cfg.sfm, cfg.dt)

        for i in live:
            action = actions[i]
            clamped = action.clipped()
            if (clamped.v, clamped.w) != (action.v, action.w):
                self.clamp_events += 1
            robot = self.world.robots[i]
            new_pose = step_diff_drive(robot.pose, clamped, cfg.dt)
            robot.velocity = ((new_pose.x - robot.pose.x) / cfg.dt, (new_pose.y - robot.pose.y) / cfg.dt)
            robot.pose = new_pose
        for i in range(len(self.world.robots)):
            if i not in actions:
                self.world.robots[i].velocity = (0.0, 0.0)

        self.world.time += cfg.dt
        self.step_count += 1

        results: list[StepResult] = []
        prev_world = WorldState(
            robots=[AgentBody(p, (0, 0), cfg.robot_radius, "robot", i) for i, p in enumerate(prev_poses)],
            pedestrians=[],
            obstacles=[],
            bounds=self.world.bounds,
        )
        for i in range(len(self.world.robots)):
            if i not in actions:
                results.append(StepResult(None, 0.0, True, self.outcomes[i], None))
                continue
            collided, d_min = detect_collisions(self.world, i)
            robot = self.world.robots[i]
            reached = (
                math.hypot(robot.pose.x - self.goals[i].x, robot.pose.y - self.goals[i].y)
                <= cfg.goal_tolerance
            )
            if collided:
                outcome = "collided"
            elif reached:
                outcome = "reached"
            elif self.step_count >= cfg.max_steps:
                outcome = "timeout"
            else:
                outcome = "running"
            self.outcomes[i] = outcome
            reward, comps = compute_reward(
                prev_world, self.world, i, self.goals[i], outcome, cfg, d_min=d_min
            )
            results.append(
                StepResult(self._observe(i), reward, outcome != "running", outcome, comps, d_min)
            )
        return results


def make_training_envs(base_cfg: EnvConfig, seed: int) -> list[CrowdNavEnv]:
    """The four parallel training environments: random/circular crossed with
    ORCA/SFM pedestrians, on independent seed streams."""
    combos = [("random", "orca"), ("random", "sfm"), ("circular", "orca"), ("circular", "sfm")]
    envs = []
    for k, (scenario, strategy) in enumerate(combos):
        cfg = replace(base_cfg, scenario=scenario, strategy=strategy)
        envs.append(CrowdNavEnv(cfg, seed=seed * 4 + k))
    return envs


def make_smoke_envs(base_cfg: EnvConfig, seed: int, n_envs: int = 4) -> list[CrowdNavEnv]:
    """Parallel copies of the single-robot, pedestrian-free task used by the
    learning smoke check."""
    cfg = replace(base_cfg, scenario="empty", strategy="none", n_robots=1, n_pedestrians=0, n_obstacles=0)
    return [CrowdNavEnv(cfg, seed=seed * 4 + k) for k in range(n_envs)]
