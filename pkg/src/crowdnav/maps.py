"""Egocentric observations: lidar-derived sensor map, three-channel
pedestrian map, and the goal pose in the robot frame.

Both maps are 48x48 grids covering 6.0 x 6.0 m at 0.125 m resolution,
robot at the center, +x along the robot heading.  Cell (i, j) covers
x in [(j-24)*res, (j-23)*res) and y in [(i-24)*res, (i-23)*res).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import accel
from .accel import njit
from .world import Pose2D, WorldState, normalize_angle, pack_shapes, _raycast_numpy, _raycast_numba

GRID = 48
RESOLUTION = 0.125
EXTENT = GRID * RESOLUTION  # 6.0 m
HALF_EXTENT = EXTENT / 2.0
MAX_RANGE = 6.0
N_BEAMS = 720
FOV = 1.5 * math.pi  # 270 degrees
MARCH_STEP = RESOLUTION / 4.0
MAX_PED_SPEED = 0.5
GOAL_SCALE = 12.0  # arena side; keeps goal coordinates roughly in [-1, 1]

# cell category codes and their normalized encodings
UNKNOWN, FREE, OBSTACLE, FOOTPRINT = 0, 1, 2, 3
CELL_ENCODING = np.array([0.5, 1.0, 0.0, 0.25], dtype=np.float32)
BEAM_ANGLES = np.linspace(-FOV / 2.0, FOV / 2.0, N_BEAMS)


@dataclass
class SensorMap:
    """Category grid (uint8 codes: unknown/free/obstacle/footprint)."""

    grid: np.ndarray

    def encoded(self) -> np.ndarray:
        """Normalized float32 image: obstacle 0.0, footprint 0.25,
        unknown 0.5, free 1.0."""
        return CELL_ENCODING[self.grid]


@dataclass
class PedestrianMap:
    """channels[0]: occupancy in {0,1}; channels[1:3]: robot-frame velocity
    components (m/s) of the occupying pedestrian, zero where unoccupied."""

    channels: np.ndarray


@dataclass(frozen=True)
class TargetPose:
    x: float
    y: float
    alpha: float


@dataclass
class ObservationBundle:
    sensor_map: SensorMap
    pedestrian_map: PedestrianMap
    target: TargetPose

    def maps_tensor(self) -> np.ndarray:
        """(4, 48, 48) float32 network input; every channel in [-1, 1]."""
        out = np.empty((4, GRID, GRID), dtype=np.float32)
        out[0] = self.sensor_map.encoded()
        out[1] = self.pedestrian_map.channels[0]
        out[2] = self.pedestrian_map.channels[1] / MAX_PED_SPEED
        out[3] = self.pedestrian_map.channels[2] / MAX_PED_SPEED
        return out

    def goal_vector(self) -> np.ndarray:
        """(3,) float32: goal position scaled by the arena side, heading
        error scaled by pi."""
        return np.array(
            [self.target.x / GOAL_SCALE, self.target.y / GOAL_SCALE, self.target.alpha / math.pi],
            dtype=np.float32,
        )


def cell_index(x: float, y: float) -> tuple[int, int]:
    """Robot-frame point -> (row, col); may fall outside [0, 48)."""
    return int(math.floor(y / RESOLUTION)) + GRID // 2, int(math.floor(x / RESOLUTION)) + GRID // 2


def cell_centers() -> tuple[np.ndarray, np.ndarray]:
    """Robot-frame coordinates of all cell centers as (xs (48,), ys (48,))."""
    idx = np.arange(GRID)
    return (idx - (GRID / 2 - 0.5)) * RESOLUTION, (idx - (GRID / 2 - 0.5)) * RESOLUTION


def _stamp_footprint(grid: np.ndarray) -> None:
    c = GRID // 2
    grid[c - 1 : c + 1, c - 1 : c + 1] = FOOTPRINT


def _sensor_grid_numpy(t_hit: np.ndarray) -> np.ndarray:
    grid = np.full((GRID, GRID), UNKNOWN, dtype=np.uint8)
    n_steps = int(math.ceil(MAX_RANGE / MARCH_STEP))
    s = np.arange(n_steps) * MARCH_STEP
    cos_a = np.cos(BEAM_ANGLES)[:, None]
    sin_a = np.sin(BEAM_ANGLES)[:, None]
    xs = s[None, :] * cos_a
    ys = s[None, :] * sin_a
    cols = np.floor(xs / RESOLUTION).astype(np.int64) + GRID // 2
    rows = np.floor(ys / RESOLUTION).astype(np.int64) + GRID // 2
    ok = (
        (s[None, :] < t_hit[:, None])
        & (cols >= 0)
        & (cols < GRID)
        & (rows >= 0)
        & (rows < GRID)
    )
    grid[rows[ok], cols[ok]] = FREE

    hit = t_hit < MAX_RANGE
    hx = (t_hit[hit] + 1e-9) * np.cos(BEAM_ANGLES[hit])
    hy = (t_hit[hit] + 1e-9) * np.sin(BEAM_ANGLES[hit])
    hc = np.floor(hx / RESOLUTION).astype(np.int64) + GRID // 2
    hr = np.floor(hy / RESOLUTION).astype(np.int64) + GRID // 2
    ok = (hc >= 0) & (hc < GRID) & (hr >= 0) & (hr < GRID)
    grid[hr[ok], hc[ok]] = OBSTACLE
    return grid


@njit(cache=True)
def _sensor_grid_numba(t_hit, beam_angles, grid_n, resolution, max_range, march_step):  # pragma: no cover
    grid = np.full((grid_n, grid_n), np.uint8(UNKNOWN), dtype=np.uint8)
    half = grid_n // 2
    n_steps = int(np.ceil(max_range / march_step))
    for k in range(beam_angles.shape[0]):
        ca = np.cos(beam_angles[k])
        sa = np.sin(beam_angles[k])
        for m in range(n_steps):
            s = m * march_step
            if s >= t_hit[k]:
                break
            col = int(np.floor(s * ca / resolution)) + half
            row = int(np.floor(s * sa / resolution)) + half
            if 0 <= col < grid_n and 0 <= row < grid_n:
                grid[row, col] = FREE
    for k in range(beam_angles.shape[0]):
        if t_hit[k] < max_range:
            ca = np.cos(beam_angles[k])
            sa = np.sin(beam_angles[k])
            col = int(np.floor((t_hit[k] + 1e-9) * ca / resolution)) + half
            row = int(np.floor((t_hit[k] + 1e-9) * sa / resolution)) + half
            if 0 <= col < grid_n and 0 <= row < grid_n:
                grid[row, col] = OBSTACLE
    return grid


def build_sensor_map(world: WorldState, robot_index: int) -> SensorMap:
    """Simulate the 2D lidar (720 beams over 270 degrees, 6 m range) and
    rasterize: free along each beam, obstacle at the hit, unknown elsewhere,
    robot footprint stamped at the center."""
    robot = world.robots[robot_index]
    circles, rects = pack_shapes(world, exclude_robot=robot_index)
    # beams are cast in the world frame; cells are indexed in the robot frame,
    # where distances along each beam are identical
    world_angles = robot.pose.theta + BEAM_ANGLES
    if accel.use_numba():
        t_hit = _raycast_numba(
            robot.pose.x, robot.pose.y, np.ascontiguousarray(world_angles), MAX_RANGE, circles, rects
        )
        grid = _sensor_grid_numba(t_hit, BEAM_ANGLES, GRID, RESOLUTION, MAX_RANGE, MARCH_STEP)
    else:
        t_hit = _raycast_numpy(robot.pose.x, robot.pose.y, world_angles, MAX_RANGE, circles, rects)
        grid = _sensor_grid_numpy(t_hit)
    _stamp_footprint(grid)
    return SensorMap(grid)


def build_pedestrian_map(world: WorldState, robot_index: int) -> PedestrianMap:
    """Rasterize pedestrian body disks into occupancy plus robot-frame
    velocity channels.  Pedestrians are never occlusion-culled; where disks
    overlap, the pedestrian nearest to the cell wins (documented tie-break).
    Written velocities are capped at the maximum pedestrian speed."""
    robot = world.robots[robot_index]
    channels = np.zeros((3, GRID, GRID), dtype=np.float32)
    if not world.pedestrians:
        return PedestrianMap(channels)

    cos_t, sin_t = math.cos(robot.pose.theta), math.sin(robot.pose.theta)
    xs, ys = cell_centers()
    cx = xs[None, :]  # column coordinate per cell
    cy = ys[:, None]
    owner_dist = np.full((GRID, GRID), np.inf)

    for ped in world.pedestrians:
        body = ped.body
        dx = body.pose.x - robot.pose.x
        dy = body.pose.y - robot.pose.y
        px = cos_t * dx + sin_t * dy
        py = -sin_t * dx + cos_t * dy
        r = body.radius
        if max(abs(px), abs(py)) > HALF_EXTENT + r:
            continue
        d = np.hypot(cx - px, cy - py)
        mask = (d <= r) & (d < owner_dist)
        if not mask.any():
            continue
        vx, vy = body.velocity
        rvx = cos_t * vx + sin_t * vy
        rvy = -sin_t * vx + cos_t * vy
        speed = math.hypot(rvx, rvy)
        if speed > MAX_PED_SPEED:
            rvx *= MAX_PED_SPEED / speed
            rvy *= MAX_PED_SPEED / speed
        owner_dist[mask] = d[mask]
        channels[0][mask] = 1.0
        channels[1][mask] = rvx
        channels[2][mask] = rvy
    return PedestrianMap(channels)


def target_in_robot_frame(robot: Pose2D, goal: Pose2D) -> TargetPose:
    """Rigid-transform the goal pose into the robot frame."""
    dx = goal.x - robot.x
    dy = goal.y - robot.y
    c, s = math.cos(robot.theta), math.sin(robot.theta)
    return TargetPose(c * dx + s * dy, -s * dx + c * dy, normalize_angle(goal.theta - robot.theta))


def build_observation(
    world: WorldState, robot_index: int, goal: Pose2D, use_pedestrian_map: bool = True
) -> ObservationBundle:
    """Full observation for one robot; with ``use_pedestrian_map=False`` the
    pedestrian channels are zeroed but keep their shape (sensor-only
    ablation)."""
    sensor = build_sensor_map(world, robot_index)
    if use_pedestrian_map:
        ped = build_pedestrian_map(world, robot_index)
    else:
        ped = PedestrianMap(np.zeros((3, GRID, GRID), dtype=np.float32))
    target = target_in_robot_frame(world.robots[robot_index].pose, goal)
    return ObservationBundle(sensor, ped, target)


# ---------------------------------------------------------------------------
# Debug dump formats: plain-text category grid and 8-bit grayscale PGM.
# ---------------------------------------------------------------------------

_TEXT_CHARS = {UNKNOWN: "?", FREE: ".", OBSTACLE: "#", FOOTPRINT: "R"}


def sensor_map_to_text(sensor: SensorMap) -> str:
    """Rows printed top (max y) to bottom; '#' obstacle, '.' free,
    '?' unknown, 'R' robot footprint."""
    rows = []
    for i in range(GRID - 1, -1, -1):
        rows.append("".join(_TEXT_CHARS[int(v)] for v in sensor.grid[i]))
    return "\n".join(rows) + "\n"


def dump_pgm(values: np.ndarray, path) -> None:
    """8-bit binary PGM; input values in [0, 1] scale linearly to 0..255
    (gray = round(value * 255)), row 0 written at the top."""
    img = np.clip(np.round(np.asarray(values, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    img = img[::-1]  # +y up in world, row 0 at top of the image
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    with open(path, "wb") as fh:
        fh.write(header + img.tobytes())


def load_pgm(path) -> np.ndarray:
    """Inverse of :func:`dump_pgm` (values back in [0, 1])."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM file")
    w, h = (int(v) for v in parts[1].split())
    img = np.frombuffer(parts[3][: w * h], dtype=np.uint8).reshape(h, w)
    return img[::-1].astype(np.float64) / 255.0
