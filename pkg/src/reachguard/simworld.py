"""Ground-truth robot: noisy unicycle, obstacle worlds, LiDAR, data collection.

The safety layer never looks inside :func:`step`; it only sees the
trajectories produced by :func:`collect_data`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .setops import ConstrainedZonotope, Interval, Zonotope, box, interval_hull

DT = 0.1
LIDAR_MAX_RANGE = 3.5
DEFAULT_NOISE_HALF_WIDTHS = (0.002, 0.002, 0.001, 0.001)
INPUT_BOX = Interval([0.0, -0.5], [0.5, 0.5])


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2.0 * math.pi)
    if w <= 0.0:
        w += 2.0 * math.pi
    return w - math.pi


@dataclass(frozen=True)
class RobotState:
    px: float
    py: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "px", float(self.px))
        object.__setattr__(self, "py", float(self.py))
        object.__setattr__(self, "psi", wrap_angle(float(self.psi)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.px, self.py])


def embed(s: RobotState) -> np.ndarray:
    return np.array([s.px, s.py, math.cos(s.psi), math.sin(s.psi)])


def unembed(e) -> RobotState:
    e = np.asarray(e, dtype=float)
    return RobotState(float(e[0]), float(e[1]), math.atan2(e[3], e[2]))


def noise_zonotope(half_widths=DEFAULT_NOISE_HALF_WIDTHS) -> Zonotope:
    return box(np.zeros(len(half_widths)), half_widths)


@dataclass(frozen=True, eq=False)
class WorldModel:
    name: str
    obstacles: tuple = ()
    bounds: Interval = field(default_factory=lambda: Interval([-5.0, -5.0], [5.0, 5.0]))
    lidar_beams: int = 19
    lidar_fov: tuple = (-math.pi / 4, math.pi / 4)
    lidar_max_range: float = LIDAR_MAX_RANGE
    noise: Zonotope = field(default_factory=noise_zonotope)
    dt: float = DT
    start: RobotState = RobotState(0.0, 0.0, 0.0)
    goal: tuple = (2.0, 0.0)
    horizon: int = 3

    def __post_init__(self):
        if self.lidar_beams < 1:
            raise ValueError("a world needs at least one LiDAR beam")
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        for obs in self.obstacles:
            hull = interval_hull(obs)
            if np.any(hull.lower < self.bounds.lower - 1e-9) or np.any(hull.upper > self.bounds.upper + 1e-9):
                raise ValueError(f"obstacle {hull.lower}..{hull.upper} outside the arena")

    def with_obstacles(self, obstacles) -> "WorldModel":
        return replace(self, obstacles=tuple(obstacles))


# --------------------------------------------------------------------------
# dynamics


def sample_noise(noise: Zonotope, rng: np.random.Generator) -> np.ndarray:
    """Draw a pose disturbance ``(dpx, dpy, dpsi)``.

    Position noise is uniform in the position rows of ``noise``'s interval
    hull.  Heading noise is uniform in ``[-r, r]`` with ``r`` the smaller
    trig half-width, which keeps the induced change of ``(cos, sin)`` inside
    the trig rows of the hull (cos and sin are 1-Lipschitz).
    """
    hull = interval_hull(noise)
    lo, hi = hull.lower, hull.upper
    dpos = rng.uniform(lo[:2], hi[:2])
    r = float(min(hull.radius[2], hull.radius[3]))
    dpsi = rng.uniform(-r, r) if r > 0 else 0.0
    return np.array([dpos[0], dpos[1], dpsi])


def step(
    s: RobotState,
    u,
    noise_sample=None,
    *,
    dt: float = DT,
    noise: Zonotope | None = None,
    rng: np.random.Generator | None = None,
) -> RobotState:
    """One forward-Euler unicycle step plus additive pose noise.

    ``noise_sample`` is a pose disturbance ``(dpx, dpy, dpsi)``; when omitted
    and both ``noise`` and ``rng`` are given, one is drawn with
    :func:`sample_noise`.  Without either the step is noise free.
    """
    v, omega = float(u[0]), float(u[1])
    px = s.px + v * math.cos(s.psi) * dt
    py = s.py + v * math.sin(s.psi) * dt
    psi = s.psi + omega * dt
    if noise_sample is None and noise is not None and rng is not None:
        noise_sample = sample_noise(noise, rng)
    if noise_sample is not None:
        px += float(noise_sample[0])
        py += float(noise_sample[1])
        psi += float(noise_sample[2])
    return RobotState(px, py, psi)


# --------------------------------------------------------------------------
# sensing


def _ray_box(origin, direction, lo, hi) -> float:
    """Entry distance of a ray into an axis-aligned box (inf if missed)."""
    t_near, t_far = -math.inf, math.inf
    for k in range(2):
        d = direction[k]
        if abs(d) < 1e-15:
            if origin[k] < lo[k] or origin[k] > hi[k]:
                return math.inf
            continue
        t1 = (lo[k] - origin[k]) / d
        t2 = (hi[k] - origin[k]) / d
        if t1 > t2:
            t1, t2 = t2, t1
        t_near = max(t_near, t1)
        t_far = min(t_far, t2)
    if t_near > t_far or t_far < 0:
        return math.inf
    return max(t_near, 0.0)


def beam_angles(world: WorldModel) -> np.ndarray:
    lo, hi = world.lidar_fov
    if world.lidar_beams == 1:
        return np.array([0.5 * (lo + hi)])
    return np.linspace(lo, hi, world.lidar_beams)


def lidar_scan(s: RobotState, world: WorldModel) -> np.ndarray:
    """Ranges along each beam to the nearest obstacle interval hull, capped
    at the sensor range and floored at a tiny positive value."""
    origin = (s.px, s.py)
    hulls = [interval_hull(o) for o in world.obstacles]
    ranges = np.full(world.lidar_beams, world.lidar_max_range)
    for i, a in enumerate(beam_angles(world)):
        d = (math.cos(s.psi + a), math.sin(s.psi + a))
        for hb in hulls:
            t = _ray_box(origin, d, hb.lower, hb.upper)
            if t < ranges[i]:
                ranges[i] = t
    return np.maximum(ranges, 1e-9)


def hull_distance(point, obstacle) -> float:
    """Euclidean distance from ``point`` to the obstacle's interval hull
    (zero inside).  Never exceeds the distance to the obstacle itself."""
    hb = interval_hull(obstacle)
    p = np.asarray(point, dtype=float)
    gap = np.maximum(np.maximum(hb.lower - p, p - hb.upper), 0.0)
    return float(np.linalg.norm(gap))


def segment_hull_distance(p0, p1, obstacle, samples: int = 11) -> float:
    """Smallest hull distance along the straight segment ``p0 -> p1``."""
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    ts = np.linspace(0.0, 1.0, samples)
    return min(hull_distance(p0 + t * (p1 - p0), obstacle) for t in ts)


# --------------------------------------------------------------------------
# presets


def _cube(cx, cy, half=0.25) -> ConstrainedZonotope:
    return box([cx, cy], [half, half]).to_constrained()


def _wall(x0, y0, x1, y1) -> ConstrainedZonotope:
    return box([(x0 + x1) / 2, (y0 + y1) / 2], [abs(x1 - x0) / 2, abs(y1 - y0) / 2]).to_constrained()


def make_world(name: str) -> WorldModel:
    """Named obstacle layouts.

    ``open``: empty arena.  ``world``: a field of 0.5 m cubes between start
    and goal, 37 beams over +-90 deg.  ``house``: thin walls forming rooms
    with a doorway, 19 beams over +-45 deg.  ``lab``: a few boxes with a
    5-step default horizon.
    """
    if name == "open":
        return WorldModel("open", goal=(2.0, 0.0))
    if name == "world":
        cubes = [(-1.0, 0.7), (0.0, -0.7), (1.0, 0.7), (0.0, 1.5), (-1.0, -1.45),
                 (1.0, -1.45), (2.0, 1.3), (-2.2, 1.2), (2.3, -1.2)]
        return WorldModel(
            "world",
            obstacles=[_cube(x, y) for x, y in cubes],
            lidar_beams=37,
            lidar_fov=(-math.pi / 2, math.pi / 2),
            start=RobotState(-2.0, 0.0, 0.0),
            goal=(2.0, 0.0),
        )
    if name == "house":
        walls = [
            _wall(-3.0, -2.05, 3.0, -1.95),
            _wall(-3.0, 1.95, 3.0, 2.05),
            _wall(-3.05, -2.0, -2.95, 2.0),
            _wall(2.95, -2.0, 3.05, 2.0),
            _wall(-0.05, -2.0, 0.05, -0.4),
            _wall(-0.05, 0.4, 0.05, 2.0),
            _wall(1.2, 0.5, 2.4, 0.6),
        ]
        return WorldModel(
            "house",
            obstacles=walls,
            lidar_beams=19,
            lidar_fov=(-math.pi / 4, math.pi / 4),
            start=RobotState(-2.0, -1.0, 0.0),
            goal=(2.0, 1.2),
        )
    if name == "lab":
        boxes = [(0.6, 0.15, 0.2), (1.4, -0.3, 0.2), (2.2, 0.3, 0.2)]
        return WorldModel(
            "lab",
            obstacles=[box([x, y], [h, h]).to_constrained() for x, y, h in boxes],
            lidar_beams=19,
            lidar_fov=(-math.pi / 4, math.pi / 4),
            start=RobotState(-0.5, 0.0, 0.0),
            goal=(3.0, 0.0),
            horizon=5,
        )
    raise ValueError(f"unknown world {name!r}; choose from open, world, house, lab")


WORLD_NAMES = ("open", "world", "house", "lab")


def domain_probes(input_box: Interval = INPUT_BOX, headings: int = 72, input_resolution: int = 11) -> np.ndarray:
    """Probe points ``(cos psi, sin psi, v, omega)`` over all headings and a
    grid of the input box.

    Matches the Lipschitz inputs when the position coordinates are treated
    as translation invariant.  Unlike a bounding-box grid it does not probe
    trig pairs off the unit circle, which no state can produce.
    """
    psi = np.linspace(-math.pi, math.pi, headings, endpoint=False)
    v = np.linspace(input_box.lower[0], input_box.upper[0], input_resolution)
    w = np.linspace(input_box.lower[1], input_box.upper[1], input_resolution)
    P, V, W = np.meshgrid(psi, v, w, indexing="ij")
    return np.column_stack([np.cos(P).ravel(), np.sin(P).ravel(), V.ravel(), W.ravel()])


# --------------------------------------------------------------------------
# offline data


def collect_data(
    world: WorldModel,
    steps: int = 600,
    seed: int = 0,
    *,
    trajectories: int = 20,
    input_box: Interval = INPUT_BOX,
    out: str | Path | None = None,
    header: dict | None = None,
):
    """Excite the robot with uniform random inputs and record the result.

    ``steps`` state rows are split over ``trajectories`` runs, each started
    from a uniformly random pose in the arena so that headings are covered.
    Returns :class:`~reachguard.reachability.TrajectoryData` and optionally
    writes the trajectory CSV.
    """
    from .reachability import TrajectoryData, write_trajectories

    if world.obstacles:
        raise ValueError("data collection expects an empty arena")
    if trajectories < 1 or steps < 2 * trajectories:
        raise ValueError(f"{steps} steps cannot be split into {trajectories} trajectories of >= 2 states")
    rng = np.random.default_rng(seed)
    lengths = [steps // trajectories + (1 if i < steps % trajectories else 0) for i in range(trajectories)]
    runs = []
    for length in lengths:
        lo, hi = world.bounds.lower, world.bounds.upper
        s = RobotState(*rng.uniform(lo, hi), rng.uniform(-math.pi, math.pi))
        states = [embed(s)]
        inputs = []
        for _ in range(length - 1):
            u = rng.uniform(input_box.lower, input_box.upper)
            s = step(s, u, dt=world.dt, noise=world.noise, rng=rng)
            states.append(embed(s))
            inputs.append(u)
        runs.append((np.array(states), np.array(inputs)))
    data = TrajectoryData.from_runs(runs)
    if out is not None:
        meta = {"seed": seed}
        meta.update(header or {})
        write_trajectories(out, runs, header=meta)
    return data
