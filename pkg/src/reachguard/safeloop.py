"""Receding-horizon loop that filters every planner action through the
reachability safety layer.

Near obstacles each plan is checked against the inflated obstacles; unsafe
plans are repaired with :func:`~reachguard.adjust.adjust_plan` and, if that
fails, the robot follows the last certified plan, which always ends in
braking.  The executed action therefore always comes from a certified plan
or from its braking continuation.
"""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adjust import Plan, ReachContext, adjust_plan, check_tube, project_plan, with_brake_tail
from .planners import PlannerFailure, PlannerQuery, los_angle
from .setops import ConstrainedZonotope, Interval, box
from .simworld import RobotState, WorldModel, embed, hull_distance, lidar_scan, segment_hull_distance, step

LOG_HEADER = ["step", "px", "py", "psi", "branch", "min_vstar", "plan_src", "adjust_iters", "reach_ms", "adjust_ms"]

RAW, ADJUSTED, BACKUP = "raw", "adjusted", "backup"
GOAL_REACHED, STEP_LIMIT, PLANNER_DOWN = "goal-reached", "step-limit", "planner-unavailable-braked"


@dataclass(frozen=True, eq=False)
class SafetyConfig:
    n_plan: int = 3
    n_brake: int = 1
    r_goal: float = 0.2
    eps_x0: tuple = (0.005, 0.005, 0.005, 0.005)
    d_trigger: float = 1.0
    gamma: float = 0.05
    input_box: Interval = field(default_factory=lambda: Interval([0.0, -0.5], [0.5, 0.5]))
    input_box_first_step: Interval = field(default_factory=lambda: Interval([0.0, -0.5], [0.1, 0.5]))
    epsilon_input: float = 1e-6
    robot_radius: float = 0.15
    step_limit: int = 500
    deadline: float | None = 0.1
    max_adjust_iterations: int = 100
    brake: tuple = (0.0, 0.0)
    max_planner_failures: int = 5
    # skip re-running a failed adjustment from (nearly) the same state and plan
    retry_distance: float | None = 0.02
    retry_plan_tol: float = 0.1
    retry_every: int = 25

    def __post_init__(self):
        if not self.n_plan >= self.n_brake >= 1:
            raise ValueError("need n_plan >= n_brake >= 1")
        if self.r_goal <= 0 or self.d_trigger <= 0:
            raise ValueError("r_goal and d_trigger must be positive")
        if not np.all(self.input_box.lower <= self.brake) or not np.all(np.asarray(self.brake) <= self.input_box.upper):
            raise ValueError("brake input must lie in the input box")


def failsafe_plan(config: SafetyConfig) -> Plan:
    return Plan(np.tile(np.asarray(config.brake, dtype=float), (config.n_plan, 1)))


def goal_reached(state: RobotState, goal, r_goal: float) -> bool:
    return math.hypot(state.px - goal[0], state.py - goal[1]) <= r_goal


def obstacle_distance(state: RobotState, obstacles) -> float:
    """Distance from the robot position to the nearest obstacle, measured
    to interval hulls (a lower bound on the true distance)."""
    if not obstacles:
        return math.inf
    p = state.position
    return min(hull_distance(p, o) for o in obstacles)


def inflate(obstacle: ConstrainedZonotope, radius: float) -> ConstrainedZonotope:
    """Minkowski sum with a square of half-width ``radius``."""
    sq = box(np.zeros(obstacle.dim), np.full(obstacle.dim, radius))
    gen = np.hstack([obstacle.generators, sq.generators])
    A = np.hstack([obstacle.constraint_matrix, np.zeros((obstacle.num_constraints, sq.num_generators))])
    return ConstrainedZonotope(obstacle.center, gen, A, obstacle.constraint_vector)


@dataclass
class StepRecord:
    step: int
    px: float
    py: float
    psi: float
    branch: str
    min_vstar: float
    plan_src: str
    adjust_iters: int
    reach_ms: float
    adjust_ms: float
    raw_plan: np.ndarray | None = None
    executed_plan: np.ndarray | None = None
    action: np.ndarray | None = None
    triggered: bool = False

    def row(self) -> list:
        return [
            self.step,
            repr(self.px),
            repr(self.py),
            repr(self.psi),
            self.branch,
            repr(float(self.min_vstar)),
            self.plan_src,
            self.adjust_iters,
            f"{self.reach_ms:.3f}",
            f"{self.adjust_ms:.3f}",
        ]


@dataclass
class EpisodeState:
    current: RobotState
    backup: Plan
    step_index: int = 0
    log: list = field(default_factory=list)
    # (state, raw actions, step) of the last failed adjustment
    last_failure: tuple | None = None


def _recently_failed(st: EpisodeState, raw: Plan, config: SafetyConfig) -> bool:
    if config.retry_distance is None or st.last_failure is None:
        return False
    state, actions, at = st.last_failure
    if st.step_index - at >= config.retry_every or actions.shape != raw.actions.shape:
        return False
    near = math.hypot(state.px - st.current.px, state.py - st.current.py) <= config.retry_distance
    turned = abs(math.remainder(state.psi - st.current.psi, 2 * math.pi)) > config.retry_distance
    same_plan = float(np.max(np.abs(actions - raw.actions))) <= config.retry_plan_tol
    return near and not turned and same_plan


@dataclass
class EpisodeReport:
    reason: str
    steps: int
    collisions: int
    min_obstacle_distance: float
    final_state: RobotState
    records: list
    path: list

    @property
    def goal_reached(self) -> bool:
        return self.reason == GOAL_REACHED

    def branch_counts(self) -> dict:
        out = {RAW: 0, ADJUSTED: 0, BACKUP: 0}
        for r in self.records:
            out[r.branch] += 1
        return out

    def mean_ms(self, attr: str) -> float:
        vals = [getattr(r, attr) for r in self.records if r.triggered]
        return float(np.mean(vals)) if vals else 0.0


def make_query(state: RobotState, world: WorldModel, goal, config: SafetyConfig) -> PlannerQuery:
    pose = (state.px, state.py, state.psi)
    return PlannerQuery(
        pose=pose,
        goal=tuple(goal),
        reaching_radius=config.r_goal,
        los_angle=los_angle(pose, goal),
        lidar=tuple(float(r) for r in lidar_scan(state, world)),
        input_box=config.input_box,
        horizon=config.n_plan,
        lidar_fov=world.lidar_fov,
        lidar_max_range=world.lidar_max_range,
    )


def safety_filter(
    plan: Plan,
    state: RobotState,
    obstacles,
    ctx: ReachContext,
    config: SafetyConfig,
    *,
    adjust: bool = True,
) -> tuple:
    """Check (and repair if needed) ``plan`` from ``state``.

    Returns ``(plan or None, branch, min_vstar, iterations, reach_ms,
    adjust_ms)``; ``None`` means no certified plan was found.  With
    ``adjust=False`` an unsafe plan is rejected without repair.
    """
    initial = box(embed(state), config.eps_x0)
    candidate = with_brake_tail(
        project_plan(plan.actions, config.input_box, config.input_box_first_step), config.n_brake, config.brake
    )
    t0 = time.perf_counter()
    tube = ctx.tube(initial, candidate)
    result = check_tube(tube, obstacles, ctx)
    reach_ms = 1e3 * (time.perf_counter() - t0)
    if result.safe:
        return Plan(candidate), RAW, result.min_vstar, 0, reach_ms, 0.0
    if not adjust:
        return None, BACKUP, result.min_vstar, 0, reach_ms, 0.0
    t1 = time.perf_counter()
    out = adjust_plan(
        Plan(candidate),
        obstacles,
        initial,
        ctx,
        step_size=config.gamma,
        deadline=config.deadline,
        max_iterations=config.max_adjust_iterations,
        input_box=config.input_box,
        first_box=config.input_box_first_step,
        n_brake=config.n_brake,
        brake=config.brake,
    )
    adjust_ms = 1e3 * (time.perf_counter() - t1)
    if out.certified:
        return out.plan, ADJUSTED, out.min_vstar, out.iterations, reach_ms, adjust_ms
    return None, BACKUP, out.min_vstar, out.iterations, reach_ms, adjust_ms


def run_episode(
    config: SafetyConfig,
    planner,
    world: WorldModel,
    goal=None,
    *,
    ctx: ReachContext,
    seed: int = 0,
    start: RobotState | None = None,
    log_path: str | Path | None = None,
    log_header: dict | None = None,
) -> EpisodeReport:
    """Drive the robot from ``start`` towards ``goal`` with ``planner``
    behind the safety layer until the goal radius, the step limit, or
    repeated planner failures end the episode."""
    goal = tuple(world.goal if goal is None else goal)
    rng = np.random.default_rng(seed)
    inflated = [inflate(o, config.robot_radius) for o in world.obstacles]
    st = EpisodeState(current=start or world.start, backup=failsafe_plan(config))
    path = [st.current]
    collisions = 0
    min_dist = obstacle_distance(st.current, world.obstacles)
    failures = 0
    reason = STEP_LIMIT
    brake = np.asarray(config.brake, dtype=float)
    plan_src_name = getattr(planner, "name", type(planner).__name__)

    while st.step_index < config.step_limit:
        if goal_reached(st.current, goal, config.r_goal):
            reason = GOAL_REACHED
            break
        query = make_query(st.current, world, goal, config)
        try:
            raw = planner(query)
            if raw.horizon != config.n_plan:
                raise PlannerFailure(f"planner returned {raw.horizon} actions, expected {config.n_plan}")
            failures = 0
            plan_src = plan_src_name
        except PlannerFailure:
            raw = None
            failures += 1
            plan_src = f"{plan_src_name}-failed"

        triggered = False
        min_v, iters, reach_ms, adjust_ms = math.inf, 0, 0.0, 0.0
        if raw is None:
            active, branch = st.backup, BACKUP
        elif obstacle_distance(st.current, world.obstacles) > config.d_trigger:
            active, branch = raw, RAW
        else:
            triggered = True
            retry = not _recently_failed(st, raw, config)
            safe, branch, min_v, iters, reach_ms, adjust_ms = safety_filter(
                raw, st.current, inflated, ctx, config, adjust=retry
            )
            if safe is None and retry:
                st.last_failure = (st.current, np.array(raw.actions), st.step_index)
            active = safe if safe is not None else st.backup

        stop_now = raw is None and failures >= config.max_planner_failures
        u = brake if stop_now else active.actions[0]
        st.log.append(
            StepRecord(
                st.step_index,
                st.current.px,
                st.current.py,
                st.current.psi,
                branch,
                min_v,
                plan_src,
                iters,
                reach_ms,
                adjust_ms,
                raw_plan=None if raw is None else np.array(raw.actions),
                executed_plan=np.array(active.actions),
                action=np.array(u),
                triggered=triggered,
            )
        )
        st.backup = active.shifted(brake)
        prev = st.current
        st.current = step(prev, u, dt=world.dt, noise=world.noise, rng=rng)
        st.step_index += 1
        path.append(st.current)
        for o in world.obstacles:
            d = segment_hull_distance(prev.position, st.current.position, o)
            min_dist = min(min_dist, d)
            if d < config.robot_radius:
                collisions += 1
                break
        if stop_now:
            reason = PLANNER_DOWN
            break
    else:
        if goal_reached(st.current, goal, config.r_goal):
            reason = GOAL_REACHED

    report = EpisodeReport(reason, st.step_index, collisions, min_dist, st.current, st.log, path)
    if log_path is not None:
        write_episode_log(log_path, report, header=log_header)
        write_plans(plans_path(log_path), report)
    return report


def write_episode_log(path, report: EpisodeReport, header: dict | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_HEADER)
        for r in report.records:
            w.writerow(r.row())


def plans_path(log_path) -> Path:
    """Sidecar file holding the raw and executed plan of every step."""
    p = Path(log_path)
    return p.with_name(p.stem + ".plans.jsonl")


def write_plans(path, report: EpisodeReport) -> None:
    with Path(path).open("w") as fh:
        for r in report.records:
            rec = {
                "step": r.step,
                "px": r.px,
                "py": r.py,
                "psi": r.psi,
                "branch": r.branch,
                "raw": None if r.raw_plan is None else r.raw_plan.tolist(),
                "executed": r.executed_plan.tolist(),
                "action": r.action.tolist(),
            }
            fh.write(json.dumps(rec) + "\n")


def read_episode_log(path) -> tuple[dict, list[dict]]:
    """Return ``(header, rows)`` of an episode log."""
    header: dict = {}
    lines = []
    with Path(path).open(newline="") as fh:
        for ln in fh:
            if ln.startswith("#"):
                k, _, v = ln[1:].strip().partition("=")
                header[k.strip()] = v.strip()
            else:
                lines.append(ln)
    rows = list(csv.DictReader(lines))
    return header, rows
