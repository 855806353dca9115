"""Repair of unsafe plans by projected gradient steps on the collision LP.

Reach-set generators do not depend on the plan, only the centers do, and
the center recursion is affine with Jacobians read straight off the
regressors.  So a collision at tube step ``k`` can be pushed away by moving
the inputs ``u_0 .. u_{k-1}`` along the chained gradient of ``vstar``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collision import OPTIMAL, BOUNDARY_TOL, reach_obstacle_check, vstar_center_gradient
from .reachability import (
    DEFAULT_INPUT_EPS,
    LipschitzBounds,
    ReachTube,
    TrajectoryData,
    reach,
)
from .setops import DEFAULT_GENERATOR_CAP, Interval, Zonotope, interval_hull

DEFAULT_STEP_SIZE = 0.05
DEFAULT_DEADLINE = 0.1
DEFAULT_MAX_ITERATIONS = 100
DEFAULT_PATIENCE = 5


@dataclass(frozen=True, eq=False)
class Plan:
    actions: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.array(self.actions, dtype=float, copy=True))
        if a.shape[0] < 1 or a.size == 0:
            raise ValueError("a plan needs at least one action")
        a.setflags(write=False)
        object.__setattr__(self, "actions", a)

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]

    def shifted(self, fill) -> "Plan":
        """Drop the first action and append ``fill``."""
        return Plan(np.vstack([self.actions[1:], np.asarray(fill, dtype=float)[None, :]]))

    def __len__(self) -> int:
        return self.horizon


@dataclass(frozen=True, eq=False)
class ReachContext:
    """Everything :func:`reach` needs besides the initial set and plan,
    plus the selection of obstacle coordinates."""

    data: TrajectoryData
    noise: Zonotope
    bounds: LipschitzBounds
    projection: np.ndarray = field(default_factory=lambda: np.eye(2, 4))
    input_eps: float = DEFAULT_INPUT_EPS
    noise_mode: str = "sound"
    generator_cap: int | None = DEFAULT_GENERATOR_CAP
    hull_prefilter: bool = True

    def tube(self, initial: Zonotope, plan) -> ReachTube:
        actions = plan.actions if isinstance(plan, Plan) else plan
        return reach(
            initial,
            actions,
            self.data,
            self.noise,
            self.bounds,
            self.input_eps,
            noise_mode=self.noise_mode,
            generator_cap=self.generator_cap,
        )


@dataclass(frozen=True)
class Collision:
    step: int
    obstacle: int
    vstar: float
    check: object


@dataclass(frozen=True)
class TubeCheck:
    collisions: tuple
    min_vstar: float
    lp_count: int

    @property
    def safe(self) -> bool:
        return not self.collisions


def _hulls_overlap(a: Interval, b: Interval) -> bool:
    return bool(np.all(a.lower <= b.upper) and np.all(b.lower <= a.upper))


def check_tube(tube: ReachTube, obstacles, ctx: ReachContext) -> TubeCheck:
    """Collision LP for every (step >= 1, obstacle) pair.

    With ``ctx.hull_prefilter`` pairs whose interval hulls are disjoint are
    skipped: disjoint hulls imply disjoint sets, so no LP is needed to rule
    them out, but they contribute no ``vstar`` to the minimum.
    """
    P = ctx.projection
    collisions = []
    vmin = np.inf
    lps = 0
    obs_hulls = [interval_hull(o) for o in obstacles]
    for k in range(1, len(tube.sets)):
        r = tube.sets[k]
        if ctx.hull_prefilter:
            rad = np.abs(P @ r.generators).sum(axis=1)
            c = P @ r.center
            r_hull = Interval(c - rad, c + rad)
        for i, obs in enumerate(obstacles):
            if ctx.hull_prefilter and not _hulls_overlap(r_hull, obs_hulls[i]):
                continue
            chk = reach_obstacle_check(r, obs, P)
            lps += 1
            vmin = min(vmin, chk.result.vstar)
            if chk.intersects:
                collisions.append(Collision(k, i, chk.result.vstar, chk))
    return TubeCheck(tuple(collisions), float(vmin), lps)


def center_jacobians(M: np.ndarray, n: int | None = None, m: int | None = None):
    """Split a regressor ``[affine | state block | input block]``.

    Returns ``(state_block, input_block)``: the derivative of the next
    center with respect to the current center and to the planned input.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n = M.shape[0] if n is None else n
    m = M.shape[1] - 1 - n if m is None else m
    if M.shape != (n, 1 + n + m) or m < 0:
        raise ValueError(f"regressor of shape {M.shape} does not split into n={n}, m={m}")
    return M[:, 1 : 1 + n], M[:, 1 + n : 1 + n + m]


def plan_gradient(tube: ReachTube, k: int, center_grad) -> np.ndarray:
    """Gradients of ``vstar`` (a function of the step-``k`` center) with
    respect to each input ``u_0 .. u_{k-1}``; shape ``(k, m)``."""
    if not 1 <= k <= len(tube.regressors):
        raise IndexError(f"collision step {k} outside 1..{len(tube.regressors)}")
    g = np.asarray(center_grad, dtype=float).reshape(-1)
    blocks = [center_jacobians(M) for M in tube.regressors]
    m = blocks[0][1].shape[1]
    out = np.zeros((k, m))
    for h in range(k - 1, -1, -1):
        state_block, input_block = blocks[h]
        out[h] = g @ input_block
        g = g @ state_block
    return out


def project_input(u, box: Interval) -> np.ndarray:
    return box.clip(u)


def project_plan(actions, input_box: Interval, first_box: Interval | None = None) -> np.ndarray:
    a = np.array(actions, dtype=float)
    for h in range(len(a)):
        a[h] = project_input(a[h], first_box if (h == 0 and first_box is not None) else input_box)
    return a


def with_brake_tail(actions, n_brake: int, brake) -> np.ndarray:
    a = np.array(actions, dtype=float)
    if n_brake > 0:
        a[-n_brake:] = np.asarray(brake, dtype=float)
    return a


@dataclass(frozen=True)
class AdjustOutcome:
    plan: Plan
    certified: bool
    iterations: int
    min_vstar: float
    tube: ReachTube | None = None
    reason: str = ""


def adjust_plan(
    plan: Plan,
    obstacles,
    initial: Zonotope,
    ctx: ReachContext,
    *,
    step_size: float = DEFAULT_STEP_SIZE,
    deadline: float | None = DEFAULT_DEADLINE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    input_box: Interval,
    first_box: Interval | None = None,
    n_brake: int = 1,
    brake=(0.0, 0.0),
    patience: int | None = DEFAULT_PATIENCE,
) -> AdjustOutcome:
    """Projected gradient ascent on ``vstar`` until every tube set clears
    every obstacle, the deadline passes, or the plan stops moving.

    The last ``n_brake`` actions are fixed to ``brake``.  Each iteration
    sums the input gradients of all colliding (step, obstacle) pairs and
    moves the free actions by ``step_size`` along that direction, scaled so
    the largest per-action change is ``step_size``.  The returned plan is
    only marked certified by a full collision check of its own tube.

    ``patience`` ends the search early once the total violation
    ``sum(1 - vstar)`` over colliding pairs has not dropped for that many
    consecutive iterations (``None`` disables this).
    """
    if plan.horizon < n_brake:
        raise ValueError(f"plan horizon {plan.horizon} is shorter than n_brake={n_brake}")
    t_end = None if deadline is None else time.perf_counter() + deadline
    free = plan.horizon - n_brake
    actions = with_brake_tail(project_plan(plan.actions, input_box, first_box), n_brake, brake)
    iterations = 0
    reason = ""
    best, since_best = np.inf, 0
    while True:
        tube = ctx.tube(initial, actions)
        result = check_tube(tube, obstacles, ctx)
        if result.safe:
            return AdjustOutcome(Plan(actions), True, iterations, result.min_vstar, tube, "certified")
        violation = sum(1.0 - c.vstar for c in result.collisions)
        if violation < best - 1e-9:
            best, since_best = violation, 0
        else:
            since_best += 1
            if patience is not None and since_best >= patience:
                reason = "no-progress"
                break
        if iterations >= max_iterations:
            reason = "max-iterations"
            break
        if t_end is not None and time.perf_counter() >= t_end:
            reason = "deadline"
            break
        grad = np.zeros_like(actions)
        for col in result.collisions:
            res = col.check.result
            if res.status != OPTIMAL:
                continue
            g_proj = vstar_center_gradient(res, col.check.intersection)
            g_state = ctx.projection.T @ g_proj
            grad[: col.step] += plan_gradient(tube, col.step, g_state)
        grad[free:] = 0.0
        scale = np.linalg.norm(grad, axis=1).max() if free > 0 else 0.0
        if scale <= 0.0:
            reason = "zero-gradient"
            break
        # ascend: larger vstar means farther from the obstacle
        stepped = actions + step_size * grad / scale
        stepped = with_brake_tail(project_plan(stepped, input_box, first_box), n_brake, brake)
        iterations += 1
        if np.array_equal(stepped, actions):
            reason = "stalled"
            break
        actions = stepped
        if t_end is not None and time.perf_counter() >= t_end:
            reason = "deadline"
            break
    return AdjustOutcome(Plan(actions), False, iterations, result.min_vstar, tube, reason)
