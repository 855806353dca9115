"""Validation and measurement routines behind the CLI subcommands.

Each function returns a plain report object; the CLI turns reports into
files and exit codes.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .adjust import Plan, ReachContext, check_tube, plan_gradient
from .collision import OPTIMAL, reach_obstacle_check, vstar_center_gradient
from .setops import box, contains_point, interval_hull, linear_map, vertices_2d
from .simworld import INPUT_BOX, RobotState, WorldModel, embed, step

# --------------------------------------------------------------------------
# reach-set containment


@dataclass
class ContainmentReport:
    rollouts: int
    plans: int
    checks: int
    escapes: int
    volume_ratio: float  # mean over plans/steps of tube hull area / sample bounding-box area
    mean_tube_radius: float
    seconds: float
    worst: list = field(default_factory=list)

    @property
    def containment(self) -> float:
        return 1.0 if self.checks == 0 else 1.0 - self.escapes / self.checks

    @property
    def passed(self) -> bool:
        return self.escapes == 0


def _sample_initial(center: RobotState, eps: float, rng) -> RobotState:
    # heading offsets of at most eps keep cos/sin inside the eps box
    d = rng.uniform(-eps, eps, 3)
    return RobotState(center.px + d[0], center.py + d[1], center.psi + d[2])


def verify_reach(
    ctx: ReachContext,
    world: WorldModel,
    rollouts: int = 1000,
    *,
    plans: int = 20,
    horizon: int = 3,
    eps_x0: float = 0.005,
    input_box=INPUT_BOX,
    seed: int = 0,
    tol: float = 1e-9,
) -> ContainmentReport:
    """Monte Carlo containment of simulator rollouts in the reach tube.

    ``rollouts`` are spread evenly over ``plans`` random plans, each from a
    random pose.  Initial states are drawn inside the initial box and every
    visited state is checked against the tube set of that step.
    """
    t0 = time.perf_counter()
    if rollouts <= 0:
        warnings.warn("no rollouts requested; containment holds vacuously", stacklevel=2)
        return ContainmentReport(0, 0, 0, 0, float("nan"), float("nan"), 0.0)
    plans = max(1, min(plans, rollouts))
    rng = np.random.default_rng(seed)
    per_plan = [rollouts // plans + (1 if i < rollouts % plans else 0) for i in range(plans)]
    lo, hi = world.bounds.lower + 1.0, world.bounds.upper - 1.0
    checks = escapes = 0
    ratios, radii, worst = [], [], []
    for count in per_plan:
        start = RobotState(*rng.uniform(lo, hi), rng.uniform(-math.pi, math.pi))
        actions = rng.uniform(input_box.lower, input_box.upper, (horizon, len(input_box.lower)))
        tube = ctx.tube(box(embed(start), np.full(4, eps_x0)), actions)
        hulls = [interval_hull(s) for s in tube.sets]
        visited = [[] for _ in range(horizon)]
        for _ in range(count):
            s = _sample_initial(start, eps_x0, rng)
            for j, u in enumerate(actions):
                s = step(s, u, dt=world.dt, noise=world.noise, rng=rng)
                x = embed(s)
                visited[j].append(x)
                checks += 1
                h = hulls[j + 1]
                inside = bool(np.all(x >= h.lower - tol) and np.all(x <= h.upper + tol))
                if not inside or not contains_point(tube.sets[j + 1], x, tol):
                    escapes += 1
                    if len(worst) < 10:
                        worst.append({"step": j + 1, "state": x.tolist()})
        for j in range(horizon):
            pts = np.array(visited[j])[:, :2]
            spread = np.prod(np.maximum(pts.max(axis=0) - pts.min(axis=0), 1e-12))
            r = hulls[j + 1].radius[:2]
            ratios.append(float(np.prod(2 * r) / spread))
            radii.append(float(r.max()))
    return ContainmentReport(
        sum(per_plan),
        plans,
        checks,
        escapes,
        float(np.exp(np.mean(np.log(ratios)))),
        float(np.mean(radii)),
        time.perf_counter() - t0,
        worst,
    )


# --------------------------------------------------------------------------
# gradient check


@dataclass
class GradientInstance:
    index: int
    step: int
    vstar: float
    degenerate: bool
    errors: dict  # h -> relative error


@dataclass
class GradientReport:
    instances: list
    hs: tuple
    primary_h: float
    tolerance: float

    @property
    def counted(self) -> list:
        return [i for i in self.instances if not i.degenerate]

    @property
    def degenerate_count(self) -> int:
        return len(self.instances) - len(self.counted)

    def max_error(self, h: float | None = None) -> float:
        h = self.primary_h if h is None else h
        errs = [i.errors[h] for i in self.counted]
        return max(errs) if errs else 0.0

    @property
    def passed(self) -> bool:
        return bool(self.counted) and self.max_error() <= self.tolerance

    def plateau(self) -> dict:
        """Max relative error per step size (flat across ``hs`` when the
        finite differences are trustworthy)."""
        return {h: self.max_error(h) for h in self.hs}


def _vstar(ctx: ReachContext, initial, actions, obstacle, k: int):
    tube = ctx.tube(initial, actions)
    return reach_obstacle_check(tube.sets[k], obstacle, ctx.projection), tube


def _gradient_instance(ctx, world, rng, horizon):
    start = RobotState(*rng.uniform(-3, 3, 2), rng.uniform(-math.pi, math.pi))
    initial = box(embed(start), np.full(4, 0.005))
    actions = rng.uniform(INPUT_BOX.lower, INPUT_BOX.upper, (horizon, 2))
    k = int(rng.integers(1, horizon + 1))
    tube = ctx.tube(initial, actions)
    proj = linear_map(ctx.projection, tube.sets[k])
    radius = interval_hull(proj).radius
    # a box obstacle around the projected set's edge: v* lands near 1
    direction = rng.normal(size=2)
    direction /= np.linalg.norm(direction)
    half = rng.uniform(0.05, 0.3, 2)
    center = proj.center + direction * (radius + half) * rng.uniform(0.6, 1.1)
    obstacle = box(center, half).to_constrained()
    return initial, actions, k, obstacle


def check_gradients(
    ctx: ReachContext,
    world: WorldModel,
    instances: int = 50,
    *,
    horizon: int = 3,
    hs=(1e-4, 1e-5, 1e-6),
    primary_h: float = 1e-5,
    tolerance: float = 1e-3,
    seed: int = 0,
    max_draws_factor: int = 4,
) -> GradientReport:
    """Compare the chained dual gradient of ``vstar`` with respect to the
    plan against central finite differences through reach + collision LP.

    Random instances are drawn until ``instances`` non-degenerate ones were
    checked (at most ``max_draws_factor * instances`` draws).  Instances
    whose LP has non-unique duals (or is not optimal) are flagged
    degenerate and not counted.  Relative error is
    ``max|g - g_fd| / max(max|g_fd|, 1e-8)``.
    """
    if primary_h not in hs:
        hs = tuple(hs) + (primary_h,)
    rng = np.random.default_rng(seed)
    out = []
    counted = 0
    idx = 0
    while counted < instances and idx < max_draws_factor * max(instances, 1):
        initial, actions, k, obstacle = _gradient_instance(ctx, world, rng, horizon)
        chk, tube = _vstar(ctx, initial, actions, obstacle, k)
        res = chk.result
        degenerate = res.status != OPTIMAL or res.degenerate
        errors = {}
        if not degenerate:
            counted += 1
            g_state = ctx.projection.T @ vstar_center_gradient(res, chk.intersection)
            grad = np.zeros_like(actions)
            grad[:k] = plan_gradient(tube, k, g_state)
            for h in hs:
                fd = np.zeros_like(actions)
                for i in range(k):
                    for j in range(actions.shape[1]):
                        ap, am = actions.copy(), actions.copy()
                        ap[i, j] += h
                        am[i, j] -= h
                        vp = _vstar(ctx, initial, ap, obstacle, k)[0].result.vstar
                        vm = _vstar(ctx, initial, am, obstacle, k)[0].result.vstar
                        fd[i, j] = (vp - vm) / (2 * h)
                errors[h] = float(np.abs(grad - fd).max() / max(np.abs(fd).max(), 1e-8))
        out.append(GradientInstance(idx, k, float(res.vstar), degenerate, errors))
        idx += 1
    return GradientReport(out, tuple(hs), primary_h, tolerance)


# --------------------------------------------------------------------------
# episodes


def jittered_start(world: WorldModel, jitter: float, seed: int) -> RobotState:
    if jitter <= 0:
        return world.start
    d = np.random.default_rng([seed, 7]).uniform(-jitter, jitter, 3)
    s = world.start
    return RobotState(s.px + d[0], s.py + d[1], s.psi + d[2])


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


@dataclass
class RunSummary:
    planner: str
    world: str
    reports: list

    @property
    def collisions(self) -> int:
        return sum(r.collisions for r in self.reports)

    @property
    def goal_rate(self) -> float:
        return float(np.mean([r.goal_reached for r in self.reports])) if self.reports else 0.0

    @property
    def min_distance(self) -> float:
        return min((r.min_obstacle_distance for r in self.reports), default=math.inf)

    def as_dict(self) -> dict:
        branches = {"raw": 0, "adjusted": 0, "backup": 0}
        for r in self.reports:
            for k, v in r.branch_counts().items():
                branches[k] += v
        reach = [r.mean_ms("reach_ms") for r in self.reports]
        adj = [r.mean_ms("adjust_ms") for r in self.reports]
        return {
            "planner": self.planner,
            "world": self.world,
            "episodes": len(self.reports),
            "collisions": self.collisions,
            "goal_reached_rate": self.goal_rate,
            "min_obstacle_distance": _finite_or_none(self.min_distance),
            "reasons": {k: sum(r.reason == k for r in self.reports) for k in sorted({r.reason for r in self.reports})},
            "branches": branches,
            "mean_reach_ms": float(np.mean(reach)) if reach else 0.0,
            "mean_adjust_ms": float(np.mean(adj)) if adj else 0.0,
            "per_episode": [
                {
                    "reason": r.reason,
                    "steps": r.steps,
                    "collisions": r.collisions,
                    "min_obstacle_distance": _finite_or_none(r.min_obstacle_distance),
                }
                for r in self.reports
            ],
        }


def run_episodes(
    config,
    planner,
    world: WorldModel,
    ctx: ReachContext,
    *,
    episodes: int,
    seed: int = 0,
    start_jitter: float = 0.0,
    out_dir=None,
    header: dict | None = None,
) -> RunSummary:
    """Episode ``i`` uses seed ``seed + i`` for both noise and start jitter.
    With ``out_dir`` each episode writes its own log and plan sidecar."""
    from .safeloop import run_episode

    reports = []
    name = getattr(planner, "name", type(planner).__name__)
    for i in range(episodes):
        ep_seed = seed + i
        log_path = None
        if out_dir is not None:
            log_path = Path(out_dir) / f"episode_{name}_{world.name}_{ep_seed:04d}.csv"
        meta = dict(header or {})
        meta.update({"seed": ep_seed, "world": world.name, "planner": name})
        reports.append(
            run_episode(
                config,
                planner,
                world,
                ctx=ctx,
                seed=ep_seed,
                start=jittered_start(world, start_jitter, ep_seed),
                log_path=log_path,
                log_header=meta,
            )
        )
    return RunSummary(name, world.name, reports)


# --------------------------------------------------------------------------
# benchmark


BENCH_HEADER = ["obstacles", "horizon", "median_s", "mean_s", "min_s", "max_s", "lp_count", "adjusted"]


@dataclass
class BenchRow:
    obstacles: int
    horizon: int
    times: list
    lp_count: int
    adjusted: bool

    def row(self) -> list:
        t = np.array(self.times)
        return [
            self.obstacles,
            self.horizon,
            f"{np.median(t):.6f}",
            f"{t.mean():.6f}",
            f"{t.min():.6f}",
            f"{t.max():.6f}",
            self.lp_count,
            int(self.adjusted),
        ]


def bench_obstacles(count: int, speed: float = 0.5, dt: float = 0.1, horizon: int = 10):
    """Boxes staggered left and right of a straight path along +x, clear of
    the tube so the timing measures checks rather than adjustment."""
    out = []
    reach_len = speed * dt * horizon
    for i in range(count):
        x = reach_len * (i + 1) / (count + 1)
        y = 1.5 if i % 2 == 0 else -1.5
        out.append(box([x, y], [0.08, 0.08]).to_constrained())
    return out


def bench(
    ctx: ReachContext,
    obstacle_counts=(3, 5),
    horizons=(3, 5, 10),
    *,
    repeats: int = 7,
    config=None,
) -> list:
    """Time one safety-layer invocation (reach, every collision LP, and an
    adjustment when needed) per (obstacle count, horizon) cell.

    The hull prefilter is disabled so every (step, obstacle) pair costs one
    LP, the worst case of the layer.
    """
    from .safeloop import SafetyConfig, safety_filter

    ctx = replace(ctx, hull_prefilter=False)
    rows = []
    state = RobotState(0.0, 0.0, 0.0)
    for n_obs in obstacle_counts:
        obstacles = bench_obstacles(n_obs, horizon=max(horizons))
        for h in horizons:
            cfg = replace(config, n_plan=h) if config is not None else SafetyConfig(n_plan=h, deadline=None)
            plan = Plan(np.tile([0.5, 0.0], (h, 1)))
            times = []
            adjusted = False
            lp_count = 0
            for _ in range(repeats):
                t0 = time.perf_counter()
                safe, branch, *_ = safety_filter(plan, state, obstacles, ctx, cfg)
                times.append(time.perf_counter() - t0)
                adjusted = branch != "raw"
            initial = box(embed(state), np.asarray(cfg.eps_x0))
            lp_count = check_tube(ctx.tube(initial, safe if safe is not None else plan), obstacles, ctx).lp_count
            rows.append(BenchRow(n_obs, h, times, lp_count, adjusted))
    return rows


def bench_trend_ok(rows) -> tuple[bool, list]:
    """Median time strictly increasing in horizon (fixed obstacle count) and
    in obstacle count (fixed horizon)."""
    med = {(r.obstacles, r.horizon): float(np.median(r.times)) for r in rows}
    counts = sorted({r.obstacles for r in rows})
    horizons = sorted({r.horizon for r in rows})
    problems = []
    for c in counts:
        for a, b in zip(horizons, horizons[1:]):
            if not med[(c, a)] < med[(c, b)]:
                problems.append(f"obstacles={c}: horizon {a} ({med[(c, a)]:.4f}s) !< {b} ({med[(c, b)]:.4f}s)")
    for h in horizons:
        for a, b in zip(counts, counts[1:]):
            if not med[(a, h)] < med[(b, h)]:
                problems.append(f"horizon={h}: obstacles {a} ({med[(a, h)]:.4f}s) !< {b} ({med[(b, h)]:.4f}s)")
    return not problems, problems


def write_bench(path, rows, header: dict | None = None) -> None:
    with Path(path).open("w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BENCH_HEADER)
        for r in rows:
            w.writerow(r.row())


# --------------------------------------------------------------------------
# plot data


def read_plans(path) -> list[dict]:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def reach_polygons(ctx: ReachContext, plans: list[dict], eps_x0, tube_step: int = 1) -> list[np.ndarray]:
    """For each logged step, the position polygon of the tube set
    ``tube_step`` steps ahead along the executed plan."""
    out = []
    for rec in plans:
        s = RobotState(rec["px"], rec["py"], rec["psi"])
        actions = np.array(rec["executed"], dtype=float)
        tube = ctx.tube(box(embed(s), np.asarray(eps_x0)), actions)
        j = min(tube_step, tube.horizon)
        out.append(vertices_2d(linear_map(ctx.projection, tube.sets[j])))
    return out


def write_plot_data(out_dir, path_xy, obstacles, polygons, header: dict | None = None) -> dict:
    """Write trajectory, obstacle and polygon CSVs plus an SVG overlay.
    Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    meta = "".join(f"# {k}={v}\n" for k, v in (header or {}).items())
    files = {
        "trajectory": out_dir / "trajectory.csv",
        "obstacles": out_dir / "obstacles.csv",
        "polygons": out_dir / "reach_polygons.csv",
        "svg": out_dir / "overlay.svg",
    }
    with files["trajectory"].open("w", newline="") as fh:
        fh.write(meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "x", "y"])
        for i, (x, y) in enumerate(path_xy):
            w.writerow([i, repr(float(x)), repr(float(y))])
    outlines = [vertices_2d(interval_zono(o)) for o in obstacles]
    with files["obstacles"].open("w", newline="") as fh:
        fh.write(meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["obstacle", "vertex", "x", "y"])
        for i, poly in enumerate(outlines):
            for k, (x, y) in enumerate(poly):
                w.writerow([i, k, repr(float(x)), repr(float(y))])
    with files["polygons"].open("w", newline="") as fh:
        fh.write(meta)
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "vertex", "x", "y"])
        for i, poly in enumerate(polygons):
            for k, (x, y) in enumerate(poly):
                w.writerow([i, k, repr(float(x)), repr(float(y))])
    files["svg"].write_text(svg_overlay(path_xy, outlines, polygons, header))
    return files


def interval_zono(obstacle):
    """Axis-aligned outline of an obstacle (its interval hull)."""
    h = interval_hull(obstacle)
    return box(h.center, h.radius)


def svg_overlay(path_xy, outlines, polygons, header: dict | None = None, size: int = 600) -> str:
    pts = [np.asarray(path_xy, dtype=float).reshape(-1, 2)] + [np.asarray(p) for p in outlines + list(polygons)]
    allp = np.vstack([p for p in pts if len(p)])
    lo, hi = allp.min(axis=0) - 0.2, allp.max(axis=0) + 0.2
    scale = size / float(max(hi - lo))

    def tx(p):
        return f"{(p[0] - lo[0]) * scale:.2f},{(hi[1] - p[1]) * scale:.2f}"

    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
    ]
    if header:
        parts.append(f"<desc>{escape(json.dumps(header, sort_keys=True))}</desc>")
    for poly in outlines:
        parts.append(f'<polygon points="{" ".join(tx(p) for p in poly)}" fill="#888" stroke="#333"/>')
    for poly in polygons:
        parts.append(
            f'<polygon points="{" ".join(tx(p) for p in poly)}" fill="#39f" fill-opacity="0.15" stroke="#39f" stroke-width="0.5"/>'
        )
    if len(path_xy):
        parts.append(f'<polyline points="{" ".join(tx(p) for p in path_xy)}" fill="none" stroke="#c00" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
