"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``PASS``/``FAIL criterion N`` line with the measured
numbers before asserting, so ``pytest -v tests/test_acceptance.py`` doubles
as a report.  Criterion 2 drives 40 full episodes and takes a few minutes.
"""

import csv
import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import httpx
import numpy as np
import pytest

from oracles import grid_overlap, halfspaces, polygon_points, random_constrained_zonotope, sample_members
from reachguard.cli import EXIT_OK, main
from reachguard.collision import emptiness
from reachguard.planners import LLMPlanner, PlannerConfig, PlanParseError, ScriptedPlanner, parse_plan
from reachguard.safeloop import BACKUP, PLANNER_DOWN, RAW, STEP_LIMIT, SafetyConfig, run_episode
from reachguard.setops import (
    Interval,
    Zonotope,
    box,
    cartesian_product,
    contains_point,
    interval_hull,
    interval_to_zonotope,
    intersect,
    linear_map,
    minkowski_sum,
    support,
)
from reachguard.simworld import RobotState, WorldModel

FIXTURES = Path(__file__).parent / "fixtures"


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def _cli_json(capsys, argv):
    rc = main(argv)
    return rc, json.loads(capsys.readouterr().out)


# --- 1 ------------------------------------------------------------------


def test_criterion_1_reach_containment(tmp_path, capsys):
    t0 = time.perf_counter()
    rc, rep = _cli_json(capsys, ["verify-reach", "--samples", "1000", "--plans", "20", "--out-dir", str(tmp_path)])
    dt = time.perf_counter() - t0
    ok = rc == EXIT_OK and rep["rollouts"] == 1000 and rep["plans"] >= 20 and rep["escapes"] == 0 and dt < 120
    report(capsys, 1, ok, f"{rep['rollouts']} rollouts / {rep['plans']} plans, {rep['checks']} state checks, "
           f"{rep['escapes']} escapes, {dt:.1f} s")


# --- 2 and 3 ------------------------------------------------------------


@pytest.fixture(scope="module")
def world_runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("runs")
    res = {}
    t0 = time.perf_counter()
    for kind in ("adversarial", "scripted"):
        rc = main(["run", "--world", "world", "--planner", kind, "--episodes", "20", "--out-dir", str(out)])
        res[kind] = (rc, json.loads((out / f"run_{kind}_world" / "summary.json").read_text()))
    return res, time.perf_counter() - t0


def test_criterion_2_zero_collisions(world_runs, capsys):
    res, dt = world_runs
    parts, ok = [], dt < 300
    for kind, (rc, s) in res.items():
        ok &= rc == EXIT_OK and s["episodes"] == 20 and s["collisions"] == 0
        parts.append(f"{kind}: {s['episodes']} episodes, {s['collisions']} collisions, "
                     f"goal rate {s['goal_reached_rate']:.2f}")
    report(capsys, 2, ok, "; ".join(parts) + f"; {dt:.0f} s")


def test_criterion_3_close_approach(world_runs, capsys):
    res, _ = world_runs
    dists = [
        (ep["min_obstacle_distance"], ep["collisions"])
        for _, s in res.values()
        for ep in s["per_episode"]
        if ep["min_obstacle_distance"] is not None
    ]
    close = [d for d, c in dists if d < 0.5 and c == 0]
    best = min(d for d, _ in dists)
    report(capsys, 3, bool(close), f"{len(close)} collision-free episodes under 0.5 m, minimum {best:.3f} m")


# --- 4 ------------------------------------------------------------------


def test_criterion_4_emptiness_oracle(capsys):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    checked = boundary = flat = mismatches = nonempty = refined = 0
    for _ in range(100):
        a = random_constrained_zonotope(rng, spread=1.5)
        b = random_constrained_zonotope(rng, spread=1.5)
        res = emptiness(intersect(a, b))
        if abs(res.vstar - 1.0) <= 1e-6:
            boundary += 1
            continue
        pa, pb = polygon_points(a), polygon_points(b)
        grid = grid_overlap(pa, pb, resolution=0.01)
        if grid is False:
            # a grid only errs towards "empty": slivers thinner than the
            # spacing hold no grid point, so resample those finer
            grid = grid_overlap(pa, pb, resolution=0.001)
            refined += grid
        if grid is None:
            flat += 1
            continue
        checked += 1
        nonempty += res.nonempty
        mismatches += res.nonempty != grid
    dt = time.perf_counter() - t0
    ok = mismatches == 0 and checked + boundary + flat == 100 and dt < 60
    report(capsys, 4, ok, f"{checked} pairs checked ({nonempty} nonempty), {mismatches} mismatches, "
           f"{refined} found only at 0.001 m, {boundary} boundary and {flat} flat excluded, {dt:.2f} s")


# --- 5 ------------------------------------------------------------------


def test_criterion_5_gradients(tmp_path, capsys):
    rc, rep = _cli_json(capsys, ["check-gradients", "--instances", "50", "--out-dir", str(tmp_path)])
    ok = rc == EXIT_OK and rep["instances"] == 50 and rep["max_relative_error"] <= 1e-3
    report(capsys, 5, ok, f"{rep['instances']} instances, max relative error {rep['max_relative_error']:.2e}, "
           f"{rep['degenerate_excluded']} degenerate excluded")


# --- 6 ------------------------------------------------------------------


def test_criterion_6_bench_trend(tmp_path, capsys):
    main(["bench", "--out-dir", str(tmp_path)])
    capsys.readouterr()
    lines = [ln for ln in (tmp_path / "bench" / "bench.csv").read_text().splitlines() if not ln.startswith("#")]
    t = {(int(r["obstacles"]), int(r["horizon"])): float(r["median_s"]) for r in csv.DictReader(lines)}
    ok = len(t) == 6
    for k in (3, 5):
        ok &= t[(k, 3)] < t[(k, 5)] < t[(k, 10)]
    for h in (3, 5, 10):
        ok &= t[(3, h)] < t[(5, h)]
    table = ", ".join(f"{k}obs/h{h}={v:.3f}s" for (k, h), v in sorted(t.items()))
    report(capsys, 6, ok, table)


# --- 7 ------------------------------------------------------------------


def _rand_zono(rng, n):
    return Zonotope(rng.normal(size=n), rng.normal(size=(n, int(rng.integers(1, 6)))))


def test_criterion_7_set_algebra(capsys):
    rng = np.random.default_rng(7)
    worst = {}
    for name in ("minkowski", "linear map", "cartesian", "interval"):
        err = 0.0
        for _ in range(10):
            n = int(rng.integers(1, 5))
            dirs = rng.normal(size=(100, n))
            if name == "minkowski":
                a, b = _rand_zono(rng, n), _rand_zono(rng, n)
                s = minkowski_sum(a, b)
                err = max(err, max(abs(support(s, d) - support(a, d) - support(b, d)) for d in dirs))
            elif name == "linear map":
                a = _rand_zono(rng, n)
                M = rng.normal(size=(3, n))
                s = linear_map(M, a)
                dirs = rng.normal(size=(100, 3))
                err = max(err, max(abs(support(s, d) - support(a, M.T @ d)) for d in dirs))
            elif name == "cartesian":
                a, b = _rand_zono(rng, n), _rand_zono(rng, 2)
                s = cartesian_product(a, b)
                dirs = rng.normal(size=(100, n + 2))
                err = max(err, max(abs(support(s, d) - support(a, d[:n]) - support(b, d[n:])) for d in dirs))
            else:
                lo = rng.normal(size=n)
                iv = Interval(lo, lo + rng.uniform(0, 2, n))
                z = interval_to_zonotope(iv)
                exact = lambda d: float(np.sum(np.where(d > 0, d * iv.upper, d * iv.lower)))
                err = max(err, max(abs(support(z, d) - exact(d)) for d in dirs))
        worst[name] = err

    agree = skipped = 0
    for seed in range(10):
        r = np.random.default_rng(seed)
        a = random_constrained_zonotope(r, spread=0.3)
        b = random_constrained_zonotope(r, spread=0.3)
        inter = intersect(a, b)
        ha, hb = halfspaces(polygon_points(a)), halfspaces(polygon_points(b))
        pts = np.vstack([sample_members(a, r, 40), sample_members(b, r, 40), r.uniform(-2, 2, (40, 2))])
        for x in pts:
            if any(h is not None and abs(np.max(h[:, :2] @ x + h[:, 2])) < 1e-6 for h in (ha, hb)):
                skipped += 1
                continue
            agree += contains_point(inter, x) == (contains_point(a, x) and contains_point(b, x))
    total = 10 * 120 - skipped
    ok = all(e <= 1e-9 for e in worst.values()) and agree == total
    errs = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(capsys, 7, ok, f"max support error: {errs}; intersection membership {agree}/{total} points agree")


# --- 8 ------------------------------------------------------------------


def test_criterion_8_failsafe_braking(ctx, capsys):
    centers = [[0.25, 0], [-0.25, 0], [0, 0.25], [0, -0.25]]
    halves = [[0.05, 0.3], [0.05, 0.3], [0.3, 0.05], [0.3, 0.05]]
    w = WorldModel("boxed", obstacles=[box(c, h).to_constrained() for c, h in zip(centers, halves)],
                   start=RobotState(0, 0, 0), goal=(2.0, 0.0))
    r = run_episode(SafetyConfig(step_limit=30), ScriptedPlanner(), w, ctx=ctx, seed=1)
    bound = float(np.linalg.norm(interval_hull(w.noise).radius[:2]))
    drift = max(math.hypot(b.px - a.px, b.py - a.py) for a, b in zip(r.path, r.path[1:]))
    first = r.records[0]
    ok = (
        first.triggered and first.adjust_iters > 0 and first.branch == BACKUP
        and all(rec.branch == BACKUP and not rec.action.any() for rec in r.records)
        and drift <= bound + 1e-12
        and r.collisions == 0
        and r.reason == STEP_LIMIT
    )
    report(capsys, 8, ok, f"adjust failed after {first.adjust_iters} iterations; {r.steps} braking steps, "
           f"max drift {drift:.4f} m per step (bound {bound:.4f}), {r.collisions} collisions")


# --- 9 ------------------------------------------------------------------


@pytest.fixture
def slow_endpoint():
    class Slow(BaseHTTPRequestHandler):
        def do_POST(self):
            time.sleep(1.5)

        def log_message(self, *args):
            pass

    srv = ThreadingHTTPServer(("127.0.0.1", 0), Slow)
    srv.daemon_threads = True
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()
    srv.server_close()


def test_criterion_9_planner_robustness(ctx, open_world, slow_endpoint, capsys):
    box_ = Interval([0.0, -0.5], [0.5, 0.5])
    cases = json.loads((FIXTURES / "parse_cases.json").read_text())
    parse_ok = parse_total = 0
    for group, items in cases.items():
        for c in items:
            parse_total += 1
            try:
                plan = parse_plan(c["text"], 3, input_box=box_)
                parse_ok += "plan" in c and np.allclose(plan.actions, c["plan"])
            except PlanParseError as exc:
                parse_ok += "error" in c and c["error"] in str(exc)

    def canned(name):
        body = (FIXTURES / name).read_text()
        return httpx.MockTransport(lambda req: httpx.Response(200, content=body))

    planners = {
        "success": LLMPlanner(PlannerConfig(), api_key="k", transport=canned("llm_success.json")),
        "parse-failure": LLMPlanner(PlannerConfig(), api_key="k", transport=canned("llm_bad_text.json")),
        "malformed": LLMPlanner(PlannerConfig(), api_key="k", transport=canned("llm_malformed.json")),
        "timeout": LLMPlanner(PlannerConfig(endpoint_url=slow_endpoint, timeout=0.2), api_key="k"),
    }
    outcomes, loop_ok = {}, True
    for name, planner in planners.items():
        try:
            rep = run_episode(SafetyConfig(step_limit=5, max_planner_failures=2), planner, open_world, ctx=ctx,
                              start=RobotState(0, 0, 0))
        except Exception as exc:  # noqa: BLE001 - the criterion is that nothing escapes
            outcomes[name] = f"escaped {type(exc).__name__}"
            loop_ok = False
            continue
        outcomes[name] = rep.reason
        want = (STEP_LIMIT, RAW) if name == "success" else (PLANNER_DOWN, BACKUP)
        loop_ok &= rep.reason == want[0] and all(r.branch == want[1] for r in rep.records)
    ok = parse_ok == parse_total and loop_ok
    report(capsys, 9, ok, f"parse fixtures {parse_ok}/{parse_total}; loop outcomes "
           + ", ".join(f"{k}={v}" for k, v in outcomes.items()))
