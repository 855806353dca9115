"""Command-line entry point: ``reachguard <command> [options]``.

Every command loads the YAML config (``--config``), applies ``--set
section.key=value`` overrides and command flags, writes the effective config
to its output directory and exits 0 only when its checks pass.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, build_context, describe

log = logging.getLogger("reachguard")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _load(args, extra=()) -> RunConfig:
    overrides = list(args.set or []) + [o for o in extra if o[2] is not None]
    return RunConfig.load(args.config, overrides)


def _out_dir(cfg: RunConfig, args, sub: str) -> Path:
    base = Path(args.out_dir) if getattr(args, "out_dir", None) else Path(cfg.section("run")["out_dir"])
    out = base / sub
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(f"# reachguard {__version__} config_hash={cfg.hash}\n" + cfg.to_yaml())
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float) + "\n")


def _echo(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True, default=float))


# --------------------------------------------------------------------------
# commands


def cmd_collect(args) -> int:
    from .reachability import estimate_lipschitz
    from .simworld import collect_data, domain_probes
    from .setops import interval_hull

    cfg = _load(args, [("data", "steps", args.steps), ("data", "seed", args.seed)])
    d, r = cfg.section("data"), cfg.section("reach")
    world = cfg.world("open")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data = collect_data(
        world,
        d["steps"],
        d["seed"],
        trajectories=d["trajectories"],
        out=out,
        header=cfg.header(tool_cmd="collect"),
    )
    inv = tuple(r["invariant_dims"] or ())
    probes = domain_probes(cfg.safety_config().input_box) if r["probes"] == "domain" and inv == (0, 1) else None
    slack = interval_hull(world.noise).radius if r["noise_aware_lipschitz"] else None
    b = estimate_lipschitz(
        data, invariant_dims=inv, probe_resolution=r["probe_resolution"], probes=probes, noise_half_widths=slack
    )
    summary = {
        "file": str(out),
        "rows": d["steps"],
        "transitions": data.num_samples,
        "trajectories": data.num_trajectories,
        "lstar": b.lstar.tolist(),
        "delta": float(b.delta[0]),
        "finite": bool(np.all(np.isfinite(b.lstar))),
    }
    _echo(summary)
    return EXIT_OK if summary["finite"] else EXIT_FAIL


def _planner(cfg: RunConfig, kind: str):
    from .planners import LLMPlanner, ScriptedPlanner

    if kind == "llm":
        return LLMPlanner(cfg.planner_config())
    return ScriptedPlanner(adversarial=(kind == "adversarial"))


def cmd_run(args) -> int:
    from .experiments import run_episodes

    cfg = _load(
        args,
        [
            ("world", "preset", args.world),
            ("planner", "kind", args.planner),
            ("run", "episodes", args.episodes),
            ("run", "seed", args.seed),
        ],
    )
    kind = cfg.section("planner")["kind"]
    planner = _planner(cfg, kind)
    world = cfg.world()
    ctx = build_context(cfg, world)
    run = cfg.section("run")
    out = _out_dir(cfg, args, f"run_{kind}_{world.name}")
    summary = run_episodes(
        cfg.safety_config(),
        planner,
        world,
        ctx,
        episodes=run["episodes"],
        seed=run["seed"],
        start_jitter=cfg.section("world")["start_jitter"],
        out_dir=out,
        header=cfg.header(),
    )
    payload = summary.as_dict()
    payload.update(cfg.header(seed=run["seed"]))
    _write_json(out / "summary.json", payload)
    brief = {k: v for k, v in payload.items() if k != "per_episode"}
    _echo(brief)
    return EXIT_OK if summary.collisions == 0 else EXIT_FAIL


def cmd_verify_reach(args) -> int:
    from .experiments import verify_reach

    overrides = [("world", "preset", "open")]
    if args.noise_scale is not None:
        overrides.append(("reach", "noise_scale", args.noise_scale))
    cfg = _load(args, overrides)
    world = cfg.world()
    ctx = build_context(cfg, world)
    s = cfg.safety_config()
    seed = args.seed if args.seed is not None else cfg.section("run")["seed"]
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rep = verify_reach(
            ctx,
            world,
            args.samples,
            plans=args.plans,
            horizon=s.n_plan,
            eps_x0=s.eps_x0[0],
            input_box=s.input_box,
            seed=seed,
        )
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    payload = {
        "rollouts": rep.rollouts,
        "plans": rep.plans,
        "checks": rep.checks,
        "escapes": rep.escapes,
        "containment": rep.containment,
        "volume_ratio": rep.volume_ratio,
        "mean_tube_radius": rep.mean_tube_radius,
        "seconds": rep.seconds,
        "noise_scale": cfg.section("reach")["noise_scale"],
        "escaped_samples": rep.worst,
        "passed": rep.passed,
    }
    payload.update(cfg.header(seed=seed))
    out = _out_dir(cfg, args, "verify_reach")
    _write_json(out / "report.json", payload)
    _echo(payload)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_check_gradients(args) -> int:
    from .experiments import check_gradients

    cfg = _load(args, [("world", "preset", "open")])
    world = cfg.world()
    ctx = build_context(cfg, world)
    seed = args.seed if args.seed is not None else cfg.section("run")["seed"]
    rep = check_gradients(ctx, world, args.instances, horizon=cfg.safety_config().n_plan, seed=seed)
    payload = {
        "instances": len(rep.counted),
        "degenerate_excluded": rep.degenerate_count,
        "max_relative_error": rep.max_error(),
        "h": rep.primary_h,
        "h_sweep": {str(h): e for h, e in rep.plateau().items()},
        "tolerance": rep.tolerance,
        "passed": rep.passed,
    }
    payload.update(cfg.header(seed=seed))
    out = _out_dir(cfg, args, "check_gradients")
    _write_json(out / "report.json", payload)
    _echo(payload)
    return EXIT_OK if rep.passed else EXIT_FAIL


def cmd_bench(args) -> int:
    from dataclasses import replace

    from .experiments import bench, bench_trend_ok, write_bench

    cfg = _load(args, [("world", "preset", "open")])
    ctx = build_context(cfg)
    rows = bench(ctx, repeats=args.repeats, config=replace(cfg.safety_config(), deadline=None))
    out = _out_dir(cfg, args, "bench")
    write_bench(out / "bench.csv", rows, header=cfg.header(seed=cfg.section("data")["seed"]))
    ok, problems = bench_trend_ok(rows)
    print((out / "bench.csv").read_text(), end="")
    for p in problems:
        print(f"trend violated: {p}", file=sys.stderr)
    return EXIT_OK if ok and len(rows) == 6 else EXIT_FAIL


def cmd_plot(args) -> int:
    from .experiments import reach_polygons, read_plans, write_plot_data
    from .safeloop import plans_path, read_episode_log

    logfile = Path(args.logfile)
    if not logfile.is_file():
        raise ConfigError(f"log file {logfile} does not exist")
    header, rows = read_episode_log(logfile)
    config_path = args.config or (logfile.parent / "config.yaml")
    cfg = RunConfig.load(config_path if Path(config_path).is_file() else None, list(args.set or []))
    world = cfg.world(header.get("world"))
    plans = read_plans(plans_path(logfile))
    if len(plans) != len(rows):
        raise ConfigError(f"{plans_path(logfile)} has {len(plans)} records, log has {len(rows)} steps")
    ctx = build_context(cfg, world)
    polygons = reach_polygons(ctx, plans, cfg.safety_config().eps_x0)
    path_xy = [(float(r["px"]), float(r["py"])) for r in rows]
    meta = cfg.header(seed=header.get("seed", ""), source=logfile.name)
    files = write_plot_data(args.out, path_xy, world.obstacles, polygons, header=meta)
    _echo({"polygons": len(polygons), "files": {k: str(v) for k, v in files.items()}})
    return EXIT_OK


def cmd_show_config(args) -> int:
    if args.describe:
        print(describe())
        return EXIT_OK
    cfg = _load(args)
    print(f"# config_hash={cfg.hash}")
    print(cfg.to_yaml(), end="")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reachguard", description="Reachability safety layer for LLM robot planners.")
    p.add_argument("--version", action="version", version=f"reachguard {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config key")
        if out:
            sp.add_argument("--out-dir", help="output directory (overrides run.out_dir)")

    c = sub.add_parser("collect", help="collect offline trajectory data")
    common(c, out=False)
    c.add_argument("--steps", type=int)
    c.add_argument("--seed", type=int)
    c.add_argument("--out", required=True, help="trajectory CSV to write")
    c.set_defaults(func=cmd_collect)

    r = sub.add_parser("run", help="run episodes behind the safety layer")
    common(r)
    r.add_argument("--world", choices=("open", "world", "house", "lab"))
    r.add_argument("--planner", choices=("scripted", "adversarial", "llm"))
    r.add_argument("--episodes", type=int)
    r.add_argument("--seed", type=int)
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify-reach", help="Monte Carlo containment of the reach tube")
    common(v)
    v.add_argument("--samples", type=int, default=1000, help="number of rollouts")
    v.add_argument("--plans", type=int, default=20, help="random plans the rollouts are split over")
    v.add_argument("--noise-scale", type=float, help="multiply the noise bounds (data and rollouts)")
    v.add_argument("--seed", type=int)
    v.set_defaults(func=cmd_verify_reach)

    g = sub.add_parser("check-gradients", help="finite-difference check of plan gradients")
    common(g)
    g.add_argument("--instances", type=int, default=50)
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_check_gradients)

    b = sub.add_parser("bench", help="time the safety layer over obstacle counts and horizons")
    common(b)
    b.add_argument("--repeats", type=int, default=7)
    b.set_defaults(func=cmd_bench)

    pl = sub.add_parser("plot", help="emit plot data for an episode log")
    pl.add_argument("logfile")
    pl.add_argument("--out", required=True, help="directory for CSV and SVG output")
    pl.add_argument("--config", help="config used for the run (default: config.yaml next to the log)")
    pl.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    pl.set_defaults(func=cmd_plot)

    sc = sub.add_parser("show-config", help="print the effective config or the documented keys")
    common(sc, out=False)
    sc.add_argument("--describe", action="store_true", help="list every key with default and range")
    sc.set_defaults(func=cmd_show_config)
    return p


def main(argv=None) -> int:
    from .planners import PlannerConfigError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, PlannerConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
