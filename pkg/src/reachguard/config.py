"""Run configuration: a YAML file with nested sections, CLI overrides, and a
stable hash that is stamped into every output header.

Every key, its default and its accepted range is listed in ``SCHEMA``.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import yaml

from . import __version__
from .adjust import ReachContext
from .planners import PlannerConfig
from .safeloop import SafetyConfig
from .setops import Interval, interval_hull
from .simworld import WORLD_NAMES, make_world


class ConfigError(ValueError):
    pass


BOOL = "bool"

# (default, check, description); check is a (lo, hi) range, a tuple of choices, BOOL, or None
SCHEMA: dict = {
    "safety": {
        "n_plan": (3, (1, 50), "planning horizon (actions per plan)"),
        "n_brake": (1, (1, 50), "trailing braking actions appended to each plan"),
        "r_goal": (0.2, (1e-3, 10.0), "goal reaching radius [m]"),
        "eps_x0": (0.005, (0.0, 1.0), "half-width of the initial-state box in every embedded coordinate"),
        "d_trigger": (1.0, (1e-3, 100.0), "obstacle distance below which the safety layer runs [m]"),
        "gamma": (0.05, (1e-6, 1.0), "adjustment step size, in input units"),
        "v_max": (0.5, (0.0, 10.0), "upper linear speed [m/s]"),
        "omega_max": (0.5, (0.0, 10.0), "angular speed bound, symmetric [rad/s]"),
        "v_max_first_step": (0.1, (0.0, 10.0), "upper linear speed of the first action when filtering [m/s]"),
        "epsilon_input": (1e-6, (0.0, 1e-2), "half-width of the input set around each planned action"),
        "robot_radius": (0.15, (0.0, 5.0), "robot footprint half-width used to inflate obstacles [m]"),
        "step_limit": (500, (1, 100_000), "maximum simulation steps per episode"),
        "deadline": (None, (0.0, 60.0), "wall-clock budget for one plan adjustment [s]; null = iteration cap only (deterministic)"),
        "max_adjust_iterations": (30, (1, 10_000), "gradient iterations per adjustment"),
        "max_planner_failures": (5, (1, 1000), "consecutive planner failures before the episode ends braked"),
        "retry_distance": (0.02, (0.0, 10.0), "skip a failed adjustment again within this pose change [m, rad]; null disables"),
        "retry_every": (25, (1, 100_000), "re-run a skipped adjustment at least every this many steps"),
    },
    "planner": {
        "kind": ("scripted", ("scripted", "adversarial", "llm"), "plan source"),
        "endpoint_url": ("https://api.openai.com/v1", None, "OpenAI-compatible API base URL"),
        "model_name": ("gpt-4o", None, "model identifier"),
        "temperature": (0.1, (0.0, 2.0), "sampling temperature"),
        "timeout": (10.0, (0.01, 600.0), "overall request deadline [s]"),
        "max_retries": (1, (0, 10), "retries after transport errors"),
    },
    "world": {
        "preset": ("world", WORLD_NAMES, "obstacle layout"),
        "goal": (None, None, "goal [x, y]; null keeps the preset goal"),
        "start_jitter": (0.05, (0.0, 1.0), "per-episode uniform start offset in x, y [m] and heading [rad]"),
    },
    "data": {
        "path": (None, None, "trajectory CSV; null collects fresh data"),
        "steps": (600, (4, 1_000_000), "state rows to collect"),
        "trajectories": (20, (1, 10_000), "number of independent runs the rows are split into"),
        "seed": (0, (0, 2**32 - 1), "data collection seed"),
    },
    "reach": {
        "noise_mode": ("sound", ("sound", "difference"), "how noise is removed from the residual box"),
        "invariant_dims": ([0, 1], None, "state coordinates treated as translation invariant"),
        "probes": ("domain", ("domain", "grid"), "covering-radius probe set"),
        "probe_resolution": (20, (2, 200), "points per axis of the grid probes"),
        "generator_cap": (200, (4, 10_000), "maximum generators kept per reach set"),
        "noise_scale": (1.0, (0.0, 100.0), "multiplier on the process noise half-widths"),
        "noise_aware_lipschitz": (True, BOOL, "discount the noise bound from successor differences"),
    },
    "run": {
        "episodes": (20, (0, 100_000), "episodes per run"),
        "seed": (0, (0, 2**32 - 1), "base seed; episode i uses seed + i"),
        "out_dir": ("runs", None, "output directory"),
    },
}


def defaults() -> dict:
    return {sec: {k: copy.deepcopy(v[0]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _check(section: str, key: str, value) -> None:
    _, rule, _ = SCHEMA[section][key]
    if value is None or rule is None:
        return
    name = f"{section}.{key}"
    if rule == BOOL:
        if not isinstance(value, bool):
            raise ConfigError(f"{name} must be true or false, got {value!r}")
        return
    if isinstance(rule, tuple) and rule and isinstance(rule[0], str):
        if value not in rule:
            raise ConfigError(f"{name}={value!r} not one of {', '.join(rule)}")
        return
    lo, hi = rule
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    if isinstance(lo, int) and isinstance(hi, int) and not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if not lo <= value <= hi:
        raise ConfigError(f"{name}={value} outside [{lo}, {hi}]")


def merge(base: dict, overrides: dict) -> dict:
    out = copy.deepcopy(base)
    for sec, vals in (overrides or {}).items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section {sec!r}")
        if not isinstance(vals, dict):
            raise ConfigError(f"section {sec!r} must be a mapping")
        for k, v in vals.items():
            if k not in SCHEMA[sec]:
                raise ConfigError(f"unknown config key {sec}.{k}")
            out[sec][k] = v
    return out


def validate(tree: dict) -> None:
    for sec, vals in tree.items():
        for k, v in vals.items():
            _check(sec, k, v)
    s = tree["safety"]
    if s["n_brake"] > s["n_plan"]:
        raise ConfigError("safety.n_brake cannot exceed safety.n_plan")
    path = tree["data"]["path"]
    if path is not None and not Path(path).is_file():
        raise ConfigError(f"data.path {path} does not exist")
    goal = tree["world"]["goal"]
    if goal is not None and (len(goal) != 2 or not all(isinstance(g, (int, float)) for g in goal)):
        raise ConfigError("world.goal must be [x, y]")


def parse_override(text: str) -> tuple[str, str, object]:
    """``section.key=value`` with a YAML-parsed value."""
    lhs, sep, rhs = text.partition("=")
    sec, dot, key = lhs.strip().partition(".")
    if not sep or not dot:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    return sec, key, yaml.safe_load(rhs)


@dataclass(frozen=True)
class RunConfig:
    tree: dict

    @classmethod
    def load(cls, path=None, overrides=()) -> "RunConfig":
        tree = defaults()
        if path is not None:
            try:
                raw = yaml.safe_load(Path(path).read_text()) or {}
            except OSError as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            except yaml.YAMLError as exc:
                raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
            if not isinstance(raw, dict):
                raise ConfigError("config root must be a mapping")
            tree = merge(tree, raw)
        for ov in overrides:
            if isinstance(ov, str):
                ov = parse_override(ov)
            sec, key, val = ov
            tree = merge(tree, {sec: {key: val}})
        validate(tree)
        return cls(tree)

    def section(self, name: str) -> dict:
        return self.tree[name]

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.tree, sort_keys=True)

    @property
    def hash(self) -> str:
        blob = json.dumps(self.tree, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    def header(self, **extra) -> dict:
        out = {"tool": f"reachguard {__version__}", "config_hash": self.hash}
        out.update(extra)
        return out

    # builders ---------------------------------------------------------

    def safety_config(self) -> SafetyConfig:
        s = self.tree["safety"]
        box = Interval([0.0, -s["omega_max"]], [s["v_max"], s["omega_max"]])
        first = Interval([0.0, -s["omega_max"]], [min(s["v_max_first_step"], s["v_max"]), s["omega_max"]])
        return SafetyConfig(
            n_plan=s["n_plan"],
            n_brake=s["n_brake"],
            r_goal=s["r_goal"],
            eps_x0=(s["eps_x0"],) * 4,
            d_trigger=s["d_trigger"],
            gamma=s["gamma"],
            input_box=box,
            input_box_first_step=first,
            epsilon_input=s["epsilon_input"],
            robot_radius=s["robot_radius"],
            step_limit=s["step_limit"],
            deadline=s["deadline"],
            max_adjust_iterations=s["max_adjust_iterations"],
            max_planner_failures=s["max_planner_failures"],
            retry_distance=s["retry_distance"],
            retry_every=s["retry_every"],
        )

    def planner_config(self) -> PlannerConfig:
        p = self.tree["planner"]
        return PlannerConfig(
            endpoint_url=p["endpoint_url"],
            model_name=p["model_name"],
            temperature=p["temperature"],
            timeout=p["timeout"],
            max_retries=p["max_retries"],
        )

    def world(self, name: str | None = None):
        from dataclasses import replace

        from .simworld import noise_zonotope, DEFAULT_NOISE_HALF_WIDTHS

        w = make_world(name or self.tree["world"]["preset"])
        scale = self.tree["reach"]["noise_scale"]
        if scale != 1.0:
            w = replace(w, noise=noise_zonotope([scale * h for h in DEFAULT_NOISE_HALF_WIDTHS]))
        if self.tree["world"]["goal"] is not None:
            w = replace(w, goal=tuple(float(g) for g in self.tree["world"]["goal"]))
        return w


def build_context(cfg: RunConfig, world=None) -> ReachContext:
    """Load or collect the trajectory data and derive the Lipschitz bounds."""
    from .reachability import estimate_lipschitz, load_trajectories
    from .simworld import collect_data, domain_probes

    d, r = cfg.section("data"), cfg.section("reach")
    world = world or cfg.world()
    if d["path"] is not None:
        data = load_trajectories(d["path"])
    else:
        data = collect_data(cfg.world("open"), d["steps"], d["seed"], trajectories=d["trajectories"])
    inv = tuple(r["invariant_dims"] or ())
    probes = None
    if r["probes"] == "domain":
        if inv != (0, 1):
            raise ConfigError("domain probes assume reach.invariant_dims = [0, 1]")
        probes = domain_probes(cfg.safety_config().input_box)
    slack = interval_hull(world.noise).radius if r["noise_aware_lipschitz"] else None
    bounds = estimate_lipschitz(
        data, invariant_dims=inv, probe_resolution=r["probe_resolution"], probes=probes, noise_half_widths=slack
    )
    s = cfg.safety_config()
    return ReachContext(
        data,
        world.noise,
        bounds,
        input_eps=s.epsilon_input,
        noise_mode=r["noise_mode"],
        generator_cap=r["generator_cap"],
    )


def describe() -> str:
    """Human-readable listing of every key with default and range."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"{sec}:")
        for k, (default, rule, desc) in keys.items():
            if rule is None:
                rng = ""
            elif rule == BOOL:
                rng = " (true/false)"
            else:
                rng = f" range {list(rule) if isinstance(rule[0], str) else rule}"
            lines.append(f"  {k}: {default!r}{rng}  # {desc}")
    return "\n".join(lines)
