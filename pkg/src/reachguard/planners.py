"""Plan sources: a deterministic pure-pursuit planner and an LLM client.

Both take a :class:`PlannerQuery` and return an :class:`~reachguard.adjust.Plan`
or raise :class:`PlannerFailure`.  The LLM speaks a small text grammar::

    LVel:[v1,...,vN] and AVel:[w1,...,wN]
"""

from __future__ import annotations

import math
import os
import re
import time
from dataclasses import dataclass

import httpx
import numpy as np

from .adjust import Plan
from .setops import Interval

API_KEY_ENV = "LLM_API_KEY"
PROMPT_MIN_LINEAR = 0.1


class PlannerFailure(RuntimeError):
    """The planner produced no usable plan (timeout, HTTP error, bad text)."""


class PlanParseError(PlannerFailure):
    pass


class PlannerConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PlannerQuery:
    pose: tuple  # (px, py, psi)
    goal: tuple
    reaching_radius: float
    los_angle: float
    lidar: tuple
    input_box: Interval
    horizon: int
    lidar_fov: tuple = (-math.pi / 4, math.pi / 4)
    lidar_max_range: float = 3.5


@dataclass(frozen=True)
class PlannerConfig:
    endpoint_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-4o"
    temperature: float = 0.1
    timeout: float = 10.0
    max_retries: int = 1

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise PlannerConfigError(f"temperature {self.temperature} outside [0, 2]")
        if self.timeout <= 0:
            raise PlannerConfigError("timeout must be positive")
        if self.max_retries < 0:
            raise PlannerConfigError("max_retries must be >= 0")


def los_angle(pose, goal) -> float:
    """Bearing of the goal relative to the heading, wrapped to (-pi, pi]."""
    px, py, psi = pose
    dx, dy = goal[0] - px, goal[1] - py
    if dx == 0 and dy == 0:
        return 0.0
    a = math.atan2(dy, dx) - psi
    a = math.fmod(a + math.pi, 2 * math.pi)
    if a <= 0:
        a += 2 * math.pi
    return a - math.pi


# --------------------------------------------------------------------------
# prompt


def build_prompt(q: PlannerQuery) -> str:
    """Render the query as a single zero-shot prompt (pure function)."""
    lo, hi = q.input_box.lower, q.input_box.upper
    v_lo = max(float(lo[0]), PROMPT_MIN_LINEAR)
    fov_lo, fov_hi = (round(math.degrees(a)) for a in q.lidar_fov)
    n = q.horizon
    ranges = ",".join(f"{r:.2f}" for r in q.lidar)
    px, py, psi = q.pose
    return (
        "Act as the motion controller for a two-wheeled differential-drive ground robot moving in a plane. "
        "Its state has three entries: x and y position in meters and heading theta in radians. "
        "You command a forward linear speed v in m/s and a turn rate w in rad/s. "
        f"Allowed ranges: v in [{v_lo:g},{float(hi[0]):g}], w in [{float(lo[1]):g},{float(hi[1]):g}]. "
        f"Plan the next {n} control steps; only the first one is executed, then you are asked again. "
        f"Reply with exactly one line of the form LVel:[v1,...,v{n}] and AVel:[w1,...,w{n}] "
        "and write nothing else. "
        f"A forward LiDAR has {len(q.lidar)} beams spread from {fov_lo} to {fov_hi} degrees, listed right to left; "
        f"a reading of {q.lidar_max_range:g} means the beam hit nothing. "
        f"Ranges: [{ranges}]. "
        f"Goal: x={q.goal[0]:.3f}, y={q.goal[1]:.3f}; stop once within R={q.reaching_radius:.3f} m. "
        f"Now: x={px:.3f}, y={py:.3f}, theta={psi:.3f}, "
        f"line-of-sight angle to the goal {q.los_angle:.3f} rad (drive it to zero). "
        "Steer clear of obstacles."
    )


def estimate_tokens(text: str) -> int:
    """Rough token count: numbers cost about 3.5 tokens, words 4 chars/token."""
    numbers = re.findall(r"[-+]?\d*\.?\d+", text)
    rest = re.sub(r"[-+]?\d*\.?\d+", "", text)
    return int(math.ceil(len(numbers) * 3.5 + len(rest) / 4.0))


# --------------------------------------------------------------------------
# plan text

_FLOAT = r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_LIST = r"\[([^\]]*)\]"
_PLAN_RE = re.compile(
    r"lvel\s*:\s*" + _LIST + r"\s*(?:and\s*)?[,;]?\s*avel\s*:\s*" + _LIST,
    re.IGNORECASE,
)
_FLOAT_RE = re.compile(r"^\s*(" + _FLOAT + r")\s*$")


def _parse_list(body: str, name: str) -> list[float]:
    parts = body.split(",")
    out = []
    for p in parts:
        mt = _FLOAT_RE.match(p)
        if not mt:
            raise PlanParseError(f"{name}: non-numeric entry {p.strip()!r}")
        out.append(float(mt.group(1)))
    return out


def parse_plan(text: str, horizon: int, m: int = 2, input_box: Interval | None = None) -> Plan:
    """Extract the velocity lists from LLM text.

    Markers are case-insensitive and whitespace around tokens is ignored.
    Values outside ``input_box`` are clamped into it.
    """
    if m != 2:
        raise ValueError("the plan grammar carries exactly two input channels")
    mt = _PLAN_RE.search(text or "")
    if not mt:
        raise PlanParseError("missing LVel/AVel markers")
    lin = _parse_list(mt.group(1), "LVel")
    ang = _parse_list(mt.group(2), "AVel")
    if len(lin) != horizon or len(ang) != horizon:
        raise PlanParseError(f"expected {horizon} values per list, got {len(lin)} and {len(ang)}")
    actions = np.column_stack([lin, ang])
    if not np.all(np.isfinite(actions)):
        raise PlanParseError("non-finite velocity")
    if input_box is not None:
        actions = np.array([input_box.clip(a) for a in actions])
    return Plan(actions)


def format_plan(plan: Plan) -> str:
    lin = ",".join(repr(float(v)) for v in plan.actions[:, 0])
    ang = ",".join(repr(float(w)) for w in plan.actions[:, 1])
    return f"LVel:[{lin}] and AVel:[{ang}]"


# --------------------------------------------------------------------------
# planners


class ScriptedPlanner:
    """Pure pursuit towards the goal, blind to obstacles.

    ``adversarial=True`` always commands the top linear speed and steers at
    the closest LiDAR return instead of the goal, so without a safety layer
    it drives into the nearest obstacle in view.
    """

    def __init__(self, k_v: float = 0.5, k_omega: float = 1.0, adversarial: bool = False):
        self.k_v = k_v
        self.k_omega = k_omega
        self.adversarial = adversarial
        self.name = "adversarial" if adversarial else "scripted"

    def _target_bearing(self, q: PlannerQuery) -> float:
        if self.adversarial and q.lidar and min(q.lidar) < q.lidar_max_range:
            lo, hi = q.lidar_fov
            n = len(q.lidar)
            i = int(np.argmin(q.lidar))
            return lo + (hi - lo) * i / (n - 1) if n > 1 else 0.5 * (lo + hi)
        return q.los_angle

    def __call__(self, q: PlannerQuery) -> Plan:
        lo, hi = q.input_box.lower, q.input_box.upper
        dist = math.hypot(q.goal[0] - q.pose[0], q.goal[1] - q.pose[1])
        v = hi[0] if self.adversarial else min(max(self.k_v * dist, lo[0]), hi[0])
        w = min(max(self.k_omega * self._target_bearing(q), lo[1]), hi[1])
        return Plan(np.tile([v, w], (q.horizon, 1)))


class LLMPlanner:
    """Stateless client for an OpenAI-compatible ``/chat/completions``
    endpoint.  Every failure surfaces as :class:`PlannerFailure`."""

    name = "llm"

    def __init__(self, cfg: PlannerConfig, *, api_key: str | None = None, transport=None):
        key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        if not key.strip():
            raise PlannerConfigError(f"the llm planner needs a credential in the {API_KEY_ENV} environment variable")
        self.cfg = cfg
        self._key = key.strip()
        self._transport = transport

    def request_body(self, q: PlannerQuery) -> dict:
        return {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [{"role": "user", "content": build_prompt(q)}],
        }

    def __call__(self, q: PlannerQuery) -> Plan:
        try:
            return self._request(q)
        except PlannerFailure:
            raise
        except Exception as exc:  # any other client error is still just a failed plan
            raise PlannerFailure(f"llm planner error: {exc!r}") from exc

    def _request(self, q: PlannerQuery) -> Plan:
        url = self.cfg.endpoint_url.rstrip("/") + "/chat/completions"
        body = self.request_body(q)
        headers = {"Authorization": f"Bearer {self._key}"}
        t_end = time.monotonic() + self.cfg.timeout
        last: Exception | None = None
        for _ in range(self.cfg.max_retries + 1):
            remaining = t_end - time.monotonic()
            if remaining <= 0:
                break
            try:
                with httpx.Client(transport=self._transport, timeout=remaining) as client:
                    resp = client.post(url, json=body, headers=headers)
            except httpx.TimeoutException as exc:
                raise PlannerFailure(f"llm request timed out: {exc}") from exc
            except httpx.TransportError as exc:
                last = exc
                continue
            if resp.status_code != 200:
                raise PlannerFailure(f"llm endpoint returned HTTP {resp.status_code}")
            try:
                text = resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise PlannerFailure(f"malformed completion body: {exc}") from exc
            return parse_plan(str(text), q.horizon, input_box=q.input_box)
        raise PlannerFailure(f"llm request failed: {last}")
