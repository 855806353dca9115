"""Data-driven reachable sets from noisy trajectories.

Given one-step data ``(X_-, U_-) -> X_+`` the successor of a state/input
set is enclosed by an affine least-squares model ``M_j`` evaluated on the
set, plus three zonotopes: the noise ``W``, the model residual hull ``Z_L``
seen on the data, and a Lipschitz term ``Z_eps`` covering the gaps between
data points.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .setops import (
    DEFAULT_GENERATOR_CAP,
    Interval,
    Zonotope,
    cartesian_product,
    interval_hull,
    interval_to_zonotope,
    linear_map,
    minkowski_sum,
    reduce_order,
    translate,
)

log = logging.getLogger(__name__)

CSV_HEADER = ["traj", "step", "px", "py", "cpsi", "spsi", "v", "omega"]
STATE_DIM = 4
INPUT_DIM = 2
DEFAULT_INPUT_EPS = 1e-6
DEFAULT_PROBE_RESOLUTION = 20
MAX_PROBES = 2_000_000


class TrajectoryFormatError(ValueError):
    pass


class RankDeficientData(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class TrajectoryData:
    x_minus: np.ndarray
    x_plus: np.ndarray
    u_minus: np.ndarray
    boundaries: tuple = (0,)

    def __post_init__(self):
        xm = np.atleast_2d(np.asarray(self.x_minus, dtype=float))
        xp = np.atleast_2d(np.asarray(self.x_plus, dtype=float))
        um = np.atleast_2d(np.asarray(self.u_minus, dtype=float))
        if not (xm.shape[1] == xp.shape[1] == um.shape[1]):
            raise ValueError("X-, X+ and U- must have the same number of columns")
        if xm.shape[0] != xp.shape[0]:
            raise ValueError("X- and X+ must have the same number of rows")
        for a in (xm, xp, um):
            a.setflags(write=False)
        object.__setattr__(self, "x_minus", xm)
        object.__setattr__(self, "x_plus", xp)
        object.__setattr__(self, "u_minus", um)
        object.__setattr__(self, "boundaries", tuple(int(b) for b in self.boundaries))

    @property
    def state_dim(self) -> int:
        return self.x_minus.shape[0]

    @property
    def input_dim(self) -> int:
        return self.u_minus.shape[0]

    @property
    def num_samples(self) -> int:
        return self.x_minus.shape[1]

    @property
    def num_trajectories(self) -> int:
        return len(self.boundaries)

    @classmethod
    def from_runs(cls, runs) -> "TrajectoryData":
        """Build shifted data matrices from ``[(states, inputs), ...]`` where
        ``states`` has one more row than ``inputs``."""
        xm, xp, um, bounds = [], [], [], []
        col = 0
        for states, inputs in runs:
            states = np.atleast_2d(np.asarray(states, dtype=float))
            inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
            if states.shape[0] < 2:
                raise TrajectoryFormatError("a trajectory needs at least 2 states")
            if inputs.shape[0] != states.shape[0] - 1:
                raise TrajectoryFormatError(
                    f"trajectory with {states.shape[0]} states needs {states.shape[0] - 1} inputs, got {inputs.shape[0]}"
                )
            bounds.append(col)
            xm.append(states[:-1].T)
            xp.append(states[1:].T)
            um.append(inputs.T)
            col += states.shape[0] - 1
        if not xm:
            raise TrajectoryFormatError("no trajectories")
        return cls(np.hstack(xm), np.hstack(xp), np.hstack(um), tuple(bounds))


# --------------------------------------------------------------------------
# CSV


def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectories(path, runs, header: dict | None = None) -> None:
    """Write ``[(states, inputs), ...]`` in the trajectory CSV schema.

    ``header`` entries are written as leading ``# key=value`` comment lines.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        for k, v in (header or {}).items():
            fh.write(f"# {k}={v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for t, (states, inputs) in enumerate(runs):
            states = np.atleast_2d(states)
            inputs = np.atleast_2d(inputs)
            for k, x in enumerate(states):
                if k < len(states) - 1:
                    u = [_fmt(inputs[k][0]), _fmt(inputs[k][1])]
                else:
                    u = ["", ""]
                w.writerow([t, k, *(_fmt(xi) for xi in x), *u])


def read_trajectory_runs(path):
    """Parse the trajectory CSV into ``[(states, inputs), ...]``."""
    rows: dict[int, list] = {}
    with Path(path).open(newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    try:
        head = next(reader)
    except StopIteration:
        raise TrajectoryFormatError("empty trajectory file") from None
    if [h.strip() for h in head] != CSV_HEADER:
        raise TrajectoryFormatError(f"bad header {head!r}; expected {','.join(CSV_HEADER)}")
    for lineno, rec in enumerate(reader, start=2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise TrajectoryFormatError(f"row {lineno}: expected {len(CSV_HEADER)} fields, got {len(rec)}")
        try:
            traj, stp = int(rec[0]), int(rec[1])
            state = [float(v) for v in rec[2:6]]
            inp = None if rec[6].strip() == "" and rec[7].strip() == "" else [float(rec[6]), float(rec[7])]
        except ValueError as exc:
            raise TrajectoryFormatError(f"row {lineno}: {exc}") from None
        rows.setdefault(traj, []).append((stp, state, inp, lineno))

    runs = []
    for traj in sorted(rows):
        recs = sorted(rows[traj], key=lambda r: r[0])
        steps = [r[0] for r in recs]
        if steps != list(range(len(recs))):
            raise TrajectoryFormatError(f"trajectory {traj}: steps must be 0..{len(recs) - 1}")
        if len(recs) < 2:
            raise TrajectoryFormatError(f"trajectory {traj} is shorter than 2 states")
        for stp, _, inp, lineno in recs[:-1]:
            if inp is None:
                raise TrajectoryFormatError(f"row {lineno}: missing input on a non-final step")
        if recs[-1][2] is not None:
            raise TrajectoryFormatError(f"row {recs[-1][3]}: final step of trajectory {traj} must have empty inputs")
        states = np.array([r[1] for r in recs])
        inputs = np.array([r[2] for r in recs[:-1]])
        runs.append((states, inputs))
    if not runs:
        raise TrajectoryFormatError("no data rows")
    return runs


def load_trajectories(path) -> TrajectoryData:
    return TrajectoryData.from_runs(read_trajectory_runs(path))


# --------------------------------------------------------------------------
# Lipschitz constant and covering radius


@dataclass(frozen=True, eq=False)
class LipschitzBounds:
    lstar: np.ndarray
    delta: np.ndarray

    def __post_init__(self):
        ls = np.asarray(self.lstar, dtype=float).reshape(-1)
        de = np.asarray(self.delta, dtype=float).reshape(-1)
        if ls.shape != de.shape:
            raise ValueError("lstar and delta must have the same length")
        if np.any(ls < 0) or np.any(de <= 0):
            raise ValueError("need lstar >= 0 and delta > 0")
        object.__setattr__(self, "lstar", ls)
        object.__setattr__(self, "delta", de)


def _regressor_inputs(data: TrajectoryData, invariant_dims) -> tuple[np.ndarray, np.ndarray]:
    """Inputs ``z`` and targets ``y`` for the Lipschitz and covering estimates.

    For translation-invariant state coordinates the coordinate is dropped
    from ``z`` and its target becomes the increment ``x+ - x``.
    """
    inv = sorted(set(invariant_dims))
    keep = [i for i in range(data.state_dim) if i not in inv]
    z = np.vstack([data.x_minus[keep], data.u_minus])
    y = np.array(data.x_plus, copy=True)
    if inv:
        y[inv] -= data.x_minus[inv]
    return z, y


def grid_probes(points: np.ndarray, resolution: int = DEFAULT_PROBE_RESOLUTION) -> np.ndarray:
    """Regular grid over the bounding box of ``points`` (``(d, N)``),
    returned as ``(P, d)``.  Coarsened when it would exceed ``MAX_PROBES``."""
    d = points.shape[0]
    if resolution ** d > MAX_PROBES:
        resolution = max(2, int(math.floor(MAX_PROBES ** (1.0 / d))))
        log.warning("probe grid capped at %d points per dimension", resolution)
    lo, hi = points.min(axis=1), points.max(axis=1)
    axes = [np.linspace(lo[k], hi[k], resolution) for k in range(d)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def covering_radius(
    points: np.ndarray, resolution: int = DEFAULT_PROBE_RESOLUTION, probes: np.ndarray | None = None
) -> float:
    """Largest distance from a probe point to its nearest data point.

    ``points`` is ``(d, N)``.  ``probes`` (``(P, d)``) describes the domain
    the model will be queried on; by default a grid over the bounding box.
    """
    if probes is None:
        probes = grid_probes(points, resolution)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[1] != points.shape[0]:
        raise ValueError(f"probes have {probes.shape[1]} coordinates, data has {points.shape[0]}")
    tree = cKDTree(points.T)
    worst = 0.0
    for start in range(0, len(probes), 200_000):
        dist, _ = tree.query(probes[start : start + 200_000])
        worst = max(worst, float(dist.max()))
    return worst


def estimate_lipschitz(
    data: TrajectoryData,
    *,
    invariant_dims=(),
    probe_resolution: int = DEFAULT_PROBE_RESOLUTION,
    probes: np.ndarray | None = None,
    noise_half_widths=None,
    min_delta: float = 1e-12,
) -> LipschitzBounds:
    """Per-output Lipschitz constants and covering radii from data.

    ``lstar[i]`` is the largest difference quotient of output ``i`` over all
    sample pairs.  Pairs with identical ``z`` are skipped (their successors
    differ only by noise).  The covering radius is shared by every output;
    it is measured on the same ``z`` coordinates, at ``probes`` if given.

    With ``noise_half_widths`` (bounds on the additive noise per output)
    each successor difference is first shrunk by ``2 * half_width``: two
    noisy successors may differ by that much with no change in the
    noise-free dynamics, and close pairs otherwise turn pure noise into a
    large quotient.
    """
    if data.num_samples < 2:
        raise ValueError("need at least two samples to estimate a Lipschitz constant")
    z, y = _regressor_inputs(data, invariant_dims)
    zt = z.T
    sq = np.sum(zt * zt, axis=1)
    dist = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * zt @ zt.T, 0.0))
    iu = np.triu_indices(data.num_samples, k=1)
    pair_d = dist[iu]
    dup = pair_d <= 1e-12
    if np.any(dup):
        differing = np.any(np.abs(y[:, iu[0][dup]] - y[:, iu[1][dup]]) > 0, axis=0)
        if np.any(differing):
            warnings.warn(
                f"{int(differing.sum())} duplicate samples with different successors skipped", stacklevel=2
            )
    ok = ~dup
    slack = np.zeros(y.shape[0]) if noise_half_widths is None else 2.0 * np.asarray(noise_half_widths, dtype=float)
    if slack.shape != (y.shape[0],) or np.any(slack < 0):
        raise ValueError("noise_half_widths needs one non-negative entry per state dimension")
    lstar = np.zeros(y.shape[0])
    if np.any(ok):
        for i in range(y.shape[0]):
            dy = np.maximum(np.abs(y[i, iu[0][ok]] - y[i, iu[1][ok]]) - slack[i], 0.0)
            lstar[i] = float(np.max(dy / pair_d[ok]))
    delta = max(covering_radius(z, probe_resolution, probes), min_delta)
    return LipschitzBounds(lstar, np.full(y.shape[0], delta))


def lipschitz_zonotope(bounds: LipschitzBounds) -> Zonotope:
    return Zonotope(np.zeros(bounds.lstar.size), np.diag(bounds.lstar * bounds.delta / 2.0))


# --------------------------------------------------------------------------
# regression and propagation


def _design(data: TrajectoryData, x_nom, u_nom) -> np.ndarray:
    x_nom = np.asarray(x_nom, dtype=float).reshape(-1, 1)
    u_nom = np.asarray(u_nom, dtype=float).reshape(-1, 1)
    ones = np.ones((1, data.num_samples))
    return np.vstack([ones, data.x_minus - x_nom, data.u_minus - u_nom])


def regressor(data: TrajectoryData, noise_center, x_nom, u_nom) -> np.ndarray:
    """Affine least-squares model around ``(x_nom, u_nom)``:
    ``M = (X_+ - c_w) pinv([1; X_- - x_nom; U_- - u_nom])``."""
    D = _design(data, x_nom, u_nom)
    sv = np.linalg.svd(D, compute_uv=False)
    if sv[-1] <= 1e-10 * sv[0]:
        raise RankDeficientData(
            "data matrix is rank deficient; collect data with richer input excitation"
        )
    target = data.x_plus - np.asarray(noise_center, dtype=float).reshape(-1, 1)
    return target @ np.linalg.pinv(D)


def residual_interval(data: TrajectoryData, M: np.ndarray, x_nom, u_nom) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension min and max of ``X_+ - M [1; X_- - x*; U_- - u*]``
    over the data columns."""
    resid = data.x_plus - M @ _design(data, x_nom, u_nom)
    return resid.min(axis=1), resid.max(axis=1)


def model_error_zonotope(lower, upper, noise: Zonotope, mode: str = "sound") -> Zonotope:
    """Residual box with the noise taken out.

    ``mode="sound"``: ``[lower - w_hi, upper - w_lo]``, every model error
    consistent with the data.  ``mode="difference"``: the Minkowski
    difference ``[lower - w_lo, upper - w_hi]``, falling back to the plain
    residual bounds in any dimension where it would be empty.
    """
    w = interval_hull(noise)
    if mode == "sound":
        lo, hi = lower - w.upper, upper - w.lower
    elif mode == "difference":
        lo, hi = lower - w.lower, upper - w.upper
        empty = lo > hi
        lo = np.where(empty, lower, lo)
        hi = np.where(empty, upper, hi)
    else:
        raise ValueError(f"unknown noise mode {mode!r}")
    return interval_to_zonotope(Interval(lo, hi))


@dataclass(frozen=True, eq=False)
class ReachTube:
    sets: tuple
    nominal_states: tuple
    nominal_inputs: tuple
    regressors: tuple
    model_errors: tuple = field(default=())

    @property
    def horizon(self) -> int:
        return len(self.sets) - 1

    @property
    def centers(self) -> np.ndarray:
        return np.array([s.center for s in self.sets])


def reach(
    initial: Zonotope,
    plan,
    data: TrajectoryData,
    noise: Zonotope,
    bounds: LipschitzBounds,
    input_eps: float = DEFAULT_INPUT_EPS,
    *,
    noise_mode: str = "sound",
    generator_cap: int | None = DEFAULT_GENERATOR_CAP,
) -> ReachTube:
    """Propagate ``initial`` through the data-driven model along ``plan``.

    Each step uses the current set's center and the planned input as the
    nominal point:

        R_{j+1} = M_j ({1} x (R_j - x*_j) x (U_j - u*_j)) + W + Z_L + Z_eps
    """
    plan = np.atleast_2d(np.asarray(plan, dtype=float))
    if plan.size == 0:
        plan = np.zeros((0, data.input_dim))
    if initial.dim != data.state_dim or noise.dim != data.state_dim:
        raise ValueError("initial set, noise and data must share the state dimension")
    if plan.shape[1] != data.input_dim:
        raise ValueError(f"plan actions must have {data.input_dim} entries")
    z_eps = lipschitz_zonotope(bounds)
    one = Zonotope([1.0])
    m = data.input_dim
    sets = [initial]
    nominals, inputs, regs, errors = [], [], [], []
    r = initial
    if len(plan):
        # Moving the nominal point multiplies the design matrix by an
        # invertible shift, so one fit at the origin gives every M_j: only
        # the affine column changes, and the residuals do not change at all.
        n = data.state_dim
        M0 = regressor(data, noise.center, np.zeros(n), np.zeros(m))
        z_l = model_error_zonotope(*residual_interval(data, M0, np.zeros(n), np.zeros(m)), noise, noise_mode)
    for u_star in plan:
        x_star = np.array(r.center)
        M = np.array(M0, copy=True)
        M[:, 0] += M0[:, 1:] @ np.concatenate([x_star, u_star])
        u_set = Zonotope(u_star, input_eps * np.eye(m))
        stacked = cartesian_product(cartesian_product(one, translate(r, -x_star)), translate(u_set, -u_star))
        r = minkowski_sum(minkowski_sum(minkowski_sum(linear_map(M, stacked), noise), z_l), z_eps)
        if generator_cap is not None:
            r = reduce_order(r, generator_cap)
        sets.append(r)
        nominals.append(x_star)
        inputs.append(np.array(u_star))
        regs.append(M)
        errors.append(z_l)
    return ReachTube(tuple(sets), tuple(nominals), tuple(inputs), tuple(regs), tuple(errors))
