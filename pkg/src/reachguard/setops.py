"""Zonotopes, constrained zonotopes, intervals and the set algebra on them.

All set objects are immutable: their arrays are copied on construction and
marked read-only.  Generator columns are kept in order and never merged
unless :func:`reduce_order` is called explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lp import min_linf_norm

MEMBERSHIP_TOL = 1e-9
DEFAULT_GENERATOR_CAP = 200


def _frozen(arr, ndim: int) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    if ndim == 1:
        out = out.reshape(-1)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Interval:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = _frozen(self.lower, 1)
        hi = _frozen(self.upper, 1)
        if lo.shape != hi.shape:
            raise ValueError(f"interval bounds differ in shape: {lo.shape} vs {hi.shape}")
        if np.any(lo > hi):
            raise ValueError("interval lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def clip(self, x) -> np.ndarray:
        return np.minimum(np.maximum(np.asarray(x, dtype=float), self.lower), self.upper)


@dataclass(frozen=True, eq=False)
class Zonotope:
    """``{c + G beta : ||beta||_inf <= 1}``; ``G`` may have zero columns."""

    center: np.ndarray
    generators: np.ndarray = field(default=None)

    def __post_init__(self):
        c = _frozen(self.center, 1)
        if self.generators is None:
            g = np.zeros((c.size, 0))
        else:
            g = np.array(self.generators, dtype=float, copy=True)
            if g.ndim == 1:
                g = g.reshape(c.size, -1)
        if g.ndim != 2 or g.shape[0] != c.size:
            raise ValueError(
                f"generator matrix has {g.shape[0] if g.ndim == 2 else '?'} rows, "
                f"center has dimension {c.size}"
            )
        g.setflags(write=False)
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "generators", g)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    def __add__(self, other: "Zonotope") -> "Zonotope":
        return minkowski_sum(self, other)

    def __rmatmul__(self, m) -> "Zonotope":
        return linear_map(m, self)

    def to_constrained(self) -> "ConstrainedZonotope":
        return ConstrainedZonotope(self.center, self.generators)

    def __repr__(self) -> str:
        return f"Zonotope(dim={self.dim}, generators={self.num_generators})"


@dataclass(frozen=True, eq=False)
class ConstrainedZonotope:
    """``{c + G beta : A beta = b, ||beta||_inf <= 1}``."""

    center: np.ndarray
    generators: np.ndarray
    constraint_matrix: np.ndarray = field(default=None)
    constraint_vector: np.ndarray = field(default=None)

    def __post_init__(self):
        base = Zonotope(self.center, self.generators)
        ng = base.num_generators
        if self.constraint_matrix is None:
            A = np.zeros((0, ng))
        else:
            A = np.array(self.constraint_matrix, dtype=float, copy=True)
            if A.ndim == 1:
                A = A.reshape(1, -1) if A.size else A.reshape(0, ng)
        if self.constraint_vector is None:
            b = np.zeros(A.shape[0])
        else:
            b = np.array(self.constraint_vector, dtype=float, copy=True).reshape(-1)
        if A.shape[1] != ng:
            raise ValueError(f"constraint matrix has {A.shape[1]} columns, expected {ng}")
        if b.size != A.shape[0]:
            raise ValueError(f"constraint vector has length {b.size}, expected {A.shape[0]}")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "center", base.center)
        object.__setattr__(self, "generators", base.generators)
        object.__setattr__(self, "constraint_matrix", A)
        object.__setattr__(self, "constraint_vector", b)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def num_generators(self) -> int:
        return self.generators.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.constraint_matrix.shape[0]

    def __repr__(self) -> str:
        return (
            f"ConstrainedZonotope(dim={self.dim}, generators={self.num_generators}, "
            f"constraints={self.num_constraints})"
        )


def _as_constrained(z) -> ConstrainedZonotope:
    if isinstance(z, ConstrainedZonotope):
        return z
    if isinstance(z, Zonotope):
        return z.to_constrained()
    raise TypeError(f"expected a zonotope, got {type(z).__name__}")


def _check_dims(a, b, what: str) -> None:
    if a.dim != b.dim:
        raise ValueError(f"{what}: dimension mismatch ({a.dim} vs {b.dim})")


def minkowski_sum(a: Zonotope, b: Zonotope) -> Zonotope:
    _check_dims(a, b, "minkowski_sum")
    return Zonotope(a.center + b.center, np.hstack([a.generators, b.generators]))


def linear_map(m, z: Zonotope) -> Zonotope:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.shape[1] != z.dim:
        raise ValueError(f"linear_map: matrix has {m.shape[1]} columns, zonotope dimension {z.dim}")
    return Zonotope(m @ z.center, m @ z.generators)


def cartesian_product(a: Zonotope, b: Zonotope) -> Zonotope:
    ga, gb = a.generators, b.generators
    gen = np.block(
        [
            [ga, np.zeros((a.dim, gb.shape[1]))],
            [np.zeros((b.dim, ga.shape[1])), gb],
        ]
    )
    return Zonotope(np.concatenate([a.center, b.center]), gen)


def interval_to_zonotope(i: Interval) -> Zonotope:
    return Zonotope(i.center, np.diag(i.radius))


def box(center, half_widths) -> Zonotope:
    """Axis-aligned box as a zonotope with one generator per axis."""
    return Zonotope(center, np.diag(np.asarray(half_widths, dtype=float)))


def interval_hull(z) -> Interval:
    """Tightest box around a zonotope; for constrained zonotopes the
    constraints are ignored, giving an enclosing (not tight) box."""
    rad = np.abs(z.generators).sum(axis=1)
    return Interval(z.center - rad, z.center + rad)


def translate(z: Zonotope, t) -> Zonotope:
    t = np.asarray(t, dtype=float).reshape(-1)
    if t.size != z.dim:
        raise ValueError(f"translate: offset has dimension {t.size}, zonotope {z.dim}")
    if isinstance(z, ConstrainedZonotope):
        return ConstrainedZonotope(z.center + t, z.generators, z.constraint_matrix, z.constraint_vector)
    return Zonotope(z.center + t, z.generators)


def support(z: Zonotope, direction) -> float:
    d = np.asarray(direction, dtype=float).reshape(-1)
    if d.size != z.dim:
        raise ValueError(f"support: direction has dimension {d.size}, zonotope {z.dim}")
    return float(d @ z.center + np.abs(d @ z.generators).sum())


def intersect(a, b) -> ConstrainedZonotope:
    """Generator-space intersection of two constrained zonotopes.

    The result keeps ``a``'s center and generators (padded with zero columns
    for ``b``'s coefficients) and couples both coefficient vectors through
    ``G_a beta_a - G_b beta_b = c_b - c_a``.
    """
    a = _as_constrained(a)
    b = _as_constrained(b)
    _check_dims(a, b, "intersect")
    na, nb = a.num_generators, b.num_generators
    ca, cb = a.num_constraints, b.num_constraints
    gen = np.hstack([a.generators, np.zeros((a.dim, nb))])
    A = np.block(
        [
            [a.constraint_matrix, np.zeros((ca, nb))],
            [np.zeros((cb, na)), b.constraint_matrix],
            [a.generators, -b.generators],
        ]
    )
    rhs = np.concatenate([a.constraint_vector, b.constraint_vector, b.center - a.center])
    return ConstrainedZonotope(a.center, gen, A, rhs)


def contains_point(c, x, tol: float = MEMBERSHIP_TOL) -> bool:
    """Membership test: is there a coefficient vector with ``||beta||_inf <= 1``
    reproducing ``x`` and satisfying the equality constraints?"""
    c = _as_constrained(c)
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != c.dim:
        raise ValueError(f"contains_point: point has dimension {x.size}, set {c.dim}")
    if c.num_generators == 0:
        return bool(np.all(np.abs(x - c.center) <= tol) and np.all(np.abs(c.constraint_vector) <= tol))
    A = np.vstack([c.constraint_matrix, c.generators])
    rhs = np.concatenate([c.constraint_vector, x - c.center])
    res = min_linf_norm(A, rhs, eq_tol=tol)
    if res.status == "infeasible-equalities":
        return False
    return res.value <= 1.0 + tol


def reduce_order(z: Zonotope, cap: int = DEFAULT_GENERATOR_CAP) -> Zonotope:
    """Cap the generator count by boxing the smallest-norm columns.

    Keeps the ``cap - dim`` largest columns (original order) and replaces the
    rest with their interval hull, which encloses them.
    """
    n = z.dim
    if z.num_generators <= cap:
        return z
    if cap < n:
        raise ValueError(f"generator cap {cap} is below the dimension {n}")
    keep_count = cap - n
    norms = np.linalg.norm(z.generators, axis=0)
    order = np.argsort(-norms, kind="stable")
    keep = np.sort(order[:keep_count])
    rest = np.sort(order[keep_count:])
    boxed = np.diag(np.abs(z.generators[:, rest]).sum(axis=1))
    return Zonotope(z.center, np.hstack([z.generators[:, keep], boxed]))


def vertices_2d(z: Zonotope) -> np.ndarray:
    """Counter-clockwise vertex list of a planar zonotope, shape ``(k, 2)``.

    Degenerate sets (segments, points) return their extreme points.
    """
    if z.dim != 2:
        raise ValueError("vertices_2d needs a 2-dimensional zonotope")
    g = z.generators[:, np.linalg.norm(z.generators, axis=0) > 0]
    if g.shape[1] == 0:
        return z.center.reshape(1, 2).copy()
    # orient every generator into the upper half plane
    flip = (g[1] < 0) | ((g[1] == 0) & (g[0] < 0))
    g = np.where(flip, -g, g)
    ang = np.arctan2(g[1], g[0])
    g = g[:, np.argsort(ang, kind="stable")]
    start = z.center - g.sum(axis=1)
    steps = np.hstack([2 * g, -2 * g])
    pts = start + np.cumsum(steps, axis=1).T
    pts = np.vstack([start, pts[:-1]])
    # drop collinear/duplicate points
    out = []
    k = len(pts)
    for i in range(k):
        p_prev, p, p_next = pts[i - 1], pts[i], pts[(i + 1) % k]
        cross = (p - p_prev)[0] * (p_next - p)[1] - (p - p_prev)[1] * (p_next - p)[0]
        if np.linalg.norm(p - p_prev) < 1e-15:
            continue
        if abs(cross) <= 1e-14 * max(1.0, np.abs(pts).max()) ** 2:
            continue
        out.append(p)
    if len(out) < 3:
        return np.array([start, z.center + g.sum(axis=1)])
    return np.array(out)
