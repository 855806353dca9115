"""Emptiness of constrained zonotopes and collision checks of reach sets.

A constrained zonotope is nonempty iff the smallest infinity-norm coefficient
vector satisfying its equality constraints has norm at most one.  The
optimal value ``vstar`` of that LP doubles as a smooth-almost-everywhere
clearance measure: its sensitivity with respect to the constraint
right-hand side gives the gradient used to push reach sets off obstacles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lp import min_linf_norm
from .setops import ConstrainedZonotope, Zonotope, intersect, linear_map

BOUNDARY_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible-equalities"
UNBOUNDED_GUARD = "unbounded-guard"


@dataclass(frozen=True)
class EmptinessResult:
    vstar: float
    zstar: np.ndarray
    equality_duals: np.ndarray  # d vstar / d b
    status: str
    degenerate: bool = False

    @property
    def nonempty(self) -> bool:
        if self.status == INFEASIBLE:
            return False
        if self.status == UNBOUNDED_GUARD:
            # solver did not certify anything; treat as intersecting
            return True
        return self.vstar <= 1.0 + BOUNDARY_TOL


def emptiness(c: ConstrainedZonotope) -> EmptinessResult:
    """Solve ``min v s.t. A z = b, |z| <= v`` for the constraints of ``c``."""
    ng = c.num_generators
    if c.num_constraints == 0:
        return EmptinessResult(0.0, np.zeros(ng), np.zeros(0), OPTIMAL)
    A = c.constraint_matrix
    b = c.constraint_vector
    zero_rows = ~np.any(A != 0, axis=1)
    if np.any(zero_rows & (np.abs(b) > BOUNDARY_TOL)):
        return EmptinessResult(np.inf, np.zeros(ng), np.zeros(c.num_constraints), INFEASIBLE, True)
    sol = min_linf_norm(A, b)
    return EmptinessResult(sol.value, sol.z, sol.eq_sensitivity, sol.status, sol.degenerate)


@dataclass(frozen=True)
class ObstacleCheck:
    intersects: bool
    result: EmptinessResult
    intersection: ConstrainedZonotope


def reach_obstacle_check(reach: Zonotope, obstacle, projection) -> ObstacleCheck:
    """Project ``reach`` onto the obstacle coordinates and test overlap."""
    projected = linear_map(projection, reach)
    inter = intersect(projected, obstacle)
    res = emptiness(inter)
    return ObstacleCheck(res.nonempty, res, inter)


def vstar_center_gradient(result: EmptinessResult, intersection: ConstrainedZonotope) -> np.ndarray:
    """Gradient of ``vstar`` with respect to the first operand's center.

    The intersection's last ``dim`` constraint rows have right-hand side
    ``c_obstacle - c_first``, so the gradient is minus the sensitivity on
    those rows.  For degenerate LPs this is one element of the
    subdifferential (``result.degenerate`` is set).
    """
    if result.status != OPTIMAL:
        raise ValueError(f"no gradient for LP status {result.status!r}")
    n = intersection.dim
    return -np.asarray(result.equality_duals[-n:], dtype=float)


def obstacle_center_gradient(result: EmptinessResult, intersection: ConstrainedZonotope) -> np.ndarray:
    """Gradient of ``vstar`` with respect to the second operand's center."""
    return -vstar_center_gradient(result, intersection)
