"""Closed-form Euclidean-ball projection via its KKT multiplier.

Projecting a point p onto {x : ||x - c||^2 <= delta} either leaves p in place
(constraint inactive, multiplier 0) or lands on the sphere with the unique
nonnegative multiplier mu solving

    mu^2 + mu - ||p - c||^2 / (4 delta) + 1/4 = 0,

in which case the projected point is (p + 2 mu c) / (1 + 2 mu).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatchError, NonPositiveRadiusError

# Distances within this relative band of the radius count as inside, so
# rounding noise never manufactures a tiny positive multiplier.
INSIDE_RTOL = 1e-12


@dataclass(frozen=True)
class BallConstraint:
    center: np.ndarray
    radius_sq: float

    def __post_init__(self) -> None:
        center = np.asarray(self.center, dtype=np.float64)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "radius_sq", float(self.radius_sq))
        if not self.radius_sq > 0.0:
            raise NonPositiveRadiusError(f"radius_sq must be positive, got {self.radius_sq}")
        if not np.isfinite(center).all():
            raise ValueError("ball center must be finite")


@dataclass(frozen=True)
class ProjectionResult:
    point: np.ndarray
    multiplier: float
    active: bool


def solve_mu(dist_sq: float, radius_sq: float) -> float:
    """Nonnegative KKT multiplier for a point at squared distance `dist_sq`.

    Uses the stable closed form (sqrt(dist_sq/radius_sq) - 1) / 2; the raw
    quadratic suffers cancellation near the boundary. Returns 0 on or inside
    the sphere.
    """
    if not radius_sq > 0.0:
        raise NonPositiveRadiusError(f"radius_sq must be positive, got {radius_sq}")
    if dist_sq < 0.0:
        raise ValueError("dist_sq must be non-negative")
    return max(0.0, (math.sqrt(dist_sq / radius_sq) - 1.0) / 2.0)


def project(point: np.ndarray, ball: BallConstraint) -> ProjectionResult:
    """Euclidean projection of `point` onto `ball`.

    Inside (up to INSIDE_RTOL) the point is returned unchanged with a zero
    multiplier; outside, the result lies on the sphere and satisfies the
    stationarity condition (proj - point) + 2 mu (proj - center) = 0.
    """
    point = np.asarray(point, dtype=np.float64)
    if point.shape != ball.center.shape:
        raise DimensionMismatchError(
            f"point shape {point.shape} does not match center {ball.center.shape}"
        )
    diff = point - ball.center
    dist_sq = float(diff @ diff)
    if dist_sq <= ball.radius_sq * (1.0 + INSIDE_RTOL):
        return ProjectionResult(point=point, multiplier=0.0, active=False)
    mu = solve_mu(dist_sq, ball.radius_sq)
    projected = (point + 2.0 * mu * ball.center) / (1.0 + 2.0 * mu)
    return ProjectionResult(point=projected, multiplier=mu, active=True)
