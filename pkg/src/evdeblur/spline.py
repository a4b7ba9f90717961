"""Continuous-time camera trajectory.

The primary representation is a cumulative cubic B-spline over SE(3) control
knots with uniform spacing; a two-pose geodesic interpolation is kept as the
ablation alternative. Pose evaluation works on plain arrays and on tape
variables alike, so the same code serves rendering and optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lie
from .lie import RigidTransform, Twist

# cumulative basis matrix: b(u) = CUMULATIVE_C @ (1, u, u^2, u^3)
CUMULATIVE_C = (
    np.array(
        [
            [6.0, 0.0, 0.0, 0.0],
            [5.0, 3.0, -3.0, 1.0],
            [1.0, 3.0, 3.0, -2.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    / 6.0
)


class OutOfDomain(ValueError):
    """Query time outside the spline's queryable segment(s)."""


@dataclass
class SplineTrajectory:
    knots: list  # RigidTransform, len >= 4
    t0: float = 0.0
    dt: float = 1.0

    def __post_init__(self):
        if len(self.knots) < 4:
            raise ValueError(f"need at least 4 knots, got {len(self.knots)}")
        if not self.dt > 0:
            raise ValueError(f"knot spacing must be positive, got {self.dt}")

    @property
    def domain_end(self) -> float:
        return self.t0 + (len(self.knots) - 3) * self.dt


def knot_index(t: float, traj: SplineTrajectory) -> tuple[int, float]:
    """Segment index and the unit-interval offset within it.

    The exact domain end is accepted and clamped into the closure (u = 1) of
    the last segment so the exposure end stays queryable.
    """
    end = traj.domain_end
    if t < traj.t0 or t > end:
        raise OutOfDomain(f"t={t} outside [{traj.t0}, {end}]")
    if t == end:
        return len(traj.knots) - 4, 1.0
    s = (t - traj.t0) / traj.dt
    k = int(np.floor(s))
    return k, s - k


def cumulative_basis(u: float) -> np.ndarray:
    """Four cumulative weights; b[0] is identically 1."""
    return CUMULATIVE_C @ np.array([1.0, u, u * u, u * u * u])


def scale_twist(xi: Twist, s) -> Twist:
    return Twist(omega=xi.omega * s, v=xi.v * s)


def relative_twists(traj: SplineTrajectory) -> list[Twist]:
    """log(knot[i]^-1 * knot[i+1]) for consecutive knots; reusable across
    many pose queries on one trajectory."""
    return [
        lie.se3_log(lie.compose(lie.inverse(a), b))
        for a, b in zip(traj.knots[:-1], traj.knots[1:])
    ]


def pose_at(t: float, traj: SplineTrajectory, twists: list | None = None) -> RigidTransform:
    """Cumulative B-spline pose: knot[k] * prod_j exp(b[j+1] * omega[k+j])."""
    k, u = knot_index(t, traj)
    b = cumulative_basis(u)
    if twists is None:
        twists = [None] * (len(traj.knots) - 1)
        for j in range(3):
            twists[k + j] = lie.se3_log(
                lie.compose(lie.inverse(traj.knots[k + j]), traj.knots[k + j + 1])
            )
    pose = traj.knots[k]
    for j in range(3):
        pose = lie.compose(pose, lie.se3_exp(scale_twist(twists[k + j], b[j + 1])))
    return pose


def pose_at_linear(s: float, start: RigidTransform, end: RigidTransform) -> RigidTransform:
    """Geodesic interpolation between two poses at normalized time s."""
    rel = lie.se3_log(lie.compose(lie.inverse(start), end))
    return lie.compose(start, lie.se3_exp(scale_twist(rel, s)))


def init_knots(
    count: int,
    magnitude: float,
    rng_seed: int,
    t0: float = 0.0,
    dt: float = 1.0,
) -> SplineTrajectory:
    """Random near-identity knots: twist coordinates uniform in (0, magnitude)."""
    if count < 4:
        raise ValueError(f"need at least 4 knots, got {count}")
    if not magnitude > 0:
        raise ValueError("magnitude must be positive")
    rng = np.random.default_rng(rng_seed)
    knots = [
        lie.se3_exp(Twist.from_vector(rng.uniform(0.0, magnitude, 6)))
        for _ in range(count)
    ]
    return SplineTrajectory(knots=knots, t0=t0, dt=dt)
