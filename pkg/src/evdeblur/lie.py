"""SO(3)/SE(3) types and exponential/logarithm maps.

All maps are written against :mod:`evdeblur.autodiff`'s dispatching math
functions, so they accept either plain numpy arrays or tape ``Var`` operands.
Branch decisions (small-angle Taylor, near-pi rejection) are made on values,
which is sound for a dynamic per-evaluation tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import value_of

# floor for the small-angle Taylor branches of exp/log; the effective cutoff
# is raised per operand dtype (see _angle_cutoff) because the closed forms
# divide by 1 - cos(theta), which underflows to exactly zero well above this
# floor (near 2e-8 in float64, near 4e-4 in float32)
SMALL_ANGLE = 1e-8
# se3_log refuses angles within this distance of pi (log not unique there)
NEAR_PI_TOL = 1e-6
# compose() re-orthonormalizes when orthogonality drift exceeds this
ORTHO_DRIFT_TOL = 1e-9

_EYE3 = np.eye(3)
# basis matrices so skew() stays a smooth map of the vector entries
_SKEW_BASIS = (
    np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]),
    np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
    np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]),
)
_VEE_INDEX = (np.array([2, 0, 1]), np.array([1, 2, 0]))


class AngleNearPi(ValueError):
    """Rotation angle within NEAR_PI_TOL of pi; the logarithm is not unique."""


@dataclass
class Twist:
    """Tangent-space element: axis-angle rotation part + translation part."""

    omega: object  # 3-vector, radians
    v: object  # 3-vector, scene units

    @classmethod
    def from_vector(cls, xi):
        return cls(omega=xi[:3], v=xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([value_of(self.omega), value_of(self.v)])


@dataclass
class RigidTransform:
    """Rotation matrix + translation vector, camera-to-world by convention."""

    rotation: object  # 3x3
    translation: object  # 3-vector

    @classmethod
    def identity(cls):
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    @classmethod
    def translate(cls, x, y, z):
        return cls(rotation=np.eye(3), translation=np.array([x, y, z], dtype=float))

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = value_of(self.rotation)
        m[:3, 3] = value_of(self.translation)
        return m


def rigid_check(t: RigidTransform, tol: float = 1e-9) -> None:
    """Raise if the rotation is not orthonormal with det +1 within ``tol``."""
    r = value_of(t.rotation)
    drift = np.abs(r.T @ r - _EYE3).max()
    if drift > tol:
        raise ValueError(f"rotation orthogonality drift {drift:.3e} exceeds {tol:.0e}")
    det = np.linalg.det(r)
    if abs(det - 1.0) > tol:
        raise ValueError(f"rotation determinant {det} is not +1 within {tol:.0e}")


def _angle_cutoff(omega) -> float:
    """Angle below which the Taylor branches are used for ``omega``'s dtype.

    sqrt(1000 * eps) keeps 1 - cos(theta) at least ~500 ulp above zero in the
    closed-form branch, so none of its divisions degenerate; the Taylor
    truncation error at the cutoff (O(theta^3)) sits below the dtype's own
    resolution.
    """
    v = value_of(omega)
    eps = np.finfo(v.dtype).eps if np.issubdtype(v.dtype, np.floating) else np.finfo(np.float64).eps
    return max(SMALL_ANGLE, float(np.sqrt(1000.0 * eps)))


def skew(w):
    return w[0] * _SKEW_BASIS[0] + w[1] * _SKEW_BASIS[1] + w[2] * _SKEW_BASIS[2]


def _vee(m):
    # entries (m[2,1], m[0,2], m[1,0])
    return m[_VEE_INDEX]


def so3_exp(omega):
    """Rodrigues rotation from an axis-angle vector."""
    k = skew(omega)
    kk = k @ k
    th2 = ad.sum(omega * omega)
    if float(value_of(th2)) < _angle_cutoff(omega) ** 2:
        return _EYE3 + (1.0 - th2 * (1.0 / 6.0)) * k + (0.5 - th2 * (1.0 / 24.0)) * kk
    th = ad.sqrt(th2)
    sh = ad.sin(0.5 * th)
    b = 2.0 * (sh * sh) / th2  # (1 - cos th)/th^2 via half-angle, no cancellation
    return _EYE3 + (ad.sin(th) / th) * k + b * kk


def so3_log(r):
    """Axis-angle vector of a rotation matrix; angle must be below pi."""
    w = 0.5 * _vee(r - ad.transpose(r))  # sin(theta) * axis
    c = 0.5 * (ad.sum(r * _EYE3) - 1.0)  # cos(theta)
    s = ad.norm(w)
    th = ad.atan2(s, c)
    thv = float(value_of(th))
    if thv > np.pi - NEAR_PI_TOL:
        raise AngleNearPi(f"rotation angle {thv} within {NEAR_PI_TOL} of pi")
    if thv < _angle_cutoff(w):
        # w = sin(theta)*axis; theta/sin(theta) = 1 + theta^2/6 + O(theta^4)
        return w * (1.0 + ad.sum(w * w) * (1.0 / 6.0))
    return w * (th / s)


def se3_exp(xi: Twist) -> RigidTransform:
    """Closed-form SE(3) exponential (Rodrigues rotation + V-matrix translation)."""
    omega, v = xi.omega, xi.v
    k = skew(omega)
    kk = k @ k
    th2 = ad.sum(omega * omega)
    if float(value_of(th2)) < _angle_cutoff(omega) ** 2:
        r = _EYE3 + (1.0 - th2 * (1.0 / 6.0)) * k + (0.5 - th2 * (1.0 / 24.0)) * kk
        vmat = _EYE3 + (0.5 - th2 * (1.0 / 24.0)) * k + (1.0 / 6.0 - th2 * (1.0 / 120.0)) * kk
    else:
        th = ad.sqrt(th2)
        a = ad.sin(th) / th
        sh = ad.sin(0.5 * th)
        # (1 - cos th)/th^2 via half-angle: b multiplies k (first order in
        # theta) inside vmat, so the naive form's eps/theta^2 absolute error
        # would cost eps/theta in the translation.
        b = 2.0 * (sh * sh) / th2
        c = (1.0 - a) / th2
        r = _EYE3 + a * k + b * kk
        vmat = _EYE3 + b * k + c * kk
    return RigidTransform(rotation=r, translation=vmat @ v)


def se3_log(t: RigidTransform) -> Twist:
    """Inverse of se3_exp for rotation angles below pi."""
    omega = so3_log(t.rotation)
    k = skew(omega)
    kk = k @ k
    th2 = ad.sum(omega * omega)
    thv2 = float(value_of(th2))
    if thv2 < _angle_cutoff(omega) ** 2:
        vinv = _EYE3 - 0.5 * k + (1.0 / 12.0 + th2 * (1.0 / 720.0)) * kk
    else:
        th = ad.sqrt(th2)
        # a = (1 - (theta/2)*cot(theta/2)) / theta^2, written with half-angles
        # as (sin h - h cos h) / (4 h^2 sin h) so the inevitable cancellation
        # in the numerator happens before the 1/theta^2 amplification; the
        # textbook arrangement loses ~eps/theta^2 relative accuracy below
        # theta ~ 1e-2.
        h = 0.5 * th
        sh = ad.sin(h)
        a = (sh - h * ad.cos(h)) / ((4.0 * sh) * (h * h))
        vinv = _EYE3 - 0.5 * k + a * kk
    return Twist(omega=omega, v=vinv @ t.translation)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    r = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if isinstance(r, np.ndarray):
        drift = np.abs(r.T @ r - _EYE3).max()
        if drift > ORTHO_DRIFT_TOL:
            r = orthonormalize(r)
    return RigidTransform(rotation=r, translation=t)


def inverse(a: RigidTransform) -> RigidTransform:
    rt = ad.transpose(a.rotation)
    return RigidTransform(rotation=rt, translation=-(rt @ a.translation))


def orthonormalize(r: np.ndarray) -> np.ndarray:
    """Polar projection onto SO(3). Only for knot-update boundaries, never
    inside a differentiated computation."""
    u, _, vt = np.linalg.svd(r)
    r2 = u @ vt
    if np.linalg.det(r2) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r2 = u @ vt
    return r2


def rotation_to_quat(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) of a rotation matrix."""
    r = np.asarray(r, dtype=float)
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] >= r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    return q / np.linalg.norm(q)


def quat_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrix of a unit quaternion (x, y, z, w)."""
    x, y, z, w = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
