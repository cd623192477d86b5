"""
SE(3) and rotation algebra for the hand-eye problem.

Conventions: rotations are 3x3 arrays whose *columns* are the basis vectors
of the rotated frame; translations are 3-vectors in metres; rates are
entrywise time derivatives of the upper 3x4 block of a homogeneous transform
(rotation-rate in 1/s, translation-rate in m/s).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dual as ad
from .errors import DegenerateRotation6D, NonPositiveDt

# Minimum accepted length of u and of the rejected component of v.
DEGENERACY_EPS = 1e-9


@dataclass(frozen=True)
class Rotation6D:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "RigidTransform":
        m = np.asarray(m, dtype=float).reshape(4, 4)
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, point) -> np.ndarray:
        return self.rotation @ np.asarray(point, dtype=float) + self.translation

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)


@dataclass(frozen=True)
class TransformRate:
    rotation_rate: np.ndarray
    translation_rate: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation_rate", np.asarray(self.rotation_rate, dtype=float).reshape(3, 3))
        object.__setattr__(self, "translation_rate", np.asarray(self.translation_rate, dtype=float).reshape(3))

    @classmethod
    def zero(cls) -> "TransformRate":
        return cls(np.zeros((3, 3)), np.zeros(3))

    def block(self) -> np.ndarray:
        """The 3x4 upper block of Tdot."""
        return np.column_stack([self.rotation_rate, self.translation_rate])

    def __add__(self, other: "TransformRate") -> "TransformRate":
        return TransformRate(self.rotation_rate + other.rotation_rate,
                             self.translation_rate + other.translation_rate)


@dataclass(frozen=True)
class HandEyeParams:
    """The 9 optimised numbers: 6D rotation (u, v) followed by translation t."""

    rot6: Rotation6D
    trans: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "trans", np.asarray(self.trans, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, x) -> "HandEyeParams":
        x = np.asarray(x, dtype=float).reshape(9)
        return cls(Rotation6D(x[0:3], x[3:6]), x[6:9])

    @classmethod
    def from_transform(cls, t: RigidTransform) -> "HandEyeParams":
        return cls(rotation_to_6d(t.rotation), t.translation.copy())

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.rot6.u, self.rot6.v, self.trans])


def gram_schmidt_columns(u, v):
    """Batched Gram-Schmidt on (..., 3) inputs; works on arrays and duals.

    No degeneracy checking; callers that need it go through gram_schmidt_6d.
    """
    rx = u / ad.norm(u)[..., None]
    w = v - ad.dot(rx, v)[..., None] * rx
    ry = w / ad.norm(w)[..., None]
    rz = ad.cross(rx, ry)
    return ad.stack([rx, ry, rz], axis=-1)


def gram_schmidt_6d(r6: Rotation6D) -> np.ndarray:
    nu = np.linalg.norm(r6.u)
    if not nu > DEGENERACY_EPS:
        raise DegenerateRotation6D(f"|u| = {nu:.3g} is below {DEGENERACY_EPS}")
    rx = r6.u / nu
    nw = np.linalg.norm(r6.v - (rx @ r6.v) * rx)
    if not nw > DEGENERACY_EPS:
        raise DegenerateRotation6D(f"v is parallel to u (rejection {nw:.3g})")
    return gram_schmidt_columns(r6.u, r6.v)


def rotation_to_6d(rotation) -> Rotation6D:
    rotation = np.asarray(rotation, dtype=float)
    return Rotation6D(rotation[:, 0].copy(), rotation[:, 1].copy())


def build_hand_eye(p: HandEyeParams) -> RigidTransform:
    return RigidTransform(gram_schmidt_6d(p.rot6), p.trans.copy())


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -rt @ t.translation)


def geodesic_angle(a, b) -> float:
    """Angle in radians of the relative rotation a^T b, in [0, pi]."""
    c = (np.trace(np.asarray(a).T @ np.asarray(b)) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def finite_diff_rate(t_prev: RigidTransform, t_next: RigidTransform, dt: float) -> TransformRate:
    if not dt > 0:
        raise NonPositiveDt(f"dt must be positive, got {dt}")
    return TransformRate((t_next.rotation - t_prev.rotation) / dt,
                         (t_next.translation - t_prev.translation) / dt)


def product_rule_rate(he: RigidTransform, he_rate: TransformRate,
                      kin: RigidTransform, kin_rate: TransformRate) -> TransformRate:
    """d/dt (he * kin) = he_rate * kin + he * kin_rate on the 3x4 blocks."""
    rot = he_rate.rotation_rate @ kin.rotation + he.rotation @ kin_rate.rotation_rate
    trans = (he_rate.rotation_rate @ kin.translation + he_rate.translation_rate
             + he.rotation @ kin_rate.translation_rate)
    return TransformRate(rot, trans)


def skew(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def exp_so3(w) -> np.ndarray:
    """Rodrigues' formula for a rotation vector."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < 1e-12:
        return np.eye(3) + k
    return np.eye(3) + np.sin(theta) / theta * k + (1.0 - np.cos(theta)) / theta**2 * (k @ k)


def orthonormalize(rotation) -> np.ndarray:
    """Closest rotation matrix in the Frobenius sense (SVD projection)."""
    u, _, vt = np.linalg.svd(np.asarray(rotation, dtype=float))
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def orthonormality_residual(rotation) -> float:
    rotation = np.asarray(rotation, dtype=float)
    return float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))
