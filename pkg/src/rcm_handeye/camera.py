r"""
Pinhole camera with Brown-Conrady distortion.

For a point :math:`(X, Y, Z)` in the camera frame, with :math:`x = X/Z`,
:math:`y = Y/Z` and :math:`r^2 = x^2 + y^2`:

.. math::
    x'' = x(1 + k_1 r^2 + k_2 r^4 + k_3 r^6) + 2 p_1 x y + p_2 (r^2 + 2 x^2)

    y'' = y(1 + k_1 r^2 + k_2 r^4 + k_3 r^6) + p_1 (r^2 + 2 y^2) + 2 p_2 x y

    u = f_x x'' + c_x, \quad v = f_y y'' + c_y

Only the forward map and its Jacobian are provided; nothing here undistorts.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import dual as ad
from .errors import BehindCamera, ConfigInvalid, SchemaError
from .geometry import RigidTransform, TransformRate

# Points closer than this along the optical axis are not projected.
Z_MIN = 1e-6


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    width: int = 640
    height: int = 360

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ConfigInvalid("focal lengths must be positive")
        if not (self.width > 0 and self.height > 0):
            raise ConfigInvalid("image size must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        required = ("fx", "fy", "cx", "cy", "width", "height")
        missing = [k for k in required if k not in d]
        if missing:
            raise SchemaError(f"intrinsics missing keys: {', '.join(missing)}")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SchemaError(f"unknown intrinsics keys: {', '.join(sorted(unknown))}")
        kw = {k: float(v) for k, v in d.items() if k not in ("width", "height")}
        return cls(width=int(d["width"]), height=int(d["height"]), **kw)

    @classmethod
    def load(cls, path) -> "CameraIntrinsics":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: {exc}") from exc
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @property
    def has_distortion(self) -> bool:
        return any((self.k1, self.k2, self.k3, self.p1, self.p2))

    def in_image(self, pixel) -> np.ndarray:
        pixel = np.asarray(pixel)
        return ((pixel[..., 0] >= 0) & (pixel[..., 0] <= self.width)
                & (pixel[..., 1] >= 0) & (pixel[..., 1] <= self.height))


def laparoscope_default() -> CameraIntrinsics:
    """640x360 laparoscope-like camera used by the simulator defaults."""
    return CameraIntrinsics(fx=800.0, fy=800.0, cx=320.0, cy=180.0, width=640, height=360)


def project_points(cam: CameraIntrinsics, points):
    """Batched projection of (..., 3) points to (..., 2) pixels. Arrays or duals."""
    X, Y, Z = points[..., 0], points[..., 1], points[..., 2]
    x = X / Z
    y = Y / Z
    r2 = x * x + y * y
    radial = 1.0 + r2 * (cam.k1 + r2 * (cam.k2 + r2 * cam.k3))
    xd = x * radial + 2.0 * cam.p1 * x * y + cam.p2 * (r2 + 2.0 * x * x)
    yd = y * radial + cam.p1 * (r2 + 2.0 * y * y) + 2.0 * cam.p2 * x * y
    return ad.stack([cam.fx * xd + cam.cx, cam.fy * yd + cam.cy], axis=-1)


def jacobian_points(cam: CameraIntrinsics, points):
    """Batched d(u, v)/d(X, Y, Z), shape (..., 2, 3). Arrays or duals."""
    X, Y, Z = points[..., 0], points[..., 1], points[..., 2]
    iz = 1.0 / Z
    x = X * iz
    y = Y * iz
    r2 = x * x + y * y
    radial = 1.0 + r2 * (cam.k1 + r2 * (cam.k2 + r2 * cam.k3))
    dradial = cam.k1 + r2 * (2.0 * cam.k2 + 3.0 * cam.k3 * r2)
    # derivatives of the distorted normalised coordinates wrt (x, y)
    dxd_dx = radial + 2.0 * x * x * dradial + 2.0 * cam.p1 * y + 6.0 * cam.p2 * x
    dxd_dy = 2.0 * x * y * dradial + 2.0 * cam.p1 * x + 2.0 * cam.p2 * y
    dyd_dx = 2.0 * x * y * dradial + 2.0 * cam.p1 * x + 2.0 * cam.p2 * y
    dyd_dy = radial + 2.0 * y * y * dradial + 6.0 * cam.p1 * y + 2.0 * cam.p2 * x
    row_u = ad.stack([
        cam.fx * dxd_dx * iz,
        cam.fx * dxd_dy * iz,
        -cam.fx * (dxd_dx * x + dxd_dy * y) * iz,
    ], axis=-1)
    row_v = ad.stack([
        cam.fy * dyd_dx * iz,
        cam.fy * dyd_dy * iz,
        -cam.fy * (dyd_dx * x + dyd_dy * y) * iz,
    ], axis=-1)
    return ad.stack([row_u, row_v], axis=-2)


def _check_depth(point):
    if not point[2] > Z_MIN:
        raise BehindCamera(f"point depth {point[2]:.3g} m is not beyond z_min={Z_MIN}")


def project(cam: CameraIntrinsics, point) -> np.ndarray:
    point = np.asarray(point, dtype=float).reshape(3)
    _check_depth(point)
    return project_points(cam, point)


def project_transform(cam: CameraIntrinsics, t_cam_psm: RigidTransform) -> np.ndarray:
    # the keypoint is the end-effector frame origin
    return project(cam, t_cam_psm.translation)


def projection_jacobian(cam: CameraIntrinsics, point) -> np.ndarray:
    point = np.asarray(point, dtype=float).reshape(3)
    _check_depth(point)
    return jacobian_points(cam, point)


def project_rate(cam: CameraIntrinsics, t: RigidTransform, t_rate: TransformRate) -> np.ndarray:
    """Pixel velocity of the projected frame origin (chain rule)."""
    return projection_jacobian(cam, t.translation) @ t_rate.translation_rate
