"""
Z-axis, re-projection and derivative-of-re-projection losses.

Every term is computed by :func:`evaluate_terms`, which is written against
the small op set in :mod:`rcm_handeye.dual` so that the very same code
returns plain floats for a numeric parameter vector and exact forward-mode
derivatives for a :class:`~rcm_handeye.dual.Dual` one.

Parameter vector layout: ``[u(3), v(3), t(3)]`` for a static hand-eye, plus
``[du(3), dv(3), dt(3)]`` per second when a linear drift is modelled.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import dual as ad
from .camera import Z_MIN, CameraIntrinsics, jacobian_points, project_points
from .errors import EmptyWindow, InsufficientPairs, SchemaError
from .geometry import (
    HandEyeParams,
    RigidTransform,
    build_hand_eye,
    gram_schmidt_columns,
)

N_BASE = 9
N_DRIFT = 18

# stand-in for masked-out points so that projection stays finite
_SAFE_POINT = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class Frame:
    t: float
    t_ecm_psm1: RigidTransform
    t_ecm_psm2: RigidTransform
    p1: np.ndarray
    p2: np.ndarray
    w1: float = 1.0
    w2: float = 1.0
    visible1: bool = True
    visible2: bool = True

    def __post_init__(self):
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float).reshape(2))
        object.__setattr__(self, "p2", np.asarray(self.p2, dtype=float).reshape(2))
        for w in (self.w1, self.w2):
            if not 0.0 <= w <= 1.0:
                raise SchemaError(f"confidence {w} outside [0, 1]")
        if not np.isfinite(self.t):
            raise SchemaError("non-finite timestamp")


@dataclass(frozen=True)
class FrameArrays:
    """Frames stacked along axis 0, arms along axis 1."""

    t: np.ndarray       # (N,)
    kin_R: np.ndarray   # (N, 2, 3, 3)
    kin_t: np.ndarray   # (N, 2, 3)
    p: np.ndarray       # (N, 2, 2)
    w: np.ndarray       # (N, 2)
    vis: np.ndarray     # (N, 2) bool

    @classmethod
    def from_frames(cls, frames: Sequence[Frame]) -> "FrameArrays":
        n = len(frames)
        vis = np.array([[f.visible1, f.visible2] for f in frames], dtype=bool).reshape(n, 2)
        p = np.array([[f.p1, f.p2] for f in frames], dtype=float).reshape(n, 2, 2)
        # detections of invisible keypoints are never used; keep them finite
        p = np.where(vis[..., None] & np.isfinite(p), p, 0.0)
        return cls(
            t=np.array([f.t for f in frames], dtype=float),
            kin_R=np.array([[f.t_ecm_psm1.rotation, f.t_ecm_psm2.rotation] for f in frames]).reshape(n, 2, 3, 3),
            kin_t=np.array([[f.t_ecm_psm1.translation, f.t_ecm_psm2.translation] for f in frames]).reshape(n, 2, 3),
            p=p,
            w=np.array([[f.w1, f.w2] for f in frames], dtype=float).reshape(n, 2),
            vis=vis,
        )

    def __len__(self):
        return len(self.t)

    def with_weights(self, w) -> "FrameArrays":
        return FrameArrays(self.t, self.kin_R, self.kin_t, self.p, np.asarray(w, dtype=float), self.vis)


class Window:
    """An ordered run of frames with strictly increasing timestamps."""

    def __init__(self, frames: Sequence[Frame]):
        frames = tuple(frames)
        if not frames:
            raise EmptyWindow("window has no frames")
        ts = np.array([f.t for f in frames])
        if np.any(np.diff(ts) <= 0):
            raise SchemaError("window timestamps must be strictly increasing")
        self.frames = frames
        self.arrays = FrameArrays.from_frames(frames)

    def __len__(self):
        return len(self.frames)

    @property
    def t_start(self) -> float:
        return float(self.arrays.t[0])

    @property
    def t_end(self) -> float:
        return float(self.arrays.t[-1])


@dataclass(frozen=True)
class HandEyeHypothesis:
    """Hand-eye as a function of time.

    At time ``t`` the parameters are ``base + (t - t0) * drift_rate``. When
    ``t0`` is None the start of whichever window is being evaluated is used.
    """

    base: HandEyeParams
    drift_rate: Optional[np.ndarray] = None
    t0: Optional[float] = None

    def __post_init__(self):
        if self.drift_rate is not None:
            object.__setattr__(self, "drift_rate", np.asarray(self.drift_rate, dtype=float).reshape(9))

    @property
    def is_static(self) -> bool:
        return self.drift_rate is None

    @classmethod
    def static(cls, params: HandEyeParams) -> "HandEyeHypothesis":
        return cls(params)

    @classmethod
    def from_vector(cls, x, t0=None) -> "HandEyeHypothesis":
        x = np.asarray(x, dtype=float)
        if x.size == N_BASE:
            return cls(HandEyeParams.from_vector(x), None, t0)
        if x.size == N_DRIFT:
            return cls(HandEyeParams.from_vector(x[:9]), x[9:].copy(), t0)
        raise ValueError(f"parameter vector must have 9 or 18 entries, got {x.size}")

    def to_vector(self) -> np.ndarray:
        base = self.base.to_vector()
        if self.drift_rate is None:
            return base
        return np.concatenate([base, self.drift_rate])

    def reference_time(self, default: float) -> float:
        return default if self.t0 is None else float(self.t0)

    def params_at(self, t: float, t0: Optional[float] = None) -> HandEyeParams:
        if self.drift_rate is None:
            return self.base
        ref = self.reference_time(t0 if t0 is not None else 0.0)
        return HandEyeParams.from_vector(self.base.to_vector() + (t - ref) * self.drift_rate)

    def transform_at(self, t: float, t0: Optional[float] = None) -> RigidTransform:
        return build_hand_eye(self.params_at(t, t0))


@dataclass(frozen=True)
class LossWeights:
    c1: float = 100.0
    c2: float = 1.0
    c3: float = 0.75

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValueError("loss weights must be non-negative")

    def scaled(self, alpha: float) -> "LossWeights":
        return LossWeights(self.c1 * alpha, self.c2 * alpha, self.c3 * alpha)


@dataclass(frozen=True)
class LossOptions:
    """Switches that change the residual model.

    ``squared_norm`` sums squared pixel distances instead of distances.
    ``keypoint_offsets`` is an optional (2, 3) array: the tracked point of
    each arm expressed in its end-effector frame (default: the origin).
    """

    squared_norm: bool = False
    keypoint_offsets: Optional[np.ndarray] = None


@dataclass
class LossBreakdown:
    l_z: float
    l_proj: float
    l_diff: float
    total: float
    proj_residuals: Optional[np.ndarray] = None   # (N, 2) pixels, NaN where skipped
    diff_residuals: Optional[np.ndarray] = None   # (N-1, 2) pixels/s, NaN where skipped
    skipped_proj: int = 0
    skipped_diff: int = 0
    nonsmooth: bool = False

    def summary(self) -> dict:
        return {"l_z": self.l_z, "l_proj": self.l_proj, "l_diff": self.l_diff, "total": self.total}

    @staticmethod
    def accumulate(parts: Sequence["LossBreakdown"]) -> "LossBreakdown":
        out = LossBreakdown(0.0, 0.0, 0.0, 0.0)
        for b in parts:
            out.l_z += b.l_z
            out.l_proj += b.l_proj
            out.l_diff += b.l_diff
            out.total += b.total
            out.skipped_proj += b.skipped_proj
            out.skipped_diff += b.skipped_diff
            out.nonsmooth |= b.nonsmooth
        return out


def handeye_arrays(params, tau):
    """Per-frame hand-eye rotation (N, 3, 3) and translation (N, 3).

    ``params`` is a 9- or 18-vector (array or dual); ``tau`` the frame times
    relative to the hypothesis reference time.
    """
    tau = np.asarray(tau, dtype=float)
    n = params.shape[0]
    base = params[0:9]
    if n == N_DRIFT:
        q = base + tau[:, None] * params[9:18]
    elif n == N_BASE:
        q = base * np.ones((len(tau), 1))
    else:
        raise ValueError(f"parameter vector must have 9 or 18 entries, got {n}")
    return gram_schmidt_columns(q[:, 0:3], q[:, 3:6]), q[:, 6:9]


def z_axis_angle(rotation):
    """Angle between the third column of ``rotation`` and e3.

    Equal to arccos(r_z . e3) for a unit r_z; the atan2 form keeps the
    derivative bounded as the angle approaches zero.
    """
    rz = rotation[..., :, 2]
    return ad.arctan2(ad.norm(rz[..., 0:2]), rz[..., 2])


@dataclass
class Terms:
    """Raw output of :func:`evaluate_terms` (entries may be duals)."""

    l_z: object
    l_proj: object
    l_diff: object
    z_angle: object
    proj_norms: object   # (N, 2)
    diff_norms: object   # (N-1, 2)
    proj_mask: np.ndarray
    diff_mask: np.ndarray

    def values(self) -> "Terms":
        """Copy with derivative information dropped."""
        v = ad.value
        return Terms(v(self.l_z), v(self.l_proj), v(self.l_diff), v(self.z_angle),
                     v(self.proj_norms), v(self.diff_norms), self.proj_mask, self.diff_mask)


def keypoints_in_ecm(arr: FrameArrays, offsets=None) -> np.ndarray:
    if offsets is None:
        return arr.kin_t
    return np.einsum("naij,aj->nai", arr.kin_R, np.asarray(offsets, dtype=float)) + arr.kin_t


def _reprojection_norms(arr, k, rot_he, trans_he, cam):
    pts = ad.matvec(rot_he[:, None], k) + trans_he[:, None]
    mask = arr.vis & (ad.value(pts)[..., 2] > Z_MIN)
    pixels = project_points(cam, ad.where(mask[..., None], pts, _SAFE_POINT))
    return ad.norm(arr.p - pixels), mask


def reprojection_residuals(arr: FrameArrays, rot_he, trans_he, cam: CameraIntrinsics,
                           offsets=None):
    """Unweighted pixel distances (N, 2) and the mask of entries that were usable."""
    k = keypoints_in_ecm(arr, offsets)
    return _reprojection_norms(arr, k, rot_he, trans_he, cam)


def evaluate_terms(arr: FrameArrays, rot_he, trans_he, cam: CameraIntrinsics,
                   opts: LossOptions = LossOptions()) -> Terms:
    """All three loss terms for per-frame hand-eye (rot_he, trans_he)."""
    if len(arr) == 0:
        raise EmptyWindow("window has no frames")
    k = keypoints_in_ecm(arr, opts.keypoint_offsets)

    proj_norms, mask = _reprojection_norms(arr, k, rot_he, trans_he, cam)
    proj_terms = proj_norms * proj_norms if opts.squared_norm else proj_norms
    l_proj = ad.sum(proj_terms * (arr.w * mask))

    # derivative of re-projection: pair (i, i+1) is linearised at its midpoint,
    # where the product-rule rate equals the finite difference of the product
    if len(arr) >= 2:
        inv_dt = 1.0 / np.diff(arr.t)
        rot_mid = (rot_he[1:] + rot_he[:-1]) * 0.5
        rot_rate = (rot_he[1:] - rot_he[:-1]) * inv_dt[:, None, None]
        trans_mid = (trans_he[1:] + trans_he[:-1]) * 0.5
        trans_rate = (trans_he[1:] - trans_he[:-1]) * inv_dt[:, None]
        k_mid = 0.5 * (k[1:] + k[:-1])
        k_rate = (k[1:] - k[:-1]) * inv_dt[:, None, None]
        pts_mid = ad.matvec(rot_mid[:, None], k_mid) + trans_mid[:, None]
        pts_rate = (ad.matvec(rot_rate[:, None], k_mid) + trans_rate[:, None]
                    + ad.matvec(rot_mid[:, None], k_rate))
        pix_rate = (arr.p[1:] - arr.p[:-1]) * inv_dt[:, None, None]
        dmask = mask[1:] & mask[:-1] & (ad.value(pts_mid)[..., 2] > Z_MIN)
        jac = jacobian_points(cam, ad.where(dmask[..., None], pts_mid, _SAFE_POINT))
        diff_norms = ad.norm(pix_rate - ad.matvec(jac, pts_rate))
        diff_terms = diff_norms * diff_norms if opts.squared_norm else diff_norms
        l_diff = ad.sum(diff_terms * (arr.w[:-1] * dmask))
    else:
        dmask = np.zeros((0, 2), dtype=bool)
        diff_norms = np.zeros((0, 2))
        l_diff = 0.0 * l_proj

    # Z-axis alignment at the window-start hand-eye
    z_angle = z_axis_angle(rot_he[0])
    return Terms(z_angle, l_proj, l_diff, z_angle, proj_norms, diff_norms, mask, dmask)


def combine(terms: Terms, wts: LossWeights):
    return wts.c1 * terms.l_z + wts.c2 * terms.l_proj + wts.c3 * terms.l_diff


def hypothesis_arrays(hyp: HandEyeHypothesis, arr: FrameArrays):
    t0 = hyp.reference_time(float(arr.t[0]))
    return handeye_arrays(hyp.to_vector(), arr.t - t0)


def breakdown(terms: Terms, wts: LossWeights) -> LossBreakdown:
    """Numeric LossBreakdown from (non-dual) terms."""
    l_z, l_proj, l_diff = (float(ad.value(x)) for x in (terms.l_z, terms.l_proj, terms.l_diff))
    pn = ad.value(terms.proj_norms)
    dn = ad.value(terms.diff_norms)
    used = np.concatenate([pn[terms.proj_mask], dn[terms.diff_mask]])
    return LossBreakdown(
        l_z=l_z,
        l_proj=l_proj,
        l_diff=l_diff,
        total=wts.c1 * l_z + wts.c2 * l_proj + wts.c3 * l_diff,
        proj_residuals=np.where(terms.proj_mask, pn, np.nan),
        diff_residuals=np.where(terms.diff_mask, dn, np.nan),
        skipped_proj=int((~terms.proj_mask).sum()),
        skipped_diff=int((~terms.diff_mask).sum()),
        nonsmooth=bool(used.size and used.min() < ad.NORM_EPS) or float(ad.value(terms.z_angle)) < ad.NORM_EPS,
    )


def z_axis_loss(he_rotation) -> float:
    return float(z_axis_angle(np.asarray(he_rotation, dtype=float)))


def reprojection_loss(win: Window, hyp: HandEyeHypothesis, cam: CameraIntrinsics,
                      opts: LossOptions = LossOptions()):
    """Confidence-weighted sum of pixel distances; returns (loss, residual table)."""
    rot, trans = hypothesis_arrays(hyp, win.arrays)
    b = breakdown(evaluate_terms(win.arrays, rot, trans, cam, opts), LossWeights(0, 1, 0))
    return b.l_proj, b.proj_residuals


def diff_loss(win: Window, hyp: HandEyeHypothesis, cam: CameraIntrinsics,
              opts: LossOptions = LossOptions()):
    """Confidence-weighted pixel-velocity mismatch; returns (loss, residual table)."""
    if len(win) < 2:
        raise InsufficientPairs("derivative loss needs at least two frames")
    rot, trans = hypothesis_arrays(hyp, win.arrays)
    b = breakdown(evaluate_terms(win.arrays, rot, trans, cam, opts), LossWeights(0, 0, 1))
    return b.l_diff, b.diff_residuals


def total_loss(win: Window, hyp: HandEyeHypothesis, cam: CameraIntrinsics,
               wts: LossWeights = LossWeights(), opts: LossOptions = LossOptions()) -> LossBreakdown:
    if len(win) < 2:
        raise InsufficientPairs("derivative loss needs at least two frames")
    rot, trans = hypothesis_arrays(hyp, win.arrays)
    return breakdown(evaluate_terms(win.arrays, rot, trans, cam, opts), wts)


def params_loss(arr: FrameArrays, params, t0: float, cam: CameraIntrinsics,
                wts: LossWeights = LossWeights(), opts: LossOptions = LossOptions()):
    """Composite loss of a raw parameter vector (array or dual) on ``arr``."""
    rot, trans = handeye_arrays(params, arr.t - t0)
    terms = evaluate_terms(arr, rot, trans, cam, opts)
    return combine(terms, wts), terms
