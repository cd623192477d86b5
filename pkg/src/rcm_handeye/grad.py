"""
Exact gradients of the composite loss and their finite-difference certification.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np

from . import dual as ad
from .camera import CameraIntrinsics
from .errors import DegenerateRotation6D, NonPositiveStep
from .geometry import DEGENERACY_EPS
from .loss import (
    FrameArrays,
    LossBreakdown,
    LossOptions,
    LossWeights,
    Terms,
    Window,
    breakdown,
    params_loss,
)

FD_STEP = 1e-6
FD_TOLERANCE = 1e-5


class LossAndGradient(NamedTuple):
    loss: LossBreakdown
    gradient: np.ndarray
    nonsmooth: bool
    # smallest estimated parameter-space distance to a kink of the objective
    kink_distance: float


def _check_params(params):
    params = np.asarray(params, dtype=float)
    if params.size not in (9, 18):
        raise ValueError(f"parameter vector must have 9 or 18 entries, got {params.size}")
    u, v = params[0:3], params[3:6]
    nu = np.linalg.norm(u)
    if not nu > DEGENERACY_EPS:
        raise DegenerateRotation6D(f"|u| = {nu:.3g}")
    rx = u / nu
    if not np.linalg.norm(v - (rx @ v) * rx) > DEGENERACY_EPS:
        raise DegenerateRotation6D("v is parallel to u")
    return params


def _kink_distance(terms: Terms, wts: LossWeights) -> float:
    """First-order distance, in parameter space, to the nearest non-smooth point.

    Kinks sit where a used residual norm vanishes or where the hand-eye
    z-axis coincides with e3. Each is estimated as value / |gradient|.
    """
    dists = [np.inf]
    groups = []
    if wts.c2 > 0:
        groups.append((terms.proj_norms, terms.proj_mask))
    if wts.c3 > 0:
        groups.append((terms.diff_norms, terms.diff_mask))
    for norms, mask in groups:
        if isinstance(norms, ad.Dual) and mask.any():
            slope = np.linalg.norm(norms.der, axis=-1)[mask]
            dists.append(np.min(norms.val[mask] / np.maximum(slope, 1e-300)))
    if wts.c1 > 0 and isinstance(terms.z_angle, ad.Dual):
        slope = np.linalg.norm(terms.z_angle.der)
        dists.append(float(terms.z_angle.val) / max(slope, 1e-300))
    return float(min(dists))


def loss_and_gradient(arr: FrameArrays, params, t0: float, cam: CameraIntrinsics,
                      wts: LossWeights = LossWeights(),
                      opts: LossOptions = LossOptions()) -> LossAndGradient:
    """Composite loss and its exact gradient by forward-mode differentiation."""
    params = _check_params(params)
    x = ad.Dual.variables(params)
    total, terms = params_loss(arr, x, t0, cam, wts, opts)
    b = breakdown(terms.values(), wts)
    grad = np.array(total.der, dtype=float) if isinstance(total, ad.Dual) else np.zeros(params.size)
    return LossAndGradient(b, grad, b.nonsmooth, _kink_distance(terms, wts))


def loss_gradient(win: Window, params, cam: CameraIntrinsics,
                  wts: LossWeights = LossWeights(), opts: LossOptions = LossOptions(),
                  t0: Optional[float] = None) -> np.ndarray:
    """Gradient of the composite loss with respect to the 9- or 18-vector."""
    ref = win.t_start if t0 is None else t0
    return loss_and_gradient(win.arrays, params, ref, cam, wts, opts).gradient


def finite_diff_gradient(evaluate: Callable[[np.ndarray], float], params, h: float = FD_STEP) -> np.ndarray:
    """Central differences (f(p + h e_k) - f(p - h e_k)) / 2h per coordinate."""
    if not h > 0:
        raise NonPositiveStep(f"step must be positive, got {h}")
    params = np.asarray(params, dtype=float)
    g = np.zeros(params.size)
    for k in range(params.size):
        step = np.zeros(params.size)
        step[k] = h
        g[k] = (evaluate(params + step) - evaluate(params - step)) / (2.0 * h)
    return g


@dataclass
class GradReport:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    max_rel_error: float
    passed: Optional[bool]           # None when the check was refused
    tolerance: float = FD_TOLERANCE
    step: float = FD_STEP
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "step": self.step,
            "reason": self.reason,
            "analytic": self.analytic.tolist(),
            "numeric": self.numeric.tolist(),
        }


def gradient_check(win: Window, params, cam: CameraIntrinsics,
                   wts: LossWeights = LossWeights(), opts: LossOptions = LossOptions(),
                   t0: Optional[float] = None, h: float = FD_STEP,
                   tol: float = FD_TOLERANCE) -> GradReport:
    """Compare the analytic gradient with central differences.

    The error per coordinate is |g_analytic - g_fd| / max(1, |g_fd|). States
    closer than ``h`` to a kink of the objective are refused (``passed`` is
    None) because central differences are meaningless across a kink.
    """
    ref = win.t_start if t0 is None else t0
    params = _check_params(params)
    res = loss_and_gradient(win.arrays, params, ref, cam, wts, opts)
    empty = np.full(params.size, np.nan)
    if res.kink_distance < h:
        return GradReport(res.gradient, empty, empty, float("nan"), None, tol, h,
                          f"within {res.kink_distance:.2e} of a non-differentiable point")

    def evaluate(p):
        return float(params_loss(win.arrays, p, ref, cam, wts, opts)[0])

    numeric = finite_diff_gradient(evaluate, params, h)
    rel = np.abs(res.gradient - numeric) / np.maximum(1.0, np.abs(numeric))
    worst = float(rel.max())
    return GradReport(res.gradient, numeric, rel, worst, bool(worst < tol), tol, h)
