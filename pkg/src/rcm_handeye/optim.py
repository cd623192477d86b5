"""
Adam with step-decayed learning rate; batch and sliding-window calibration.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .camera import CameraIntrinsics
from .dataio import Dataset, HandEyeTrajectory, ReprojStats, evaluate
from .errors import DimensionMismatch, EmptyDataset, NonFiniteLoss
from .geometry import HandEyeParams, build_hand_eye
from .grad import GradReport, gradient_check, loss_and_gradient
from .loss import (
    HandEyeHypothesis,
    LossBreakdown,
    LossOptions,
    LossWeights,
    Window,
)

log = logging.getLogger(__name__)


class DriftMode(str, enum.Enum):
    STATIC = "static"
    LINEAR = "linear"


@dataclass(frozen=True)
class AdamConfig:
    lr0: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 50
    decay_factor: float = 0.75
    decay_every: int = 10

    def __post_init__(self):
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.epochs < 0 or self.decay_every < 1:
            raise ValueError("epochs must be >= 0 and decay_every >= 1")


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0

    @classmethod
    def fresh(cls, params) -> "AdamState":
        params = np.array(params, dtype=float)
        return cls(params, np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(state: AdamState, grad, lr: float, cfg: AdamConfig = AdamConfig()) -> AdamState:
    grad = np.asarray(grad, dtype=float)
    if grad.shape != state.params.shape:
        raise DimensionMismatch(f"gradient shape {grad.shape} != parameter shape {state.params.shape}")
    k = state.step_count + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = m / (1.0 - cfg.beta1**k)
    v_hat = v / (1.0 - cfg.beta2**k)
    params = state.params - lr * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return AdamState(params, m, v, k)


def lr_schedule(cfg: AdamConfig, epoch: int) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return cfg.lr0 * cfg.decay_factor ** (epoch // cfg.decay_every)


def default_init(drift: DriftMode = DriftMode.STATIC) -> np.ndarray:
    """Identity rotation with the ECM origin 5 cm in front of the camera."""
    base = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.05])
    return np.concatenate([base, np.zeros(9)]) if drift == DriftMode.LINEAR else base


def _initial_vector(init, drift: DriftMode) -> np.ndarray:
    if init is None:
        return default_init(drift)
    if isinstance(init, HandEyeHypothesis):
        init = init.to_vector()
    elif isinstance(init, HandEyeParams):
        init = init.to_vector()
    x = np.array(init, dtype=float).reshape(-1)
    want = 18 if drift == DriftMode.LINEAR else 9
    if x.size == 9 and want == 18:
        x = np.concatenate([x, np.zeros(9)])
    elif x.size == 18 and want == 9:
        x = x[:9]
    if x.size != want:
        raise DimensionMismatch(f"initial parameters must have 9 or 18 entries, got {x.size}")
    return x


@dataclass
class CalibrationResult:
    estimate: HandEyeHypothesis
    loss_trace: List[LossBreakdown]
    initial_loss: LossBreakdown
    final_loss: LossBreakdown
    gradcheck: Optional[GradReport]
    stats: Optional[ReprojStats]
    steps: int = 0
    zero_gradient: bool = False  # every gradient seen was exactly zero

    def to_dict(self, t_ref: float) -> dict:
        from .dataio import hypothesis_to_dict

        return {
            "estimate": hypothesis_to_dict(self.estimate, t_ref),
            "loss_trace": [b.summary() for b in self.loss_trace],
            "initial_loss": self.initial_loss.summary(),
            "final_loss": self.final_loss.summary(),
            "gradcheck": None if self.gradcheck is None else self.gradcheck.to_dict(),
            "stats": None if self.stats is None else self.stats.to_dict(),
            "steps": self.steps,
            "zero_gradient": self.zero_gradient,
        }


def _dataset_loss(windows, params, t0, cam, wts, opts) -> LossBreakdown:
    return LossBreakdown.accumulate(
        [loss_and_gradient(w.arrays, params, t0, cam, wts, opts).loss for w in windows])


def _run_adam(windows: List[Window], x0: np.ndarray, t0_of, cam, cfg, wts, opts,
              trace: Optional[list] = None) -> Tuple[np.ndarray, int, bool]:
    """Epochs of one Adam step per window, windows in index order."""
    state = AdamState.fresh(x0)
    all_zero = True
    for epoch in range(cfg.epochs):
        lr = lr_schedule(cfg, epoch)
        seen = []
        for wi, win in enumerate(windows):
            res = loss_and_gradient(win.arrays, state.params, t0_of(win), cam, wts, opts)
            if not (np.isfinite(res.loss.total) and np.all(np.isfinite(res.gradient))):
                raise NonFiniteLoss(f"non-finite loss at epoch {epoch}, window {wi}", epoch, wi)
            all_zero &= not np.any(res.gradient)
            state = adam_step(state, res.gradient, lr, cfg)
            seen.append(res.loss)
        if trace is not None:
            trace.append(LossBreakdown.accumulate(seen))
            log.debug("epoch %d lr %.3g total %.6g", epoch, lr, trace[-1].total)
    return state.params, state.step_count, all_zero


def calibrate(ds: Dataset, cam: CameraIntrinsics, cfg: AdamConfig = AdamConfig(),
              wts: LossWeights = LossWeights(), drift: DriftMode = DriftMode.STATIC,
              init=None, window_len: int = 32, opts: LossOptions = LossOptions(),
              check_gradient: bool = True) -> CalibrationResult:
    """Fit one hand-eye hypothesis to the whole dataset.

    The hypothesis time reference is the first frame of the dataset, so a
    linear drift is one line across the sequence rather than one per window.
    """
    if len(ds) == 0:
        raise EmptyDataset("dataset has no frames")
    drift = DriftMode(drift)
    windows = ds.windows(window_len)
    t0 = ds.t_start
    x0 = _initial_vector(init, drift)

    initial = _dataset_loss(windows, x0, t0, cam, wts, opts)
    trace: List[LossBreakdown] = []
    x, steps, all_zero = _run_adam(windows, x0, lambda w: t0, cam, cfg, wts, opts, trace)
    final = _dataset_loss(windows, x, t0, cam, wts, opts)
    if not np.isfinite(final.total):
        raise NonFiniteLoss("non-finite loss at the final estimate", cfg.epochs, None)

    estimate = HandEyeHypothesis.from_vector(x, t0)
    report = None
    if check_gradient:
        report = gradient_check(windows[0], x, cam, wts, opts, t0=t0)
    return CalibrationResult(estimate, trace, initial, final, report,
                             evaluate(ds, estimate, cam, opts.keypoint_offsets), steps, all_zero)


def calibrate_online(ds: Dataset, window_len: int, stride: int, cfg: AdamConfig,
                     wts: LossWeights, cam: CameraIntrinsics,
                     drift: DriftMode = DriftMode.STATIC, init=None,
                     opts: LossOptions = LossOptions()) -> HandEyeTrajectory:
    """Sliding-window calibration, each window warm-started from the previous one.

    Every window runs ``cfg.epochs`` Adam steps with fresh moments and emits
    the hand-eye at its midpoint time. Window k only sees frames up to its end.
    """
    if window_len < 2 or stride < 1:
        raise ValueError("window_len must be >= 2 and stride >= 1")
    if len(ds) == 0:
        raise EmptyDataset("dataset has no frames")
    drift = DriftMode(drift)
    x = _initial_vector(init, drift)
    prev_t0 = ds.t_start
    times, transforms, params = [], [], []
    for win in ds.windows(window_len, stride):
        t0 = win.t_start
        if drift == DriftMode.LINEAR:
            # carry the drifting base forward to the new window start
            x = np.concatenate([x[:9] + (t0 - prev_t0) * x[9:], x[9:]])
        x, _, _ = _run_adam([win], x, lambda w: w.t_start, cam, cfg, wts, opts)
        prev_t0 = t0
        t_mid = 0.5 * (win.t_start + win.t_end)
        p = HandEyeHypothesis.from_vector(x, t0).params_at(t_mid)
        times.append(t_mid)
        params.append(p)
        transforms.append(build_hand_eye(p))
    return HandEyeTrajectory(times, transforms, params)
