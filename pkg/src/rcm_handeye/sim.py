"""
Synthetic da Vinci-like data with a known hand-eye.

The endoscope arm (ECM) rotates about a fixed remote centre of motion: its
pose is ``R(t)`` about ``rcm_point`` with the tip ``ecm_insertion`` metres
down the shaft, so the RCM expressed in the ECM frame never moves. The two
instrument end-effectors (PSM1, PSM2) follow smooth sums of sinusoids in the
base frame; ``^ECM T_PSMj`` is obtained by frame composition. Keypoint
detections are the projections of the true end-effector origins plus
optional Gaussian pixel noise, with a DLC-like confidence score.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np

from .camera import Z_MIN, CameraIntrinsics, project_points
from .dataio import Dataset, HandEyeTrajectory
from .errors import ConfigInvalid, FrustumViolation, OutOfRange
from .geometry import RigidTransform, compose, exp_so3, inverse
from .loss import Frame

Vec3 = Tuple[float, float, float]


@dataclass(frozen=True)
class LinearTranslation:
    velocity: Vec3  # m/s, camera frame


@dataclass(frozen=True)
class StepChange:
    at_frame: int
    transform: RigidTransform


Drift = Union[None, LinearTranslation, StepChange]


def _default_handeye() -> RigidTransform:
    # rotation about the optical axis only, so the ECM and camera z-axes agree
    return RigidTransform(exp_so3([0.0, 0.0, np.deg2rad(10.0)]), [0.004, -0.003, 0.01])


@dataclass(frozen=True)
class SimConfig:
    n_frames: int = 200
    dt: float = 1.0 / 30.0
    rcm_point: Vec3 = (0.0, 0.0, 0.0)
    ecm_insertion: float = 0.08
    # rotation-vector amplitude (rad) and frequency (Hz) per base axis
    ecm_amplitude: Vec3 = (0.04, 0.04, 0.08)
    ecm_frequency: Vec3 = (0.11, 0.07, 0.05)
    # when set, the ECM only rotates about this single axis (amplitude ecm_amplitude[0])
    ecm_axis: Optional[Vec3] = None
    # PSM workspace centres relative to the resting ECM tip (m)
    psm_center: Tuple[Vec3, Vec3] = ((0.012, 0.0, 0.09), (-0.012, 0.0, 0.09))
    psm_amplitude: Tuple[Vec3, Vec3] = ((0.01, 0.006, 0.03), (0.01, 0.006, 0.03))
    psm_frequency: Tuple[Vec3, Vec3] = ((0.13, 0.17, 0.09), (0.11, 0.19, 0.07))
    psm_phase: Tuple[Vec3, Vec3] = ((0.0, 1.0, 2.0), (0.5, 1.5, 2.5))
    psm_rot_amplitude: float = 0.3
    gt_handeye: RigidTransform = field(default_factory=_default_handeye)
    drift: Drift = None
    pixel_noise_sigma: float = 0.0
    confidence_floor: float = 0.1
    confidence_scale: float = 3.0
    # non-geometric kinematic error: (rotation rad, translation m, frequency Hz)
    kinematic_offset: Tuple[float, float, float] = (0.0, 0.0, 0.05)
    seed: int = 0

    def validate(self):
        if self.n_frames < 2:
            raise ConfigInvalid("n_frames must be at least 2")
        if not self.dt > 0:
            raise ConfigInvalid("dt must be positive")
        if self.pixel_noise_sigma < 0:
            raise ConfigInvalid("pixel_noise_sigma must be non-negative")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ConfigInvalid("confidence_floor must lie in [0, 1]")
        if isinstance(self.drift, StepChange) and not 0 < self.drift.at_frame < self.n_frames:
            raise ConfigInvalid("step change frame outside the sequence")
        if self.ecm_axis is not None and not np.linalg.norm(self.ecm_axis) > 0:
            raise ConfigInvalid("ecm_axis must be non-zero")

    # -- JSON round trip -------------------------------------------------

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["gt_handeye"] = self.gt_handeye.matrix().reshape(-1).tolist()
        if isinstance(self.drift, LinearTranslation):
            d["drift"] = {"type": "linear_translation", "velocity": list(self.drift.velocity)}
        elif isinstance(self.drift, StepChange):
            d["drift"] = {"type": "step_change", "at_frame": self.drift.at_frame,
                          "transform": self.drift.transform.matrix().reshape(-1).tolist()}
        return _listify(d)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown simulator keys: {', '.join(sorted(unknown))}")
        kw = dict(d)
        if "gt_handeye" in kw:
            kw["gt_handeye"] = RigidTransform.from_matrix(kw["gt_handeye"])
        drift = kw.get("drift")
        if isinstance(drift, dict):
            kind = drift.get("type")
            if kind == "linear_translation":
                kw["drift"] = LinearTranslation(tuple(drift["velocity"]))
            elif kind == "step_change":
                kw["drift"] = StepChange(int(drift["at_frame"]), RigidTransform.from_matrix(drift["transform"]))
            else:
                raise ConfigInvalid(f"unknown drift type {kind!r}")
        for k in ("rcm_point", "ecm_amplitude", "ecm_frequency", "ecm_axis", "kinematic_offset"):
            if kw.get(k) is not None:
                kw[k] = tuple(float(x) for x in kw[k])
        for k in ("psm_center", "psm_amplitude", "psm_frequency", "psm_phase"):
            if k in kw:
                kw[k] = tuple(tuple(float(x) for x in row) for row in kw[k])
        cfg = cls(**kw)
        cfg.validate()
        return cfg


def _listify(x):
    if isinstance(x, dict):
        return {k: _listify(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_listify(v) for v in x]
    return x


@dataclass
class SimOutput:
    dataset: Dataset
    ground_truth: HandEyeTrajectory
    config: SimConfig
    diagnostics: dict


def ecm_pose(cfg: SimConfig, t: float) -> RigidTransform:
    """Base-frame ECM tip pose; the RCM point is fixed in the ECM frame."""
    amp = np.asarray(cfg.ecm_amplitude, dtype=float)
    freq = np.asarray(cfg.ecm_frequency, dtype=float)
    if cfg.ecm_axis is not None:
        axis = np.asarray(cfg.ecm_axis, dtype=float)
        rotvec = axis / np.linalg.norm(axis) * amp[0] * np.sin(2 * np.pi * freq[0] * t)
    else:
        rotvec = amp * np.sin(2 * np.pi * freq * t + np.array([0.0, 0.7, 1.3]))
    rot = exp_so3(rotvec)
    tip = np.asarray(cfg.rcm_point, dtype=float) + rot @ np.array([0.0, 0.0, cfg.ecm_insertion])
    return RigidTransform(rot, tip)


def psm_pose(cfg: SimConfig, arm: int, t: float) -> RigidTransform:
    rest_tip = np.asarray(cfg.rcm_point, dtype=float) + np.array([0.0, 0.0, cfg.ecm_insertion])
    phase = np.asarray(cfg.psm_phase[arm], dtype=float)
    wave = np.sin(2 * np.pi * np.asarray(cfg.psm_frequency[arm]) * t + phase)
    pos = rest_tip + np.asarray(cfg.psm_center[arm]) + np.asarray(cfg.psm_amplitude[arm]) * wave
    rot = exp_so3(cfg.psm_rot_amplitude * np.array([wave[1], wave[2], wave[0]]))
    return RigidTransform(rot, pos)


def kinematic_error(cfg: SimConfig, arm: int, t: float) -> RigidTransform:
    rot_amp, trans_amp, freq = cfg.kinematic_offset
    s = np.sin(2 * np.pi * freq * t + 0.9 * arm)
    direction = np.array([1.0, -0.5, 0.3]) if arm == 0 else np.array([-0.4, 1.0, 0.2])
    direction /= np.linalg.norm(direction)
    return RigidTransform(exp_so3(rot_amp * s * direction), trans_amp * s * direction)


def handeye_at_frame(cfg: SimConfig, i: int) -> RigidTransform:
    base = cfg.gt_handeye
    if isinstance(cfg.drift, LinearTranslation):
        return RigidTransform(base.rotation, base.translation + np.asarray(cfg.drift.velocity) * (i * cfg.dt))
    if isinstance(cfg.drift, StepChange) and i >= cfg.drift.at_frame:
        return cfg.drift.transform
    return base


def generate(cfg: SimConfig, cam: CameraIntrinsics) -> SimOutput:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    sigma = cfg.pixel_noise_sigma
    n = cfg.n_frames
    noise = rng.normal(0.0, sigma, size=(n, 2, 2)) if sigma > 0 else np.zeros((n, 2, 2))
    apply_kin_error = cfg.kinematic_offset[0] != 0 or cfg.kinematic_offset[1] != 0

    frames, truth = [], []
    for i in range(n):
        t = i * cfg.dt
        he = handeye_at_frame(cfg, i)
        ecm_inv = inverse(ecm_pose(cfg, t))
        kin, pix, vis, conf = [], [], [], []
        for arm in range(2):
            true_kin = compose(ecm_inv, psm_pose(cfg, arm, t))
            measured = compose(true_kin, kinematic_error(cfg, arm, t)) if apply_kin_error else true_kin
            point = he.apply(true_kin.translation)
            if point[2] > Z_MIN:
                clean = project_points(cam, point)
                visible = bool(cam.in_image(clean))
                detected = clean + noise[i, arm]
            else:
                visible = False
                detected = np.zeros(2)
            if not visible:
                w = 0.0
            elif sigma > 0:
                w = float(np.clip(1.0 - np.linalg.norm(noise[i, arm]) / (cfg.confidence_scale * sigma),
                                  cfg.confidence_floor, 1.0))
            else:
                w = 1.0
            kin.append(measured)
            pix.append(detected)
            vis.append(visible)
            conf.append(w)
        frames.append(Frame(t, kin[0], kin[1], pix[0], pix[1], conf[0], conf[1], vis[0], vis[1]))
        truth.append(he)

    both = float(np.mean([f.visible1 and f.visible2 for f in frames]))
    if both < 0.5:
        raise FrustumViolation(f"only {both:.0%} of frames see both instruments")
    metadata = {"source": "rcm_handeye.sim", "seed": cfg.seed, "dt": cfg.dt, "n_frames": n}
    times = [f.t for f in frames]
    return SimOutput(
        dataset=Dataset(frames, metadata),
        ground_truth=HandEyeTrajectory(times, truth),
        config=cfg,
        diagnostics={"both_visible_fraction": both,
                     "any_visible_fraction": float(np.mean([f.visible1 or f.visible2 for f in frames]))},
    )


def degenerate_preset() -> SimConfig:
    """ECM rotating about one fixed axis through the RCM (minimal excitation)."""
    return SimConfig(ecm_axis=(1.0, 0.0, 0.0), ecm_amplitude=(0.05, 0.0, 0.0), ecm_frequency=(0.1, 0.0, 0.0))


def ground_truth_at(out: SimOutput, t: float) -> RigidTransform:
    cfg = out.config
    t_end = (cfg.n_frames - 1) * cfg.dt
    if t < 0 or t > t_end + 1e-12:
        raise OutOfRange(f"t={t} outside [0, {t_end}]")
    base = cfg.gt_handeye
    if isinstance(cfg.drift, LinearTranslation):
        return RigidTransform(base.rotation, base.translation + np.asarray(cfg.drift.velocity) * t)
    if isinstance(cfg.drift, StepChange):
        # frame k sits at t = k * dt; tiny tolerance keeps that frame on the new side
        return cfg.drift.transform if t >= cfg.drift.at_frame * cfg.dt - 1e-12 else base
    return base


def with_noise(cfg: SimConfig, sigma: float, seed: Optional[int] = None) -> SimConfig:
    return replace(cfg, pixel_noise_sigma=sigma, seed=cfg.seed if seed is None else seed)
