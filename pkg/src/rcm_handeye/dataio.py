"""
File formats, the re-projection error metric and the miscalibration sweep.

Dataset files are JSON Lines: a header line ``{"metadata": {...}}`` followed
by one frame per line::

    {"t": s, "T_ecm_psm1": [16], "T_ecm_psm2": [16], "p1": [u, v], "p2": [u, v],
     "w1": w, "w2": w, "vis1": bool, "vis2": bool}

Transforms are row-major 4x4. Floats are written with 17 significant digits,
so a write/read cycle reproduces every double bit for bit.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .camera import CameraIntrinsics
from .errors import EmptyDataset, NonOrthonormalRotation, SchemaError
from .geometry import HandEyeParams, RigidTransform, orthonormality_residual, orthonormalize
from .loss import (
    Frame,
    FrameArrays,
    HandEyeHypothesis,
    Window,
    handeye_arrays,
    reprojection_residuals,
)

log = logging.getLogger(__name__)

ORTHO_REJECT = 1e-6
ORTHO_REPAIR = 1e-9

FRAME_KEYS = ("t", "T_ecm_psm1", "T_ecm_psm2", "p1", "p2", "w1", "w2", "vis1", "vis2")


@dataclass
class Dataset:
    frames: List[Frame]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        ts = np.array([f.t for f in self.frames])
        if ts.size > 1 and np.any(np.diff(ts) <= 0):
            raise SchemaError("dataset timestamps must be strictly increasing")
        self._arrays = None

    def __len__(self):
        return len(self.frames)

    @property
    def arrays(self) -> FrameArrays:
        if self._arrays is None:
            self._arrays = FrameArrays.from_frames(self.frames)
        return self._arrays

    @property
    def t_start(self) -> float:
        if not self.frames:
            raise EmptyDataset("dataset has no frames")
        return float(self.frames[0].t)

    def windows(self, window_len: int, stride: Optional[int] = None) -> List[Window]:
        """Consecutive windows. ``stride`` defaults to ``window_len`` (a partition).

        With a partition, a trailing remainder shorter than two frames is
        merged into the previous window.
        """
        if window_len < 2:
            raise ValueError("window_len must be at least 2")
        n = len(self.frames)
        stride = window_len if stride is None else stride
        if stride < 1:
            raise ValueError("stride must be at least 1")
        if stride == window_len:
            bounds = [[s, min(s + window_len, n)] for s in range(0, n, window_len)]
            if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
                tail = bounds.pop()
                bounds[-1][1] = tail[1]
        else:
            last = max(n - window_len, 0)
            bounds = [[s, min(s + window_len, n)] for s in range(0, last + 1, stride)]
        return [Window(self.frames[a:b]) for a, b in bounds]


class HandEyeTrajectory:
    """Timestamped hand-eye samples; lookup returns the nearest sample."""

    def __init__(self, times: Sequence[float], transforms: Sequence[RigidTransform],
                 params: Optional[Sequence[HandEyeParams]] = None):
        if len(times) != len(transforms) or not len(times):
            raise ValueError("trajectory needs matching, non-empty times and transforms")
        self.times = np.asarray(times, dtype=float)
        self.transforms = list(transforms)
        self.params = list(params) if params is not None else None

    def __len__(self):
        return len(self.times)

    def index_at(self, t: float) -> int:
        i = int(np.searchsorted(self.times, t))
        if i == 0:
            return 0
        if i >= len(self.times):
            return len(self.times) - 1
        return i if self.times[i] - t < t - self.times[i - 1] else i - 1

    def at(self, t: float) -> RigidTransform:
        return self.transforms[self.index_at(t)]


HandEyeSource = Union[HandEyeHypothesis, HandEyeTrajectory, RigidTransform]


def handeye_for_frames(he: HandEyeSource, times: np.ndarray, t_ref: float):
    """Per-frame hand-eye rotation (N, 3, 3) and translation (N, 3)."""
    times = np.asarray(times, dtype=float)
    if isinstance(he, HandEyeHypothesis):
        return handeye_arrays(he.to_vector(), times - he.reference_time(t_ref))
    if isinstance(he, RigidTransform):
        n = len(times)
        return np.broadcast_to(he.rotation, (n, 3, 3)), np.broadcast_to(he.translation, (n, 3))
    if isinstance(he, HandEyeTrajectory):
        ts = [he.at(t) for t in times]
        return np.array([x.rotation for x in ts]), np.array([x.translation for x in ts])
    raise TypeError(f"unsupported hand-eye source {type(he).__name__}")


# ---------------------------------------------------------------- serialization

def _num(x: float) -> str:
    x = float(x)
    if not np.isfinite(x):
        raise ValueError("non-finite values cannot be serialised")
    return format(x, ".17g")


def _nums(xs) -> str:
    return "[" + ", ".join(_num(x) for x in np.asarray(xs, dtype=float).reshape(-1)) + "]"


def _frame_line(f: Frame) -> str:
    return (
        "{"
        f'"t": {_num(f.t)}, '
        f'"T_ecm_psm1": {_nums(f.t_ecm_psm1.matrix())}, '
        f'"T_ecm_psm2": {_nums(f.t_ecm_psm2.matrix())}, '
        f'"p1": {_nums(f.p1)}, "p2": {_nums(f.p2)}, '
        f'"w1": {_num(f.w1)}, "w2": {_num(f.w2)}, '
        f'"vis1": {json.dumps(bool(f.visible1))}, "vis2": {json.dumps(bool(f.visible2))}'
        "}"
    )


def write_dataset(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"metadata": ds.metadata}, sort_keys=True) + "\n")
        for f in ds.frames:
            fh.write(_frame_line(f) + "\n")


def _transform_from_list(values, line: int, key: str) -> RigidTransform:
    if not isinstance(values, list) or len(values) != 16:
        raise SchemaError(f"{key} must be a list of 16 numbers", line)
    m = np.array(values, dtype=float).reshape(4, 4)
    if not np.all(np.isfinite(m)):
        raise SchemaError(f"{key} has non-finite entries", line)
    if np.max(np.abs(m[3] - [0, 0, 0, 1])) > ORTHO_REPAIR:
        raise SchemaError(f"{key} bottom row must be (0, 0, 0, 1)", line)
    rot = m[:3, :3]
    resid = orthonormality_residual(rot)
    if resid > ORTHO_REJECT or np.linalg.det(rot) <= 0:
        raise NonOrthonormalRotation(f"{key} rotation is not orthonormal (residual {resid:.3g})", line)
    if resid > ORTHO_REPAIR:
        log.warning("line %d: %s re-orthonormalised (residual %.3g)", line, key, resid)
        rot = orthonormalize(rot)
    return RigidTransform(rot, m[:3, 3])


def _pixel(values, line: int, key: str) -> np.ndarray:
    if not isinstance(values, list) or len(values) != 2:
        raise SchemaError(f"{key} must be [u, v]", line)
    return np.array(values, dtype=float)


def _parse_frame(obj, line: int) -> Frame:
    if not isinstance(obj, dict):
        raise SchemaError("frame must be a JSON object", line)
    keys = set(obj)
    if keys != set(FRAME_KEYS):
        missing = set(FRAME_KEYS) - keys
        extra = keys - set(FRAME_KEYS)
        raise SchemaError(f"bad frame keys (missing {sorted(missing)}, unexpected {sorted(extra)})", line)
    for k in ("vis1", "vis2"):
        if not isinstance(obj[k], bool):
            raise SchemaError(f"{k} must be a boolean", line)
    try:
        return Frame(
            t=float(obj["t"]),
            t_ecm_psm1=_transform_from_list(obj["T_ecm_psm1"], line, "T_ecm_psm1"),
            t_ecm_psm2=_transform_from_list(obj["T_ecm_psm2"], line, "T_ecm_psm2"),
            p1=_pixel(obj["p1"], line, "p1"),
            p2=_pixel(obj["p2"], line, "p2"),
            w1=float(obj["w1"]),
            w2=float(obj["w2"]),
            visible1=obj["vis1"],
            visible2=obj["vis2"],
        )
    except SchemaError as exc:
        if exc.line is None:
            raise SchemaError(str(exc), line) from exc
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), line) from exc


def read_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise SchemaError("missing header line", 1)
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise SchemaError(f"header is not JSON: {exc}", 1) from exc
    if not isinstance(header, dict) or set(header) != {"metadata"} or not isinstance(header["metadata"], dict):
        raise SchemaError('header must be {"metadata": {...}}', 1)
    frames = []
    for i, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            # parse_int=float keeps "-0" as -0.0
            obj = json.loads(text, parse_int=float)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", i) from exc
        frames.append(_parse_frame(obj, i))
    try:
        return Dataset(frames, header["metadata"])
    except SchemaError as exc:
        raise SchemaError(f"{path}: {exc}") from exc


def write_trajectory(traj: HandEyeTrajectory, path) -> None:
    with open(path, "w") as fh:
        for i, (t, x) in enumerate(zip(traj.times, traj.transforms)):
            line = f'{{"t": {_num(t)}, "T_cam_ecm": {_nums(x.matrix())}'
            if traj.params is not None:
                line += f', "params": {_nums(traj.params[i].to_vector())}'
            fh.write(line + "}\n")


def read_trajectory(path) -> HandEyeTrajectory:
    times, transforms, params = [], [], []
    for i, text in enumerate(Path(path).read_text().splitlines(), start=1):
        if not text.strip():
            continue
        try:
            obj = json.loads(text, parse_int=float)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}", i) from exc
        if not isinstance(obj, dict) or not {"t", "T_cam_ecm"} <= set(obj) or set(obj) - {"t", "T_cam_ecm", "params"}:
            raise SchemaError('trajectory line must be {"t", "T_cam_ecm"[, "params"]}', i)
        times.append(float(obj["t"]))
        transforms.append(_transform_from_list(obj["T_cam_ecm"], i, "T_cam_ecm"))
        if "params" in obj:
            params.append(HandEyeParams.from_vector(obj["params"]))
    if not times:
        raise SchemaError("trajectory is empty")
    if np.any(np.diff(times) <= 0):
        raise SchemaError("trajectory timestamps must be strictly increasing")
    return HandEyeTrajectory(times, transforms, params if len(params) == len(times) else None)


def hypothesis_to_dict(hyp: HandEyeHypothesis, t_ref: float) -> dict:
    t0 = hyp.reference_time(t_ref)
    return {
        "mode": "static" if hyp.is_static else "linear",
        "t0": t0,
        "base": hyp.base.to_vector().tolist(),
        "drift_rate": None if hyp.is_static else hyp.drift_rate.tolist(),
        "T_cam_ecm": hyp.transform_at(t0, t0).matrix().reshape(-1).tolist(),
    }


def hypothesis_from_dict(d: dict) -> HandEyeHypothesis:
    try:
        base = HandEyeParams.from_vector(d["base"])
        drift = d.get("drift_rate")
        return HandEyeHypothesis(base, None if drift is None else np.asarray(drift, dtype=float), d.get("t0"))
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"bad estimate object: {exc}") from exc


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_handeye(path) -> HandEyeSource:
    """A hand-eye from a results JSON (``estimate`` key) or a trajectory JSONL."""
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        return read_trajectory(path)
    if isinstance(obj, dict) and "estimate" in obj:
        return hypothesis_from_dict(obj["estimate"])
    if isinstance(obj, dict) and "T_cam_ecm" in obj:
        return read_trajectory(path)
    raise SchemaError(f"{path}: no hand-eye estimate found")


# ---------------------------------------------------------------- evaluation

@dataclass
class ArmStats:
    mean: float
    std: float
    median: float
    max: float
    count: int
    skipped: int

    @classmethod
    def from_residuals(cls, r: np.ndarray, skipped: int) -> "ArmStats":
        if r.size == 0:
            nan = float("nan")
            return cls(nan, nan, nan, nan, 0, skipped)
        return cls(float(r.mean()), float(r.std()), float(np.median(r)), float(r.max()), int(r.size), skipped)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ReprojStats:
    psm1: ArmStats
    psm2: ArmStats
    pooled: ArmStats

    def to_dict(self) -> dict:
        return {"psm1": self.psm1.to_dict(), "psm2": self.psm2.to_dict(), "pooled": self.pooled.to_dict()}


def residual_norms(ds: Dataset, he: HandEyeSource, cam: CameraIntrinsics, offsets=None):
    if len(ds) == 0:
        raise EmptyDataset("dataset has no frames")
    arr = ds.arrays
    rot, trans = handeye_for_frames(he, arr.t, ds.t_start)
    return reprojection_residuals(arr, rot, trans, cam, offsets)


def evaluate(ds: Dataset, he: HandEyeSource, cam: CameraIntrinsics, offsets=None) -> ReprojStats:
    """Unweighted pixel re-projection error statistics per arm and pooled.

    Confidence weights play no part here; they belong to the loss.
    """
    norms, mask = residual_norms(ds, he, cam, offsets)
    arms = [ArmStats.from_residuals(norms[:, j][mask[:, j]], int((~mask[:, j]).sum())) for j in range(2)]
    pooled = ArmStats.from_residuals(norms[mask], int((~mask).sum()))
    return ReprojStats(arms[0], arms[1], pooled)


AXES = {"x": np.array([1.0, 0.0, 0.0]), "y": np.array([0.0, 1.0, 0.0]), "z": np.array([0.0, 0.0, 1.0])}


@dataclass
class SweepRow:
    magnitude_mm: float
    direction: str
    min_px: float
    mean_px: float
    max_px: float


@dataclass
class SweepReport:
    rows: List[SweepRow]
    notes: dict = field(default_factory=dict)

    def directions(self) -> List[str]:
        return list(dict.fromkeys(r.direction for r in self.rows))

    def series(self, direction: str) -> List[SweepRow]:
        return sorted((r for r in self.rows if r.direction == direction), key=lambda r: r.magnitude_mm)

    def is_monotone(self) -> bool:
        for d in self.directions():
            means = [r.mean_px for r in self.series(d)]
            if any(b < a for a, b in zip(means, means[1:])):
                return False
        return True

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["magnitude_mm", "direction", "min_px", "mean_px", "max_px"])
        for r in self.rows:
            w.writerow([_num(r.magnitude_mm), r.direction, _num(r.min_px), _num(r.mean_px), _num(r.max_px)])
        return buf.getvalue()


def sensitivity_sweep(ds: Dataset, gt: HandEyeSource, cam: CameraIntrinsics,
                      magnitudes_mm: Iterable[float], directions: Sequence[str] = ("x", "y", "z"),
                      offsets=None) -> SweepReport:
    """Re-projection error caused by shifting the true hand-eye translation.

    Each direction gets a zero-magnitude control row followed by the requested
    magnitudes. Shifts are along the camera-frame axes.
    """
    mags = [float(m) for m in magnitudes_mm]
    if any(not m > 0 for m in mags):
        raise ValueError("sweep magnitudes must be positive")
    if len(ds) == 0:
        raise EmptyDataset("dataset has no frames")
    arr = ds.arrays
    rot, trans = handeye_for_frames(gt, arr.t, ds.t_start)
    rows = []
    for name in directions:
        axis = AXES[name] if isinstance(name, str) else np.asarray(name, dtype=float)
        axis = axis / np.linalg.norm(axis)
        for mag in [0.0] + mags:
            norms, mask = reprojection_residuals(arr, rot, trans + axis * mag * 1e-3, cam, offsets)
            used = norms[mask]
            if used.size == 0:
                raise EmptyDataset("no visible keypoints to evaluate")
            rows.append(SweepRow(mag, str(name), float(used.min()), float(used.mean()), float(used.max())))
    pts = np.einsum("nij,naj->nai", rot, arr.kin_t) + trans[:, None]
    depth = pts[..., 2][arr.vis]
    notes = {
        "depth_min_m": float(depth.min()) if depth.size else float("nan"),
        "depth_max_m": float(depth.max()) if depth.size else float("nan"),
        "comment": "pixel error of a fixed shift grows as the tools get closer to the camera",
    }
    return SweepReport(rows, notes)
