"""Acceptance criteria, one test per criterion.

Each test records a single PASS/FAIL line; the lines are printed in the
pytest terminal summary (and to stdout when run with ``-s``).
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from rcm_handeye import cli, sim
from rcm_handeye.camera import laparoscope_default
from rcm_handeye.dataio import evaluate, sensitivity_sweep
from rcm_handeye.geometry import (
    RigidTransform,
    Rotation6D,
    TransformRate,
    compose,
    exp_so3,
    finite_diff_rate,
    geodesic_angle,
    gram_schmidt_6d,
    product_rule_rate,
    rotation_to_6d,
    skew,
)
from rcm_handeye.grad import gradient_check
from rcm_handeye.loss import (
    HandEyeHypothesis,
    Window,
    diff_loss,
    reprojection_loss,
    total_loss,
    z_axis_loss,
)
from rcm_handeye.optim import AdamConfig, DriftMode, calibrate

# faster schedule than the library defaults; see README for why
RECOVERY = AdamConfig(lr0=3e-3, epochs=150, decay_every=10, decay_factor=0.6)
DRIFT_FIT = AdamConfig(lr0=3e-3, epochs=300, decay_every=20, decay_factor=0.6)


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def cam():
    return laparoscope_default()


def test_1_gradient_certification(cam):
    start = time.perf_counter()
    noisy = sim.generate(sim.SimConfig(pixel_noise_sigma=1.0, seed=21), cam)
    windows = noisy.dataset.windows(32)
    rng = np.random.default_rng(2024)
    centre = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.05])
    errors, refused, drift_count = [], 0, 0
    while len(errors) < 100:
        drift = len(errors) % 2 == 1
        x = centre + np.r_[rng.normal(0, 0.1, 6), rng.normal(0, 0.005, 3)]
        if drift:
            x = np.r_[x, rng.normal(0, 0.02, 6), rng.normal(0, 0.002, 3)]
        win = windows[int(rng.integers(len(windows)))]
        rep = gradient_check(win, x, cam)
        if rep.passed is None:
            refused += 1
            continue
        errors.append(rep.max_rel_error)
        drift_count += drift
    elapsed = time.perf_counter() - start
    worst = max(errors)
    ok = worst < 1e-5 and elapsed < 30 and drift_count == 50
    record(1, "gradient check on 100 states", ok,
           f"max rel err {worst:.2e} (< 1e-5), {drift_count} with drift, {refused} redrawn, {elapsed:.1f} s (< 30 s)")


def test_2_rotation_construction():
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_orth = worst_det = worst_trip = 0.0
    n = 0
    while n < 10_000:
        u, v = rng.normal(size=3) * rng.uniform(0.01, 10), rng.normal(size=3) * rng.uniform(0.01, 10)
        rx = u / np.linalg.norm(u)
        if np.linalg.norm(v - (rx @ v) * rx) < 1e-6:
            continue
        r = gram_schmidt_6d(Rotation6D(u, v))
        worst_orth = max(worst_orth, np.linalg.norm(r.T @ r - np.eye(3)))
        worst_det = max(worst_det, abs(np.linalg.det(r) - 1.0))
        worst_trip = max(worst_trip, np.max(np.abs(gram_schmidt_6d(rotation_to_6d(r)) - r)))
        n += 1
    elapsed = time.perf_counter() - start
    ok = worst_orth < 1e-10 and worst_det < 1e-10 and worst_trip < 1e-12 and elapsed < 5
    record(2, "6D rotation construction on 10,000 inputs", ok,
           f"|R^T R - I| {worst_orth:.1e}, |det-1| {worst_det:.1e}, round trip {worst_trip:.1e}, {elapsed:.2f} s (< 5 s)")


def _scripted(t):
    """Analytic hand-eye and kinematics with their exact time derivatives."""
    w_he, w_kin = np.array([0.3, -0.2, 0.5]), np.array([-1.1, 0.7, 0.4])
    r0_he, r0_kin = exp_so3([0.1, 0.2, -0.3]), exp_so3([0.5, -0.4, 0.2])
    r_he = exp_so3(w_he * t) @ r0_he
    t_he = np.array([0.01 * t, 0.02 * np.sin(t), 0.05 + 0.003 * t * t])
    r_kin = exp_so3(w_kin * t) @ r0_kin
    t_kin = np.array([0.03 * np.cos(2 * t), -0.01 * t, 0.1 + 0.02 * np.sin(3 * t)])
    he = RigidTransform(r_he, t_he)
    kin = RigidTransform(r_kin, t_kin)
    he_rate = TransformRate(skew(w_he) @ r_he, [0.01, 0.02 * np.cos(t), 0.006 * t])
    kin_rate = TransformRate(skew(w_kin) @ r_kin, [-0.06 * np.sin(2 * t), -0.01, 0.06 * np.cos(3 * t)])
    return he, he_rate, kin, kin_rate


def test_3_product_rule_convergence():
    t = 0.7
    he, he_rate, kin, kin_rate = _scripted(t)
    analytic = product_rule_rate(he, he_rate, kin, kin_rate).block()
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        a, b = _scripted(t - dt), _scripted(t + dt)
        numeric = finite_diff_rate(compose(a[0], a[2]), compose(b[0], b[2]), 2 * dt).block()
        errs.append(np.max(np.abs(numeric - analytic)))
    orders = [np.log2(errs[0] / errs[1]), np.log2(errs[1] / errs[2])]
    ok = min(orders) >= 1.9
    record(3, "product-rule rate vs central differences", ok,
           f"errors {', '.join(f'{e:.2e}' for e in errs)}, observed orders {orders[0]:.3f}, {orders[1]:.3f} (>= 1.9)")


def test_4_noiseless_recovery(cam):
    start = time.perf_counter()
    out = sim.generate(sim.SimConfig(), cam)
    res = calibrate(out.dataset, cam, RECOVERY, window_len=16, check_gradient=False)
    elapsed = time.perf_counter() - start
    est = res.estimate.transform_at(0.0)
    gt = out.config.gt_handeye
    rot_deg = np.degrees(geodesic_angle(est.rotation, gt.rotation))
    trans_mm = 1e3 * np.linalg.norm(est.translation - gt.translation)
    ratio = res.final_loss.total / res.initial_loss.total
    ok = rot_deg < 0.5 and trans_mm < 0.5 and ratio < 1e-3 and elapsed < 120
    record(4, "noiseless recovery", ok,
           f"rotation {rot_deg:.2e} deg (< 0.5), translation {trans_mm:.2e} mm (< 0.5), "
           f"loss ratio {ratio:.1e} (< 1e-3), {elapsed:.1f} s (< 120 s)")


def test_5_drift_superiority(cam):
    base = sim.SimConfig()
    velocity = (0.002 / ((base.n_frames - 1) * base.dt), 0.0, 0.0)
    wins, parts = 0, []
    for seed in range(5):
        out = sim.generate(replace(base, drift=sim.LinearTranslation(velocity), pixel_noise_sigma=1.0, seed=seed), cam)
        means = {}
        for mode in (DriftMode.STATIC, DriftMode.LINEAR):
            res = calibrate(out.dataset, cam, DRIFT_FIT, drift=mode, window_len=16, check_gradient=False)
            means[mode] = res.stats.pooled.mean
        wins += means[DriftMode.LINEAR] < means[DriftMode.STATIC]
        parts.append(f"{means[DriftMode.STATIC]:.3f}/{means[DriftMode.LINEAR]:.3f}")
    record(5, "linear drift beats static on 2 mm drift", wins == 5,
           f"{wins}/5 seeds, static/linear pooled mean px: {' '.join(parts)}")


def test_6_sensitivity_band(cam):
    out = sim.generate(sim.SimConfig(), cam)
    ds, gt = out.dataset, out.config.gt_handeye
    depth = np.array([gt.apply(k)[2] for k in ds.arrays.kin_t.reshape(-1, 3)])
    rep = sensitivity_sweep(ds, out.ground_truth, cam, [1.0, 2.0, 3.0], ("x", "y", "z"))
    checks, details = [], []
    for d in ("x", "y"):
        rows = rep.series(d)[1:]
        means = np.array([r.mean_px for r in rows])
        # zero distortion: a lateral shift of delta moves every pixel by f * delta / Z
        focal = cam.fx if d == "x" else cam.fy
        oracle = np.array([np.mean(focal * m * 1e-3 / depth) for m in (1.0, 2.0, 3.0)])
        checks += [np.all((means >= 5) & (means <= 60)), np.all(np.diff(means) > 0),
                   np.allclose(means, oracle, rtol=1e-9)]
        details.append(f"{d}: " + ", ".join(f"{m:.2f}" for m in means))
    z_means = [r.mean_px for r in rep.series("z")]
    checks.append(np.all(np.diff(z_means) > 0))
    ok = all(checks) and 0.05 <= depth.min() and depth.max() <= 0.15
    record(6, "sensitivity sweep 1-3 mm", ok,
           f"mean px {'; '.join(details)} (band [5, 60], matches f*d/Z oracle), "
           f"depth {1e3 * depth.min():.0f}-{1e3 * depth.max():.0f} mm, z monotone "
           f"({', '.join(f'{m:.2f}' for m in z_means[1:])} px)")


def test_7_noise_floor(cam):
    out = sim.generate(sim.SimConfig(n_frames=1000, pixel_noise_sigma=1.0, seed=5), cam)
    stats = evaluate(out.dataset, out.ground_truth, cam)
    expected = np.sqrt(np.pi / 2)
    rel = abs(stats.pooled.mean - expected) / expected
    ok = rel < 0.05 and stats.pooled.count >= 1000
    record(7, "noise floor at ground truth", ok,
           f"mean {stats.pooled.mean:.4f} px vs sqrt(pi/2) = {expected:.4f} ({100 * rel:.2f}% < 5%), "
           f"{stats.pooled.count} residuals")


def test_8_determinism(tmp_path):
    blobs = []
    for k in range(2):
        d = tmp_path / f"run{k}"
        d.mkdir()
        files = {n: str(d / n) for n in ("data.jsonl", "gt.jsonl", "result.json", "stats.json")}
        codes = [
            cli.run(["simulate", "--out", files["data.jsonl"], "--gt", files["gt.jsonl"], "--seed", "42"]),
            cli.run(["calibrate", "--data", files["data.jsonl"], "--out", files["result.json"],
                     "--drift", "linear", "--epochs", "20", "--lr", "1e-3"]),
            cli.run(["evaluate", "--data", files["data.jsonl"], "--handeye", files["result.json"],
                     "--out", files["stats.json"]]),
        ]
        assert codes == [0, 0, 0]
        blobs.append({n: open(p, "rb").read() for n, p in files.items()})
    same = [n for n in blobs[0] if blobs[0][n] == blobs[1][n]]
    record(8, "bit-identical reruns", len(same) == 4, f"{len(same)}/4 output files identical")


def test_9_loss_identities(cam):
    out = sim.generate(sim.SimConfig(n_frames=40, pixel_noise_sigma=1.0, seed=9), cam)
    win = Window(out.dataset.frames)
    x = np.array([1.0, 0.05, -0.02, -0.03, 1.0, 0.1, 0.002, 0.001, 0.015])
    hyp = HandEyeHypothesis.from_vector(x)
    b = total_loss(win, hyp, cam)
    identity_err = abs(b.total - (100 * b.l_z + 1.0 * b.l_proj + 0.75 * b.l_diff))

    doubled = Window([replace(f, w1=f.w1 / 2, w2=f.w2 / 2) for f in out.dataset.frames])
    linear = (reprojection_loss(win, hyp, cam)[0] == 2 * reprojection_loss(doubled, hyp, cam)[0]
              and diff_loss(win, hyp, cam)[0] == 2 * diff_loss(doubled, hyp, cam)[0])

    rng = np.random.default_rng(3)
    aligned = max(z_axis_loss(exp_so3([0.0, 0.0, a])) for a in rng.uniform(-np.pi, np.pi, 100))
    tilted = min(z_axis_loss(exp_so3(w)) for w in rng.normal(0, 1, (100, 3)) if np.linalg.norm(w[:2]) > 1e-3)
    small = z_axis_loss(exp_so3([1e-7, 0.0, 0.0]) @ exp_so3([0.0, 0.0, 0.3]))
    ok = identity_err <= 1e-12 and linear and aligned < 1e-12 and tilted > 0 and abs(small - 1e-7) < 1e-12
    record(9, "loss identities", ok,
           f"breakdown identity err {identity_err:.1e} (<= 1e-12), weight linearity exact: {linear}, "
           f"L_z aligned max {aligned:.1e}, tilted min {tilted:.1e}, 1e-7 tilt -> {small:.3e}")
