"""
Command-line entry point: simulate, calibrate, evaluate, gradcheck, sweep, online.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every subcommand
except ``simulate`` accepts ``--config FILE``, a JSON object of flag values
that explicit command-line flags override.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import dataio, sim
from .camera import CameraIntrinsics, laparoscope_default
from .errors import HandEyeError
from .geometry import HandEyeParams, RigidTransform
from .grad import FD_STEP, FD_TOLERANCE, gradient_check
from .loss import HandEyeHypothesis, LossOptions, LossWeights
from .optim import AdamConfig, DriftMode, calibrate, calibrate_online, default_init

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _weights(text: str) -> LossWeights:
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("weights must be three numbers c1,c2,c3")
    try:
        return LossWeights(*vals)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc))


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {n}")
    return n


def _add_common(p):
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--cam", help="intrinsics JSON (default: 800 px laparoscope, 640x360)")
    p.add_argument("--config", help="JSON object of flag values; explicit flags win")


def _add_optimizer(p, window_default: int):
    p.add_argument("--drift", choices=[m.value for m in DriftMode], default="static")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--decay-factor", type=float, default=0.75)
    p.add_argument("--decay-every", type=_positive_int, default=10)
    p.add_argument("--weights", type=_weights, default=LossWeights(), help="c1,c2,c3")
    p.add_argument("--window", type=_positive_int, default=window_default)
    p.add_argument("--squared", action="store_true", help="use squared residual norms")
    p.add_argument("--init", help="initial hand-eye: results JSON, trajectory JSONL or 4x4 matrix JSON")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rcm-handeye", description=__doc__.strip().splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="generate a synthetic dataset and its ground truth")
    p.add_argument("--config", help="simulator config JSON (default: built-in scene)")
    p.add_argument("--cam", help="intrinsics JSON")
    p.add_argument("--out", required=True, help="dataset JSONL to write")
    p.add_argument("--gt", required=True, help="ground-truth trajectory JSONL to write")
    p.add_argument("--seed", type=int, help="overrides the config seed")

    p = sub.add_parser("calibrate", help="fit the hand-eye to a whole dataset")
    _add_common(p)
    _add_optimizer(p, 32)
    p.add_argument("--no-gradcheck", action="store_true", help="skip the final gradient check")
    p.add_argument("--out", required=True, help="results JSON")

    p = sub.add_parser("evaluate", help="re-projection error statistics for a hand-eye")
    _add_common(p)
    p.add_argument("--handeye", required=True, help="results JSON or trajectory JSONL")
    p.add_argument("--out", help="stats JSON (default: stdout)")

    p = sub.add_parser("gradcheck", help="certify the analytic gradient on random states")
    _add_common(p)
    p.add_argument("--samples", type=_positive_int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", type=_positive_int, default=32)
    p.add_argument("--weights", type=_weights, default=LossWeights(), help="c1,c2,c3")
    p.add_argument("--squared", action="store_true")
    p.add_argument("--handeye", help="perturb around this estimate instead of the default init")
    p.add_argument("--out", help="report JSON (default: stdout)")

    p = sub.add_parser("sweep", help="pixel error caused by shifting the true translation")
    _add_common(p)
    p.add_argument("--gt", required=True, help="ground-truth trajectory JSONL or results JSON")
    p.add_argument("--mm", type=_floats, default=[1.0, 2.0, 3.0], help="magnitudes in mm")
    p.add_argument("--directions", default="x,y,z", help="subset of x,y,z")
    p.add_argument("--out", help="CSV (default: stdout)")

    p = sub.add_parser("online", help="sliding-window calibration emitting a trajectory")
    _add_common(p)
    _add_optimizer(p, 32)
    p.add_argument("--stride", type=_positive_int, default=8)
    p.add_argument("--out", required=True, help="trajectory JSONL")
    return parser


def _config_path(argv: Sequence[str]) -> Optional[str]:
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if a.startswith("--config="):
            return a.split("=", 1)[1]
    return None


def _apply_config_file(sp: argparse.ArgumentParser, path: str) -> None:
    """Turn the JSON object at ``path`` into defaults of subcommand parser ``sp``."""
    try:
        overrides = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read --config {path}: {exc}")
    if not isinstance(overrides, dict):
        raise UsageError("--config must hold a JSON object")
    actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, value in overrides.items():
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"unknown key {key!r} in --config")
        action = actions[dest]
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        if action.type is not None and isinstance(value, (str, int, float)) and not isinstance(value, bool):
            try:
                value = action.type(str(value))
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"bad value for {key!r} in --config: {exc}")
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{key!r} must be one of {list(action.choices)}")
        # a required flag may be supplied by the file instead
        action.required = False
        defaults[dest] = value
    sp.set_defaults(**defaults)


def _camera(path: Optional[str]) -> CameraIntrinsics:
    return laparoscope_default() if path is None else CameraIntrinsics.load(path)


def _adam(args) -> AdamConfig:
    try:
        return AdamConfig(lr0=args.lr, epochs=args.epochs, decay_factor=args.decay_factor,
                          decay_every=args.decay_every)
    except ValueError as exc:
        raise UsageError(str(exc))


def _load_init(path: Optional[str], t_start: float):
    if path is None:
        return None
    text = Path(path).read_text()
    try:
        obj = json.loads(text)
    except json.JSONDecodeError:
        obj = None
    if isinstance(obj, list):
        return HandEyeParams.from_transform(RigidTransform.from_matrix(obj))
    src = dataio.read_handeye(path)
    if isinstance(src, HandEyeHypothesis):
        return src.to_vector()
    return HandEyeParams.from_transform(src.at(t_start))


def _emit(text: str, out: Optional[str]):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def cmd_simulate(args) -> int:
    cfg = sim.SimConfig()
    if args.config:
        cfg = sim.SimConfig.from_dict(json.loads(Path(args.config).read_text()))
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    out = sim.generate(cfg, _camera(args.cam))
    meta = dict(out.dataset.metadata, config=cfg.to_dict())
    dataio.write_dataset(dataio.Dataset(out.dataset.frames, meta), args.out)
    dataio.write_trajectory(out.ground_truth, args.gt)
    print(json.dumps({"frames": len(out.dataset), **out.diagnostics}, sort_keys=True))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    adam = _adam(args)
    ds = dataio.read_dataset(args.data)
    cam = _camera(args.cam)
    opts = LossOptions(squared_norm=args.squared)
    res = calibrate(ds, cam, adam, args.weights, DriftMode(args.drift),
                    _load_init(args.init, ds.t_start), args.window, opts,
                    check_gradient=not args.no_gradcheck)
    report = res.to_dict(ds.t_start)
    report["settings"] = {
        "drift": args.drift, "epochs": args.epochs, "lr": args.lr,
        "decay_factor": args.decay_factor, "decay_every": args.decay_every,
        "weights": [args.weights.c1, args.weights.c2, args.weights.c3],
        "window": args.window, "squared": args.squared,
    }
    converged = res.zero_gradient or res.final_loss.total == 0.0
    report["converged_immediately"] = converged
    dataio.write_json(report, args.out)
    print(json.dumps({"initial_total": res.initial_loss.total, "final_total": res.final_loss.total,
                      "pooled_mean_px": res.stats.pooled.mean, "zero_gradient": res.zero_gradient},
                     sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ds = dataio.read_dataset(args.data)
    stats = dataio.evaluate(ds, dataio.read_handeye(args.handeye), _camera(args.cam))
    _emit(json.dumps(stats.to_dict(), indent=2, sort_keys=True) + "\n", args.out)
    return EXIT_OK


def _random_state(rng: np.random.Generator, centre: np.ndarray, drift: bool) -> np.ndarray:
    x = centre[:9].copy()
    x[:6] += rng.normal(0.0, 0.05, 6)
    x[6:9] += rng.normal(0.0, 0.003, 3)
    if drift:
        rate = np.concatenate([rng.normal(0.0, 0.01, 6), rng.normal(0.0, 0.001, 3)])
        x = np.concatenate([x, rate])
    return x


def cmd_gradcheck(args) -> int:
    ds = dataio.read_dataset(args.data)
    cam = _camera(args.cam)
    opts = LossOptions(squared_norm=args.squared)
    windows = ds.windows(args.window)
    if args.handeye:
        src = dataio.read_handeye(args.handeye)
        centre = (src.to_vector() if isinstance(src, HandEyeHypothesis)
                  else HandEyeParams.from_transform(src.at(ds.t_start)).to_vector())
    else:
        centre = default_init()
    rng = np.random.default_rng(args.seed)
    results, refused = [], 0
    for k in range(args.samples):
        drift = k % 2 == 1
        for _ in range(100):
            win = windows[int(rng.integers(len(windows)))]
            x = _random_state(rng, centre, drift)
            try:
                rep = gradient_check(win, x, cam, args.weights, opts)
            except HandEyeError:
                refused += 1
                continue
            if rep.passed is not None:
                break
            refused += 1
        else:
            raise RuntimeError("could not draw a differentiable state in 100 attempts")
        results.append({"sample": k, "drift": drift, "t_start": win.t_start,
                        "max_rel_error": rep.max_rel_error, "passed": rep.passed})
    worst = max(r["max_rel_error"] for r in results)
    failed = [r["sample"] for r in results if not r["passed"]]
    summary = {"samples": len(results), "failed": failed, "max_rel_error": worst,
               "redrawn": refused, "step": FD_STEP, "tolerance": FD_TOLERANCE, "results": results}
    _emit(json.dumps(summary, indent=2, sort_keys=True) + "\n", args.out)
    status = "FAIL" if failed else "PASS"
    print(f"gradcheck {status}: {len(results) - len(failed)}/{len(results)} states, "
          f"max rel err {worst:.3e}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_sweep(args) -> int:
    directions = [d.strip() for d in args.directions.split(",") if d.strip()]
    bad = [d for d in directions if d not in dataio.AXES]
    if bad or not directions:
        raise UsageError(f"directions must be drawn from x,y,z, got {args.directions!r}")
    ds = dataio.read_dataset(args.data)
    report = dataio.sensitivity_sweep(ds, dataio.read_handeye(args.gt), _camera(args.cam),
                                      args.mm, directions)
    _emit(report.to_csv(), args.out)
    return EXIT_OK


def cmd_online(args) -> int:
    adam = _adam(args)
    ds = dataio.read_dataset(args.data)
    opts = LossOptions(squared_norm=args.squared)
    traj = calibrate_online(ds, args.window, args.stride, adam, args.weights,
                            _camera(args.cam), DriftMode(args.drift),
                            _load_init(args.init, ds.t_start), opts)
    dataio.write_trajectory(traj, args.out)
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
    "gradcheck": cmd_gradcheck,
    "sweep": cmd_sweep,
    "online": cmd_online,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        cmd = next((a for a in argv if a in COMMANDS), None)
        path = _config_path(argv)
        if cmd not in (None, "simulate") and path is not None:
            _apply_config_file(subparsers.choices[cmd], path)
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        cmd = next((a for a in argv if a in COMMANDS), None)
        (subparsers.choices[cmd] if cmd else parser).print_help(sys.stderr)
        return EXIT_USAGE
    except HandEyeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())
