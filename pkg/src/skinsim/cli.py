"""Command-line interface.

Subcommands cover the full pipeline: training the weight and Jacobian
networks, sampling cubature points, simulating scenes, fitting material
parameters to observed trajectories, predicting future frames, scoring
predictions, and exporting advected Gaussian sets.

Exit codes: 0 success, 1 invalid input, 2 numerical failure (solver or
training divergence).  All commands are deterministic for a fixed seed.
The V2S_THREADS environment variable caps the worker count of the
numerical backends.
"""

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import build_reduced_system, simulate, z_from_positions
from .errors import InputError, NumericalError
from .fields import (
    JacobianTrainConfig,
    LbsTrainConfig,
    train_lbs_datafree,
    train_neural_jacobian,
)
from .gaussians import advect, deformed_to_set, load_gaussians, save_gaussians
from .geometry import farthest_point_sample
from .identify import (
    FitConfig,
    FitResult,
    evaluate,
    fit_parameters,
    predict_future,
)
from .neural import load_model, save_model
from .scene import load_scene
from .seeding import CUBATURE, derive_seed
from .trajectory import load_trajectory, save_trajectory

FIT_RESULT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["E", "nu", "loss_history", "iterations", "estimator"],
    "properties": {
        "E": {"type": "number"},
        "nu": {"type": "number"},
        "loss_history": {"type": "array", "items": {"type": "number"}},
        "iterations": {"type": "integer"},
        "estimator": {"type": "string"},
    },
}

_thread_limiter = None  # keeps the pool cap alive for the process


class _Parser(argparse.ArgumentParser):
    """argparse variant that reports usage problems as InputError so
    the exit-code contract (1 = bad input) holds."""

    def error(self, message):
        raise InputError(message)


def _apply_thread_cap():
    global _thread_limiter
    raw = os.environ.get("V2S_THREADS")
    if raw is None:
        return
    try:
        count = int(raw)
    except ValueError:
        raise InputError(f"V2S_THREADS must be a positive integer, "
                         f"got {raw!r}")
    if count < 1:
        raise InputError(f"V2S_THREADS must be a positive integer, "
                         f"got {raw!r}")
    import threadpoolctl

    _thread_limiter = threadpoolctl.threadpool_limits(limits=count)


def _hidden_widths(text):
    try:
        widths = tuple(int(tok) for tok in text.split(","))
    except ValueError:
        raise InputError(f"--hidden expects comma-separated integers, "
                         f"got {text!r}")
    if not widths or any(w < 1 for w in widths):
        raise InputError(f"--hidden widths must be positive, got {text!r}")
    return widths


def _scene_seed(args, scene):
    return scene.seed if args.seed is None else args.seed


def cmd_train_lbs(args):
    scene = load_scene(args.scene)
    config = LbsTrainConfig(
        n_handles=scene.n_handles,
        iterations=args.iterations,
        batch_size=args.batch,
        learning_rate=args.lr,
        seed=_scene_seed(args, scene),
    )
    model, history = train_lbs_datafree(scene.points, scene.material, config)
    save_model(args.out, model)
    print(f"final training loss: {history[-1]:.6e}")
    print(f"wrote {args.out}")
    return 0


def cmd_train_jacobian(args):
    scene = load_scene(args.scene)
    lbs_model = load_model(args.lbs)
    config = JacobianTrainConfig(
        iterations=args.iterations,
        batch_points=args.batch_points,
        z_samples=args.z_samples,
        eval_every=args.eval_every,
        target_mse=args.target_mse,
        hidden=args.hidden,
        pe_levels=args.pe_levels,
        seed=_scene_seed(args, scene),
    )
    model, info = train_neural_jacobian(lbs_model, scene.points, config)
    save_model(args.out, model)
    print(f"final training loss: {info.loss_history[-1]:.6e}")
    print(f"holdout mse: {info.holdout_mse:.6e} after {info.iterations} "
          f"iterations"
          + (" (stopped early)" if info.stopped_early else ""))
    print(f"wrote {args.out}")
    return 0


def cmd_sample_cubature(args):
    scene = load_scene(args.scene)
    count = scene.n_cubature if args.count is None else args.count
    seed = _scene_seed(args, scene)
    cubature = farthest_point_sample(
        scene.points, count, derive_seed(seed, CUBATURE)
    )
    doc = {
        "count": int(count),
        "seed": int(seed),
        "indices": cubature.indices.tolist(),
        "weights": cubature.weights.tolist(),
    }
    with open(args.out, "w") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    print(f"sampled {count} cubature points")
    print(f"wrote {args.out}")
    return 0


def cmd_simulate(args):
    scene = load_scene(args.scene)
    if args.frames is not None:
        scene = replace(scene, frames=args.frames)
    if args.seed is not None:
        scene = replace(scene, seed=args.seed)
    lbs_model = load_model(args.lbs)
    jacobian_model = None
    mode = "exact"
    if args.jacobian is not None and not args.exact_jacobian:
        jacobian_model = load_model(args.jacobian)
        mode = "neural"
    result = simulate(scene, lbs_model, jacobian_model=jacobian_model,
                      jacobian_mode=mode)
    save_trajectory(result.trajectory, args.out)
    for frame in range(1, scene.frames):
        print(f"frame {frame}: {result.newton_iterations[frame]} newton "
              f"iterations, {result.frame_seconds[frame]:.4f} s")
    print(f"total: {scene.frames} frames, {result.wall_seconds:.4f} s "
          f"({mode} jacobian)")
    print(f"wrote {args.out}")
    return 0


def cmd_fit(args):
    scene = load_scene(args.scene)
    observed = load_trajectory(args.observed)
    lbs_model = load_model(args.lbs)
    jacobian_model = None
    mode = "exact"
    if args.jacobian is not None:
        jacobian_model = load_model(args.jacobian)
        mode = "neural"
    if (args.init_e is None) != (args.init_nu is None):
        raise InputError("--init-e and --init-nu must be given together")
    init = None if args.init_e is None else (args.init_e, args.init_nu)
    config = FitConfig(
        iterations=args.iterations,
        window=args.window,
        observed_frames=args.frames,
        estimator=args.estimator,
        seed=_scene_seed(args, scene),
        finetune_networks=args.finetune,
        jacobian_mode=mode,
    )
    result = fit_parameters(scene, observed, config, init=init,
                            lbs_model=lbs_model,
                            jacobian_model=jacobian_model)
    result.save_json(args.out)
    print(f"E = {result.E:.6e}  nu = {result.nu:.4f}")
    print(f"final loss: {result.loss_history[-1]:.6e} "
          f"({result.iterations} iterations, {result.wall_seconds:.1f} s)")
    print(f"wrote {args.out}")
    return 0


def _load_fit(path, lbs_model, jacobian_model):
    try:
        with open(path, "r") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read fit result {path}: {exc}")
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not valid JSON ({exc})")
    try:
        jsonschema.validate(doc, FIT_RESULT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise InputError(f"{path}: invalid fit result: {exc.message}")
    return FitResult(
        E=doc["E"],
        nu=doc["nu"],
        loss_history=doc["loss_history"],
        iterations=doc["iterations"],
        wall_seconds=0.0,
        estimator=doc["estimator"],
        lbs_model=lbs_model,
        jacobian_model=jacobian_model,
    )


def cmd_predict(args):
    scene = load_scene(args.scene)
    observed = load_trajectory(args.observed)
    lbs_model = load_model(args.lbs)
    jacobian_model = (None if args.jacobian is None
                      else load_model(args.jacobian))
    fitted = _load_fit(args.fitted, lbs_model, jacobian_model)
    state_at = (observed.n_frames - 1 if args.state_at is None
                else args.state_at)
    pred = predict_future(scene, observed, fitted, state_at, args.horizon)
    save_trajectory(pred, args.out)
    print(f"predicted {args.horizon} frames from frame {state_at}")
    print(f"wrote {args.out}")
    return 0


def cmd_eval(args):
    pred = load_trajectory(args.pred)
    ref = load_trajectory(args.ref)
    metrics = evaluate(pred, ref, e_hat=args.e_hat, e_true=args.e_true,
                       nu_hat=args.nu_hat, nu_true=args.nu_true)
    print(json.dumps(metrics, indent=2))
    return 0


def cmd_export_gaussians(args):
    scene = load_scene(args.scene)
    path = args.gaussians
    if path is None:
        if scene.gaussians_path is None:
            raise InputError(
                "no Gaussian set: pass --gaussians or set the scene's "
                "gaussians entry"
            )
        path = scene.gaussians_path
    gaussians = load_gaussians(path)
    trajectory = load_trajectory(args.trajectory)
    lbs_model = load_model(args.lbs)
    cubature = farthest_point_sample(
        scene.points, scene.n_cubature, derive_seed(scene.seed, CUBATURE)
    )
    system = build_reduced_system(
        scene.points, lbs_model, cubature, gravity=scene.gravity
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for frame in range(trajectory.n_frames):
        z = z_from_positions(system, trajectory.positions[frame])
        deformed = advect(gaussians, lbs_model, z)
        frame_set = deformed_to_set(deformed, gaussians)
        save_gaussians(frame_set, out_dir / f"{args.prefix}_{frame:04d}.ply")
    print(f"wrote {trajectory.n_frames} frames to {out_dir}")
    return 0


def _build_parser():
    parser = _Parser(
        prog="skinsim",
        description="Reduced-order elastodynamics on skinned point clouds",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("train-lbs", help="train the skinning-weight network")
    p.add_argument("scene", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_lbs)

    p = sub.add_parser("train-jacobian",
                       help="train the deformation-Jacobian network")
    p.add_argument("scene", type=Path)
    p.add_argument("--lbs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--iterations", type=int, default=10_000)
    p.add_argument("--batch-points", type=int, default=64)
    p.add_argument("--z-samples", type=int, default=16)
    p.add_argument("--eval-every", type=int, default=100)
    p.add_argument("--target-mse", type=float, default=1e-6)
    p.add_argument("--hidden", type=_hidden_widths, default=None,
                   help="comma-separated layer widths (default: full size)")
    p.add_argument("--pe-levels", type=int, default=85)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train_jacobian)

    p = sub.add_parser("sample-cubature",
                       help="farthest-point sample cubature points")
    p.add_argument("scene", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_sample_cubature)

    p = sub.add_parser("simulate", help="run a scene and write a trajectory")
    p.add_argument("scene", type=Path)
    p.add_argument("--lbs", type=Path, required=True)
    p.add_argument("--jacobian", type=Path, default=None)
    p.add_argument("--exact-jacobian", action="store_true",
                   help="force the exact Jacobian even when a neural "
                        "Jacobian model is given")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit",
                       help="fit E and nu to an observed trajectory")
    p.add_argument("scene", type=Path)
    p.add_argument("--observed", type=Path, required=True)
    p.add_argument("--lbs", type=Path, required=True)
    p.add_argument("--jacobian", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames", type=int, default=16,
                   help="observed frames available to the fit")
    p.add_argument("--window", type=int, default=4)
    p.add_argument("--iterations", type=int, default=400)
    p.add_argument("--estimator", choices=("FiniteDifference", "SPSA"),
                   default="FiniteDifference")
    p.add_argument("--init-e", type=float, default=None)
    p.add_argument("--init-nu", type=float, default=None)
    p.add_argument("--finetune", action="store_true",
                   help="also fine-tune the networks by SPSA")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict",
                       help="continue a simulation past the observation")
    p.add_argument("scene", type=Path)
    p.add_argument("--observed", type=Path, required=True)
    p.add_argument("--fitted", type=Path, required=True)
    p.add_argument("--lbs", type=Path, required=True)
    p.add_argument("--jacobian", type=Path, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--state-at", type=int, default=None,
                   help="observed frame to restart from (default: last)")
    p.add_argument("--horizon", type=int, default=8)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score a prediction against a reference")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--ref", type=Path, required=True)
    p.add_argument("--e-hat", type=float, default=None)
    p.add_argument("--e-true", type=float, default=None)
    p.add_argument("--nu-hat", type=float, default=None)
    p.add_argument("--nu-true", type=float, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-gaussians",
                       help="advect a Gaussian set along a trajectory")
    p.add_argument("scene", type=Path)
    p.add_argument("--gaussians", type=Path, default=None)
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--lbs", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--prefix", default="frame")
    p.set_defaults(func=cmd_export_gaussians)

    return parser


def main(argv=None):
    try:
        _apply_thread_cap()
        parser = _build_parser()
        args = parser.parse_args(argv)
        if getattr(args, "func", None) is None:
            parser.error("a command is required")
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
