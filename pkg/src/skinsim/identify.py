"""Material parameter identification from observed point trajectories.

Recovers Young's modulus and Poisson's ratio by matching short
simulated windows against an observed trajectory.  Probe simulations
replace analytic sensitivities: gradients in (log10 E, nu) space come
from central finite differences or SPSA, and Adam performs the
updates.  Windows restart from states reconstructed out of the
observation itself (handle coordinates by least squares, velocities by
backward differences), sampled at or past the frame where the current
prediction first drifts from the data.
"""

import copy
import json
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_scalar
from .dynamics import (
    SimState,
    build_reduced_system,
    init_state,
    step,
    velocity_to_handle_rates,
    z_from_positions,
)
from .errors import InputError, NumericalError
from .geometry import farthest_point_sample
from .neural import load_model, parameters
from .seeding import CUBATURE, FIT, derive_seed, rng_for
from .trajectory import Trajectory

ESTIMATORS = ("FiniteDifference", "SPSA")

LOG_E_BOUNDS = (4.0, 6.0)
NU_BOUNDS = (0.2, 0.49)
E_SANITY_BOUNDS = (1e3, 1e8)

# loss assigned to a probe whose window simulation fails
PENALTY_LOSS = 1e6
# consecutive fully-failed iterations tolerated before giving up
FAILURE_PATIENCE = 5
# window losses at or below this are treated as converged: skipping the
# update stops Adam from random-walking on finite-difference noise
CONVERGED_LOSS_FLOOR = 1e-12
# parameter perturbation used for SPSA probes of network weights
FINETUNE_STEP = 1e-4

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def _positions(traj_like, name):
    pos = getattr(traj_like, "positions", None)
    if pos is None:
        raise InputError(f"{name} must be a Trajectory")
    return pos


def trajectory_loss(pred, obs, s=0, window=None):
    """Mean squared point error over a window of frames.

    Compares frames s .. s+window-1 of both trajectories; the result is
    the mean over those frames and all points of the squared position
    error, so a constant offset d on every point gives exactly |d|^2.
    """
    P = _positions(pred, "pred")
    Q = _positions(obs, "obs")
    if P.shape[1] != Q.shape[1]:
        raise InputError(
            f"point counts differ: pred has {P.shape[1]}, obs has "
            f"{Q.shape[1]}"
        )
    s = int(s)
    if s < 0:
        raise InputError(f"s must be non-negative, got {s}")
    if window is None:
        window = P.shape[0] - s
    window = int(window)
    if window < 1:
        raise InputError(f"window must be positive, got {window}")
    end = s + window
    if end > P.shape[0] or end > Q.shape[0]:
        raise InputError(
            f"frames [{s}, {end}) exceed trajectory lengths "
            f"{P.shape[0]} and {Q.shape[0]}"
        )
    diff = P[s:end] - Q[s:end]
    return float(np.mean(np.sum(diff * diff, axis=2)))


def first_divergence_frame(pred, obs, tol=1e-4):
    """Smallest frame whose mean point error exceeds tol.

    Returns the last frame index when the trajectories never diverge.
    """
    P = _positions(pred, "pred")
    Q = _positions(obs, "obs")
    if P.shape != Q.shape:
        raise InputError(
            f"trajectories must have matching shapes, got {P.shape} and "
            f"{Q.shape}"
        )
    check_scalar(tol, "tol", minimum=0.0)
    if P.shape[0] == 0:
        raise InputError("trajectories must have at least one frame")
    per_frame = np.linalg.norm(P - Q, axis=2).mean(axis=1)
    over = np.nonzero(per_frame > tol)[0]
    if over.size == 0:
        return P.shape[0] - 1
    return int(over[0])


def _probe(loss_fn, p):
    val = float(loss_fn(p))
    if not np.isfinite(val):
        raise NumericalError(
            f"loss is not finite at probe parameters {p.tolist()}"
        )
    return val


def estimate_gradient(loss_fn, params, estimator="FiniteDifference",
                      seed=0, step=1e-4):
    """Derivative-free gradient estimate of a scalar loss.

    "FiniteDifference" takes central differences along each coordinate
    (2p evaluations); "SPSA" perturbs all coordinates at once along a
    random sign vector (2 evaluations, unbiased in expectation).  step
    may be a scalar or a per-coordinate array.
    """
    if estimator not in ESTIMATORS:
        raise InputError(
            f"estimator must be one of {ESTIMATORS}, got {estimator!r}"
        )
    p = np.asarray(params, dtype=np.float64)
    if p.ndim != 1:
        raise InputError(f"params must be a 1-d vector, got shape {p.shape}")
    c = np.broadcast_to(np.asarray(step, dtype=np.float64), p.shape).copy()
    if not np.all(c > 0.0):
        raise InputError("step must be positive")
    grad = np.empty_like(p)
    if estimator == "FiniteDifference":
        for i in range(p.size):
            dp = np.zeros_like(p)
            dp[i] = c[i]
            lp = _probe(loss_fn, p + dp)
            lm = _probe(loss_fn, p - dp)
            grad[i] = (lp - lm) / (2.0 * c[i])
        return grad
    rng = np.random.default_rng(seed)
    delta = rng.integers(0, 2, size=p.size).astype(np.float64) * 2.0 - 1.0
    lp = _probe(loss_fn, p + c * delta)
    lm = _probe(loss_fn, p - c * delta)
    return (lp - lm) / (2.0 * c * delta)


def reconstruct_state(system, observed, frame):
    """Simulation state at an observed frame.

    Handle coordinates solve the least-squares embedding of the frame's
    positions; the velocity is the backward difference against the
    previous frame (forward at frame 0).  Plastic strain is taken as
    identity since the observation carries no strain history.
    """
    pos = _positions(observed, "observed")
    n_frames = pos.shape[0]
    frame = int(frame)
    if not 0 <= frame < n_frames:
        raise InputError(
            f"frame {frame} outside observed range [0, {n_frames})"
        )
    dt = observed.dt
    z = z_from_positions(system, pos[frame])
    if n_frames == 1:
        z_dot = np.zeros_like(z)
    elif frame == 0:
        z_next = z_from_positions(system, pos[1])
        z_dot = (z_next - z) / dt
    else:
        z_prev = z_from_positions(system, pos[frame - 1])
        z_dot = (z - z_prev) / dt
    k = system.J.shape[0]
    return SimState(
        z=z,
        z_dot=z_dot,
        plastic_F=np.tile(np.eye(3), (k, 1, 1)),
        time=frame * dt,
        frame=frame,
    )


def rollout(system, scene, state, n_frames):
    """Advance n_frames frames from a state; returns (n_frames+1, n, 3)
    positions starting with the state's own configuration."""
    n_frames = int(n_frames)
    if n_frames < 0:
        raise InputError(f"n_frames must be non-negative, got {n_frames}")
    out = np.empty((n_frames + 1, system.n_points, 3))
    out[0] = system.positions(state.z)
    for f in range(1, n_frames + 1):
        for _ in range(scene.substeps):
            state = step(state, system, scene)
        out[f] = system.positions(state.z)
    return out


@dataclass
class FitConfig:
    """Settings for the parameter fit.

    window is the number of frames each restarted probe simulation is
    matched over; observed_frames caps how much of the observation the
    fit may read.  Learning rates cover the two material coordinates
    (log10 E, nu) and the optional SPSA fine-tuning of the weight and
    Jacobian networks.
    """

    iterations: int = 400
    window: int = 4
    observed_frames: int = 16
    estimator: str = "FiniteDifference"
    seed: int = 0
    lr_log_e: float = 5e-3
    lr_nu: float = 1e-3
    lr_lbs: float = 5e-7
    lr_jacobian: float = 5e-7
    fd_step_log_e: float = 0.02
    fd_step_nu: float = 0.005
    refresh_every: int = 20
    divergence_tol: float = 1e-4
    finetune_networks: bool = False
    jacobian_mode: str = "exact"

    def __post_init__(self):
        check_scalar(self.iterations, "iterations", minimum=1)
        check_scalar(self.window, "window", minimum=1)
        if self.observed_frames < self.window + 1:
            raise InputError(
                f"observed_frames must be at least window + 1 = "
                f"{self.window + 1}, got {self.observed_frames}"
            )
        if self.estimator not in ESTIMATORS:
            raise InputError(
                f"estimator must be one of {ESTIMATORS}, got "
                f"{self.estimator!r}"
            )
        for name in ("lr_log_e", "lr_nu", "lr_lbs", "lr_jacobian",
                     "fd_step_log_e", "fd_step_nu"):
            check_scalar(getattr(self, name), name, minimum=0.0,
                         exclusive_min=True)
        check_scalar(self.refresh_every, "refresh_every", minimum=1)
        check_scalar(self.divergence_tol, "divergence_tol", minimum=0.0)
        if self.jacobian_mode not in ("exact", "neural"):
            raise InputError(
                f"jacobian_mode must be 'exact' or 'neural', got "
                f"{self.jacobian_mode!r}"
            )


@dataclass
class FitResult:
    """Outcome of a parameter fit."""

    E: float
    nu: float
    loss_history: list
    iterations: int
    wall_seconds: float
    estimator: str
    lbs_model: object = None
    jacobian_model: object = None
    init_E: float = None
    init_nu: float = None
    window_starts: list = field(default_factory=list)
    divergence_frames: list = field(default_factory=list)

    def __post_init__(self):
        lo, hi = E_SANITY_BOUNDS
        if not lo <= self.E <= hi:
            raise InputError(
                f"E = {self.E!r} outside sanity bounds [{lo:g}, {hi:g}]"
            )

    def save_json(self, path):
        # wall_seconds is deliberately not persisted: the file must be
        # bit-identical across reruns with the same seed
        doc = {
            "E": float(self.E),
            "nu": float(self.nu),
            "loss_history": [float(x) for x in self.loss_history],
            "iterations": int(self.iterations),
            "estimator": self.estimator,
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _material_at(scene, log_e, nu):
    mat = replace(scene.material, youngs=10.0 ** log_e, poisson=nu)
    return replace(scene, material=mat)


def _initial_scene_state(system, scene):
    state = init_state(system)
    v0 = np.asarray(scene.initial_velocity, dtype=np.float64)
    if np.any(v0 != 0.0):
        state.z_dot = velocity_to_handle_rates(system, v0)
    return state


def fit_parameters(scene, observed, config=None, init=None,
                   lbs_model=None, jacobian_model=None):
    """Fit (E, nu) so windowed re-simulations match the observation.

    Each iteration restarts a window-length simulation from a state
    reconstructed out of the observed frames, at a start frame sampled
    between the current divergence frontier and the last admissible
    frame, and takes one Adam step on (log10 E, nu) using a
    derivative-free gradient estimate.  Probe simulations that fail
    contribute a fixed penalty loss; if every probe keeps failing the
    fit aborts.  init is an optional (E0, nu0) pair; otherwise the
    starting point is drawn from the admissible ranges.
    """
    t_start = time.perf_counter()
    config = config if config is not None else FitConfig()
    pos = _positions(observed, "observed")
    n_pts = scene.points.positions.shape[0]
    if pos.shape[1] != n_pts:
        raise InputError(
            f"observed has {pos.shape[1]} points but the scene has {n_pts}"
        )
    T = config.observed_frames
    if pos.shape[0] < T:
        raise InputError(
            f"observed has {pos.shape[0]} frames but the fit needs "
            f"observed_frames = {T}"
        )
    if abs(observed.dt - scene.dt) > 1e-12:
        raise InputError(
            f"observed dt {observed.dt!r} does not match scene dt "
            f"{scene.dt!r}"
        )
    if lbs_model is None:
        if scene.lbs_model_path is None:
            raise InputError(
                "a trained weight model is required: pass lbs_model or "
                "set the scene's lbs_model entry"
            )
        lbs_model = load_model(scene.lbs_model_path)
    if config.jacobian_mode == "neural" and jacobian_model is None:
        if scene.jacobian_model_path is None:
            raise InputError(
                "jacobian_mode 'neural' requires a Jacobian model: pass "
                "jacobian_model or set the scene's jacobian_model entry"
            )
        jacobian_model = load_model(scene.jacobian_model_path)
    if config.finetune_networks:
        lbs_model = copy.deepcopy(lbs_model)
        if jacobian_model is not None:
            jacobian_model = copy.deepcopy(jacobian_model)

    rng = rng_for(config.seed, FIT)
    cubature = farthest_point_sample(
        scene.points, scene.n_cubature, derive_seed(scene.seed, CUBATURE)
    )

    system = None
    Z_obs = None
    Zd_obs = None

    def assemble():
        # constant across (E, nu) probes; rebuilt only when a network
        # fine-tuning step changes the models
        nonlocal system, Z_obs, Zd_obs
        system = build_reduced_system(
            scene.points, lbs_model, cubature,
            jacobian_mode=config.jacobian_mode,
            jacobian_model=jacobian_model, gravity=scene.gravity,
        )
        dx = (pos[:T] - system.rest_positions).reshape(T, -1)
        Z, *_ = np.linalg.lstsq(system.B_flat, dx.T, rcond=None)
        Z_obs = Z.T
        Zd_obs = np.empty_like(Z_obs)
        Zd_obs[1:] = (Z_obs[1:] - Z_obs[:-1]) / observed.dt
        Zd_obs[0] = (Z_obs[1] - Z_obs[0]) / observed.dt

    assemble()
    k = cubature.indices.shape[0]

    def window_state(s):
        return SimState(
            z=Z_obs[s].copy(),
            z_dot=Zd_obs[s].copy(),
            plastic_F=np.tile(np.eye(3), (k, 1, 1)),
            time=s * observed.dt,
            frame=s,
        )

    def window_loss(params, s):
        # returns (loss, failed); failures map to a finite penalty so
        # gradient probes stay usable
        sc = _material_at(scene, params[0], params[1])
        try:
            pred = rollout(system, sc, window_state(s), config.window)
        except NumericalError:
            return PENALTY_LOSS, True
        seg = pos[s:s + config.window + 1]
        loss = trajectory_loss(
            Trajectory(positions=pred, dt=observed.dt),
            Trajectory(positions=seg, dt=observed.dt),
            s=1, window=config.window,
        )
        return loss, False

    def divergence_frontier(params):
        sc = _material_at(scene, params[0], params[1])
        try:
            pred = rollout(system, sc, _initial_scene_state(system, sc),
                           T - 1)
        except NumericalError:
            return 0
        return first_divergence_frame(
            Trajectory(positions=pred, dt=observed.dt),
            Trajectory(positions=pos[:T], dt=observed.dt),
            config.divergence_tol,
        )

    if init is None:
        log_e0 = rng.uniform(*LOG_E_BOUNDS)
        nu0 = rng.uniform(*NU_BOUNDS)
    else:
        e0, nu0 = init
        check_scalar(e0, "init E", minimum=0.0, exclusive_min=True)
        log_e0 = float(np.clip(np.log10(e0), *LOG_E_BOUNDS))
        nu0 = float(np.clip(nu0, *NU_BOUNDS))
    params = np.array([log_e0, nu0])
    init_E = 10.0 ** params[0]
    init_nu = params[1]

    lr_vec = np.array([config.lr_log_e, config.lr_nu])
    steps = np.array([config.fd_step_log_e, config.fd_step_nu])
    adam_m = np.zeros(2)
    adam_v = np.zeros(2)
    adam_t = 0

    loss_history = []
    window_starts = []
    divergence_frames = []
    s_max = T - 1 - config.window
    s_min = 0
    consecutive_failures = 0

    def finetune(model, lr, s):
        # one SPSA step on the network weights; the reduced system and
        # the reconstructed states are rebuilt around each probe
        plist = parameters(model)
        deltas = [
            rng.integers(0, 2, size=a.shape).astype(np.float64) * 2.0 - 1.0
            for a in plist
        ]
        for a, d in zip(plist, deltas):
            a += FINETUNE_STEP * d
        assemble()
        lp, fp = window_loss(params, s)
        for a, d in zip(plist, deltas):
            a -= 2.0 * FINETUNE_STEP * d
        assemble()
        lm, fm = window_loss(params, s)
        for a, d in zip(plist, deltas):
            a += FINETUNE_STEP * d
        if fp or fm:
            assemble()  # restore; skip the step on probe failure
            return
        g = (lp - lm) / (2.0 * FINETUNE_STEP)
        for a, d in zip(plist, deltas):
            a -= lr * g * d
        assemble()

    for t in range(config.iterations):
        if t % config.refresh_every == 0:
            frontier = divergence_frontier(params)
            divergence_frames.append(frontier)
            s_min = min(frontier, s_max)
        s = int(rng.integers(s_min, s_max + 1))
        window_starts.append(s)

        nominal, nominal_failed = window_loss(params, s)
        loss_history.append(nominal)

        if not nominal_failed and nominal <= CONVERGED_LOSS_FLOOR:
            consecutive_failures = 0
            continue

        probe_calls = [0, 0]  # total, failed

        def probed(p):
            probe_calls[0] += 1
            val, failed = window_loss(p, s)
            if failed:
                probe_calls[1] += 1
            return val

        spsa_seed = 0
        if config.estimator == "SPSA":
            spsa_seed = int(rng.integers(2 ** 31))
        grad = estimate_gradient(
            probed, params, estimator=config.estimator, seed=spsa_seed,
            step=steps,
        )
        if nominal_failed and probe_calls[1] == probe_calls[0]:
            consecutive_failures += 1
            if consecutive_failures >= FAILURE_PATIENCE:
                raise NumericalError(
                    f"window simulations failed for "
                    f"{consecutive_failures} consecutive iterations; "
                    f"the scene cannot be simulated near the current "
                    f"parameters (E = {10.0 ** params[0]:.3e}, "
                    f"nu = {params[1]:.3f})"
                )
        else:
            consecutive_failures = 0

        adam_t += 1
        adam_m = ADAM_BETA1 * adam_m + (1.0 - ADAM_BETA1) * grad
        adam_v = ADAM_BETA2 * adam_v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = adam_m / (1.0 - ADAM_BETA1 ** adam_t)
        v_hat = adam_v / (1.0 - ADAM_BETA2 ** adam_t)
        params = params - lr_vec * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        params[0] = np.clip(params[0], *LOG_E_BOUNDS)
        params[1] = np.clip(params[1], *NU_BOUNDS)

        if config.finetune_networks:
            finetune(lbs_model, config.lr_lbs, s)
            if jacobian_model is not None and config.jacobian_mode == "neural":
                finetune(jacobian_model, config.lr_jacobian, s)

    return FitResult(
        E=float(10.0 ** params[0]),
        nu=float(params[1]),
        loss_history=loss_history,
        iterations=config.iterations,
        wall_seconds=time.perf_counter() - t_start,
        estimator=config.estimator,
        lbs_model=lbs_model,
        jacobian_model=jacobian_model,
        init_E=float(init_E),
        init_nu=float(init_nu),
        window_starts=window_starts,
        divergence_frames=divergence_frames,
    )


def predict_future(scene, observed, fitted, state_at, horizon):
    """Continue the simulation past an observed frame at fitted
    parameters; returns the horizon frames after state_at."""
    horizon = int(horizon)
    if horizon < 0:
        raise InputError(f"horizon must be non-negative, got {horizon}")
    lbs_model = fitted.lbs_model
    if lbs_model is None:
        if scene.lbs_model_path is None:
            raise InputError(
                "a trained weight model is required: the fit result "
                "carries none and the scene names none"
            )
        lbs_model = load_model(scene.lbs_model_path)
    mode = "neural" if fitted.jacobian_model is not None else "exact"
    cubature = farthest_point_sample(
        scene.points, scene.n_cubature, derive_seed(scene.seed, CUBATURE)
    )
    system = build_reduced_system(
        scene.points, lbs_model, cubature, jacobian_mode=mode,
        jacobian_model=fitted.jacobian_model, gravity=scene.gravity,
    )
    state = reconstruct_state(system, observed, state_at)
    sc = _material_at(scene, np.log10(fitted.E), fitted.nu)
    positions = rollout(system, sc, state, horizon)
    return Trajectory(positions=positions[1:], dt=scene.dt)


def _mae_pair(hat, true, name, log10=False):
    if hat is None and true is None:
        return None
    if hat is None or true is None:
        raise InputError(f"both {name} values are required to score {name}")
    a = np.atleast_1d(np.asarray(hat, dtype=np.float64))
    b = np.atleast_1d(np.asarray(true, dtype=np.float64))
    if a.shape != b.shape:
        raise InputError(
            f"{name} arrays must have matching shapes, got {a.shape} and "
            f"{b.shape}"
        )
    if log10:
        a = np.log10(a)
        b = np.log10(b)
    return float(np.mean(np.abs(a - b)))


def evaluate(pred, ref, e_hat=None, e_true=None, nu_hat=None, nu_true=None):
    """Error metrics between a predicted and a reference trajectory.

    Point errors are Euclidean distances in meters; the parameter MAEs
    (absent as None unless both estimate and truth are given) are in
    log10-Pascals for E and absolute for nu.
    """
    P = _positions(pred, "pred")
    Q = _positions(ref, "ref")
    if P.shape != Q.shape:
        raise InputError(
            f"trajectories must have matching shapes, got {P.shape} and "
            f"{Q.shape}"
        )
    err = np.linalg.norm(P - Q, axis=2)
    if err.size:
        mean_err = float(err.mean())
        max_err = float(err.max())
        per_frame = [float(x) for x in err.mean(axis=1)]
    else:
        mean_err = 0.0
        max_err = 0.0
        per_frame = []
    return {
        "mean_point_error": mean_err,
        "max_point_error": max_err,
        "per_frame_error": per_frame,
        "log_e_mae": _mae_pair(e_hat, e_true, "E", log10=True),
        "nu_mae": _mae_pair(nu_hat, nu_true, "nu"),
    }


class MaterialIdentifier(BaseEstimator):
    """Estimator wrapper around the parameter fit.

    fit(scene, observed) runs the windowed identification and stores
    the recovered parameters as E_ and nu_; predict continues the
    simulation past an observed frame at the fitted values.
    """

    def __init__(self, iterations=400, window=4, observed_frames=16,
                 estimator="FiniteDifference", seed=0, init=None,
                 lbs_model=None, jacobian_model=None,
                 finetune_networks=False, jacobian_mode="exact"):
        self.iterations = iterations
        self.window = window
        self.observed_frames = observed_frames
        self.estimator = estimator
        self.seed = seed
        self.init = init
        self.lbs_model = lbs_model
        self.jacobian_model = jacobian_model
        self.finetune_networks = finetune_networks
        self.jacobian_mode = jacobian_mode

    def fit(self, scene, observed):
        config = FitConfig(
            iterations=self.iterations,
            window=self.window,
            observed_frames=self.observed_frames,
            estimator=self.estimator,
            seed=self.seed,
            finetune_networks=self.finetune_networks,
            jacobian_mode=self.jacobian_mode,
        )
        self.result_ = fit_parameters(
            scene, observed, config, init=self.init,
            lbs_model=self.lbs_model, jacobian_model=self.jacobian_model,
        )
        self.E_ = self.result_.E
        self.nu_ = self.result_.nu
        self.loss_history_ = self.result_.loss_history
        return self

    def predict(self, scene, observed, state_at, horizon):
        check_is_fitted(self, "result_")
        return predict_future(scene, observed, self.result_, state_at,
                              horizon)
