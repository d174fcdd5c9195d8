"""Reduced-coordinate implicit elastodynamics.

The configuration is one affine transform per handle, flattened row-major
into z of length 12m (z = 0 at rest). Deformed positions are affine in z,
x_i = X_i + B_i z, so the reduced mass matrix M = sum_i m_i B_i^T B_i and
the gravity linear form are constant and assembled once per system.

Each step advances the state by minimizing the implicit-Euler incremental
potential

    0.5 (z - z~)^T M (z - z~)
        + dt^2 [ sum_c V_c Psi(F_c(z) G_c) + g_lin . z + barriers(x(z)) ]

with z~ = z + dt z_dot and G_c the inverse plastic deformation, using
projected Newton (eigenvalue-clamped element Hessians, Cholesky solve,
backtracking line search). Plastic flow is applied after each solve by
return-mapping the trial elastic deformation at every cubature point.
"""

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from ._validation import check_array, check_handle_vector, check_scalar
from .barriers import barrier_energy
from .errors import (
    InputError,
    InvertedElementError,
    LineSearchError,
    NonSpdSystemError,
    NumericalError,
)
from .geometry import farthest_point_sample
from .kinematics import exact_jacobian, lbs_weights, neural_jacobian
from .materials import psi, stress, stress_hessian
from .seeding import CUBATURE, derive_seed
from .trajectory import Trajectory

NEWTON_MAX_ITERS = 16
NEWTON_TOL = 1e-5
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
ARMIJO_MIN_STEP = 1e-8

JACOBIAN_MODES = ("exact", "neural")


@dataclass
class ReducedSystem:
    """Constant quantities of one point cloud under one LBS model."""

    rest_positions: np.ndarray  # (n, 3)
    masses: np.ndarray  # (n,)
    B: np.ndarray  # (n, 3, 12m) per-point position map
    M: np.ndarray  # (12m, 12m) reduced mass matrix
    gravity: np.ndarray  # (3,)
    gravity_linear: np.ndarray  # (12m,) so E_grav = gravity_linear . z
    cubature_indices: np.ndarray  # (k,)
    cubature_weights: np.ndarray  # (k,) volumes
    J: np.ndarray  # (k, 9, 12m) vec(F) = vec_eye + J z
    vec_eye: np.ndarray  # (9,) row-major identity
    n_handles: int
    jacobian_mode: str

    @property
    def n_points(self):
        return self.rest_positions.shape[0]

    @property
    def n_dofs(self):
        return 12 * self.n_handles

    @property
    def B_flat(self):
        return self.B.reshape(3 * self.n_points, self.n_dofs)

    def positions(self, z):
        """Deformed positions X + B z for one handle vector."""
        disp = self.B_flat @ z
        return self.rest_positions + disp.reshape(-1, 3)


@dataclass
class SimState:
    """Mutable dynamic state: handle vector, its rate, plastic strain."""

    z: np.ndarray  # (12m,)
    z_dot: np.ndarray  # (12m,)
    plastic_F: np.ndarray  # (k, 3, 3)
    time: float = 0.0
    frame: int = 0


@dataclass
class NewtonStats:
    iterations: int
    converged: bool
    energies: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    step_sizes: list = field(default_factory=list)


@dataclass
class SimResult:
    trajectory: Trajectory
    z_history: np.ndarray  # (frames, 12m)
    newton_iterations: np.ndarray  # (frames,) iterations per output frame
    frame_seconds: np.ndarray  # (frames,) wall time per output frame
    wall_seconds: float
    final_state: SimState
    system: ReducedSystem


def build_reduced_system(points, lbs_model, cubature, jacobian_mode="exact",
                         jacobian_model=None, gravity=(0.0, -9.8, 0.0)):
    """Assemble the constant reduced quantities for a point cloud.

    ``jacobian_mode`` selects how vec(F) is linearized in z at the
    cubature points: "exact" differentiates the LBS model analytically,
    "neural" evaluates a trained Jacobian network ``jacobian_model``.
    """
    m = getattr(lbs_model, "n_handles", 0)
    if not m:
        raise InputError(
            "LBS model has no n_handles annotation; train it first"
        )
    if points.masses is None:
        raise InputError("points have no masses; assign a density first")
    gravity = check_array(
        np.asarray(gravity, dtype=np.float64), "gravity", shape=(3,)
    )

    X = points.positions
    n = X.shape[0]
    W = lbs_weights(lbs_model, X)  # (n, m)
    h = np.concatenate([X, np.ones((n, 1))], axis=1)  # (n, 4)

    # B_i[p, 12j + 4p + q] = w_ij h_iq  (row p of handle j's affine block)
    wh = W[:, :, None] * h[:, None, :]  # (n, m, 4)
    B = np.zeros((n, 3, m, 3, 4))
    for p in range(3):
        B[:, p, :, p, :] = wh
    B = B.reshape(n, 3, 12 * m)

    B_flat = B.reshape(3 * n, 12 * m)
    row_mass = np.repeat(points.masses, 3)
    M = B_flat.T @ (B_flat * row_mass[:, None])
    M = 0.5 * (M + M.T)  # enforce exact symmetry

    mg = (points.masses[:, None] * gravity[None, :]).reshape(-1)
    gravity_linear = -(B_flat.T @ mg)

    Xc = X[cubature.indices]
    if jacobian_mode == "exact":
        J = exact_jacobian(lbs_model, Xc)
    elif jacobian_mode == "neural":
        if jacobian_model is None:
            raise InputError("jacobian_mode='neural' requires jacobian_model")
        mj = getattr(jacobian_model, "n_handles", 0)
        if mj != m:
            raise InputError(
                f"jacobian model covers {mj} handles, LBS model has {m}"
            )
        J = neural_jacobian(jacobian_model, Xc)
    else:
        raise InputError(
            f"unknown jacobian_mode {jacobian_mode!r}; "
            f"expected one of {JACOBIAN_MODES}"
        )

    return ReducedSystem(
        rest_positions=X,
        masses=points.masses,
        B=B,
        M=M,
        gravity=gravity,
        gravity_linear=gravity_linear,
        cubature_indices=np.asarray(cubature.indices),
        cubature_weights=np.asarray(cubature.weights, dtype=np.float64),
        J=J,
        vec_eye=np.eye(3).reshape(9),
        n_handles=int(m),
        jacobian_mode=jacobian_mode,
    )


def init_state(system):
    """Rest state: z = 0, no motion, identity plastic strain."""
    k = system.J.shape[0]
    return SimState(
        z=np.zeros(system.n_dofs),
        z_dot=np.zeros(system.n_dofs),
        plastic_F=np.tile(np.eye(3), (k, 1, 1)),
        time=0.0,
        frame=0,
    )


def _effective_dt(scene, dt):
    if dt is None:
        return scene.dt / scene.substeps
    return check_scalar(dt, "dt", minimum=0.0, exclusive_min=True)


class _Potential:
    """Incremental potential for one step, frozen at a start state."""

    def __init__(self, system, scene, state, dt):
        self.system = system
        self.scene = scene
        self.dt = float(dt)
        self.dt2 = self.dt * self.dt
        self.z_tilde = state.z + self.dt * state.z_dot
        self.t_end = state.time + self.dt
        mat = scene.material
        self.mu, self.lam = mat.lame()
        self.kind = mat.energy_kind
        self.G = None  # inverse plastic deformation, None when identity
        if mat.has_plasticity and not (state.plastic_F == np.eye(3)).all():
            self.G = np.linalg.inv(state.plastic_F)

    def elastic_deformation(self, z):
        vecF = self.system.vec_eye + self.system.J @ z
        Fe = vecF.reshape(-1, 3, 3)
        if self.G is not None:
            Fe = Fe @ self.G
        return Fe

    def _check_inversion(self, Fe):
        # only the log-based energy is undefined under inversion
        if self.kind != "neo":
            return
        dets = np.linalg.det(Fe)
        bad = dets <= 0.0
        if bad.any():
            idx = int(np.argmax(bad))
            raise InvertedElementError(
                f"inverted element at cubature point {idx} "
                f"(det F_e = {dets[idx]:.6e})",
                cubature_index=idx,
            )

    def energy(self, z):
        d = z - self.z_tilde
        total = 0.5 * float(d @ (self.system.M @ d))
        Fe = self.elastic_deformation(z)
        self._check_inversion(Fe)
        e_el = float(
            self.system.cubature_weights
            @ psi(Fe, self.mu, self.lam, self.kind)
        )
        e_ext = float(self.system.gravity_linear @ z)
        e_bar = 0.0
        if self.scene.boundaries:
            pos = self.system.positions(z)
            for barrier in self.scene.boundaries:
                e_bar += barrier.energy(pos, self.t_end)
        return total + self.dt2 * (e_el + e_ext + e_bar)

    def energy_or_inf(self, z):
        try:
            return self.energy(z)
        except NumericalError:
            return np.inf

    def gradient(self, z):
        g = self.system.M @ (z - self.z_tilde)
        Fe = self.elastic_deformation(z)
        self._check_inversion(Fe)
        P = stress(Fe, self.mu, self.lam, self.kind)
        if self.G is not None:
            # chain rule through the constant plastic factor
            P = P @ self.G.transpose(0, 2, 1)
        vecP = self.system.cubature_weights[:, None] * P.reshape(-1, 9)
        g_el = np.tensordot(vecP, self.system.J, axes=([0, 1], [0, 1]))
        g += self.dt2 * (g_el + self.system.gravity_linear)
        if self.scene.boundaries:
            pos = self.system.positions(z)
            _, dense = barrier_energy(pos, self.scene.boundaries, self.t_end)
            g += self.dt2 * (self.system.B_flat.T @ dense.reshape(-1))
        return g

    def hessian(self, z, project=True):
        K = self.system.M.copy()
        Fe = self.elastic_deformation(z)
        self._check_inversion(Fe)
        H = stress_hessian(Fe, self.mu, self.lam, self.kind, project=project)
        if self.G is not None:
            H4 = H.reshape(-1, 3, 3, 3, 3)
            H = np.einsum(
                "kbe,kaecf,kdf->kabcd", self.G, H4, self.G
            ).reshape(-1, 9, 9)
        WH = self.system.cubature_weights[:, None, None] * H
        T = np.matmul(WH, self.system.J)  # (k, 9, 12m)
        K += self.dt2 * np.tensordot(
            self.system.J, T, axes=([0, 1], [0, 1])
        )
        if self.scene.boundaries:
            pos = self.system.positions(z)
            for barrier in self.scene.boundaries:
                _, _, idx, blocks = barrier.contributions(pos, self.t_end)
                if idx.size == 0:
                    continue
                Bc = self.system.B[idx]  # (p, 3, 12m)
                HB = np.matmul(blocks, Bc)
                K += self.dt2 * np.tensordot(Bc, HB, axes=([0, 1], [0, 1]))
        return 0.5 * (K + K.T)


def incremental_potential(z, state, system, scene, dt=None):
    """Implicit-Euler incremental potential at handle vector z."""
    z = check_handle_vector(z, system.n_handles)
    pot = _Potential(system, scene, state, _effective_dt(scene, dt))
    return pot.energy(z)


def incremental_gradient(z, state, system, scene, dt=None):
    """Gradient of the incremental potential with respect to z."""
    z = check_handle_vector(z, system.n_handles)
    pot = _Potential(system, scene, state, _effective_dt(scene, dt))
    return pot.gradient(z)


def incremental_hessian(z, state, system, scene, dt=None, project=True):
    """Hessian of the incremental potential; ``project`` clamps each
    element Hessian to its positive-semidefinite part."""
    z = check_handle_vector(z, system.n_handles)
    pot = _Potential(system, scene, state, _effective_dt(scene, dt))
    return pot.hessian(z, project=project)


def elastic_energy(z, state, system, scene):
    """Total strain energy sum_c V_c Psi(F_e,c) at handle vector z."""
    z = check_handle_vector(z, system.n_handles)
    pot = _Potential(system, scene, state, _effective_dt(scene, None))
    Fe = pot.elastic_deformation(z)
    pot._check_inversion(Fe)
    return float(
        system.cubature_weights @ psi(Fe, pot.mu, pot.lam, pot.kind)
    )


def _armijo(f, x, d, g, f0, c=ARMIJO_C, shrink=ARMIJO_SHRINK,
            min_step=ARMIJO_MIN_STEP):
    """Backtracking line search; returns (step, new objective value)."""
    slope = float(g @ d)
    alpha = 1.0
    while alpha >= min_step:
        f_new = f(x + alpha * d)
        if np.isfinite(f_new) and f_new <= f0 + c * alpha * slope:
            return alpha, float(f_new)
        alpha *= shrink
    raise LineSearchError(
        f"line search failed below step {min_step:.1e} "
        f"(objective {f0:.6e}, directional slope {slope:.3e})"
    )


def newton_solve(state, system, scene, dt=None, return_stats=False):
    """Minimize the incremental potential from the inertial warm start.

    Stops when the gradient norm falls to NEWTON_TOL relative to its
    starting value (absolute floor 1.0) or after NEWTON_MAX_ITERS
    iterations, whichever comes first; the cap returns the last iterate.
    """
    dt = _effective_dt(scene, dt)
    pot = _Potential(system, scene, state, dt)
    z = pot.z_tilde.copy()
    f = pot.energy(z)
    g = pot.gradient(z)
    tol = NEWTON_TOL * max(1.0, float(np.linalg.norm(g)))
    stats = NewtonStats(
        iterations=0,
        converged=True,
        energies=[f],
        grad_norms=[float(np.linalg.norm(g))],
        step_sizes=[],
    )
    for _ in range(NEWTON_MAX_ITERS):
        if np.linalg.norm(g) <= tol:
            break
        K = pot.hessian(z, project=True)
        try:
            factor = cho_factor(K, lower=True, check_finite=False)
        except LinAlgError as exc:
            raise NonSpdSystemError(
                "projected Newton system is not positive definite "
                "(mass matrix may be rank deficient)"
            ) from exc
        d = cho_solve(factor, -g, check_finite=False)
        alpha, f = _armijo(pot.energy_or_inf, z, d, g, f)
        z = z + alpha * d
        g = pot.gradient(z)
        stats.iterations += 1
        stats.energies.append(f)
        stats.grad_norms.append(float(np.linalg.norm(g)))
        stats.step_sizes.append(alpha)
    stats.converged = bool(np.linalg.norm(g) <= tol)
    if return_stats:
        return z, stats
    return z


def step(state, system, scene, dt=None, return_stats=False):
    """Advance one implicit-Euler step; returns a new state.

    For plastic materials the trial elastic deformation at the solved
    configuration is return-mapped and the plastic factor updated so
    F_total = F_elastic F_plastic stays consistent.
    """
    dt = _effective_dt(scene, dt)
    out = newton_solve(state, system, scene, dt=dt, return_stats=return_stats)
    z_new, stats = out if return_stats else (out, None)
    z_dot_new = (z_new - state.z) / dt
    plastic_new = state.plastic_F
    mat = scene.material
    if mat.has_plasticity:
        vecF = system.vec_eye + system.J @ z_new
        F_total = vecF.reshape(-1, 3, 3)
        if (state.plastic_F == np.eye(3)).all():
            Fe_trial = F_total
        else:
            Fe_trial = F_total @ np.linalg.inv(state.plastic_F)
        dets = np.linalg.det(Fe_trial)
        if (dets <= 0.0).any():
            idx = int(np.argmax(dets <= 0.0))
            raise InvertedElementError(
                f"plastic update hit an inverted trial state at cubature "
                f"point {idx} (det = {dets[idx]:.6e})",
                cubature_index=idx,
            )
        Fe_new = mat.apply_return_map(Fe_trial)
        if Fe_new is not Fe_trial:
            # F_plastic = F_elastic^{-1} F_total
            plastic_new = np.linalg.solve(Fe_new, F_total)
    new_state = SimState(
        z=z_new,
        z_dot=z_dot_new,
        plastic_F=plastic_new,
        time=state.time + dt,
        frame=state.frame,
    )
    if return_stats:
        return new_state, stats
    return new_state


def velocity_to_handle_rates(system, velocity):
    """Embed a uniform point velocity into handle-rate coordinates.

    Solves M z_dot = sum_i m_i B_i^T v (the mass-weighted least-squares
    projection); exact whenever v lies in the span of the handle basis.
    """
    velocity = check_array(
        np.asarray(velocity, dtype=np.float64), "velocity", shape=(3,)
    )
    mv = (system.masses[:, None] * velocity[None, :]).reshape(-1)
    rhs = system.B_flat.T @ mv
    try:
        factor = cho_factor(system.M, lower=True, check_finite=False)
        return cho_solve(factor, rhs, check_finite=False)
    except LinAlgError:
        return np.linalg.lstsq(system.M, rhs, rcond=None)[0]


def z_from_positions(system, positions):
    """Least-squares handle vector reproducing the given positions."""
    positions = check_array(
        np.asarray(positions, dtype=np.float64), "positions",
        shape=system.rest_positions.shape,
    )
    dx = (positions - system.rest_positions).reshape(-1)
    z, *_ = np.linalg.lstsq(system.B_flat, dx, rcond=None)
    return z


def simulate(scene, lbs_model, jacobian_model=None, jacobian_mode="exact"):
    """Run the configured scene and return the full trajectory.

    Frame 0 is the rest state; each later frame advances ``substeps``
    implicit-Euler steps of length dt/substeps. Cubature points are
    farthest-point sampled from the scene seed, so runs are
    deterministic.
    """
    t_start = time.perf_counter()
    cubature = farthest_point_sample(
        scene.points, scene.n_cubature, derive_seed(scene.seed, CUBATURE)
    )
    system = build_reduced_system(
        scene.points, lbs_model, cubature,
        jacobian_mode=jacobian_mode, jacobian_model=jacobian_model,
        gravity=scene.gravity,
    )
    state = init_state(system)
    v0 = np.asarray(scene.initial_velocity, dtype=np.float64)
    if np.any(v0 != 0.0):
        state.z_dot = velocity_to_handle_rates(system, v0)

    n_frames = scene.frames
    positions = np.empty((n_frames, system.n_points, 3))
    z_history = np.empty((n_frames, system.n_dofs))
    positions[0] = system.rest_positions
    z_history[0] = 0.0
    newton_iterations = np.zeros(n_frames, dtype=np.int64)
    frame_seconds = np.zeros(n_frames)

    for frame in range(1, n_frames):
        iters = 0
        t_frame = time.perf_counter()
        for sub in range(scene.substeps):
            try:
                state, stats = step(state, system, scene, return_stats=True)
            except NumericalError as exc:
                raise type(exc)(
                    f"frame {frame} (substep {sub}): {exc}"
                ) from exc
            iters += stats.iterations
        frame_seconds[frame] = time.perf_counter() - t_frame
        state.frame = frame
        positions[frame] = system.positions(state.z)
        z_history[frame] = state.z
        newton_iterations[frame] = iters

    return SimResult(
        trajectory=Trajectory(positions=positions, dt=scene.dt),
        z_history=z_history,
        newton_iterations=newton_iterations,
        frame_seconds=frame_seconds,
        wall_seconds=time.perf_counter() - t_start,
        final_state=state,
        system=system,
    )
