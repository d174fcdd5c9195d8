"""Trainable neural fields: LBS skinning weights and the deformation-
gradient Jacobian, plus scikit-learn style estimator wrappers.

Both fields are trained data-free from a canonical point cloud alone.

Weight field: per iteration, a batch of cloud points and one handle
perturbation z ~ N(0, sigma_t^2) (sigma annealed linearly 0 -> sigma_max)
are scored with

    loss = sum_b V_b Psi_neo(F(X_b, z)) / B
           + alpha * || W^T W / B - I_m ||_F

where W stacks the batch weights; inverted samples (det F <= 0) are
masked out of the elastic term. The weight gradients inside F are taken
by central finite differences over X so the whole loss stays first-order
differentiable in the network parameters.

Jacobian field: the regressor J_theta(X) minimizes the per-entry L1
error of J_theta(X) z + vec(I) - vec(F(X, z)) against finite-difference
ground truth. Because F is linear in z, the FD targets reduce to a
per-point matrix J_fd(X), so targets are precomputed once per cloud. A
held-out point subset is scored periodically (mean squared residual per
entry) for early stopping.
"""

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_array, check_index, check_scalar, check_seed
from .errors import InputError, TrainingDivergedError
from .kinematics import lbs_weights, neural_jacobian
from .materials import psi, stress
from .neural import (
    Mlp,
    _as_batch,
    _forward_cached,
    adam_init,
    adam_step,
    gradient,
    init_mlp,
    parameters,
)
from .seeding import (
    JACOBIAN_HOLDOUT,
    JACOBIAN_INIT,
    JACOBIAN_TRAIN,
    LBS_INIT,
    LBS_TRAIN,
    derive_seed,
    rng_for,
)

LBS_HIDDEN_WIDTH = 64
LBS_HIDDEN_LAYERS = 7  # 8 linear layers total
JACOBIAN_HIDDEN = (512, 512, 512, 512, 512, 1024, 1024, 1024, 1024, 1024)
JACOBIAN_PE_LEVELS = 85  # 510 features, zero-padded to the first width


def lbs_mlp(n_handles, hidden_width=LBS_HIDDEN_WIDTH,
            hidden_layers=LBS_HIDDEN_LAYERS, seed=0):
    """The skinning-weight network: 3 -> hidden stack -> m, ELU."""
    n_handles = check_index(n_handles, "n_handles", minimum=1)
    widths = [3] + [hidden_width] * hidden_layers + [n_handles]
    return init_mlp(widths, "elu", seed, n_handles=n_handles)


def jacobian_mlp(n_handles, hidden=None, pe_levels=JACOBIAN_PE_LEVELS,
                 seed=0):
    """The Jacobian regressor: positional encoding into a residual GELU
    stack projecting to the 9 x 12m Jacobian entries."""
    n_handles = check_index(n_handles, "n_handles", minimum=1)
    hidden = JACOBIAN_HIDDEN if hidden is None else tuple(hidden)
    widths = list(hidden) + [9 * 12 * n_handles]
    return init_mlp(
        widths, "gelu", seed, residual=True, pe_levels=pe_levels,
        n_handles=n_handles,
    )


def ortho_penalty(W):
    """Frobenius distance of W^T W / B from the identity, with gradient.

    Returns (value, dvalue/dW). The gradient is zero at the (non-smooth)
    minimum itself.
    """
    W = check_array(W, "W", ndim=2)
    B, m = W.shape
    R = W.T @ W / B - np.eye(m)
    value = float(np.linalg.norm(R))
    if value < 1e-300:
        return 0.0, np.zeros_like(W)
    grad = (2.0 / (B * value)) * (W @ R)
    return value, grad


def lbs_training_loss(model, X, volumes, z, mu, lam, ortho_weight=0.1,
                      fd_step=1e-2):
    """Data-free loss for one batch and one handle perturbation.

    Returns (loss, parameter gradients aligned with parameters(model)).
    """
    X = check_array(X, "X", ndim=2)
    B = X.shape[0]
    m = model.output_dim
    z = check_array(z, "z", shape=(12 * m,))
    volumes = check_array(volumes, "volumes", shape=(B,))
    Z = z.reshape(m, 3, 4)
    A = Z[:, :, :3]  # (m, 3, 3)

    # probe layout: base batch, then +/- offsets along each axis
    probes = [X]
    for c in range(3):
        for sign in (1.0, -1.0):
            Xp = X.copy()
            Xp[:, c] += sign * fd_step
            probes.append(Xp)
    X_all = np.concatenate(probes, axis=0)  # (7B, 3)
    Xb, _ = _as_batch(model, X_all)
    w_all, cache = _forward_cached(model, Xb)
    W0 = w_all[:B]  # (B, m)
    w_pm = w_all[B:].reshape(3, 2, B, m)
    grad_w = (w_pm[:, 0] - w_pm[:, 1]) / (2.0 * fd_step)  # (3, B, m)

    h4 = np.concatenate([X, np.ones((B, 1))], axis=1)  # (B, 4)
    u = np.einsum("jak,bk->bja", Z, h4)  # (B, m, 3): u_bj = Z_j [X;1]
    F = (
        np.eye(3)
        + np.einsum("bj,jac->bac", W0, A)
        + np.einsum("bja,cbj->bac", u, grad_w)
    )

    valid = np.linalg.det(F) > 0.0
    scale = np.where(valid, volumes, 0.0) / B
    elastic = 0.0
    P = np.zeros((B, 3, 3))
    if valid.any():
        psi_vals = psi(F[valid], mu, lam, "neo")
        elastic = float(scale[valid] @ psi_vals)
        P[valid] = stress(F[valid], mu, lam, "neo")
    P *= scale[:, None, None]

    ortho_value, ortho_grad = ortho_penalty(W0)
    loss = elastic + ortho_weight * ortho_value

    # pull the elastic gradient back onto the network outputs
    up_base = np.einsum("bac,jac->bj", P, A) + ortho_weight * ortho_grad
    up_grad_w = np.einsum("bac,bja->cbj", P, u)  # dL/d(grad_w)
    upstream = np.empty((7 * B, m))
    upstream[:B] = up_base
    pm = np.empty((3, 2, B, m))
    pm[:, 0] = up_grad_w / (2.0 * fd_step)
    pm[:, 1] = -up_grad_w / (2.0 * fd_step)
    upstream[B:] = pm.reshape(6 * B, m)

    grads, _ = gradient(model, Xb, upstream, _cache=cache)
    return loss, grads


def fd_jacobian(model, X, step=1e-4):
    """Central-difference ground truth for the deformation-gradient
    Jacobian: J[(a,c),(j,p,q)] = delta_ap * d(w_j h_q)/dX_c."""
    X = check_array(X, "X", ndim=2)
    n = X.shape[0]
    m = model.output_dim
    step = check_scalar(step, "step", minimum=0.0, exclusive_min=True)
    J5 = np.zeros((n, 3, 3, m, 3, 4))
    for c in range(3):
        Xp = X.copy()
        Xp[:, c] += step
        Xm = X.copy()
        Xm[:, c] -= step
        wp = lbs_weights(model, Xp)
        wm = lbs_weights(model, Xm)
        hp = np.concatenate([Xp, np.ones((n, 1))], axis=1)
        hm = np.concatenate([Xm, np.ones((n, 1))], axis=1)
        d_wh = (
            wp[:, :, None] * hp[:, None, :] - wm[:, :, None] * hm[:, None, :]
        ) / (2.0 * step)  # (n, m, 4)
        for p in range(3):
            J5[:, p, c, :, p, :] = d_wh
    return J5.reshape(n, 9, 12 * m)


def jacobian_training_loss(J_pred, J_target, Z):
    """Per-entry L1 residual of (J_pred - J_target) z over z samples.

    Returns (loss, dloss/dJ_pred).
    """
    diff = J_pred - J_target  # (B, 9, C)
    r = np.einsum("bqc,kc->bkq", diff, Z)
    denom = r.size
    loss = float(np.abs(r).sum() / denom)
    grad = np.einsum("bkq,kc->bqc", np.sign(r), Z) / denom
    return loss, grad


def jacobian_mse(J_pred, J_target, Z):
    """Mean squared per-entry residual of (J_pred - J_target) z."""
    r = np.einsum("bqc,kc->bkq", J_pred - J_target, Z)
    return float(np.mean(r**2))


@dataclass
class LbsTrainConfig:
    """Hyperparameters for data-free skinning-weight training."""

    n_handles: int = 10
    iterations: int = 10_000
    batch_size: int = 1000
    learning_rate: float = 1e-3
    sigma_max: float = 0.5
    ortho_weight: float = 0.1
    fd_step: float = 1e-2
    hidden_width: int = LBS_HIDDEN_WIDTH
    hidden_layers: int = LBS_HIDDEN_LAYERS
    seed: int = 0

    def __post_init__(self):
        self.n_handles = check_index(self.n_handles, "n_handles", minimum=1)
        self.iterations = check_index(self.iterations, "iterations",
                                      minimum=1)
        self.batch_size = check_index(self.batch_size, "batch_size",
                                      minimum=1)
        check_scalar(self.learning_rate, "learning_rate", minimum=0.0,
                     exclusive_min=True)
        check_scalar(self.sigma_max, "sigma_max", minimum=0.0)
        check_scalar(self.ortho_weight, "ortho_weight", minimum=0.0)
        check_scalar(self.fd_step, "fd_step", minimum=0.0,
                     exclusive_min=True)
        self.seed = check_seed(self.seed)


def train_lbs_datafree(points, material, config=None):
    """Train the skinning-weight network on a canonical cloud.

    Returns (model, per-iteration loss history). Deterministic for a
    fixed config seed.
    """
    config = config or LbsTrainConfig()
    X = points.positions
    n = X.shape[0]
    mu, lam = material.lame()
    model = lbs_mlp(
        config.n_handles, config.hidden_width, config.hidden_layers,
        derive_seed(config.seed, LBS_INIT),
    )
    params = parameters(model)
    opt = adam_init(params, config.learning_rate)
    rng = rng_for(config.seed, LBS_TRAIN)
    history = []
    denom = max(1, config.iterations - 1)
    for t in range(config.iterations):
        sigma = config.sigma_max * (t / denom)
        idx = rng.integers(0, n, size=config.batch_size)
        z = rng.standard_normal(12 * config.n_handles) * sigma
        loss, grads = lbs_training_loss(
            model, X[idx], points.volumes[idx], z, mu, lam,
            ortho_weight=config.ortho_weight, fd_step=config.fd_step,
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"LBS training loss became non-finite at iteration {t}"
            )
        adam_step(opt, params, grads)
        history.append(loss)
    return model, history


@dataclass
class JacobianTrainConfig:
    """Hyperparameters for the Jacobian regressor."""

    iterations: int = 10_000
    batch_points: int = 64
    z_samples: int = 16
    sigma: float = 0.25
    learning_rate: float = 1e-3
    lr_min: float = 0.0  # cosine decay endpoint
    holdout_fraction: float = 0.1
    target_mse: float = 1e-6
    eval_every: int = 100
    eval_z_samples: int = 32
    fd_step: float = 1e-4
    hidden: tuple = None  # None selects the full-size architecture
    pe_levels: int = JACOBIAN_PE_LEVELS
    seed: int = 0

    def __post_init__(self):
        self.iterations = check_index(self.iterations, "iterations",
                                      minimum=1)
        self.batch_points = check_index(self.batch_points, "batch_points",
                                        minimum=1)
        self.z_samples = check_index(self.z_samples, "z_samples", minimum=1)
        check_scalar(self.sigma, "sigma", minimum=0.0, exclusive_min=True)
        check_scalar(self.learning_rate, "learning_rate", minimum=0.0,
                     exclusive_min=True)
        check_scalar(self.lr_min, "lr_min", minimum=0.0)
        check_scalar(self.holdout_fraction, "holdout_fraction", minimum=0.0,
                     maximum=0.5)
        check_scalar(self.target_mse, "target_mse", minimum=0.0)
        self.eval_every = check_index(self.eval_every, "eval_every",
                                      minimum=1)
        self.eval_z_samples = check_index(self.eval_z_samples,
                                          "eval_z_samples", minimum=1)
        check_scalar(self.fd_step, "fd_step", minimum=0.0,
                     exclusive_min=True)
        self.seed = check_seed(self.seed)


@dataclass
class JacobianTrainInfo:
    """Training record: losses, periodic holdout scores, stop reason."""

    loss_history: list = field(default_factory=list)
    holdout_history: list = field(default_factory=list)  # (iteration, mse)
    holdout_mse: float = np.inf
    iterations: int = 0
    stopped_early: bool = False


def _cosine_lr(lr0, lr_min, t, total):
    return lr_min + 0.5 * (lr0 - lr_min) * (
        1.0 + np.cos(np.pi * t / max(1, total))
    )


def train_neural_jacobian(lbs_model, points, config=None):
    """Fit the Jacobian regressor against finite differences of the LBS
    deformation map. Returns (model, JacobianTrainInfo)."""
    config = config or JacobianTrainConfig()
    m = getattr(lbs_model, "n_handles", 0)
    if not m:
        raise InputError(
            "LBS model has no n_handles annotation; train it first"
        )
    X = points.positions
    n = X.shape[0]
    J_all = fd_jacobian(lbs_model, X, config.fd_step)

    hold_rng = rng_for(config.seed, JACOBIAN_HOLDOUT)
    perm = hold_rng.permutation(n)
    n_hold = max(1, int(round(config.holdout_fraction * n)))
    hold_idx = perm[:n_hold]
    train_idx = perm[n_hold:]
    if train_idx.size == 0:
        raise InputError("holdout split left no training points")
    Z_eval = (
        hold_rng.standard_normal((config.eval_z_samples, 12 * m))
        * config.sigma
    )

    model = jacobian_mlp(
        m, hidden=config.hidden, pe_levels=config.pe_levels,
        seed=derive_seed(config.seed, JACOBIAN_INIT),
    )
    params = parameters(model)
    opt = adam_init(params, config.learning_rate)
    rng = rng_for(config.seed, JACOBIAN_TRAIN)
    info = JacobianTrainInfo()

    def holdout_mse():
        pred = model_jacobians(model, X[hold_idx])
        return jacobian_mse(pred, J_all[hold_idx], Z_eval)

    def model_jacobians(net, Xq):
        out, _ = _forward_cached(net, _as_batch(net, Xq)[0])
        return out.reshape(Xq.shape[0], 9, 12 * m)

    for t in range(config.iterations):
        opt.lr = _cosine_lr(config.learning_rate, config.lr_min, t,
                            config.iterations)
        bidx = train_idx[rng.integers(0, train_idx.size,
                                      size=config.batch_points)]
        Z = rng.standard_normal((config.z_samples, 12 * m)) * config.sigma
        Xb, _ = _as_batch(model, X[bidx])
        out, cache = _forward_cached(model, Xb)
        J_pred = out.reshape(config.batch_points, 9, 12 * m)
        loss, dJ = jacobian_training_loss(J_pred, J_all[bidx], Z)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"Jacobian training loss became non-finite at iteration {t}"
            )
        upstream = dJ.reshape(config.batch_points, 9 * 12 * m)
        grads, _ = gradient(model, Xb, upstream, _cache=cache)
        adam_step(opt, params, grads)
        info.loss_history.append(loss)
        info.iterations = t + 1
        if (t + 1) % config.eval_every == 0:
            mse = holdout_mse()
            info.holdout_history.append((t + 1, mse))
            info.holdout_mse = mse
            if mse <= config.target_mse:
                info.stopped_early = True
                break
    if not info.holdout_history or info.holdout_history[-1][0] != \
            info.iterations:
        info.holdout_mse = holdout_mse()
        info.holdout_history.append((info.iterations, info.holdout_mse))
    return model, info


class LbsWeightField(BaseEstimator):
    """Estimator wrapper around data-free skinning-weight training.

    fit(points) trains the network on the cloud's canonical positions;
    predict(X) evaluates per-handle weights and jacobian(X) the exact
    deformation-gradient Jacobian of the fitted field.
    """

    def __init__(self, material=None, n_handles=10, iterations=10_000,
                 batch_size=1000, learning_rate=1e-3, sigma_max=0.5,
                 ortho_weight=0.1, fd_step=1e-2,
                 hidden_width=LBS_HIDDEN_WIDTH,
                 hidden_layers=LBS_HIDDEN_LAYERS, seed=0):
        self.material = material
        self.n_handles = n_handles
        self.iterations = iterations
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.sigma_max = sigma_max
        self.ortho_weight = ortho_weight
        self.fd_step = fd_step
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.seed = seed

    def fit(self, points, y=None):
        if self.material is None:
            raise InputError(
                "LbsWeightField needs a material for the elastic loss"
            )
        config = LbsTrainConfig(
            n_handles=self.n_handles,
            iterations=self.iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            sigma_max=self.sigma_max,
            ortho_weight=self.ortho_weight,
            fd_step=self.fd_step,
            hidden_width=self.hidden_width,
            hidden_layers=self.hidden_layers,
            seed=self.seed,
        )
        self.model_, self.loss_history_ = train_lbs_datafree(
            points, self.material, config
        )
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return lbs_weights(self.model_, X)

    def jacobian(self, X):
        from .kinematics import exact_jacobian

        check_is_fitted(self, "model_")
        return exact_jacobian(self.model_, X)


class DeformationJacobianField(BaseEstimator):
    """Estimator wrapper around the Jacobian regressor.

    fit(points, lbs_model) trains against finite differences of the
    given skinning field (an Mlp or a fitted LbsWeightField);
    predict(X) returns (n, 9, 12m) Jacobians.
    """

    def __init__(self, iterations=10_000, batch_points=64, z_samples=16,
                 sigma=0.25, learning_rate=1e-3, lr_min=0.0,
                 holdout_fraction=0.1, target_mse=1e-6, eval_every=100,
                 eval_z_samples=32, fd_step=1e-4, hidden=None,
                 pe_levels=JACOBIAN_PE_LEVELS, seed=0):
        self.iterations = iterations
        self.batch_points = batch_points
        self.z_samples = z_samples
        self.sigma = sigma
        self.learning_rate = learning_rate
        self.lr_min = lr_min
        self.holdout_fraction = holdout_fraction
        self.target_mse = target_mse
        self.eval_every = eval_every
        self.eval_z_samples = eval_z_samples
        self.fd_step = fd_step
        self.hidden = hidden
        self.pe_levels = pe_levels
        self.seed = seed

    def fit(self, points, lbs_model):
        if isinstance(lbs_model, LbsWeightField):
            check_is_fitted(lbs_model, "model_")
            lbs_model = lbs_model.model_
        if not isinstance(lbs_model, Mlp):
            raise InputError(
                "lbs_model must be an Mlp or a fitted LbsWeightField"
            )
        config = JacobianTrainConfig(
            iterations=self.iterations,
            batch_points=self.batch_points,
            z_samples=self.z_samples,
            sigma=self.sigma,
            learning_rate=self.learning_rate,
            lr_min=self.lr_min,
            holdout_fraction=self.holdout_fraction,
            target_mse=self.target_mse,
            eval_every=self.eval_every,
            eval_z_samples=self.eval_z_samples,
            fd_step=self.fd_step,
            hidden=self.hidden,
            pe_levels=self.pe_levels,
            seed=self.seed,
        )
        self.model_, info = train_neural_jacobian(lbs_model, points, config)
        self.loss_history_ = info.loss_history
        self.holdout_mse_ = info.holdout_mse
        self.train_info_ = info
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return neural_jacobian(self.model_, X)
