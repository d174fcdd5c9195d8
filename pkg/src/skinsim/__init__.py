"""Reduced-order elastodynamics on point clouds driven by learned skinning
handles: neural weight/Jacobian fields, an implicit-Euler Newton solver in
handle coordinates, hyperelastic materials with plastic return maps, Gaussian
advection, and derivative-free material identification.
"""

__version__ = "0.1.0"

from .barriers import FloorBarrier, SphereBarrier
from .dynamics import (
    ReducedSystem,
    SimResult,
    SimState,
    build_reduced_system,
    init_state,
    newton_solve,
    simulate,
    step,
    z_from_positions,
)
from .errors import (
    InputError,
    InvertedElementError,
    LineSearchError,
    NonSpdSystemError,
    NumericalError,
    SkinsimError,
    TrainingDivergedError,
)
from .fields import (
    DeformationJacobianField,
    JacobianTrainConfig,
    LbsTrainConfig,
    LbsWeightField,
    jacobian_mlp,
    lbs_mlp,
    train_lbs_datafree,
    train_neural_jacobian,
)
from .gaussians import (
    DeformedGaussians,
    GaussianSet,
    advect,
    deformed_to_set,
    load_gaussians,
    save_gaussians,
)
from .geometry import (
    CubatureSet,
    PointSet,
    SimilarityTransform,
    assign_masses,
    farthest_point_sample,
    load_points,
    normalize_to_canonical,
)
from .identify import (
    FitConfig,
    FitResult,
    MaterialIdentifier,
    estimate_gradient,
    evaluate,
    first_divergence_frame,
    fit_parameters,
    predict_future,
    trajectory_loss,
)
from .kinematics import (
    deform,
    deformation_gradient,
    exact_jacobian,
    lbs_weight_gradients,
    lbs_weights,
    neural_jacobian,
)
from .materials import MaterialParams, lame, psi, stress, stress_hessian
from .neural import (
    Mlp,
    forward,
    gradient,
    init_mlp,
    load_model,
    positional_encode,
    save_model,
)
from .scene import SceneConfig, load_scene
from .trajectory import Trajectory, load_trajectory, save_trajectory

__all__ = [
    "__version__",
    "SkinsimError",
    "InputError",
    "NumericalError",
    "InvertedElementError",
    "LineSearchError",
    "NonSpdSystemError",
    "TrainingDivergedError",
    "PointSet",
    "CubatureSet",
    "SimilarityTransform",
    "assign_masses",
    "farthest_point_sample",
    "load_points",
    "normalize_to_canonical",
    "Mlp",
    "init_mlp",
    "forward",
    "gradient",
    "positional_encode",
    "load_model",
    "save_model",
    "deform",
    "deformation_gradient",
    "lbs_weights",
    "lbs_weight_gradients",
    "exact_jacobian",
    "neural_jacobian",
    "MaterialParams",
    "lame",
    "psi",
    "stress",
    "stress_hessian",
    "Trajectory",
    "load_trajectory",
    "save_trajectory",
    "FloorBarrier",
    "SphereBarrier",
    "SceneConfig",
    "load_scene",
    "ReducedSystem",
    "SimState",
    "SimResult",
    "build_reduced_system",
    "init_state",
    "newton_solve",
    "step",
    "simulate",
    "z_from_positions",
    "LbsTrainConfig",
    "JacobianTrainConfig",
    "train_lbs_datafree",
    "train_neural_jacobian",
    "lbs_mlp",
    "jacobian_mlp",
    "LbsWeightField",
    "DeformationJacobianField",
    "FitConfig",
    "FitResult",
    "MaterialIdentifier",
    "trajectory_loss",
    "first_divergence_frame",
    "estimate_gradient",
    "fit_parameters",
    "predict_future",
    "evaluate",
    "GaussianSet",
    "DeformedGaussians",
    "advect",
    "deformed_to_set",
    "load_gaussians",
    "save_gaussians",
]
