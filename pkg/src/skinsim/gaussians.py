"""3D Gaussian primitives carried through the deformation field.

Means advect with the deformation map; covariances transform by the
deformation gradient at the mean: with L = R diag(s) the deformed
covariance is (F L)(F L)^T.  Appearance is a single rgb color per
primitive (no view-dependent terms).  Sets interchange as ASCII PLY
files for external viewers; no rasterization here.
"""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import InputError
from .kinematics import deform, deformation_gradient
from .ply import read_ply, write_ply

PROPERTY_NAMES = (
    "x", "y", "z",
    "rot_w", "rot_x", "rot_y", "rot_z",
    "scale_x", "scale_y", "scale_z",
    "opacity",
    "r", "g", "b",
)

QUAT_NORM_TOL = 1e-6


def _field(value, name, shape_tail):
    arr = np.asarray(value, dtype=np.float64)
    if arr.shape[1:] != shape_tail or arr.ndim != 1 + len(shape_tail):
        want = ("(n,)" if not shape_tail
                else f"(n, {', '.join(map(str, shape_tail))})")
        raise InputError(f"{name} must have shape {want}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must be finite")
    return arr


@dataclass
class GaussianSet:
    """Gaussian primitives: center, orientation (w,x,y,z quaternion),
    per-axis scale, opacity, and rgb color."""

    means: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray

    def __post_init__(self):
        self.means = _field(self.means, "means", (3,))
        self.rotations = _field(self.rotations, "rotations", (4,))
        self.scales = _field(self.scales, "scales", (3,))
        self.opacities = _field(self.opacities, "opacities", ())
        self.colors = _field(self.colors, "colors", (3,))
        n = self.means.shape[0]
        for name in ("rotations", "scales", "opacities", "colors"):
            count = getattr(self, name).shape[0]
            if count != n:
                raise InputError(
                    f"{name} has {count} entries but means has {n}"
                )
        norms = np.linalg.norm(self.rotations, axis=1)
        if norms.size and np.abs(norms - 1.0).max() > QUAT_NORM_TOL:
            idx = int(np.argmax(np.abs(norms - 1.0)))
            raise InputError(
                f"rotations[{idx}] is not unit-norm "
                f"(|q| = {norms[idx]:.8f})"
            )
        if self.scales.size and self.scales.min() <= 0.0:
            raise InputError("scales must be positive")
        if self.opacities.size and (
            self.opacities.min() < 0.0 or self.opacities.max() > 1.0
        ):
            raise InputError("opacities must lie in [0, 1]")

    @property
    def n(self):
        return self.means.shape[0]


@dataclass
class DeformedGaussians:
    """Advected primitives: deformed means and dense covariances."""

    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        self.means = _field(self.means, "means", (3,))
        self.covariances = _field(self.covariances, "covariances", (3, 3))
        if self.covariances.shape[0] != self.means.shape[0]:
            raise InputError(
                f"covariances has {self.covariances.shape[0]} entries but "
                f"means has {self.means.shape[0]}"
            )

    @property
    def n(self):
        return self.means.shape[0]


def _rotation_matrices(quats_wxyz):
    if quats_wxyz.shape[0] == 0:
        return np.zeros((0, 3, 3))
    return Rotation.from_quat(quats_wxyz[:, [1, 2, 3, 0]]).as_matrix()


def advect(gaussians, lbs_model, z):
    """Carry a Gaussian set through the deformation at handle vector z.

    Means map exactly like points; each covariance transforms as
    (F L)(F L)^T with L = R diag(s) and F the deformation gradient at
    the primitive's canonical mean.
    """
    X = gaussians.means
    if gaussians.n == 0:
        return DeformedGaussians(
            means=np.zeros((0, 3)), covariances=np.zeros((0, 3, 3))
        )
    means = deform(lbs_model, X, z)
    F = deformation_gradient(lbs_model, X, z)
    L = _rotation_matrices(gaussians.rotations) * gaussians.scales[:, None, :]
    Lp = F @ L
    return DeformedGaussians(
        means=means, covariances=Lp @ Lp.transpose(0, 2, 1)
    )


def deformed_to_set(deformed, template):
    """Refactor advected covariances into rotations and scales.

    Eigendecomposition recovers an orthonormal frame and per-axis
    scales reproducing each covariance (the individual factors are not
    unique); opacity and color carry over from the template set.
    """
    if deformed.n != template.n:
        raise InputError(
            f"deformed set has {deformed.n} primitives but the template "
            f"has {template.n}"
        )
    if deformed.n == 0:
        quats = np.zeros((0, 4))
        scales = np.zeros((0, 3))
    else:
        C = 0.5 * (deformed.covariances
                   + deformed.covariances.transpose(0, 2, 1))
        eigvals, vecs = np.linalg.eigh(C)
        scales = np.sqrt(np.maximum(eigvals, 1e-300))
        flip = np.linalg.det(vecs) < 0.0
        vecs[flip, :, 0] *= -1.0
        q_xyzw = Rotation.from_matrix(vecs).as_quat()
        quats = q_xyzw[:, [3, 0, 1, 2]]
        quats[quats[:, 0] < 0.0] *= -1.0
    return GaussianSet(
        means=deformed.means,
        rotations=quats,
        scales=scales,
        opacities=template.opacities,
        colors=template.colors,
    )


def save_gaussians(gaussians, path):
    """Write a Gaussian set as ASCII PLY (shortest round-trip floats)."""
    gs = gaussians
    columns = {
        "x": gs.means[:, 0], "y": gs.means[:, 1], "z": gs.means[:, 2],
        "rot_w": gs.rotations[:, 0], "rot_x": gs.rotations[:, 1],
        "rot_y": gs.rotations[:, 2], "rot_z": gs.rotations[:, 3],
        "scale_x": gs.scales[:, 0], "scale_y": gs.scales[:, 1],
        "scale_z": gs.scales[:, 2],
        "opacity": gs.opacities,
        "r": gs.colors[:, 0], "g": gs.colors[:, 1], "b": gs.colors[:, 2],
    }
    write_ply(path, columns, gs.n)


def load_gaussians(path):
    """Read a Gaussian set from ASCII PLY; validates all invariants."""
    props, count = read_ply(path)
    missing = [p for p in PROPERTY_NAMES if p not in props]
    if missing:
        raise InputError(f"{path}: missing vertex properties {missing}")
    extra = sorted(set(props) - set(PROPERTY_NAMES))
    if extra:
        raise InputError(f"{path}: unexpected vertex properties {extra}")
    stack = lambda names: np.stack([props[p] for p in names], axis=1)
    return GaussianSet(
        means=stack(("x", "y", "z")),
        rotations=stack(("rot_w", "rot_x", "rot_y", "rot_z")),
        scales=stack(("scale_x", "scale_y", "scale_z")),
        opacities=props["opacity"],
        colors=stack(("r", "g", "b")),
    )
