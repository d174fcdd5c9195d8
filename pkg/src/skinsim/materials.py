"""Hyperelastic constitutive models and plastic return maps.

Energy densities, first Piola-Kirchhoff stress, and stress Hessians for
compressible Neo-Hookean and St. Venant-Kirchhoff solids, plus
multiplicative-plasticity return maps (von Mises and Drucker-Prager)
formulated on Hencky strains of a rotation-variant SVD.

All entry points accept a single deformation gradient ``(3, 3)`` or a
batch ``(n, 3, 3)``.  Hessians are returned in row-major vectorization:
index ``3 * a + b`` for entry ``F[a, b]``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericalError
from ._validation import check_scalar

ENERGY_KINDS = ("neo", "stvk")
MODEL_NAMES = ("NeoHookean", "StVK_VonMises", "StVK_DruckerPrager")

_EYE = np.eye(3)
_DELTA_ACBD = np.einsum("ac,bd->abcd", _EYE, _EYE)


def lame(youngs, poisson):
    """Convert Young's modulus and Poisson's ratio to (mu, lam)."""
    check_scalar(youngs, "youngs", minimum=0.0, exclusive_min=True)
    check_scalar(poisson, "poisson")
    if not -1.0 < poisson < 0.5:
        raise InputError(
            f"poisson must lie in (-1, 0.5), got {poisson!r}"
        )
    youngs = float(youngs)
    poisson = float(poisson)
    mu = youngs / (2.0 * (1.0 + poisson))
    lam = youngs * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


def _as_batch(F, name="F"):
    F = np.asarray(F, dtype=np.float64)
    if F.shape == (3, 3):
        return F[None], True
    if F.ndim == 3 and F.shape[1:] == (3, 3):
        return F, False
    raise InputError(
        f"{name} must have shape (3, 3) or (n, 3, 3), got {F.shape}"
    )


def _check_kind(kind):
    if kind not in ENERGY_KINDS:
        raise InputError(f"kind must be one of {ENERGY_KINDS}, got {kind!r}")


def _log_det(F):
    det = np.linalg.det(F)
    if np.any(det <= 0.0):
        raise NumericalError(
            "deformation gradient has non-positive determinant"
        )
    return np.log(det)


def psi(F, mu, lam, kind):
    """Strain energy density. Scalar for a single F, (n,) for a batch."""
    _check_kind(kind)
    Fb, single = _as_batch(F)
    if not np.all(np.isfinite(Fb)):
        raise InputError("F must be finite")
    if kind == "neo":
        logJ = _log_det(Fb)
        I1 = np.einsum("nab,nab->n", Fb, Fb)
        out = 0.5 * mu * (I1 - 3.0) - mu * logJ + 0.5 * lam * logJ**2
    else:
        G = 0.5 * (np.einsum("nba,nbc->nac", Fb, Fb) - _EYE)
        trG = np.trace(G, axis1=1, axis2=2)
        out = mu * np.einsum("nab,nab->n", G, G) + 0.5 * lam * trG**2
    return float(out[0]) if single else out


def stress(F, mu, lam, kind):
    """First Piola-Kirchhoff stress, same leading shape as F."""
    _check_kind(kind)
    Fb, single = _as_batch(F)
    if kind == "neo":
        logJ = _log_det(Fb)
        Fit = np.linalg.inv(Fb).swapaxes(1, 2)
        out = mu * (Fb - Fit) + lam * logJ[:, None, None] * Fit
    else:
        G = 0.5 * (np.einsum("nba,nbc->nac", Fb, Fb) - _EYE)
        trG = np.trace(G, axis1=1, axis2=2)
        S = 2.0 * mu * G + lam * trG[:, None, None] * _EYE
        out = np.einsum("nab,nbc->nac", Fb, S)
    return out[0] if single else out


def project_spd(H):
    """Clamp negative eigenvalues of symmetric matrices to zero."""
    H = np.asarray(H, dtype=np.float64)
    Hs = 0.5 * (H + np.swapaxes(H, -1, -2))
    w, V = np.linalg.eigh(Hs)
    w = np.clip(w, 0.0, None)
    return (V * w[..., None, :]) @ np.swapaxes(V, -1, -2)


def stress_hessian(F, mu, lam, kind, project=True):
    """Second derivative of psi wrt F in row-major vec layout.

    Returns (9, 9) for a single F or (n, 9, 9) for a batch; with
    ``project=True`` each matrix is projected to the PSD cone.
    """
    _check_kind(kind)
    Fb, single = _as_batch(F)
    n = Fb.shape[0]
    if kind == "neo":
        logJ = _log_det(Fb)
        Q = np.linalg.inv(Fb)
        coef = (mu - lam * logJ)[:, None, None, None, None]
        H4 = (
            mu * _DELTA_ACBD
            + coef * np.einsum("nda,nbc->nabcd", Q, Q)
            + lam * np.einsum("nba,ndc->nabcd", Q, Q)
        )
    else:
        G = 0.5 * (np.einsum("nba,nbc->nac", Fb, Fb) - _EYE)
        trG = np.trace(G, axis1=1, axis2=2)
        S = 2.0 * mu * G + lam * trG[:, None, None] * _EYE
        FFt = np.einsum("nab,ncb->nac", Fb, Fb)
        H4 = (
            np.einsum("ac,nbd->nabcd", _EYE, S)
            + mu * np.einsum("nad,ncb->nabcd", Fb, Fb)
            + mu * np.einsum("nac,bd->nabcd", FFt, _EYE)
            + lam * np.einsum("nab,ncd->nabcd", Fb, Fb)
        )
    H = H4.reshape(n, 9, 9)
    if project:
        H = project_spd(H)
    return H[0] if single else H


def svd_rotation_variant(F):
    """SVD with both factors proper rotations.

    Reflections are absorbed into the sign of the last singular value,
    so ``(U * s) @ Vt`` reconstructs F with ``det U = det Vt = +1``.
    """
    Fb, single = _as_batch(F)
    if not np.all(np.isfinite(Fb)):
        raise InputError("F must be finite")
    U, s, Vt = np.linalg.svd(Fb)
    flip_u = np.linalg.det(U) < 0.0
    U[flip_u, :, -1] *= -1.0
    s[flip_u, -1] *= -1.0
    flip_v = np.linalg.det(Vt) < 0.0
    Vt[flip_v, -1, :] *= -1.0
    s[flip_v, -1] *= -1.0
    if single:
        return U[0], s[0], Vt[0]
    return U, s, Vt


def _hencky(Fb):
    U, s, Vt = svd_rotation_variant(Fb)
    if np.any(s <= 0.0):
        raise NumericalError(
            "return map requires positive singular values"
        )
    return U, np.log(s), Vt


def return_map(F, mu, lam, kind, yield_stress=None, friction_angle=None):
    """Project elastic deformation gradients back to the yield surface.

    ``kind`` is "von_mises" (deviatoric Hencky flow, needs
    ``yield_stress``) or "drucker_prager" (cohesionless, needs
    ``friction_angle``).  Entries already inside the elastic region
    are returned unchanged; a fully elastic call returns the input
    array itself.
    """
    Fb, single = _as_batch(F)
    U, eps, Vt = _hencky(Fb)
    tr = eps.sum(axis=1)
    dev = eps - tr[:, None] / 3.0
    norm = np.linalg.norm(dev, axis=1)

    if kind == "von_mises":
        if yield_stress is None:
            raise InputError("von Mises return map requires yield_stress")
        dgamma = norm - yield_stress / (2.0 * mu)
        plastic = (dgamma > 0.0) & (norm > 0.0)
        if not plastic.any():
            return F
        eps_new = eps.copy()
        scale = (dgamma[plastic] / norm[plastic])[:, None]
        eps_new[plastic] = eps[plastic] - scale * dev[plastic]
    elif kind == "drucker_prager":
        if friction_angle is None:
            raise InputError(
                "Drucker-Prager return map requires friction_angle"
            )
        theta = friction_angle
        alpha = np.sqrt(2.0 / 3.0) * 2.0 * np.sin(theta) / (3.0 - np.sin(theta))
        expand = tr > 0.0
        dgamma = norm + alpha * (3.0 * lam + 2.0 * mu) * tr / (2.0 * mu)
        shear = (~expand) & (dgamma > 0.0) & (norm > 0.0)
        if not (expand.any() or shear.any()):
            return F
        eps_new = eps.copy()
        eps_new[expand] = 0.0
        scale = (dgamma[shear] / norm[shear])[:, None]
        eps_new[shear] = eps[shear] - scale * dev[shear]
        plastic = expand | shear
    else:
        raise InputError(
            f"kind must be 'von_mises' or 'drucker_prager', got {kind!r}"
        )

    out = Fb.copy()
    out[plastic] = np.einsum(
        "nab,nb,nbc->nac", U[plastic], np.exp(eps_new[plastic]), Vt[plastic]
    )
    return out[0] if single else out


def yield_excess(F, mu, lam, mat):
    """Signed distance above the yield surface in Hencky-strain units.

    Non-positive values mean the state is admissible.  Purely elastic
    materials report 0.
    """
    if not mat.has_plasticity:
        Fb, single = _as_batch(F)
        return 0.0 if single else np.zeros(Fb.shape[0])
    Fb, single = _as_batch(F)
    _, eps, _ = _hencky(Fb)
    tr = eps.sum(axis=1)
    dev = eps - tr[:, None] / 3.0
    norm = np.linalg.norm(dev, axis=1)
    if mat.model == "StVK_VonMises":
        out = norm - mat.yield_stress / (2.0 * mu)
    else:
        theta = mat.friction_angle
        alpha = np.sqrt(2.0 / 3.0) * 2.0 * np.sin(theta) / (3.0 - np.sin(theta))
        out = np.where(
            tr > 0.0,
            np.maximum(norm, tr),
            norm + alpha * (3.0 * lam + 2.0 * mu) * tr / (2.0 * mu),
        )
    return float(out[0]) if single else out


@dataclass
class MaterialParams:
    """Material description used by scenes and the simulator."""

    model: str
    youngs: float
    poisson: float
    density: float
    yield_stress: float = None
    friction_angle: float = None

    def __post_init__(self):
        if self.model not in MODEL_NAMES:
            raise InputError(
                f"model must be one of {MODEL_NAMES}, got {self.model!r}"
            )
        lame(self.youngs, self.poisson)  # validates the elastic pair
        if not 0.0 <= self.poisson <= 0.49:
            raise InputError(
                f"poisson must lie in [0, 0.49], got {self.poisson!r}"
            )
        check_scalar(self.density, "density", minimum=0.0, exclusive_min=True)
        if self.model == "StVK_VonMises":
            if self.yield_stress is None:
                raise InputError("StVK_VonMises requires yield_stress")
            check_scalar(
                self.yield_stress, "yield_stress", minimum=0.0,
                exclusive_min=True,
            )
        if self.model == "StVK_DruckerPrager":
            if self.friction_angle is None:
                raise InputError(
                    "StVK_DruckerPrager requires friction_angle"
                )
            check_scalar(self.friction_angle, "friction_angle")
            if not 0.0 < self.friction_angle < 0.5 * np.pi:
                raise InputError(
                    "friction_angle must lie in (0, pi/2) radians, got "
                    f"{self.friction_angle!r}"
                )

    @property
    def energy_kind(self):
        return "neo" if self.model == "NeoHookean" else "stvk"

    @property
    def has_plasticity(self):
        return self.model in ("StVK_VonMises", "StVK_DruckerPrager")

    def lame(self):
        return lame(self.youngs, self.poisson)

    def apply_return_map(self, F):
        """Return-map F for plastic models; identity otherwise."""
        if not self.has_plasticity:
            return F
        mu, lam = self.lame()
        if self.model == "StVK_VonMises":
            return return_map(
                F, mu, lam, "von_mises", yield_stress=self.yield_stress
            )
        return return_map(
            F, mu, lam, "drucker_prager",
            friction_angle=self.friction_angle,
        )
