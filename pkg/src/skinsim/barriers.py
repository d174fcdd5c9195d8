"""Quadratic penalty barriers for boundary contact.

Each barrier exposes ``energy(positions, t)`` and
``contributions(positions, t)`` returning the total energy, a dense
per-point gradient, the indices of points in contact, and one PSD 3x3
Hessian block per contacting point (exact for the floor, Gauss-Newton
for the sphere).
"""

import numpy as np

from .errors import InputError
from ._validation import check_array, check_scalar


class FloorBarrier:
    """Half-space penalty k * sum max(0, h_f(t) - y)^2.

    ``velocity`` moves the floor height linearly in time; contact is
    frictionless (no horizontal force).
    """

    def __init__(self, height, stiffness=1e5, velocity=0.0):
        self.height = check_scalar(height, "height")
        self.stiffness = check_scalar(
            stiffness, "stiffness", minimum=0.0, exclusive_min=True
        )
        self.velocity = check_scalar(velocity, "velocity")

    def height_at(self, t):
        return self.height + self.velocity * t

    def energy(self, positions, t=0.0):
        positions = check_array(positions, "positions", ndim=2)
        depth = np.maximum(0.0, self.height_at(t) - positions[:, 1])
        return float(self.stiffness * np.sum(depth**2))

    def contributions(self, positions, t=0.0):
        positions = check_array(positions, "positions", ndim=2)
        depth = self.height_at(t) - positions[:, 1]
        idx = np.flatnonzero(depth > 0.0)
        grad = np.zeros_like(positions)
        grad[idx, 1] = -2.0 * self.stiffness * depth[idx]
        energy = float(self.stiffness * np.sum(depth[idx] ** 2))
        H = np.zeros((idx.size, 3, 3))
        H[:, 1, 1] = 2.0 * self.stiffness
        return energy, grad, idx, H


class SphereBarrier:
    """Spherical obstacle penalty k * sum max(0, r - |x - c|)^2."""

    def __init__(self, center, radius, stiffness=1e5):
        self.center = check_array(
            np.asarray(center, dtype=np.float64), "center", shape=(3,)
        )
        self.radius = check_scalar(
            radius, "radius", minimum=0.0, exclusive_min=True
        )
        self.stiffness = check_scalar(
            stiffness, "stiffness", minimum=0.0, exclusive_min=True
        )

    def energy(self, positions, t=0.0):
        positions = check_array(positions, "positions", ndim=2)
        d = np.linalg.norm(positions - self.center, axis=1)
        pen = np.maximum(0.0, self.radius - d)
        return float(self.stiffness * np.sum(pen**2))

    def contributions(self, positions, t=0.0):
        positions = check_array(positions, "positions", ndim=2)
        delta = positions - self.center
        d = np.linalg.norm(delta, axis=1)
        # a point exactly at the center has no defined normal; skip it
        idx = np.flatnonzero((d < self.radius) & (d > 1e-12))
        pen = self.radius - d[idx]
        normal = delta[idx] / d[idx, None]
        grad = np.zeros_like(positions)
        grad[idx] = -2.0 * self.stiffness * pen[:, None] * normal
        energy = float(self.stiffness * np.sum(pen**2))
        H = 2.0 * self.stiffness * np.einsum("pa,pb->pab", normal, normal)
        return energy, grad, idx, H


def barrier_energy(positions, barriers, t=0.0):
    """Total penalty energy and dense per-point gradient over barriers."""
    positions = check_array(positions, "positions", ndim=2)
    total = 0.0
    grad = np.zeros_like(positions, dtype=np.float64)
    for barrier in barriers:
        e, g, _, _ = barrier.contributions(positions, t)
        total += e
        grad += g
    return total, grad
