"""Point-cloud geometry: containers, canonical normalization, mass lumping,
and farthest-point cubature sampling.

Simulation always runs in a canonical frame: object centered at the origin
with its longest bounding-box axis scaled to unit length. When no volume
information is available the total volume defaults to half the bounding-box
volume (a fixed occupancy guess for typical closed shapes).
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_array, check_index, check_points, check_scalar, check_seed
from .errors import InputError
from .ply import read_ply

OCCUPANCY_FACTOR = 0.5
_VOLUME_SUM_RTOL = 1e-9


def _bbox_volume(positions):
    extent = positions.max(axis=0) - positions.min(axis=0)
    return float(np.prod(extent))


@dataclass
class PointSet:
    """Sampled object surface/interior points with lumped volumes and masses.

    Parameters
    ----------
    positions : (n, 3) float array, n >= 4.
    volumes : optional (n,) positive array; defaults to a uniform split of
        `total_volume`.
    masses : optional (n,) positive array; defaults to unit-density masses
        (equal to `volumes`).
    total_volume : optional scalar; defaults to bbox volume times the
        occupancy factor.
    """

    positions: np.ndarray
    volumes: np.ndarray = None
    masses: np.ndarray = None
    total_volume: float = None

    def __post_init__(self):
        self.positions = check_points(self.positions, "positions", min_points=4)
        n = self.positions.shape[0]
        if self.total_volume is None:
            if self.volumes is not None:
                self.volumes = check_array(self.volumes, "volumes", shape=(n,))
                self.total_volume = float(self.volumes.sum())
            else:
                bbox = _bbox_volume(self.positions)
                if bbox <= 0.0:
                    # Degenerate (flat/collinear) clouds still need a volume;
                    # fall back to the longest-extent cube.
                    extent = float(
                        (self.positions.max(axis=0) - self.positions.min(axis=0)).max()
                    )
                    if extent <= 0.0:
                        raise InputError("positions: degenerate point cloud (zero extent)")
                    bbox = extent**3
                self.total_volume = OCCUPANCY_FACTOR * bbox
        else:
            self.total_volume = check_scalar(
                self.total_volume, "total_volume", minimum=0.0, exclusive_min=True
            )
        if self.volumes is None:
            self.volumes = np.full(n, self.total_volume / n)
        else:
            self.volumes = check_array(self.volumes, "volumes", shape=(n,))
        if np.any(self.volumes <= 0.0):
            raise InputError("volumes: must be strictly positive")
        if not np.isclose(
            self.volumes.sum(), self.total_volume, rtol=_VOLUME_SUM_RTOL, atol=0.0
        ):
            raise InputError(
                f"volumes: sum {self.volumes.sum()} does not match "
                f"total_volume {self.total_volume}"
            )
        if self.masses is None:
            self.masses = self.volumes.copy()
        else:
            self.masses = check_array(self.masses, "masses", shape=(n,))
        if np.any(self.masses <= 0.0):
            raise InputError("masses: must be strictly positive")

    @property
    def n(self):
        return self.positions.shape[0]


@dataclass
class SimilarityTransform:
    """x_original = scale * x_canonical + translation."""

    scale: float
    translation: np.ndarray

    def apply(self, X):
        return np.asarray(X, dtype=np.float64) * self.scale + self.translation

    def invert(self, X):
        return (np.asarray(X, dtype=np.float64) - self.translation) / self.scale


def normalize_to_canonical(points):
    """Center at the bbox midpoint and scale the longest bbox axis to 1.

    Returns (canonical PointSet, SimilarityTransform back to the input
    frame). Volumes scale with 1/scale^3; masses are extrinsic and carried
    over unchanged.
    """
    lo = points.positions.min(axis=0)
    hi = points.positions.max(axis=0)
    scale = float((hi - lo).max())
    if scale <= 0.0:
        raise InputError("normalize_to_canonical: degenerate bounding box (zero extent)")
    center = 0.5 * (hi + lo)
    canonical = (points.positions - center) / scale
    s3 = scale**3
    out = PointSet(
        canonical,
        volumes=points.volumes / s3,
        masses=points.masses.copy(),
        total_volume=points.total_volume / s3,
    )
    return out, SimilarityTransform(scale=scale, translation=center)


def assign_masses(points, density, total_volume=None):
    """Uniformly split the total volume and lump mass = density * volume."""
    density = check_scalar(density, "density", minimum=0.0, exclusive_min=True)
    if total_volume is None:
        total_volume = points.total_volume
    else:
        total_volume = check_scalar(
            total_volume, "total_volume", minimum=0.0, exclusive_min=True
        )
    volumes = np.full(points.n, total_volume / points.n)
    return PointSet(
        points.positions.copy(),
        volumes=volumes,
        masses=density * volumes,
        total_volume=total_volume,
    )


@dataclass
class CubatureSet:
    """Cubature point indices into a PointSet plus quadrature weights."""

    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.indices = np.asarray(self.indices, dtype=np.int64)
        if self.indices.ndim != 1 or self.indices.size == 0:
            raise InputError("indices: expected a non-empty 1-d integer array")
        if len(np.unique(self.indices)) != len(self.indices):
            raise InputError("indices: duplicate cubature indices")
        self.weights = check_array(self.weights, "weights", shape=(len(self.indices),))
        if np.any(self.weights <= 0.0):
            raise InputError("weights: must be strictly positive")

    @property
    def k(self):
        return len(self.indices)


def farthest_point_indices(positions, k, first_index):
    """Greedy max-min sampling from an (n, 3) array; ties pick the lowest index."""
    positions = check_points(positions, "positions")
    n = positions.shape[0]
    k = check_index(k, "k", minimum=1, maximum=n)
    first_index = check_index(first_index, "first_index", minimum=0, maximum=n - 1)
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = first_index
    # min distance from every point to the chosen set, updated incrementally
    dist = np.linalg.norm(positions - positions[first_index], axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))  # argmax returns the first (lowest) maximizer
        chosen[i] = nxt
        np.minimum(dist, np.linalg.norm(positions - positions[nxt], axis=1), out=dist)
    return chosen


def farthest_point_sample(points, k, seed):
    """Farthest-point cubature over a PointSet.

    The first pick is a seeded uniform draw; weights are the uniform split
    total_volume / k.
    """
    k = check_index(k, "k", minimum=1, maximum=points.n)
    rng = np.random.default_rng(check_seed(seed))
    first = int(rng.integers(points.n))
    indices = farthest_point_indices(points.positions, k, first)
    weights = np.full(k, points.total_volume / k)
    return CubatureSet(indices=indices, weights=weights)


def load_points(path, total_volume=None):
    """Read positions from an ASCII PLY (x, y, z properties) or headerless CSV."""
    path = str(path)
    if path.endswith(".ply"):
        props, count = read_ply(path)
        for axis in ("x", "y", "z"):
            if axis not in props:
                raise InputError(f"{path}: vertex property '{axis}' is missing")
        X = np.column_stack([props["x"], props["y"], props["z"]])
    elif path.endswith(".csv"):
        try:
            X = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        except (OSError, ValueError) as exc:
            raise InputError(f"cannot parse CSV point file {path}: {exc}")
        if X.shape[1] != 3:
            raise InputError(f"{path}: expected 3 columns (x,y,z), got {X.shape[1]}")
    else:
        raise InputError(f"{path}: unsupported point file extension (use .ply or .csv)")
    return PointSet(X, total_volume=total_volume)
