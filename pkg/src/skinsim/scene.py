"""Declarative scene files: strict JSON schema and runtime construction.

A scene document (version 1) names a point-cloud file, a material
block, solver settings, and boundary barriers.  All file paths are
resolved relative to the scene file.  Geometry is normalized to
canonical space on load; barrier quantities, gravity, and velocities
in the file are interpreted directly in canonical coordinates.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .barriers import FloorBarrier, SphereBarrier
from .errors import InputError
from .geometry import PointSet, assign_masses, load_points, normalize_to_canonical
from .materials import MODEL_NAMES, MaterialParams

DEFAULT_DT = 1.0 / 24.0

SCENE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "points", "material"],
    "properties": {
        "version": {"const": 1},
        "points": {"type": "string"},
        "material": {
            "type": "object",
            "additionalProperties": False,
            "required": ["model", "E", "nu", "density"],
            "properties": {
                "model": {"enum": list(MODEL_NAMES)},
                "E": {"type": "number", "exclusiveMinimum": 0},
                "nu": {"type": "number"},
                "density": {"type": "number", "exclusiveMinimum": 0},
                "tau_y": {"type": "number", "exclusiveMinimum": 0},
                "theta_f": {"type": "number"},
            },
        },
        "handles": {"type": "integer", "minimum": 1},
        "cubature": {"type": "integer", "minimum": 1},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "substeps": {"type": "integer", "minimum": 1},
        "frames": {"type": "integer", "minimum": 1},
        "gravity": {
            "type": "array", "items": {"type": "number"},
            "minItems": 3, "maxItems": 3,
        },
        "boundaries": {"type": "array", "items": {"type": "object"}},
        "initial_velocity": {
            "type": "array", "items": {"type": "number"},
            "minItems": 3, "maxItems": 3,
        },
        "seed": {"type": "integer", "minimum": 0},
        "lbs_model": {"type": "string"},
        "jacobian_model": {"type": "string"},
        "gaussians": {"type": "string"},
    },
}

_BOUNDARY_FIELDS = {
    "floor": {"required": ("height",), "optional": ("stiffness", "velocity")},
    "sphere": {"required": ("center", "radius"), "optional": ("stiffness",)},
}


@dataclass
class SceneConfig:
    """Fully constructed scene: canonical points plus solver settings."""

    points: PointSet
    to_canonical: object
    material: MaterialParams
    n_handles: int
    n_cubature: int
    dt: float
    substeps: int
    frames: int
    gravity: np.ndarray
    boundaries: list
    initial_velocity: np.ndarray
    seed: int
    lbs_model_path: Path = None
    jacobian_model_path: Path = None
    gaussians_path: Path = None
    source_path: Path = None

    def __post_init__(self):
        if self.n_cubature > self.points.positions.shape[0]:
            raise InputError(
                f"cubature count {self.n_cubature} exceeds point count "
                f"{self.points.positions.shape[0]}"
            )


def _parse_boundary(doc, index):
    kind = doc.get("type")
    if kind not in _BOUNDARY_FIELDS:
        raise InputError(
            f"boundaries[{index}]: unknown boundary type {kind!r}; "
            f"expected one of {sorted(_BOUNDARY_FIELDS)}"
        )
    spec = _BOUNDARY_FIELDS[kind]
    allowed = {"type", *spec["required"], *spec["optional"]}
    extra = sorted(set(doc) - allowed)
    if extra:
        raise InputError(
            f"boundaries[{index}]: unexpected keys {extra} for type {kind!r}"
        )
    missing = sorted(set(spec["required"]) - set(doc))
    if missing:
        raise InputError(
            f"boundaries[{index}]: missing keys {missing} for type {kind!r}"
        )
    kwargs = {k: v for k, v in doc.items() if k != "type"}
    cls = FloorBarrier if kind == "floor" else SphereBarrier
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise InputError(f"boundaries[{index}]: {exc}") from exc


def _material_from_block(block):
    return MaterialParams(
        model=block["model"],
        youngs=block["E"],
        poisson=block["nu"],
        density=block["density"],
        yield_stress=block.get("tau_y"),
        friction_angle=block.get("theta_f"),
    )


def scene_from_dict(doc, base_dir):
    """Validate a scene document and build the runtime SceneConfig."""
    try:
        jsonschema.validate(doc, SCENE_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "scene"
        raise InputError(f"scene schema violation at {where}: {exc.message}") from exc

    base_dir = Path(base_dir)
    material = _material_from_block(doc["material"])
    raw = load_points(base_dir / doc["points"])
    canonical, transform = normalize_to_canonical(raw)
    canonical = assign_masses(canonical, material.density)

    boundaries = [
        _parse_boundary(b, i) for i, b in enumerate(doc.get("boundaries", []))
    ]

    def opt_path(key):
        return base_dir / doc[key] if key in doc else None

    return SceneConfig(
        points=canonical,
        to_canonical=transform,
        material=material,
        n_handles=doc.get("handles", 10),
        n_cubature=doc.get("cubature", 500),
        dt=float(doc.get("dt", DEFAULT_DT)),
        substeps=doc.get("substeps", 4),
        frames=doc.get("frames", 24),
        gravity=np.asarray(doc.get("gravity", [0.0, -9.8, 0.0]), dtype=np.float64),
        boundaries=boundaries,
        initial_velocity=np.asarray(
            doc.get("initial_velocity", [0.0, 0.0, 0.0]), dtype=np.float64
        ),
        seed=doc.get("seed", 0),
        lbs_model_path=opt_path("lbs_model"),
        jacobian_model_path=opt_path("jacobian_model"),
        gaussians_path=opt_path("gaussians"),
    )


def load_scene(path):
    """Load, validate, and construct a scene from a JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"cannot read scene file {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    scene = scene_from_dict(doc, path.parent)
    scene.source_path = path
    return scene
