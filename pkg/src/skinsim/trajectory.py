"""Per-frame point positions with a fixed timestep, plus file IO.

Binary format (little-endian): magic ``V2STRJ1``, uint32 frame count,
uint32 point count, float64 dt, then frame-major float32 xyz triples.
"""

import numbers
import struct
from dataclasses import dataclass

import numpy as np

from .errors import InputError

MAGIC = b"V2STRJ1"
_HEADER = struct.Struct("<II d")


@dataclass
class Trajectory:
    """Positions array of shape (frames, n, 3) sampled every dt seconds."""

    positions: np.ndarray
    dt: float

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 3:
            raise InputError(
                f"positions must have shape (frames, n, 3), got {pos.shape}"
            )
        if not np.all(np.isfinite(pos)):
            raise InputError("positions must be finite")
        if not (isinstance(self.dt, numbers.Real) and np.isfinite(self.dt)
                and self.dt > 0):
            raise InputError(f"dt must be a positive finite scalar, got {self.dt!r}")
        self.positions = pos
        self.dt = float(self.dt)

    @property
    def n_frames(self):
        return self.positions.shape[0]

    @property
    def n_points(self):
        return self.positions.shape[1]


def save_trajectory(traj, path):
    """Write a trajectory in the V2STRJ1 binary layout."""
    data = traj.positions.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(traj.n_frames, traj.n_points, traj.dt))
        fh.write(data)


def load_trajectory(path):
    """Read a V2STRJ1 file back into a Trajectory (float64 in memory)."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise InputError(f"cannot read trajectory file {path}: {exc}") from exc
    if len(raw) < len(MAGIC) + _HEADER.size:
        raise InputError(f"{path}: file too short for a trajectory header")
    if raw[: len(MAGIC)] != MAGIC:
        raise InputError(f"{path}: bad magic, expected {MAGIC!r}")
    frames, n, dt = _HEADER.unpack_from(raw, len(MAGIC))
    body = raw[len(MAGIC) + _HEADER.size:]
    expect = frames * n * 3 * 4
    if len(body) != expect:
        raise InputError(
            f"{path}: expected {expect} data bytes for {frames} frames of "
            f"{n} points, found {len(body)}"
        )
    if not (np.isfinite(dt) and dt > 0):
        raise InputError(f"{path}: invalid dt {dt!r}")
    pos = np.frombuffer(body, dtype="<f4").reshape(frames, n, 3)
    return Trajectory(positions=pos.astype(np.float64), dt=dt)


def write_csv(traj, path):
    """Export as CSV rows ``frame,index,x,y,z`` with full precision."""
    with open(path, "w") as fh:
        fh.write("frame,index,x,y,z\n")
        for f in range(traj.n_frames):
            for i in range(traj.n_points):
                x, y, z = (float(v) for v in traj.positions[f, i])
                fh.write(f"{f},{i},{x!r},{y!r},{z!r}\n")
