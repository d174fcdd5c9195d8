"""Trajectory container and its binary/CSV serialization.

The binary layout oracle is frozen by hand with struct.pack so the
writer cannot drift silently.
"""

import struct

import numpy as np
import pytest

from skinsim.errors import InputError
from skinsim.trajectory import Trajectory, load_trajectory, save_trajectory, write_csv


def small_traj():
    pos = np.array([[[1.0, 2.0, 3.0]], [[4.0, 5.0, 6.0]]])
    return Trajectory(positions=pos, dt=0.5)


class TestBinaryLayout:
    def test_frozen_bytes(self, tmp_path):
        # Frozen layout: magic, uint32 frames, uint32 n, float64 dt,
        # then frame-major little-endian float32 xyz triples.
        path = tmp_path / "t.traj"
        save_trajectory(small_traj(), path)
        expect = (
            b"V2STRJ1"
            + struct.pack("<II", 2, 1)
            + struct.pack("<d", 0.5)
            + struct.pack("<6f", 1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
        )
        assert path.read_bytes() == expect

    def test_round_trip_is_float32_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        pos = rng.normal(size=(5, 7, 3))
        t = Trajectory(positions=pos, dt=1.0 / 24.0)
        path = tmp_path / "t.traj"
        save_trajectory(t, path)
        back = load_trajectory(path)
        assert back.dt == t.dt
        np.testing.assert_array_equal(back.positions, pos.astype(np.float32))
        assert back.positions.dtype == np.float64

    def test_empty_trajectory(self, tmp_path):
        t = Trajectory(positions=np.zeros((0, 4, 3)), dt=0.1)
        path = tmp_path / "t.traj"
        save_trajectory(t, path)
        back = load_trajectory(path)
        assert back.n_frames == 0
        assert back.n_points == 4

    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.traj", tmp_path / "b.traj"
        save_trajectory(small_traj(), a)
        save_trajectory(small_traj(), b)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "t.traj"
        save_trajectory(small_traj(), path)
        raw = bytearray(path.read_bytes())
        raw[0] = ord(b"X")
        path.write_bytes(bytes(raw))
        with pytest.raises(InputError):
            load_trajectory(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "t.traj"
        save_trajectory(small_traj(), path)
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(InputError):
            load_trajectory(path)

    def test_trailing_bytes(self, tmp_path):
        path = tmp_path / "t.traj"
        save_trajectory(small_traj(), path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(InputError):
            load_trajectory(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputError):
            load_trajectory(tmp_path / "nope.traj")


class TestValidation:
    def test_shape_checked(self):
        with pytest.raises(InputError):
            Trajectory(positions=np.zeros((3, 4)), dt=0.1)

    def test_dt_positive(self):
        with pytest.raises(InputError):
            Trajectory(positions=np.zeros((1, 2, 3)), dt=0.0)

    def test_finite_positions(self):
        pos = np.zeros((1, 2, 3))
        pos[0, 0, 0] = np.nan
        with pytest.raises(InputError):
            Trajectory(positions=pos, dt=0.1)


class TestCsv:
    def test_frozen_csv(self, tmp_path):
        path = tmp_path / "t.csv"
        write_csv(small_traj(), path)
        expect = (
            "frame,index,x,y,z\n"
            "0,0,1.0,2.0,3.0\n"
            "1,0,4.0,5.0,6.0\n"
        )
        assert path.read_text() == expect

    def test_csv_round_trip_precision(self, tmp_path):
        pos = np.array([[[0.1, 1e-17, -2.5e8]]])
        path = tmp_path / "t.csv"
        write_csv(Trajectory(positions=pos, dt=1.0), path)
        line = path.read_text().splitlines()[1].split(",")
        assert [float(v) for v in line[2:]] == [0.1, 1e-17, -2.5e8]
