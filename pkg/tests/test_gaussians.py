"""Gaussian primitives: validation, advection through the deformation
field, covariance refactoring, and ASCII PLY round-trips.

Oracles: hand matrix algebra for the rotation-stub covariance rule,
the determinant identity det(cov') = det(F)^2 det(cov), and bitwise
file round-trips.
"""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation
from stubs import constant_weight_model, random_lbs_model

from skinsim.errors import InputError
from skinsim.gaussians import (
    PROPERTY_NAMES,
    DeformedGaussians,
    GaussianSet,
    advect,
    deformed_to_set,
    load_gaussians,
    save_gaussians,
)
from skinsim.kinematics import deform, deformation_gradient


def random_set(n=12, seed=0):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return GaussianSet(
        means=rng.normal(size=(n, 3)) * 0.3,
        rotations=q,
        scales=10.0 ** rng.uniform(-2.0, -1.0, size=(n, 3)),
        opacities=rng.uniform(0.0, 1.0, size=n),
        colors=rng.uniform(0.0, 1.0, size=(n, 3)),
    )


def empty_set():
    return GaussianSet(
        means=np.zeros((0, 3)),
        rotations=np.zeros((0, 4)),
        scales=np.zeros((0, 3)),
        opacities=np.zeros(0),
        colors=np.zeros((0, 3)),
    )


def base_covariances(gs):
    R = Rotation.from_quat(gs.rotations[:, [1, 2, 3, 0]]).as_matrix()
    L = R * gs.scales[:, None, :]
    return L @ L.transpose(0, 2, 1)


def affine_z(A, t):
    Z = np.zeros((3, 4))
    Z[:, :3] = A
    Z[:, 3] = t
    return Z.reshape(-1)


class TestGaussianSet:
    def test_valid(self):
        gs = random_set()
        assert gs.n == 12
        assert gs.means.shape == (12, 3)

    def test_empty_valid(self):
        assert empty_set().n == 0

    def test_quaternion_norm_tolerance(self):
        gs = random_set(n=3)
        q = gs.rotations.copy()
        q[1] *= 1.0 + 5e-7  # inside the 1e-6 tolerance
        GaussianSet(means=gs.means, rotations=q, scales=gs.scales,
                    opacities=gs.opacities, colors=gs.colors)
        q[1] *= 1.0 + 1e-3
        with pytest.raises(InputError):
            GaussianSet(means=gs.means, rotations=q, scales=gs.scales,
                        opacities=gs.opacities, colors=gs.colors)

    def test_nonpositive_scale(self):
        gs = random_set(n=3)
        for bad in (0.0, -0.01):
            s = gs.scales.copy()
            s[2, 1] = bad
            with pytest.raises(InputError):
                GaussianSet(means=gs.means, rotations=gs.rotations,
                            scales=s, opacities=gs.opacities,
                            colors=gs.colors)

    def test_opacity_range(self):
        gs = random_set(n=3)
        for bad in (-0.1, 1.1):
            o = gs.opacities.copy()
            o[0] = bad
            with pytest.raises(InputError):
                GaussianSet(means=gs.means, rotations=gs.rotations,
                            scales=gs.scales, opacities=o,
                            colors=gs.colors)

    def test_mismatched_counts(self):
        gs = random_set(n=4)
        with pytest.raises(InputError):
            GaussianSet(means=gs.means[:3], rotations=gs.rotations,
                        scales=gs.scales, opacities=gs.opacities,
                        colors=gs.colors)

    def test_bad_shapes(self):
        with pytest.raises(InputError):
            GaussianSet(means=np.zeros((2, 2)), rotations=np.zeros((2, 4)),
                        scales=np.ones((2, 3)), opacities=np.zeros(2),
                        colors=np.zeros((2, 3)))


class TestAdvect:
    def test_rest_coordinates_change_nothing(self):
        gs = random_set()
        model = random_lbs_model(2, seed=5)
        out = advect(gs, model, np.zeros(24))
        assert isinstance(out, DeformedGaussians)
        np.testing.assert_array_equal(out.means, gs.means)
        np.testing.assert_array_equal(out.covariances, base_covariances(gs))

    def test_global_rotation_conjugates_covariance(self):
        # constant weights: grad w = 0, so F = R0 everywhere and the
        # covariance transforms by conjugation
        gs = random_set(seed=1)
        model = constant_weight_model([1.0])
        R0 = Rotation.from_rotvec([0.3, -0.2, 0.5]).as_matrix()
        t = np.array([0.1, 0.2, -0.3])
        z = affine_z(R0 - np.eye(3), t)
        out = advect(gs, model, z)
        np.testing.assert_allclose(
            out.means, gs.means @ R0.T + t, atol=1e-12
        )
        expected = np.einsum("ab,kbc,dc->kad", R0, base_covariances(gs), R0)
        np.testing.assert_allclose(out.covariances, expected, atol=1e-12)

    def test_means_match_kinematics(self):
        gs = random_set(seed=2)
        model = random_lbs_model(3, seed=7)
        rng = np.random.default_rng(8)
        z = rng.normal(size=36) * 0.1
        out = advect(gs, model, z)
        np.testing.assert_array_equal(out.means, deform(model, gs.means, z))

    def test_symmetric_psd(self):
        gs = random_set(seed=3)
        model = random_lbs_model(2, seed=9)
        z = np.random.default_rng(10).normal(size=24) * 0.2
        cov = advect(gs, model, z).covariances
        np.testing.assert_array_equal(cov, cov.transpose(0, 2, 1))
        assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_determinant_identity(self):
        gs = random_set(seed=4)
        model = random_lbs_model(2, seed=11)
        z = np.random.default_rng(12).normal(size=24) * 0.2
        out = advect(gs, model, z)
        F = deformation_gradient(model, gs.means, z)
        expected = np.linalg.det(F) ** 2 * np.linalg.det(base_covariances(gs))
        np.testing.assert_allclose(
            np.linalg.det(out.covariances), expected, rtol=1e-8
        )

    def test_empty(self):
        out = advect(empty_set(), random_lbs_model(2, seed=13), np.zeros(24))
        assert out.means.shape == (0, 3)
        assert out.covariances.shape == (0, 3, 3)

    def test_bad_z_length(self):
        with pytest.raises(InputError):
            advect(random_set(), random_lbs_model(2, seed=14), np.zeros(12))


class TestDeformedToSet:
    def test_refactors_covariance(self):
        gs = random_set(seed=6)
        model = random_lbs_model(2, seed=15)
        z = np.random.default_rng(16).normal(size=24) * 0.2
        out = advect(gs, model, z)
        gs2 = deformed_to_set(out, gs)
        np.testing.assert_array_equal(gs2.means, out.means)
        np.testing.assert_array_equal(gs2.opacities, gs.opacities)
        np.testing.assert_array_equal(gs2.colors, gs.colors)
        np.testing.assert_allclose(
            np.linalg.norm(gs2.rotations, axis=1), 1.0, atol=1e-12
        )
        assert np.all(gs2.scales > 0)
        # the refactored (rotation, scale) pair reproduces the covariance
        np.testing.assert_allclose(
            base_covariances(gs2), out.covariances, atol=1e-10
        )

    def test_empty(self):
        gs = empty_set()
        out = advect(gs, random_lbs_model(1, seed=17), np.zeros(12))
        assert deformed_to_set(out, gs).n == 0

    def test_count_mismatch(self):
        gs = random_set(n=5)
        out = advect(gs, random_lbs_model(1, seed=18), np.zeros(12))
        with pytest.raises(InputError):
            deformed_to_set(out, random_set(n=4, seed=7))


class TestPlyIO:
    def test_roundtrip_bit_exact(self, tmp_path):
        gs = random_set(seed=8)
        path = tmp_path / "g.ply"
        save_gaussians(gs, path)
        back = load_gaussians(path)
        np.testing.assert_array_equal(back.means, gs.means)
        np.testing.assert_array_equal(back.rotations, gs.rotations)
        np.testing.assert_array_equal(back.scales, gs.scales)
        np.testing.assert_array_equal(back.opacities, gs.opacities)
        np.testing.assert_array_equal(back.colors, gs.colors)

    def test_empty_roundtrip(self, tmp_path):
        path = tmp_path / "empty.ply"
        save_gaussians(empty_set(), path)
        assert load_gaussians(path).n == 0

    def test_property_names(self, tmp_path):
        path = tmp_path / "g.ply"
        save_gaussians(random_set(n=2, seed=9), path)
        header = path.read_text().split("end_header")[0]
        for name in PROPERTY_NAMES:
            assert f"property double {name}" in header
        assert PROPERTY_NAMES[:3] == ("x", "y", "z")

    def test_missing_opacity_column(self, tmp_path):
        path = tmp_path / "bad.ply"
        props = [p for p in PROPERTY_NAMES if p != "opacity"]
        lines = ["ply", "format ascii 1.0", "element vertex 1"]
        lines += [f"property double {p}" for p in props]
        lines += ["end_header", " ".join(["0.0"] * 3 + ["1.0"] +
                                         ["0.0"] * 3 + ["0.1"] * 3 +
                                         ["0.5"] * 3)]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(InputError, match="opacity"):
            load_gaussians(path)

    def test_unknown_property_rejected(self, tmp_path):
        path = tmp_path / "extra.ply"
        lines = ["ply", "format ascii 1.0", "element vertex 1"]
        lines += [f"property double {p}" for p in PROPERTY_NAMES]
        lines += ["property double f_dc_0", "end_header",
                  " ".join(["0.0"] * 3 + ["1.0"] + ["0.0"] * 3 +
                           ["0.1"] * 3 + ["0.5"] + ["0.5"] * 3 + ["0.0"])]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(InputError, match="f_dc_0"):
            load_gaussians(path)

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "short.ply"
        lines = ["ply", "format ascii 1.0", "element vertex 1"]
        lines += [f"property double {p}" for p in PROPERTY_NAMES]
        lines += ["end_header", "0.0 0.0 0.0"]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(InputError):
            load_gaussians(path)

    def test_not_a_ply(self, tmp_path):
        path = tmp_path / "nope.ply"
        path.write_text("hello\n")
        with pytest.raises(InputError):
            load_gaussians(path)

    def test_invalid_payload_rejected(self, tmp_path):
        # a file whose numbers violate the set invariants fails on load
        gs = random_set(n=2, seed=10)
        path = tmp_path / "badq.ply"
        save_gaussians(gs, path)
        text = path.read_text().replace("end_header", "end_header", 1)
        lines = text.splitlines()
        row = lines[-1].split()
        row[3:7] = ["2.0", "0.0", "0.0", "0.0"]  # non-unit quaternion
        lines[-1] = " ".join(row)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(InputError):
            load_gaussians(path)
