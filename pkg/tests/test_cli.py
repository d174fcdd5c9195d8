"""Command-line interface: subcommand behavior, exit codes, file
outputs, and determinism (identical seeds must produce bit-identical
artifacts).

All commands run in-process through main(argv), which returns the exit
code; stdout/stderr are checked through capsys.
"""

import hashlib
import json

import numpy as np
import pytest
from stubs import constant_weight_model, random_lbs_model, zero_jacobian_model

from skinsim.cli import main
from skinsim.gaussians import GaussianSet, load_gaussians, save_gaussians
from skinsim.geometry import farthest_point_sample
from skinsim.neural import load_model, save_model
from skinsim.ply import write_ply
from skinsim.scene import load_scene
from skinsim.seeding import CUBATURE, derive_seed
from skinsim.trajectory import load_trajectory


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def work(tmp_path):
    rng = np.random.default_rng(42)
    pos = rng.uniform(-0.5, 0.5, size=(30, 3))
    write_ply(tmp_path / "cloud.ply",
              {"x": pos[:, 0], "y": pos[:, 1], "z": pos[:, 2]}, 30)
    doc = {
        "version": 1,
        "points": "cloud.ply",
        "material": {"model": "NeoHookean", "E": 5e4, "nu": 0.35,
                     "density": 1000.0},
        "handles": 2,
        "cubature": 8,
        "dt": 1.0 / 24.0,
        "substeps": 1,
        "frames": 4,
        "gravity": [0.0, -9.8, 0.0],
        "boundaries": [{"type": "floor", "height": -0.6,
                        "stiffness": 1e5}],
        "seed": 3,
    }
    (tmp_path / "scene.json").write_text(json.dumps(doc))
    save_model(tmp_path / "lbs.bin", random_lbs_model(2, seed=7))
    return tmp_path


class TestErrorMapping:
    def test_missing_scene_exit_1(self, work, capsys):
        code = run("simulate", work / "absent.json", "--lbs",
                   work / "lbs.bin", "--out", work / "t.bin")
        assert code == 1
        assert "absent.json" in capsys.readouterr().err

    def test_unknown_command_exit_1(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "frobnicate" in capsys.readouterr().err

    def test_no_command_exit_1(self, capsys):
        assert main([]) == 1

    def test_solver_failure_exit_2(self, work, capsys):
        # two handles with identical constant weights duplicate the
        # reduced basis columns, so the mass matrix is exactly singular
        save_model(work / "bad.bin", constant_weight_model([0.5, 0.5]))
        code = run("simulate", work / "scene.json", "--lbs",
                   work / "bad.bin", "--out", work / "t.bin")
        assert code == 2
        assert "frame 1" in capsys.readouterr().err


class TestTrainLbs:
    def test_writes_loadable_model(self, work, capsys):
        code = run("train-lbs", work / "scene.json", "--out",
                   work / "w.bin", "--iterations", 4)
        assert code == 0
        model = load_model(work / "w.bin")
        assert model.n_handles == 2
        out = capsys.readouterr().out
        assert "loss" in out
        assert "w.bin" in out

    def test_deterministic(self, work):
        run("train-lbs", work / "scene.json", "--out", work / "a.bin",
            "--iterations", 3)
        run("train-lbs", work / "scene.json", "--out", work / "b.bin",
            "--iterations", 3)
        assert sha(work / "a.bin") == sha(work / "b.bin")


class TestTrainJacobian:
    def test_writes_loadable_model(self, work, capsys):
        code = run("train-jacobian", work / "scene.json", "--lbs",
                   work / "lbs.bin", "--out", work / "j.bin",
                   "--iterations", 4, "--eval-every", 2,
                   "--hidden", "64,64", "--pe-levels", 8)
        assert code == 0
        model = load_model(work / "j.bin")
        assert model.n_handles == 2
        assert "holdout" in capsys.readouterr().out

    def test_deterministic(self, work):
        args = ("train-jacobian", work / "scene.json", "--lbs",
                work / "lbs.bin", "--iterations", 3, "--eval-every", 3,
                "--hidden", "24,24", "--pe-levels", 4)
        run(*args, "--out", work / "a.bin")
        run(*args, "--out", work / "b.bin")
        assert sha(work / "a.bin") == sha(work / "b.bin")


class TestSampleCubature:
    def test_matches_library_sampling(self, work):
        code = run("sample-cubature", work / "scene.json", "--out",
                   work / "cub.json")
        assert code == 0
        doc = json.loads((work / "cub.json").read_text())
        scene = load_scene(work / "scene.json")
        expected = farthest_point_sample(
            scene.points, 8, derive_seed(3, CUBATURE)
        )
        assert doc["indices"] == expected.indices.tolist()
        assert doc["weights"] == expected.weights.tolist()
        assert doc["count"] == 8
        assert doc["seed"] == 3

    def test_count_override(self, work):
        code = run("sample-cubature", work / "scene.json", "--out",
                   work / "cub.json", "--count", 5)
        assert code == 0
        doc = json.loads((work / "cub.json").read_text())
        assert len(doc["indices"]) == 5


class TestSimulate:
    def test_single_frame_is_rest_pose(self, work):
        code = run("simulate", work / "scene.json", "--lbs",
                   work / "lbs.bin", "--out", work / "t.bin",
                   "--frames", 1)
        assert code == 0
        traj = load_trajectory(work / "t.bin")
        assert traj.n_frames == 1
        scene = load_scene(work / "scene.json")
        rest32 = scene.points.positions.astype(np.float32)
        np.testing.assert_array_equal(
            traj.positions[0], rest32.astype(np.float64)
        )

    def test_deterministic(self, work, capsys):
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "a.bin")
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "b.bin")
        assert sha(work / "a.bin") == sha(work / "b.bin")
        out = capsys.readouterr().out
        assert "frame 1" in out
        assert "newton" in out.lower()

    def test_neural_and_forced_exact(self, work):
        save_model(work / "jac.bin", zero_jacobian_model(2, seed=8))
        code = run("simulate", work / "scene.json", "--lbs",
                   work / "lbs.bin", "--jacobian", work / "jac.bin",
                   "--out", work / "n.bin")
        assert code == 0
        code = run("simulate", work / "scene.json", "--lbs",
                   work / "lbs.bin", "--jacobian", work / "jac.bin",
                   "--exact-jacobian", "--out", work / "e.bin")
        assert code == 0
        # the zero-Jacobian net removes all elastic response, so the
        # two modes genuinely differ
        assert sha(work / "n.bin") != sha(work / "e.bin")

    def test_seed_override_changes_output(self, work):
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "a.bin", "--seed", 3)
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "b.bin", "--seed", 4)
        base = sha(work / "a.bin")
        scene_default = sha(work / "b.bin")
        assert base != scene_default  # different cubature sampling


class TestFitPredictEval:
    @pytest.fixture
    def observed(self, work):
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "obs.bin")
        return work / "obs.bin"

    def test_fit_writes_schema_valid_json(self, work, observed, capsys):
        code = run("fit", work / "scene.json", "--observed", observed,
                   "--lbs", work / "lbs.bin", "--out", work / "fit.json",
                   "--frames", 4, "--window", 2, "--iterations", 2,
                   "--init-e", 5e4, "--init-nu", 0.35)
        assert code == 0
        doc = json.loads((work / "fit.json").read_text())
        assert set(doc) == {"E", "nu", "loss_history", "iterations",
                            "estimator"}
        assert doc["iterations"] == 2
        assert len(doc["loss_history"]) == 2
        assert 1e4 <= doc["E"] <= 1e6
        out = capsys.readouterr().out
        assert "fit.json" in out

    def test_predict_replays_future(self, work, observed):
        run("fit", work / "scene.json", "--observed", observed,
            "--lbs", work / "lbs.bin", "--out", work / "fit.json",
            "--frames", 4, "--window", 2, "--iterations", 2,
            "--init-e", 5e4, "--init-nu", 0.35)
        code = run("predict", work / "scene.json", "--observed", observed,
                   "--fitted", work / "fit.json", "--lbs",
                   work / "lbs.bin", "--out", work / "pred.bin",
                   "--state-at", 1, "--horizon", 2)
        assert code == 0
        pred = load_trajectory(work / "pred.bin")
        obs = load_trajectory(observed)
        assert pred.n_frames == 2
        # fitted at the generating parameters: the replay reproduces the
        # stored frames up to float32 storage noise
        np.testing.assert_allclose(
            pred.positions, obs.positions[2:4], atol=1e-4
        )

    def test_predict_rejects_malformed_fit_file(self, work, observed):
        (work / "bad.json").write_text(json.dumps({"E": 5e4}))
        code = run("predict", work / "scene.json", "--observed", observed,
                   "--fitted", work / "bad.json", "--lbs",
                   work / "lbs.bin", "--out", work / "p.bin")
        assert code == 1

    def test_eval_identical_zeros(self, work, observed, capsys):
        code = run("eval", "--pred", observed, "--ref", observed)
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["mean_point_error"] == 0.0
        assert doc["max_point_error"] == 0.0
        assert doc["log_e_mae"] is None

    def test_eval_with_parameters(self, work, observed, capsys):
        code = run("eval", "--pred", observed, "--ref", observed,
                   "--e-hat", 1e5, "--e-true", 1e4,
                   "--nu-hat", 0.4, "--nu-true", 0.35)
        assert code == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["log_e_mae"] == pytest.approx(1.0)
        assert doc["nu_mae"] == pytest.approx(0.05)

    def test_eval_shape_mismatch_exit_1(self, work, observed, capsys):
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "short.bin", "--frames", 2)
        code = run("eval", "--pred", work / "short.bin", "--ref", observed)
        assert code == 1


class TestExportGaussians:
    def test_numbered_frames(self, work, capsys):
        rng = np.random.default_rng(11)
        q = rng.normal(size=(4, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        gs = GaussianSet(
            means=rng.uniform(-0.4, 0.4, size=(4, 3)),
            rotations=q,
            scales=np.full((4, 3), 0.05),
            opacities=np.full(4, 0.8),
            colors=np.full((4, 3), 0.5),
        )
        save_gaussians(gs, work / "g.ply")
        run("simulate", work / "scene.json", "--lbs", work / "lbs.bin",
            "--out", work / "t.bin", "--frames", 2)
        code = run("export-gaussians", work / "scene.json",
                   "--gaussians", work / "g.ply", "--trajectory",
                   work / "t.bin", "--lbs", work / "lbs.bin",
                   "--out-dir", work / "frames")
        assert code == 0
        first = work / "frames" / "frame_0000.ply"
        second = work / "frames" / "frame_0001.ply"
        assert first.exists() and second.exists()
        back = load_gaussians(first)
        # frame 0 is the rest pose: means survive the z round-trip
        np.testing.assert_allclose(back.means, gs.means, atol=1e-5)
        np.testing.assert_array_equal(back.opacities, gs.opacities)
        moved = load_gaussians(second)
        assert not np.allclose(moved.means, gs.means, atol=1e-5)


class TestThreadCap:
    def test_cap_applies(self, work, monkeypatch):
        monkeypatch.setenv("V2S_THREADS", "1")
        code = run("simulate", work / "scene.json", "--lbs",
                   work / "lbs.bin", "--out", work / "t.bin",
                   "--frames", 2)
        assert code == 0

    def test_invalid_cap_exit_1(self, work, monkeypatch, capsys):
        monkeypatch.setenv("V2S_THREADS", "abc")
        code = run("simulate", work / "scene.json", "--lbs",
                   work / "lbs.bin", "--out", work / "t.bin")
        assert code == 1
        assert "V2S_THREADS" in capsys.readouterr().err
