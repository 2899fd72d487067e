import json

import numpy as np
import pytest

from faceseg.cli import cluster_colors, main
from faceseg.datagen import BUILTIN_SPECS, sample_hull
from faceseg.geometry import OUTLIER, normalize
from faceseg.matchlift import read_matrix
from faceseg.ply import read_ply, write_ply


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    code = main(
        [
            "gen", "--out", str(out), "--train", "2", "--val", "1", "--test", "1",
            "--min-points", "400", "--max-points", "500", "--seed", "3",
            "--trainval-specs", "cube,octahedron", "--test-specs", "cube",
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def cube_ply(tmp_path_factory):
    path = tmp_path_factory.mktemp("cloud") / "cube.ply"
    rng = np.random.default_rng(9)
    write_ply(normalize(sample_hull(BUILTIN_SPECS["cube"], 800, rng)), path)
    return path


@pytest.fixture(scope="module")
def fast_config(tmp_path_factory):
    # modest solver budget keeps CLI runs quick; the rounding outcome is
    # already stable at this residual level
    path = tmp_path_factory.mktemp("config") / "fast.json"
    path.write_text(json.dumps({"solver_max_iter": 600}))
    return path


class TestGen:
    def test_writes_splits_and_manifest(self, dataset_dir):
        assert len(list((dataset_dir / "train").glob("*.ply"))) == 2
        assert len(list((dataset_dir / "val").glob("*.ply"))) == 1
        assert len(list((dataset_dir / "test").glob("*.ply"))) == 1
        manifest = json.loads((dataset_dir / "manifest.json").read_text())
        assert len(manifest["clouds"]) == 4

    def test_deterministic_across_runs(self, tmp_path):
        args = [
            "gen", "--train", "1", "--val", "0", "--test", "0",
            "--min-points", "100", "--max-points", "150", "--seed", "11",
        ]
        for name in ("x", "y"):
            assert main(args + ["--out", str(tmp_path / name)]) == 0
        ply_a = next((tmp_path / "x" / "train").glob("*.ply"))
        ply_b = next((tmp_path / "y" / "train").glob("*.ply"))
        assert ply_a.read_bytes() == ply_b.read_bytes()

    def test_unknown_spec_is_usage_error(self, tmp_path, capsys):
        code = main(["gen", "--out", str(tmp_path), "--trainval-specs", "dodecahedron"])
        assert code == 2
        assert "dodecahedron" in capsys.readouterr().err


class TestRgs:
    def test_labels_written(self, cube_ply, tmp_path):
        out = tmp_path / "seg.ply"
        code = main(["rgs", "--input", str(cube_ply), "--out", str(out), "--k", "20"])
        assert code == 0
        cloud = read_ply(out)
        assert cloud.labels is not None
        assert np.unique(cloud.labels[cloud.labels >= 0]).size >= 1

    def test_missing_input(self, tmp_path, capsys):
        code = main(["rgs", "--input", str(tmp_path / "nope.ply"), "--out", str(tmp_path / "o.ply")])
        assert code == 2
        assert "nope.ply" in capsys.readouterr().err


class TestStageChain:
    def test_train_predict_lift_round(self, dataset_dir, tmp_path):
        model_path = tmp_path / "model.bin"
        code = main(
            ["train", "--data", str(dataset_dir), "--out", str(model_path),
             "--epochs", "2", "--seed", "4"]
        )
        assert code == 0 and model_path.exists()

        cloud_ply = next((dataset_dir / "test").glob("*.ply"))
        matrix_path = tmp_path / "soft.mat"
        sidecar = tmp_path / "patches.json"
        code = main(
            ["predict", "--model", str(model_path), "--input", str(cloud_ply),
             "--out", str(matrix_path), "--patches", str(sidecar), "--seed", "4"]
        )
        assert code == 0 and matrix_path.exists() and sidecar.exists()

        lifted_path = tmp_path / "lifted.mat"
        code = main(
            ["lift", "--input", str(matrix_path), "--out", str(lifted_path),
             "--m", "6", "--max-iter", "2000"]
        )
        assert code in (0, 1)  # 1 = not converged, still writes the matrix
        assert lifted_path.exists()

        rounded = tmp_path / "rounded.ply"
        code = main(
            ["round", "--input", str(lifted_path), "--patches", str(sidecar),
             "--cloud", str(cloud_ply), "--m", "6", "--out", str(rounded)]
        )
        assert code == 0
        labeled = read_ply(rounded)
        assert labeled.labels is not None
        assert len(labeled) == len(read_ply(cloud_ply))

    def test_predict_csv_output(self, dataset_dir, tmp_path):
        model_path = tmp_path / "m.bin"
        assert main(["train", "--data", str(dataset_dir), "--out", str(model_path), "--epochs", "1"]) == 0
        cloud_ply = next((dataset_dir / "val").glob("*.ply"))
        out = tmp_path / "soft.csv"
        assert main(["predict", "--model", str(model_path), "--input", str(cloud_ply), "--out", str(out)]) == 0
        values = np.loadtxt(out, delimiter=",")
        assert values.shape[0] == values.shape[1]


class TestSegment:
    def test_analytic_segmentation_artifacts(self, cube_ply, fast_config, tmp_path):
        out = tmp_path / "seg.ply"
        code = main(
            ["segment", "--input", str(cube_ply), "--out", str(out), "--analytic",
             "--config", str(fast_config), "--seed", "1"]
        )
        assert code == 0
        assert out.exists()
        assert (tmp_path / "seg.soft.mat").exists()
        assert (tmp_path / "seg.lifted.mat").exists()
        report = json.loads((tmp_path / "seg.report.json").read_text())
        assert report["num_points"] == 800
        assert report["m_used"] == 14
        assert report["config"]["seed"] == 1
        assert {"patching", "predict", "lift", "round"} <= set(report["timings"])

    def test_skip_lift_variant(self, cube_ply, tmp_path):
        out = tmp_path / "seg.ply"
        code = main(
            ["segment", "--input", str(cube_ply), "--out", str(out), "--analytic",
             "--skip-lift", "--seed", "1"]
        )
        assert code == 0
        assert not (tmp_path / "seg.lifted.mat").exists()
        report = json.loads((tmp_path / "seg.report.json").read_text())
        assert report["solver_iterations"] is None

    def test_missing_model_exit_code_names_path(self, cube_ply, tmp_path, capsys):
        missing = tmp_path / "absent.model"
        code = main(
            ["segment", "--input", str(cube_ply), "--out", str(tmp_path / "o.ply"),
             "--model", str(missing)]
        )
        assert code == 2
        assert str(missing) in capsys.readouterr().err

    def test_seed_reproducibility(self, cube_ply, fast_config, tmp_path):
        outs = []
        for name in ("r1.ply", "r2.ply"):
            out = tmp_path / name
            assert main(
                ["segment", "--input", str(cube_ply), "--out", str(out), "--analytic",
                 "--config", str(fast_config), "--seed", "7"]
            ) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_config_file_with_flag_override(self, cube_ply, tmp_path):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({"m": 10, "solver_max_iter": 500}))
        out = tmp_path / "seg.ply"
        code = main(
            ["segment", "--input", str(cube_ply), "--out", str(out), "--analytic",
             "--config", str(config_path), "--m", "12"]
        )
        assert code == 0
        report = json.loads((tmp_path / "seg.report.json").read_text())
        assert report["m_used"] == 12  # flag wins
        assert report["config"]["solver_max_iter"] == 500


class TestEval:
    def test_table_and_json(self, dataset_dir, fast_config, tmp_path, capsys):
        out = tmp_path / "results.json"
        code = main(
            ["eval", "--data", str(dataset_dir / "test"), "--out", str(out),
             "--config", str(fast_config), "--seed", "2"]
        )
        assert code == 0
        table = capsys.readouterr().out
        assert "soft, ML, fixed m" in table
        results = json.loads(out.read_text())
        assert results["num_clouds"] == 1


class TestExport:
    def test_colors_and_outliers(self, tmp_path):
        src = tmp_path / "labeled.ply"
        pts = np.random.default_rng(0).random((6, 3))
        from faceseg.geometry import PointCloud

        write_ply(PointCloud(pts, labels=[0, 1, 2, 3, 4, -1]), src)
        out = tmp_path / "colored.ply"
        assert main(["export", "--input", str(src), "--out", str(out)]) == 0
        text = out.read_text()
        assert "property uchar red" in text
        assert text.splitlines()[-1].endswith("0 0 0")  # outlier is black

    def test_unlabeled_rejected(self, tmp_path, capsys):
        src = tmp_path / "plain.ply"
        from faceseg.geometry import PointCloud

        write_ply(PointCloud([(0, 0, 0)]), src)
        assert main(["export", "--input", str(src), "--out", str(tmp_path / "o.ply")]) == 2


def test_cluster_colors_deterministic():
    labels = np.array([0, 1, 2, OUTLIER, 25])
    a = cluster_colors(labels)
    b = cluster_colors(labels)
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a[3], [0, 0, 0])
    assert not np.array_equal(a[0], a[1])
