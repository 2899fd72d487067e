import math

import numpy as np
import pytest

from faceseg.geometry import LocalSurface, PointCloud, normalize
from faceseg.patching import FEATURE_DIM, Patch, build_patch_set
from faceseg.predictor import (
    Adam,
    DegeneratePatch,
    DimensionMismatch,
    MlpModel,
    NoLabels,
    PairFeatures,
    TrainConfig,
    analytic_matrix,
    analytic_predictor,
    load_model,
    pair_accuracy,
    predict_matrix,
    save_model,
    train,
)


def flat_patch(normal, centroid, curvature=0.0):
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    return Patch(
        point_indices=np.arange(3),
        centroid=np.asarray(centroid, dtype=np.float64),
        centered=np.zeros((3, 3)),
        gt_label=None,
        stats=LocalSurface(normal=normal, curvature=curvature, eigenvalues=np.array([0.0, 0.1, 0.1])),
        extent=np.full(3, 0.1),
    )


def degenerate_patch():
    return Patch(
        point_indices=np.arange(1),
        centroid=np.zeros(3),
        centered=np.zeros((1, 3)),
        gt_label=None,
        stats=None,
        extent=np.zeros(3),
    )


def two_plane_patch_sets(num_clouds, seed, points_per_plane=160):
    """Toy dataset: two perpendicular square faces per cloud, randomly rotated,
    patched into roughly a dozen patches per cloud."""
    sets = []
    rng = np.random.default_rng(seed)
    extent = 0.5
    for index in range(num_clouds):
        uv_a = rng.random((points_per_plane, 2)) * extent
        plane_a = np.column_stack([uv_a[:, 0], uv_a[:, 1], np.zeros(points_per_plane)])
        uv_b = rng.random((points_per_plane, 2)) * extent
        plane_b = np.column_stack([np.full(points_per_plane, extent + 0.3), uv_b[:, 0], uv_b[:, 1]])
        pts = np.vstack([plane_a, plane_b])
        labels = np.repeat([0, 1], points_per_plane)
        q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        cloud = normalize(PointCloud(pts @ q.T, labels, f"toy_{index}"))
        sets.append(build_patch_set(cloud, 2 * points_per_plane // 8, 0.35, rng))
    return sets


class TestForward:
    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        model = MlpModel(rng=rng)
        probs, _ = model._forward_full(
            rng.normal(size=(6, FEATURE_DIM)), rng.normal(size=(6, FEATURE_DIM)), rng.normal(size=(6, 3))
        )
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(1)
        model = MlpModel(rng=np.random.default_rng(2))
        pair = PairFeatures(rng.normal(size=FEATURE_DIM), rng.normal(size=FEATURE_DIM), rng.normal(size=3))
        assert model.forward(pair) == model.forward(pair)

    def test_finite_for_bounded_inputs(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            model = MlpModel(rng=rng)
            f = rng.normal(size=(64, FEATURE_DIM))
            f *= 10.0 / np.maximum(np.linalg.norm(f, axis=1, keepdims=True), 10.0)
            s = rng.normal(size=(64, 3))
            out = model.forward_batch(f, f[::-1], s)
            assert np.isfinite(out).all()
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_dimension_mismatch(self):
        model = MlpModel()
        with pytest.raises(DimensionMismatch):
            model.forward_batch(np.zeros((1, 4)), np.zeros((1, 4)), np.zeros((1, 3)))
        with pytest.raises(DimensionMismatch):
            model.forward_batch(np.zeros((1, FEATURE_DIM)), np.zeros((1, FEATURE_DIM)), np.zeros((1, 2)))

    def test_residual_blocks_identity_at_zero_second_layer(self):
        # zeroing each block's second affine makes it y = ReLU(x)
        model = MlpModel(rng=np.random.default_rng(3))
        for r in range(model.blocks):
            model.params[f"blk{r}_w2"][:] = 0.0
            model.params[f"blk{r}_b2"][:] = 0.0
        rng = np.random.default_rng(4)
        fi = rng.normal(size=(5, FEATURE_DIM))
        fj = rng.normal(size=(5, FEATURE_DIM))
        s = rng.normal(size=(5, 3))
        _, cache = model._forward_full(fi, fj, s)
        for x_in, _, _, y in cache["blocks"]:
            np.testing.assert_allclose(y, np.maximum(x_in, 0.0), atol=1e-12)


class TestLoss:
    def zero_model(self):
        model = MlpModel(rng=np.random.default_rng(0))
        for key in model.params:
            model.params[key][:] = 0.0
        return model

    def test_uniform_prediction_loss_is_ln2(self):
        model = self.zero_model()
        loss, _ = model.loss_and_grad(
            np.zeros((1, FEATURE_DIM)), np.zeros((1, FEATURE_DIM)), np.zeros((1, 3)),
            labels=[0], class_weight_ratio=8.0,
        )
        assert loss == pytest.approx(math.log(2.0), abs=1e-12)

    def test_confident_correct_prediction_loss_vanishes(self):
        model = self.zero_model()
        model.params["head_b"][:] = [-20.0, 20.0]  # always predict "same"
        loss, _ = model.loss_and_grad(
            np.zeros((2, FEATURE_DIM)), np.zeros((2, FEATURE_DIM)), np.zeros((2, 3)),
            labels=[1, 1], class_weight_ratio=8.0,
        )
        assert loss < 1e-12

    def test_weight_ratio_scales_same_class(self):
        model = self.zero_model()
        loss_same, _ = model.loss_and_grad(
            np.zeros((1, FEATURE_DIM)), np.zeros((1, FEATURE_DIM)), np.zeros((1, 3)), [1], 8.0
        )
        assert loss_same == pytest.approx(8.0 * math.log(2.0), abs=1e-12)

    def test_batch_permutation_invariance(self):
        rng = np.random.default_rng(5)
        model = MlpModel(rng=rng)
        fi = rng.normal(size=(10, FEATURE_DIM))
        fj = rng.normal(size=(10, FEATURE_DIM))
        s = rng.normal(size=(10, 3))
        y = rng.integers(0, 2, 10)
        loss_a, _ = model.loss_and_grad(fi, fj, s, y, 8.0)
        perm = rng.permutation(10)
        loss_b, _ = model.loss_and_grad(fi[perm], fj[perm], s[perm], y[perm], 8.0)
        assert loss_a == pytest.approx(loss_b, rel=1e-12)


def finite_difference_max_rel_err(seed: int, hidden=8, blocks=2, batch=5) -> float:
    rng = np.random.default_rng(seed)
    model = MlpModel(FEATURE_DIM, hidden, blocks, rng)
    fi = rng.normal(size=(batch, FEATURE_DIM))
    fj = rng.normal(size=(batch, FEATURE_DIM))
    s = rng.normal(size=(batch, 3))
    y = rng.integers(0, 2, batch)
    _, grads = model.loss_and_grad(fi, fj, s, y, 8.0)
    step = 1e-5
    worst = 0.0
    for name in model.param_names():
        flat = model.params[name].ravel()
        grad = grads[name].ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up, _ = model.loss_and_grad(fi, fj, s, y, 8.0)
            flat[idx] = orig - step
            down, _ = model.loss_and_grad(fi, fj, s, y, 8.0)
            flat[idx] = orig
            fd = (up - down) / (2 * step)
            denom = max(abs(fd), abs(grad[idx]), 1e-6)
            worst = max(worst, abs(fd - grad[idx]) / denom)
    return worst


class TestGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_finite_differences(self, seed):
        assert finite_difference_max_rel_err(seed) < 1e-4

    def test_adam_zero_gradient_is_noop(self):
        model = MlpModel(rng=np.random.default_rng(6))
        before = model.copy_params()
        opt = Adam(model.params, lr=0.1)
        zero = {k: np.zeros_like(v) for k, v in model.params.items()}
        for _ in range(3):
            opt.step(model.params, zero)
        for key in before:
            np.testing.assert_array_equal(model.params[key], before[key])


class TestTraining:
    def test_two_plane_toy_reaches_95_percent(self):
        train_sets = two_plane_patch_sets(20, seed=7)
        model = MlpModel(rng=np.random.default_rng(8))
        model, _ = train(model, train_sets, TrainConfig(rng_seed=9))
        acc = float(np.mean([pair_accuracy(model, ps) for ps in train_sets]))
        assert acc >= 0.95

    def test_training_is_deterministic(self):
        train_sets = two_plane_patch_sets(3, seed=10)
        curves = []
        for _ in range(2):
            model = MlpModel(rng=np.random.default_rng(11))
            _, metrics = train(
                model, train_sets, TrainConfig(epochs=2, rng_seed=12)
            )
            curves.append([m["train_loss"] for m in metrics])
        assert curves[0] == curves[1]

    def test_best_validation_model_retained(self):
        train_sets = two_plane_patch_sets(4, seed=13)
        val_sets = two_plane_patch_sets(2, seed=14)
        model = MlpModel(rng=np.random.default_rng(15))
        model, metrics = train(model, train_sets, TrainConfig(epochs=3, rng_seed=16), val_sets)
        best = max(m["val_accuracy"] for m in metrics)
        final = float(np.mean([pair_accuracy(model, ps) for ps in val_sets]))
        assert final == pytest.approx(best, abs=1e-12)

    def test_requires_labels(self):
        ps = two_plane_patch_sets(1, seed=17)[0]
        ps.gt_labels = None
        with pytest.raises(NoLabels):
            train(MlpModel(), [ps], TrainConfig(epochs=1))


class TestPredictMatrix:
    def test_single_patch_matrix(self):
        ps = two_plane_patch_sets(1, seed=18)[0]
        ps.patches = ps.patches[:1]
        ps.features = ps.features[:1]
        ps.centroids = ps.centroids[:1]
        ps.gt_labels = ps.gt_labels[:1]
        matrix = predict_matrix(MlpModel(rng=np.random.default_rng(19)), ps)
        np.testing.assert_array_equal(matrix.values, [[1.0]])

    def test_symmetric_unit_diagonal_in_range(self):
        ps = two_plane_patch_sets(1, seed=20)[0]
        matrix = predict_matrix(MlpModel(rng=np.random.default_rng(21)), ps)
        np.testing.assert_array_equal(matrix.values, matrix.values.T)
        np.testing.assert_array_equal(np.diag(matrix.values), 1.0)
        assert matrix.values.min() >= 0.0 and matrix.values.max() <= 1.0


class TestAnalyticPredictor:
    def test_identical_coplanar_patches(self):
        a = flat_patch([0, 0, 1], [0.5, 0.5, 0.5])
        b = flat_patch([0, 0, 1], [0.5, 0.5, 0.5])
        assert analytic_predictor(a, b) > 0.95

    def test_perpendicular_normals(self):
        a = flat_patch([0, 0, 1], [0.5, 0.5, 0.5])
        b = flat_patch([1, 0, 0], [0.6, 0.5, 0.5])
        assert analytic_predictor(a, b) < 0.05

    def test_parallel_offset_planes(self):
        a = flat_patch([0, 0, 1], [0.5, 0.5, 0.2])
        b = flat_patch([0, 0, 1], [0.5, 0.5, 0.5])  # shift along the normal
        assert analytic_predictor(a, b) < 0.05

    def test_parallel_coplanar_far_apart(self):
        a = flat_patch([0, 0, 1], [0.1, 0.1, 0.5])
        b = flat_patch([0, 0, 1], [0.9, 0.9, 0.5])  # in-plane shift
        assert analytic_predictor(a, b) >= 0.9

    def test_degenerate_patch_raises(self):
        with pytest.raises(DegeneratePatch):
            analytic_predictor(flat_patch([0, 0, 1], [0, 0, 0]), degenerate_patch())

    def test_matrix_matches_scalar_predictor(self):
        ps = two_plane_patch_sets(1, seed=22)[0]
        matrix = analytic_matrix(ps)
        np.testing.assert_array_equal(matrix.values, matrix.values.T)
        for i in (0, 1):
            for j in (2, 3):
                expected = analytic_predictor(ps.patches[i], ps.patches[j])
                sym = 0.5 * (expected + analytic_predictor(ps.patches[j], ps.patches[i]))
                assert matrix.values[i, j] == pytest.approx(sym, rel=1e-12)

    def test_matrix_zeroes_degenerate_rows(self):
        ps = two_plane_patch_sets(1, seed=23)[0]
        ps.patches[0].stats = None
        matrix = analytic_matrix(ps)
        assert matrix.values[0, 1:].max() == 0.0
        assert matrix.values[0, 0] == 1.0


class TestModelIO:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(24)
        model = MlpModel(rng=rng)
        path = tmp_path / "model.bin"
        save_model(model, path)
        back = load_model(path)
        assert back.f_dim == model.f_dim and back.hidden == model.hidden and back.blocks == model.blocks
        for key in model.params:
            np.testing.assert_array_equal(back.params[key], model.params[key])
        fi = rng.normal(size=(4, FEATURE_DIM))
        fj = rng.normal(size=(4, FEATURE_DIM))
        s = rng.normal(size=(4, 3))
        np.testing.assert_array_equal(back.forward_batch(fi, fj, s), model.forward_batch(fi, fj, s))

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"not a model")
        with pytest.raises(ValueError):
            load_model(path)
