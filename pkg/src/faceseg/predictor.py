"""Pairwise same-face probability models (pipeline stage 2).

The trainable model is a fully connected network over two patch statistic
vectors and their relative centroid shift: a shared encoder embeds each patch,
a combiner fuses the pair, the shift vector is concatenated and fused, a stack
of residual blocks (y = ReLU(F(x) + x)) refines the embedding, and a softmax
head yields the same-face probability. Forward and backward passes are written
by hand on numpy arrays; training uses Adam with a weighted cross-entropy
loss favoring the minority "same face" class.

A deterministic analytic predictor over the same patch statistics is provided
so the optimization and rounding stages can be exercised without training.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .patching import FEATURE_DIM, Patch, PatchSet

MODEL_MAGIC = b"FSMLP001"

# Analytic predictor constants: sharpness, angle acceptance (cos 10 deg),
# and the coplanarity-residual acceptance threshold.
ANALYTIC_BETA = 200.0
ANALYTIC_COS_TAU = math.cos(math.radians(10.0))
ANALYTIC_OFFSET_TAU = 0.1


class DimensionMismatch(ValueError):
    """Input feature dimensions do not match the model."""


class NoLabels(ValueError):
    """Training requires ground-truth patch labels."""


class DegeneratePatch(ValueError):
    """The analytic predictor needs non-degenerate patch statistics."""


@dataclass
class PairFeatures:
    """One input pair: two statistic vectors and the centroid shift c_i - c_j."""

    feat_i: np.ndarray
    feat_j: np.ndarray
    shift: np.ndarray


@dataclass
class TrainConfig:
    lr: float = 1e-4
    epochs: int = 13
    class_weight_ratio: float = 8.0  # weight on the "same face" class
    rounds: int = 50  # pair batches per cloud per epoch (L)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.epochs, self.rounds, self.eps) <= 0:
            raise ValueError("lr, epochs, rounds, eps must be positive")
        if self.class_weight_ratio < 1:
            raise ValueError("class_weight_ratio must be >= 1")


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _kaiming(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))


def _bias(rng: np.random.Generator, fan_in: int, size: int) -> np.ndarray:
    # fan-in-scaled uniform, as in standard affine-layer initialization;
    # nonzero biases also keep residual pre-activations off the exact ReLU kink
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=size)


class MlpModel:
    """Pairwise same-face classifier; class 1 of the softmax head is "same"."""

    def __init__(
        self,
        f_dim: int = FEATURE_DIM,
        hidden: int = 30,
        blocks: int = 2,
        rng: np.random.Generator | None = None,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.f_dim = f_dim
        self.hidden = hidden
        self.blocks = blocks
        h = hidden
        self.params: dict[str, np.ndarray] = {
            "enc_w": _kaiming(rng, f_dim, h),
            "enc_b": _bias(rng, f_dim, h),
            "comb_w": _kaiming(rng, 2 * h, h),
            "comb_b": _bias(rng, 2 * h, h),
            "fuse_w": _kaiming(rng, h + 3, h),
            "fuse_b": _bias(rng, h + 3, h),
        }
        for r in range(blocks):
            self.params[f"blk{r}_w1"] = _kaiming(rng, h, h)
            self.params[f"blk{r}_b1"] = _bias(rng, h, h)
            self.params[f"blk{r}_w2"] = _kaiming(rng, h, h)
            self.params[f"blk{r}_b2"] = _bias(rng, h, h)
        self.params["head_w"] = _kaiming(rng, h, 2)
        self.params["head_b"] = _bias(rng, h, 2)

    def param_names(self) -> list[str]:
        return list(self.params.keys())

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def _check_dims(self, feat_i, feat_j, shift):
        if feat_i.shape[-1] != self.f_dim or feat_j.shape[-1] != self.f_dim:
            raise DimensionMismatch(
                f"feature dim must be {self.f_dim}, got {feat_i.shape[-1]}/{feat_j.shape[-1]}"
            )
        if shift.shape[-1] != 3:
            raise DimensionMismatch("shift must be a 3-vector")

    def _forward_full(self, feat_i, feat_j, shift):
        p = self.params
        e_i = _relu(feat_i @ p["enc_w"] + p["enc_b"])
        e_j = _relu(feat_j @ p["enc_w"] + p["enc_b"])
        pair = np.concatenate([e_i, e_j], axis=1)
        comb = _relu(pair @ p["comb_w"] + p["comb_b"])
        fused_in = np.concatenate([comb, shift], axis=1)
        x = fused_in @ p["fuse_w"] + p["fuse_b"]
        block_cache = []
        for r in range(self.blocks):
            z1 = x @ p[f"blk{r}_w1"] + p[f"blk{r}_b1"]
            a1 = _relu(z1)
            z2 = a1 @ p[f"blk{r}_w2"] + p[f"blk{r}_b2"]
            y = _relu(z2 + x)
            block_cache.append((x, z1, a1, y))
            x = y
        logits = x @ p["head_w"] + p["head_b"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        probs = np.exp(log_probs)
        cache = {
            "feat_i": feat_i,
            "feat_j": feat_j,
            "e_i": e_i,
            "e_j": e_j,
            "pair": pair,
            "comb": comb,
            "fused_in": fused_in,
            "blocks": block_cache,
            "final": x,
            "probs": probs,
            "log_probs": log_probs,
        }
        return probs, cache

    def forward_batch(self, feat_i, feat_j, shift) -> np.ndarray:
        """Same-face probabilities for a batch of pairs; shapes (B, F) and (B, 3)."""
        feat_i = np.atleast_2d(np.asarray(feat_i, dtype=np.float64))
        feat_j = np.atleast_2d(np.asarray(feat_j, dtype=np.float64))
        shift = np.atleast_2d(np.asarray(shift, dtype=np.float64))
        self._check_dims(feat_i, feat_j, shift)
        probs, _ = self._forward_full(feat_i, feat_j, shift)
        return probs[:, 1]

    def forward(self, pair: PairFeatures) -> float:
        """Probability that the two patches of `pair` lie on the same face."""
        return float(self.forward_batch(pair.feat_i, pair.feat_j, pair.shift)[0])

    def loss_and_grad(self, feat_i, feat_j, shift, labels, class_weight_ratio: float = 1.0):
        """Weighted cross-entropy over a batch and its full parameter gradient.

        labels: (B,) ints, 1 = same face, 0 = different. The loss is the plain
        mean over the batch of w_y * (-log p_y) with w_same = ratio, w_diff = 1.
        """
        feat_i = np.atleast_2d(np.asarray(feat_i, dtype=np.float64))
        feat_j = np.atleast_2d(np.asarray(feat_j, dtype=np.float64))
        shift = np.atleast_2d(np.asarray(shift, dtype=np.float64))
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        self._check_dims(feat_i, feat_j, shift)
        batch = labels.shape[0]
        probs, cache = self._forward_full(feat_i, feat_j, shift)

        weights = np.where(labels == 1, class_weight_ratio, 1.0)
        log_p = cache["log_probs"][np.arange(batch), labels]
        loss = float(np.mean(-weights * log_p))

        p = self.params
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        onehot = np.zeros((batch, 2))
        onehot[np.arange(batch), labels] = 1.0
        dlogits = (probs - onehot) * (weights / batch)[:, None]

        grads["head_w"] = cache["final"].T @ dlogits
        grads["head_b"] = dlogits.sum(axis=0)
        dx = dlogits @ p["head_w"].T

        for r in reversed(range(self.blocks)):
            x_in, z1, a1, y = cache["blocks"][r]
            dpre = dx * (y > 0)
            grads[f"blk{r}_w2"] = a1.T @ dpre
            grads[f"blk{r}_b2"] = dpre.sum(axis=0)
            da1 = dpre @ p[f"blk{r}_w2"].T
            dz1 = da1 * (z1 > 0)
            grads[f"blk{r}_w1"] = x_in.T @ dz1
            grads[f"blk{r}_b1"] = dz1.sum(axis=0)
            dx = dpre + dz1 @ p[f"blk{r}_w1"].T  # skip path + block path

        grads["fuse_w"] = cache["fused_in"].T @ dx
        grads["fuse_b"] = dx.sum(axis=0)
        dfused = dx @ p["fuse_w"].T
        dcomb = dfused[:, : self.hidden] * (cache["comb"] > 0)

        grads["comb_w"] = cache["pair"].T @ dcomb
        grads["comb_b"] = dcomb.sum(axis=0)
        dpair = dcomb @ p["comb_w"].T
        de_i = dpair[:, : self.hidden] * (cache["e_i"] > 0)
        de_j = dpair[:, self.hidden :] * (cache["e_j"] > 0)

        grads["enc_w"] = feat_i.T @ de_i + feat_j.T @ de_j  # shared encoder
        grads["enc_b"] = de_i.sum(axis=0) + de_j.sum(axis=0)
        return loss, grads


class Adam:
    """Standard Adam with bias correction; a zero gradient leaves params fixed."""

    def __init__(self, params: dict[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad**2
            m_hat = self.m[key] / bc1
            v_hat = self.v[key] / bc2
            params[key] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def pair_accuracy(model: MlpModel, patch_set: PatchSet) -> float:
    """Fraction of all ordered pairs classified correctly at threshold 0.5."""
    if patch_set.gt_labels is None:
        raise NoLabels("pair accuracy needs ground-truth patch labels")
    n = len(patch_set)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    probs = model.forward_batch(
        patch_set.features[ii],
        patch_set.features[jj],
        patch_set.centroids[ii] - patch_set.centroids[jj],
    )
    same = patch_set.gt_labels[ii] == patch_set.gt_labels[jj]
    return float(np.mean((probs >= 0.5) == same))


def train(
    model: MlpModel,
    train_sets: list[PatchSet],
    config: TrainConfig,
    val_sets: list[PatchSet] | None = None,
) -> tuple[MlpModel, list[dict]]:
    """Train in place; returns the model and per-epoch metrics.

    Each round fixes one random patch of a cloud, forms the N pairs against
    all patches of that cloud, and performs one Adam update on the batch loss.
    Every training cloud gets `config.rounds` rounds per epoch. When val_sets
    is given, the parameters of the best-validation-accuracy epoch are
    restored at the end (ties keep the earlier epoch).
    """
    for ps in train_sets:
        if ps.gt_labels is None:
            raise NoLabels(f"cloud '{ps.name}' has no ground-truth patch labels")
    rng = np.random.default_rng(config.rng_seed)
    optimizer = Adam(model.params, config.lr, config.beta1, config.beta2, config.eps)
    metrics: list[dict] = []
    best_acc = -1.0
    best_params = None

    for epoch in range(config.epochs):
        losses = []
        for ps in train_sets:
            n = len(ps)
            feats, cents, gt = ps.features, ps.centroids, ps.gt_labels
            for _ in range(config.rounds):
                anchor = int(rng.integers(n))
                feat_i = np.broadcast_to(feats[anchor], (n, feats.shape[1]))
                shift = cents[anchor] - cents
                labels = (gt == gt[anchor]).astype(np.int64)
                loss, grads = model.loss_and_grad(
                    feat_i, feats, shift, labels, config.class_weight_ratio
                )
                optimizer.step(model.params, grads)
                losses.append(loss)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses))}
        if val_sets:
            val_acc = float(np.mean([pair_accuracy(model, ps) for ps in val_sets]))
            entry["val_accuracy"] = val_acc
            if val_acc > best_acc:
                best_acc = val_acc
                best_params = model.copy_params()
        metrics.append(entry)

    if best_params is not None:
        model.params = best_params
    return model, metrics


def predict_matrix(model: MlpModel, patch_set: PatchSet):
    """N x N soft same-face matrix: symmetrized predictions with unit diagonal."""
    from .matchlift import SOFT, PairMatrix

    n = len(patch_set)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    probs = model.forward_batch(
        patch_set.features[ii],
        patch_set.features[jj],
        patch_set.centroids[ii] - patch_set.centroids[jj],
    ).reshape(n, n)
    values = (probs + probs.T) / 2.0
    np.fill_diagonal(values, 1.0)
    return PairMatrix(values, SOFT)


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


def analytic_predictor(patch_i: Patch, patch_j: Patch) -> float:
    """Deterministic same-face probability from patch geometry alone.

    Two logistic gates are multiplied: one on the angle between the patch
    normals, one on the coplanarity residual d = max(|<n_i, s>|, |<n_j, s>|)
    / ||s|| of the centroid shift s (d = 0 when s = 0).

    Raises:
        DegeneratePatch: either patch lacks a PCA fit.
    """
    if patch_i.stats is None or patch_j.stats is None:
        raise DegeneratePatch("analytic predictor needs non-degenerate patches")
    n_i = patch_i.stats.normal
    n_j = patch_j.stats.normal
    shift = patch_i.centroid - patch_j.centroid
    norm_s = float(np.linalg.norm(shift))
    cos_theta = float(n_i @ n_j)
    if norm_s == 0.0:
        offset = 0.0
    else:
        offset = max(abs(float(n_i @ shift)), abs(float(n_j @ shift))) / norm_s
    return _sigmoid(ANALYTIC_BETA * (cos_theta - ANALYTIC_COS_TAU)) * _sigmoid(
        ANALYTIC_BETA * (ANALYTIC_OFFSET_TAU - offset)
    )


def analytic_matrix(patch_set: PatchSet):
    """Soft matrix from the analytic predictor; pairs involving degenerate
    patches score 0 off the diagonal."""
    from .matchlift import SOFT, PairMatrix

    n = len(patch_set)
    normals = np.zeros((n, 3))
    degenerate = np.zeros(n, dtype=bool)
    for idx, patch in enumerate(patch_set.patches):
        if patch.stats is None:
            degenerate[idx] = True
        else:
            normals[idx] = patch.stats.normal
    cents = patch_set.centroids
    cos = normals @ normals.T
    shift = cents[:, None, :] - cents[None, :, :]
    norm_s = np.linalg.norm(shift, axis=2)
    proj_i = np.abs(np.einsum("id,ijd->ij", normals, shift))
    proj_j = np.abs(np.einsum("jd,ijd->ij", normals, shift))
    with np.errstate(invalid="ignore", divide="ignore"):
        offset = np.where(norm_s > 0, np.maximum(proj_i, proj_j) / norm_s, 0.0)
    values = 1.0 / (1.0 + np.exp(-ANALYTIC_BETA * (cos - ANALYTIC_COS_TAU)))
    values *= 1.0 / (1.0 + np.exp(-ANALYTIC_BETA * (ANALYTIC_OFFSET_TAU - offset)))
    values[degenerate, :] = 0.0
    values[:, degenerate] = 0.0
    np.fill_diagonal(values, 1.0)
    return PairMatrix(values, SOFT)


def save_model(model: MlpModel, path) -> None:
    """Versioned binary model file: JSON header plus row-major float64 weights."""
    names = model.param_names()
    header = {
        "format": "faceseg-mlp",
        "version": 1,
        "f_dim": model.f_dim,
        "hidden": model.hidden,
        "blocks": model.blocks,
        "params": [{"name": n, "shape": list(model.params[n].shape)} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MODEL_MAGIC)
        handle.write(struct.pack("<Q", len(header_bytes)))
        handle.write(header_bytes)
        for name in names:
            handle.write(np.ascontiguousarray(model.params[name], dtype=np.float64).tobytes())


def load_model(path) -> MlpModel:
    """Load a model written by `save_model`."""
    with open(path, "rb") as handle:
        magic = handle.read(len(MODEL_MAGIC))
        if magic != MODEL_MAGIC:
            raise ValueError(f"{path}: not a faceseg model file")
        (header_len,) = struct.unpack("<Q", handle.read(8))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        if header.get("version") != 1:
            raise ValueError(f"{path}: unsupported model version {header.get('version')}")
        model = MlpModel(header["f_dim"], header["hidden"], header["blocks"])
        for spec in header["params"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(handle.read(count * 8), dtype=np.float64)
            model.params[spec["name"]] = data.reshape(shape).copy()
    return model
