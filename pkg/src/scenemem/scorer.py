"""Per-candidate spatial uncertainty scoring.

A frozen random projection turns (anchor frame, candidate frame, target rays)
into one token per patch; a small three-layer CNN trained with the
heteroscedastic uncertainty loss maps those tokens to a log-variance map
``sigma``. Retrieval uses ``-sigma`` as the confidence map.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from ._validation import ParameterError, check_divisible, check_int
from .geometry import CameraPose, plucker_map
from .world import Frame, Scene, visibility_grid

logger = logging.getLogger(__name__)

__all__ = [
    "PatchFeaturizer",
    "Projection",
    "ScoringCNN",
    "TrainingSample",
    "assemble_features",
    "load_checkpoint",
    "make_projection",
    "oracle_confidence",
    "save_checkpoint",
    "score",
    "train_scorer",
    "uncertainty_loss",
]

CHECKPOINT_MAGIC = b"SCRM"
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------
# features

@dataclass(frozen=True, eq=False)
class Projection:
    """Three frozen linear maps from raw patch vectors to ``d_proj`` tokens."""

    anchor: np.ndarray
    candidate: np.ndarray
    target: np.ndarray
    patch_size: int
    seed: int

    @property
    def d_proj(self) -> int:
        return self.anchor.shape[0]


def _orthonormal_rows(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((cols, rows)))
    # sign fix makes the factorisation unique, hence seed-stable
    return (q * np.sign(np.diag(r))).T


def make_projection(d_proj: int = 64, patch_size: int = 8, seed: int = 0) -> Projection:
    d_proj = check_int(d_proj, "d_proj", minimum=1)
    p = check_int(patch_size, "patch_size", minimum=1)
    rng = np.random.default_rng([check_int(seed, "seed", minimum=0), 104729])
    frame_dim, ray_dim = p * p * 9, p * p * 6
    if d_proj > ray_dim:
        raise ParameterError(f"d_proj={d_proj} exceeds raw target patch size {ray_dim}")
    return Projection(
        _orthonormal_rows(rng, d_proj, frame_dim),
        _orthonormal_rows(rng, d_proj, frame_dim),
        _orthonormal_rows(rng, d_proj, ray_dim),
        p,
        int(seed),
    )


def _patchify(grid: np.ndarray, p: int) -> np.ndarray:
    h, w, c = grid.shape
    return grid.reshape(h // p, p, w // p, p, c).transpose(0, 2, 1, 3, 4).reshape(h // p, w // p, p * p * c)


def assemble_features(anchor: Frame, candidate: Frame, target_rays: np.ndarray, proj: Projection, p: int) -> np.ndarray:
    """Concatenate projected anchor, candidate and target-ray tokens per patch.

    Returns a ``(H/p, W/p, 3 * d_proj)`` grid.
    """
    if p != proj.patch_size:
        raise ParameterError(f"patch size {p} does not match projection ({proj.patch_size})")
    target_rays = np.asarray(target_rays, dtype=np.float64)
    shape = target_rays.shape[:2]
    if anchor.image.shape[:2] != shape or candidate.image.shape[:2] != shape or target_rays.shape[2] != 6:
        raise ParameterError("anchor, candidate and target rays must share one resolution")
    check_divisible(shape[0], shape[1], p)
    streams = []
    for frame, mat in ((anchor, proj.anchor), (candidate, proj.candidate)):
        raw = np.concatenate([frame.image, plucker_map(frame.pose)], axis=-1)
        streams.append(_patchify(raw, p) @ mat.T)
    streams.append(_patchify(target_rays, p) @ proj.target.T)
    return np.concatenate(streams, axis=-1)


class PatchFeaturizer(TransformerMixin, BaseEstimator):
    """Frozen tokenizer for (anchor, candidate, target pose) triples.

    ``fit`` only materialises the seeded projection; ``transform`` takes an
    iterable of ``(anchor_frame, candidate_frame, target_pose)`` triples and
    returns an ``(n, H/p, W/p, 3 * d_proj)`` array.
    """

    def __init__(self, d_proj: int = 64, patch_size: int = 8, seed: int = 0):
        self.d_proj = d_proj
        self.patch_size = patch_size
        self.seed = seed

    def fit(self, X=None, y=None):
        self.projection_ = make_projection(self.d_proj, self.patch_size, self.seed)
        return self

    def transform(self, X):
        if not hasattr(self, "projection_"):
            raise NotFittedError("PatchFeaturizer is not fitted")
        out = []
        for anchor, candidate, target in X:
            rays = plucker_map(target) if isinstance(target, CameraPose) else target
            out.append(assemble_features(anchor, candidate, rays, self.projection_, self.patch_size))
        return np.stack(out) if out else np.zeros((0,))


# --------------------------------------------------------------------------
# loss

def uncertainty_loss(sigma, mse) -> tuple[float, np.ndarray]:
    """Summed ``0.5 * exp(-sigma) * mse + 0.5 * sigma`` and its gradient in ``sigma``.

    ``mse`` is treated as a constant (no gradient flows into it).
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    mse = np.asarray(mse, dtype=np.float64)
    if sigma.shape != mse.shape:
        raise ParameterError(f"sigma {sigma.shape} and mse {mse.shape} differ in shape")
    if np.any(mse < 0):
        raise ParameterError("mse must be non-negative")
    weighted = _weighted(sigma, mse)
    loss = float(np.sum(0.5 * weighted + 0.5 * sigma))
    return loss, 0.5 - 0.5 * weighted


def _weighted(sigma: np.ndarray, mse: np.ndarray) -> np.ndarray:
    # exp(-sigma) * mse with 0 * inf -> 0
    with np.errstate(over="ignore", invalid="ignore"):
        return np.where(mse > 0, np.exp(-sigma) * mse, 0.0)


# --------------------------------------------------------------------------
# network

def _im2col(x: np.ndarray) -> np.ndarray:
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b * h * w, 9 * c)


def _col2im(cols: np.ndarray, shape: tuple) -> np.ndarray:
    b, h, w, c = shape
    cols = cols.reshape(b, h, w, 3, 3, c)
    out = np.zeros((b, h + 2, w + 2, c), dtype=cols.dtype)
    for i in range(3):
        for j in range(3):
            out[:, i : i + h, j : j + w] += cols[:, :, :, i, j]
    return out[:, 1:-1, 1:-1]


def conv_forward(x: np.ndarray, weight: np.ndarray, bias: np.ndarray):
    """3x3, stride 1, zero padding; channels-last. Returns output and im2col cache."""
    b, h, w, _ = x.shape
    cols = _im2col(x)
    out = cols @ weight.reshape(-1, weight.shape[-1]) + bias
    return out.reshape(b, h, w, -1), cols


def conv_backward(dout: np.ndarray, cols: np.ndarray, weight: np.ndarray, x_shape, need_input: bool = True):
    cout = weight.shape[-1]
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(weight.shape)
    db = d2.sum(axis=0)
    dx = _col2im(d2 @ weight.reshape(-1, cout).T, x_shape) if need_input else None
    return dx, dw, db


class ScoringCNN(BaseEstimator):
    """Three 3x3 conv layers (ReLU, ReLU, linear) predicting per-patch ``sigma``.

    Trained with Adam on the mean per-cell uncertainty loss. Inputs are feature
    grids ``(n, gh, gw, C)``; targets are patch-MSE grids ``(n, gh, gw)``.
    """

    def __init__(
        self,
        hidden=(256, 64),
        lr: float = 5e-5,
        batch_size: int = 64,
        steps: int = 2000,
        seed: int = 0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        dtype: str = "float32",
        log_every: int = 0,
    ):
        self.hidden = hidden
        self.lr = lr
        self.batch_size = batch_size
        self.steps = steps
        self.seed = seed
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.dtype = dtype
        self.log_every = log_every

    # parameters are stored as [W1, b1, W2, b2, W3, b3]
    def init_params(self, n_features: int) -> "ScoringCNN":
        rng = np.random.default_rng([check_int(self.seed, "seed", minimum=0), 15485863])
        dims = [n_features, *self.hidden, 1]
        params = []
        for cin, cout in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (9 * cin))
            params.append(rng.uniform(-limit, limit, size=(3, 3, cin, cout)).astype(self.dtype))
            params.append(np.zeros(cout, dtype=self.dtype))
        self.params_ = params
        self.n_features_in_ = n_features
        return self

    @property
    def n_params_(self) -> int:
        self._check_fitted()
        return int(sum(p.size for p in self.params_))

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("ScoringCNN has no parameters; call fit or init_params")

    def _forward(self, x: np.ndarray):
        caches = []
        a = x
        n_layers = len(self.params_) // 2
        for k in range(n_layers):
            w, b = self.params_[2 * k], self.params_[2 * k + 1]
            z, cols = conv_forward(a, w, b)
            caches.append((cols, a.shape, z))
            a = np.maximum(z, 0) if k < n_layers - 1 else z
        return a[..., 0], caches

    def _backward(self, dsigma: np.ndarray, caches) -> list[np.ndarray]:
        grads = [None] * len(self.params_)
        d = dsigma[..., None]
        n_layers = len(caches)
        for k in reversed(range(n_layers)):
            cols, x_shape, z = caches[k]
            if k < n_layers - 1:
                d = d * (z > 0)
            d, dw, db = conv_backward(d, cols, self.params_[2 * k], x_shape, need_input=k > 0)
            grads[2 * k], grads[2 * k + 1] = dw, db
        return grads

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        """Mean per-cell uncertainty loss over the batch and its parameter gradients."""
        self._check_fitted()
        sigma, caches = self._forward(np.asarray(X, dtype=self.params_[0].dtype))
        total, dsigma = uncertainty_loss(sigma, y)
        n = sigma.size
        grads = self._backward((dsigma / n).astype(sigma.dtype), caches)
        return total / n, grads

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = np.asarray(X)
        single = X.ndim == 3
        if single:
            X = X[None]
        if X.ndim != 4 or X.shape[-1] != self.n_features_in_:
            raise ParameterError(
                f"expected features (n, gh, gw, {self.n_features_in_}), got {X.shape}"
            )
        sigma, _ = self._forward(X.astype(self.params_[0].dtype, copy=False))
        sigma = sigma.astype(np.float64)
        return sigma[0] if single else sigma

    def confidence(self, X) -> np.ndarray:
        return -self.predict(X)

    def fit(self, X, y):
        X = np.asarray(X)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 4 or y.shape != X.shape[:3]:
            raise ParameterError(f"fit expects X (n, gh, gw, C) and y (n, gh, gw); got {X.shape}, {y.shape}")
        if len(X) == 0:
            raise ParameterError("empty training corpus")
        if np.any(y < 0):
            raise ParameterError("mse targets must be non-negative")
        if self.lr == 0:
            logger.warning("learning rate is 0; parameters will not change")
        self.init_params(X.shape[-1])
        X = X.astype(self.dtype, copy=False)
        rng = np.random.default_rng([check_int(self.seed, "seed", minimum=0), 32452843])
        m = [np.zeros_like(p) for p in self.params_]
        v = [np.zeros_like(p) for p in self.params_]
        batch = min(check_int(self.batch_size, "batch_size", minimum=1), len(X))
        order = rng.permutation(len(X))
        cursor = 0
        curve = []
        for step in range(1, check_int(self.steps, "steps", minimum=0) + 1):
            if cursor + batch > len(order):
                order = rng.permutation(len(X))
                cursor = 0
            idx = np.sort(order[cursor : cursor + batch])
            cursor += batch
            loss, grads = self.loss_and_grads(X[idx], y[idx])
            curve.append(loss)
            b1c = 1.0 - self.beta1**step
            b2c = 1.0 - self.beta2**step
            for p, g, mk, vk in zip(self.params_, grads, m, v):
                mk *= self.beta1
                mk += (1 - self.beta1) * g
                vk *= self.beta2
                vk += (1 - self.beta2) * g * g
                p -= (self.lr * (mk / b1c) / (np.sqrt(vk / b2c) + self.eps)).astype(p.dtype)
            if self.log_every and step % self.log_every == 0:
                logger.info("step %d loss %.6f", step, loss)
        self.loss_curve_ = curve
        return self

    def mean_loss(self, X, y) -> float:
        sigma = self.predict(X)
        total, _ = uncertainty_loss(sigma, y)
        return total / sigma.size


def score(model: ScoringCNN, features) -> np.ndarray:
    """Uncertainty map(s) ``sigma`` for one feature grid or a stack of them."""
    return model.predict(features)


@dataclass
class TrainingSample:
    features: np.ndarray
    mse: np.ndarray


def train_scorer(corpus, hyper: dict | None = None) -> ScoringCNN:
    """Fit a ScoringCNN on ``TrainingSample``s (or ``(features, mse)`` pairs)."""
    corpus = list(corpus)
    if not corpus:
        raise ParameterError("empty training corpus")
    X = np.stack([s.features if isinstance(s, TrainingSample) else s[0] for s in corpus])
    y = np.stack([s.mse if isinstance(s, TrainingSample) else s[1] for s in corpus])
    hyper = dict(hyper or {})
    if "batch" in hyper:
        hyper["batch_size"] = hyper.pop("batch")
    return ScoringCNN(**hyper).fit(X, y)


def oracle_confidence(scene: Scene, anchor: CameraPose, candidate: CameraPose, target: CameraPose, p: int) -> np.ndarray:
    """Ground-truth confidence: patchwise max visibility over anchor and candidate."""
    return np.maximum(visibility_grid(scene, anchor, target, p), visibility_grid(scene, candidate, target, p))


# --------------------------------------------------------------------------
# checkpoint

def save_checkpoint(path, model: ScoringCNN, projection: Projection | None = None) -> None:
    """Write ``SCRM`` | version | patch, d_proj, proj_seed | tensors (dims + LE f32)."""
    model._check_fitted()
    patch, d_proj, seed = (projection.patch_size, projection.d_proj, projection.seed) if projection else (0, 0, 0)
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION), struct.pack("<III", patch, d_proj, seed)]
    parts.append(struct.pack("<I", len(model.params_)))
    for t in model.params_:
        parts.append(struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape))
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[ScoringCNN, Projection | None]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ParameterError(f"{path}: not a scorer checkpoint")
    try:
        (version,) = struct.unpack_from("<I", data, 4)
        if version != CHECKPOINT_VERSION:
            raise ParameterError(f"{path}: unsupported checkpoint version {version}")
        patch, d_proj, seed = struct.unpack_from("<III", data, 8)
        (n,) = struct.unpack_from("<I", data, 20)
        off = 24
        tensors = []
        for _ in range(n):
            (ndim,) = struct.unpack_from("<I", data, off)
            shape = struct.unpack_from(f"<{ndim}I", data, off + 4)
            off += 4 + 4 * ndim
            count = int(np.prod(shape))
            tensors.append(np.frombuffer(data, dtype="<f4", count=count, offset=off).reshape(shape).astype(np.float32))
            off += 4 * count
    except struct.error as exc:
        raise ParameterError(f"{path}: truncated checkpoint") from exc
    hidden = tuple(int(t.shape[-1]) for t in tensors[0:-2:2])
    model = ScoringCNN(hidden=hidden)
    model.params_ = tensors
    model.n_features_in_ = int(tensors[0].shape[2])
    projection = make_projection(d_proj, patch, seed) if patch else None
    return model, projection
