"""One adapter's sub-model: a linear classifier trained by mini-batch
gradient descent on softmax cross-entropy.

Bit-exact reproducibility is the load-bearing contract: an adapter's
parameters are a pure function of (its id-sorted sample list, the trainer
config, the seed). Unlearning leans on this — re-training on the retained
records with the original seed must land on exactly the parameters a scratch
build would produce. To that end the trainer uses plain gradient descent
(no optimizer state), f32 parameters, f64 forward/backward arithmetic with
fixed-order reductions, and a seeded per-epoch shuffle drawn from the same
PCG64 stream as the weight init.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .seeding import rng_from


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 0.1
    l2_penalty: float = 1e-4
    use_bias: bool = False
    init_std: float = 0.01

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0):
            raise ConfigError("learning_rate must be > 0")
        if self.l2_penalty < 0:
            raise ConfigError("l2_penalty must be >= 0")
        if self.init_std < 0:
            raise ConfigError("init_std must be >= 0")


@dataclass(frozen=True)
class AdapterModel:
    """Trained linear sub-model: logits = W @ e (+ b)."""

    weights: np.ndarray  # (C, d) float32
    bias: np.ndarray | None  # (C,) float32 when trained with use_bias
    train_seed: int
    trained_on_hash: bytes  # sha256 of the sorted training-id list

    def __post_init__(self):
        if self.weights.dtype != np.float32 or self.weights.ndim != 2:
            raise DimensionError("weights must be a float32 (C, d) matrix")
        if not np.isfinite(self.weights).all():
            raise DimensionError("weights must be finite")
        if self.bias is not None and (
            self.bias.dtype != np.float32 or self.bias.shape != (self.weights.shape[0],)
        ):
            raise DimensionError("bias must be a float32 (C,) vector")
        self.weights.setflags(write=False)
        if self.bias is not None:
            self.bias.setflags(write=False)

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def params_bytes(self) -> bytes:
        b = self.weights.tobytes()
        if self.bias is not None:
            b += self.bias.tobytes()
        return b


def ids_digest(ids: np.ndarray) -> bytes:
    """sha256 over the ascending id list as u64 LE; records what a model was
    trained on without storing the data."""
    return hashlib.sha256(np.ascontiguousarray(ids, dtype="<u8").tobytes()).digest()


def zero_adapter(num_classes: int, dim: int, train_seed: int, use_bias: bool) -> AdapterModel:
    """The canonical uniform predictor, used when a record set is empty."""
    return AdapterModel(
        np.zeros((num_classes, dim), dtype=np.float32),
        np.zeros(num_classes, dtype=np.float32) if use_bias else None,
        int(train_seed),
        ids_digest(np.zeros(0, dtype=np.uint64)),
    )


def _check_batch(encodings: np.ndarray, labels: np.ndarray, num_classes: int, dim: int) -> None:
    if encodings.ndim != 2 or encodings.shape[1] != dim:
        raise DimensionError(f"encodings shape {encodings.shape} incompatible with dim {dim}")
    if len(encodings) != len(labels):
        raise DimensionError("encodings and labels length mismatch")
    if labels.size and int(labels.max()) >= num_classes:
        raise DimensionError(f"label {int(labels.max())} >= num_classes {num_classes}")


def _forward(W64, b64, X64):
    z = X64 @ W64.T
    if b64 is not None:
        z = z + b64
    z = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    return z, logsum


def _loss_grad_arrays(W64, b64, X64, labels, l2):
    """Mean cross-entropy + l2*||W||^2 and its analytic gradient, all f64."""
    m = len(X64)
    z, logsum = _forward(W64, b64, X64)
    rows = np.arange(m)
    loss = float(np.mean(logsum - z[rows, labels]) + l2 * np.sum(W64 * W64))
    p = np.exp(z - logsum[:, None])
    p[rows, labels] -= 1.0
    gw = p.T @ X64 / m + 2.0 * l2 * W64
    gb = p.sum(axis=0) / m if b64 is not None else None
    return loss, gw, gb


def loss_and_grad(
    model: AdapterModel,
    encodings: np.ndarray,
    labels: np.ndarray,
    config: TrainerConfig,
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Objective value and analytic gradient for one batch.

    Returns (loss, grad_weights, grad_bias); grad_bias is None for bias-free
    models. The bias carries no L2 penalty.
    """
    if len(encodings) == 0:
        raise DimensionError("batch must be non-empty")
    labels = np.asarray(labels)
    _check_batch(np.asarray(encodings), labels, model.num_classes, model.dim)
    W64 = model.weights.astype(np.float64)
    b64 = model.bias.astype(np.float64) if model.bias is not None else None
    X64 = np.asarray(encodings, dtype=np.float64)
    return _loss_grad_arrays(W64, b64, X64, labels, config.l2_penalty)


def train_adapter(
    ids: np.ndarray,
    labels: np.ndarray,
    encodings: np.ndarray,
    num_classes: int,
    dim: int,
    config: TrainerConfig,
    seed: int,
) -> AdapterModel:
    """Train one adapter on its record set.

    ids must be strictly ascending (the canonical order); the per-epoch
    shuffle permutes that canonical order with the seeded generator, so the
    data stream seen by gradient descent depends only on the set of samples,
    never on how the caller happened to discover them. An empty record set
    is not an error: it returns the zero model (uniform predictor).
    """
    config.validate()
    ids = np.asarray(ids, dtype=np.uint64)
    if len(ids) > 1 and not np.all(ids[1:] > ids[:-1]):
        raise DimensionError("ids must be strictly ascending")
    if len(ids) == 0:
        return zero_adapter(num_classes, dim, seed, config.use_bias)
    labels = np.asarray(labels)
    encodings = np.asarray(encodings)
    _check_batch(encodings, labels, num_classes, dim)
    if len(ids) != len(encodings):
        raise DimensionError("ids and encodings length mismatch")

    rng = rng_from(seed)
    W = (rng.standard_normal((num_classes, dim)) * config.init_std).astype(np.float32)
    b = np.zeros(num_classes, dtype=np.float32) if config.use_bias else None

    X64 = encodings.astype(np.float64)
    m = len(ids)
    for _ in range(config.epochs):
        perm = rng.permutation(m)
        for start in range(0, m, config.batch_size):
            take = perm[start : start + config.batch_size]
            W64 = W.astype(np.float64)
            b64 = b.astype(np.float64) if b is not None else None
            _, gw, gb = _loss_grad_arrays(W64, b64, X64[take], labels[take], config.l2_penalty)
            W = (W64 - config.learning_rate * gw).astype(np.float32)
            if b is not None:
                b = (b64 - config.learning_rate * gb).astype(np.float32)

    return AdapterModel(W, b, int(seed), ids_digest(ids))


def continue_training(
    model: AdapterModel,
    encodings: np.ndarray,
    labels: np.ndarray,
    config: TrainerConfig,
    seed: int,
    epochs: int,
    sign: float = -1.0,
) -> AdapterModel:
    """Run further gradient steps from the current parameters.

    sign=-1 descends (fine-tuning); sign=+1 ascends (the opposite-gradient
    unlearning heuristic). epochs=0 returns the model unchanged. The caller's
    id digest is preserved only when nothing changes; otherwise the hash no
    longer describes a scratch training set and is recomputed by the caller.
    """
    if epochs < 0:
        raise ConfigError("epochs must be >= 0")
    if epochs == 0:
        return model
    labels = np.asarray(labels)
    encodings = np.asarray(encodings)
    _check_batch(encodings, labels, model.num_classes, model.dim)
    if len(encodings) == 0:
        return model
    rng = rng_from(seed)
    W = model.weights.copy()
    b = model.bias.copy() if model.bias is not None else None
    X64 = encodings.astype(np.float64)
    m = len(encodings)
    for _ in range(epochs):
        perm = rng.permutation(m)
        for start in range(0, m, config.batch_size):
            take = perm[start : start + config.batch_size]
            W64 = W.astype(np.float64)
            b64 = b.astype(np.float64) if b is not None else None
            _, gw, gb = _loss_grad_arrays(W64, b64, X64[take], labels[take], config.l2_penalty)
            W = (W64 + sign * config.learning_rate * gw).astype(np.float32)
            if b is not None:
                b = (b64 + sign * config.learning_rate * gb).astype(np.float32)
    return AdapterModel(W, b, model.train_seed, model.trained_on_hash)


def predict_logits(model: AdapterModel, encoding: np.ndarray) -> np.ndarray:
    """Raw linear outputs W @ e (+ b), in float64."""
    e = np.asarray(encoding, dtype=np.float64)
    if e.ndim != 1 or e.shape[0] != model.dim:
        raise DimensionError(f"encoding shape {e.shape} incompatible with dim {model.dim}")
    z = model.weights.astype(np.float64) @ e
    if model.bias is not None:
        z = z + model.bias.astype(np.float64)
    return z


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def predict(model: AdapterModel, encoding: np.ndarray) -> np.ndarray:
    """Class distribution softmax(W @ e + b); components sum to 1."""
    return softmax(predict_logits(model, encoding))
