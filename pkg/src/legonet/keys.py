"""Adapter keys and distance-based activation.

Keys are addresses in the encoding space: each adapter owns one, fixed at
initialization. A sample activates the k adapters whose keys are nearest in
L2 distance; that single rule drives training assignment, inference
ensembling, and the lookup of impacted adapters during unlearning, which is
why it must be exact and pure (no approximate index, no hidden state).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EmbeddingDataset
from .errors import ConfigError, DimensionError
from .seeding import rng_from


@dataclass(frozen=True)
class KeyInitConfig:
    """Settings for drawing keys from training encodings.

    perturb_scale is a multiplier on the per-dimension standard deviation of
    the training encodings: the perturbation should stay "slight" regardless
    of the embedding scale.
    """

    n: int
    perturb_scale: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError(f"need at least one adapter, got n={self.n}")
        if self.perturb_scale < 0:
            raise ConfigError("perturb_scale must be >= 0")


class KeySet:
    """Immutable n x d key matrix plus its init provenance."""

    def __init__(self, keys: np.ndarray, init_seed: int, perturb_std: np.ndarray):
        keys = np.ascontiguousarray(keys, dtype=np.float32)
        if keys.ndim != 2:
            raise DimensionError("keys must be a 2-d array")
        if not np.isfinite(keys).all():
            raise ConfigError("keys must be finite")
        self.keys = keys
        self.init_seed = int(init_seed)
        self.perturb_std = np.ascontiguousarray(perturb_std, dtype=np.float64)
        self.keys.setflags(write=False)
        self.perturb_std.setflags(write=False)

    @property
    def n(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, KeySet)
            and self.init_seed == other.init_seed
            and self.keys.shape == other.keys.shape
            and self.keys.tobytes() == other.keys.tobytes()
            and self.perturb_std.tobytes() == other.perturb_std.tobytes()
        )


@dataclass(frozen=True)
class Activation:
    """The k activated adapters for one encoding, nearest first.

    Exact distance ties are broken by ascending adapter index, so the result
    is a pure function of (encoding, keys, k).
    """

    adapter_ids: tuple[int, ...]
    distances: np.ndarray  # (k,) float64, non-decreasing


def init_keys(train: EmbeddingDataset, config: KeyInitConfig) -> KeySet:
    """Draw n keys from the training encodings (uniform, without replacement)
    and add a slight Gaussian perturbation.

    Per-dimension perturbation std = perturb_scale * per-dimension std of all
    training encodings. Sampling without replacement avoids duplicate keys,
    which would otherwise create permanent activation ties.
    """
    config.validate()
    if config.n > len(train):
        raise ConfigError(f"n={config.n} keys exceed the {len(train)} training samples")
    rng = rng_from(config.seed)
    picks = rng.permutation(len(train))[: config.n]
    data_std = train.encodings.astype(np.float64).std(axis=0)
    perturb_std = config.perturb_scale * data_std
    noise = rng.standard_normal((config.n, train.dim)) * perturb_std
    keys = (train.encodings[picks].astype(np.float64) + noise).astype(np.float32)
    return KeySet(keys, config.seed, perturb_std)


def _distances_to_keys(encoding: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """L2 distances from one encoding to every key row, in float64.

    Single code path for activation at training, inference, and unlearning
    time — bit-identical results are what let stored records stand in for
    recomputed activations.
    """
    e = np.asarray(encoding, dtype=np.float64)
    if e.ndim != 1:
        raise DimensionError(f"encoding must be 1-d, got shape {e.shape}")
    if e.shape[0] != keys.shape[1]:
        raise DimensionError(f"encoding dim {e.shape[0]} != key dim {keys.shape[1]}")
    if not np.isfinite(e).all():
        raise DimensionError("encoding has non-finite components")
    diff = keys.astype(np.float64) - e
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def distance(encoding: np.ndarray, key: np.ndarray) -> float:
    """Euclidean distance between one encoding and one key."""
    key = np.asarray(key, dtype=np.float64)
    if key.ndim != 1:
        raise DimensionError(f"key must be 1-d, got shape {key.shape}")
    return float(_distances_to_keys(encoding, key[None, :])[0])


def activate(encoding: np.ndarray, keys: KeySet, k: int) -> Activation:
    """Select the k nearest adapters for an encoding.

    Stable sort on distance gives the tie rule (lower adapter index first)
    for free.
    """
    if not (1 <= k <= keys.n):
        raise ConfigError(f"k={k} out of range [1, {keys.n}]")
    dists = _distances_to_keys(encoding, keys.keys)
    order = np.argsort(dists, kind="stable")[:k]
    return Activation(tuple(int(j) for j in order), dists[order])
