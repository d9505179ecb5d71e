"""The composite model: a fixed key space routing each input to its k
nearest adapters, whose outputs are combined into one class distribution.

Training materializes, for every adapter, the exact id list of samples
routed to it (each sample lands in exactly k record sets). Those record
lists are what make removal surgical: deleting a sample touches only the
adapters whose records contain it, and each adapter's parameters are a pure
function of (its record list, trainer config, its own mixed seed), never of
its siblings or of training history.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .adapter import (
    AdapterModel,
    TrainerConfig,
    ids_digest,
    predict as adapter_predict,
    predict_logits,
    softmax,
    train_adapter,
)
from .data import EmbeddingDataset
from .errors import ConfigError, DimensionError
from .keys import KeyInitConfig, KeySet, activate, init_keys
from .seeding import KEY_STREAM, mix_seed

ENSEMBLE_MODES = ("prob", "logit")


@dataclass(frozen=True)
class LegoConfig:
    n_adapters: int
    k_active: int
    seed: int = 0
    perturb_scale: float = 0.01
    ensemble: str = "prob"  # "prob": mean of softmax outputs; "logit": softmax of mean logits
    trainer: TrainerConfig = field(default_factory=TrainerConfig)

    def validate(self) -> None:
        if self.n_adapters < 1:
            raise ConfigError(f"n_adapters must be >= 1, got {self.n_adapters}")
        if not (1 <= self.k_active <= self.n_adapters):
            raise ConfigError(
                f"k_active must be in [1, n_adapters], got {self.k_active} with n={self.n_adapters}"
            )
        if not (self.perturb_scale >= 0):
            raise ConfigError("perturb_scale must be >= 0")
        if self.ensemble not in ENSEMBLE_MODES:
            raise ConfigError(f"ensemble must be one of {ENSEMBLE_MODES}, got {self.ensemble!r}")
        self.trainer.validate()


@dataclass(frozen=True)
class LegoModel:
    config: LegoConfig
    keys: KeySet
    adapters: tuple[AdapterModel, ...]
    records: tuple[np.ndarray, ...]  # per adapter, ascending u64 ids it was trained on
    retained_ids: np.ndarray  # ascending u64, the ids still influencing the model
    num_classes: int
    dataset_digest: bytes

    def __post_init__(self):
        if len(self.adapters) != self.config.n_adapters:
            raise DimensionError("adapter count does not match config")
        if len(self.records) != len(self.adapters):
            raise DimensionError("records must pair 1:1 with adapters")
        for j, (rec, a) in enumerate(zip(self.records, self.adapters)):
            if a.trained_on_hash != ids_digest(rec):
                raise DimensionError(f"adapter {j} was not trained on its record list")
            rec.setflags(write=False)
        self.retained_ids.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.keys.dim

    def adapter_seed(self, j: int) -> int:
        return mix_seed(self.config.seed, j)


def records_of(model: LegoModel, adapter_id: int) -> np.ndarray:
    """Read-only id list adapter_id was trained on; IndexError out of range."""
    if not 0 <= adapter_id < len(model.records):
        raise IndexError(f"adapter id {adapter_id} out of range [0, {len(model.records)})")
    return model.records[adapter_id]


def reverse_index(model: LegoModel) -> dict[int, list[int]]:
    """id -> sorted list of the adapters whose records contain it."""
    out: dict[int, list[int]] = {}
    for j, rec in enumerate(model.records):
        for i in rec:
            out.setdefault(int(i), []).append(j)
    return out


def route(keys: KeySet, dataset: EmbeddingDataset, k: int) -> list[np.ndarray]:
    """Assign every sample to its k nearest keys; returns, per adapter, the
    ascending row indices of the samples it owns."""
    buckets: list[list[int]] = [[] for _ in range(keys.n)]
    for row in range(len(dataset)):
        act = activate(dataset.encodings[row], keys, k)
        for j in act.adapter_ids:
            buckets[j].append(row)
    return [np.asarray(b, dtype=np.int64) for b in buckets]


def _train_all(
    dataset: EmbeddingDataset,
    config: LegoConfig,
    rows_per_adapter: list[np.ndarray],
    jobs: int = 1,
) -> tuple[tuple[AdapterModel, ...], tuple[np.ndarray, ...]]:
    def one(j: int) -> AdapterModel:
        rows = rows_per_adapter[j]
        return train_adapter(
            dataset.ids[rows],
            dataset.labels[rows],
            dataset.encodings[rows],
            dataset.num_classes,
            dataset.dim,
            config.trainer,
            mix_seed(config.seed, j),
        )

    n = len(rows_per_adapter)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            adapters = tuple(pool.map(one, range(n)))
    else:
        adapters = tuple(one(j) for j in range(n))
    records = tuple(np.array(dataset.ids[rows], dtype=np.uint64) for rows in rows_per_adapter)
    return adapters, records


def fit(
    dataset: EmbeddingDataset,
    config: LegoConfig,
    keys: KeySet | None = None,
    jobs: int = 1,
) -> LegoModel:
    """Build a model from scratch on a dataset.

    When keys is omitted a fresh key set is drawn from the dataset with a
    stream mixed from the config's seed. Passing keys pins the key space
    explicitly, which is what makes removal verifiable: the reference rebuild
    of "trained without those samples" is fit on the retained subset with the
    original keys. Adapter j trains under seed mix(config.seed, j), so its
    parameters do not depend on any other adapter or on call history.
    """
    config.validate()
    if len(dataset) == 0:
        raise ConfigError("cannot fit on an empty dataset")
    if keys is None:
        keys = init_keys(
            dataset,
            KeyInitConfig(
                n=config.n_adapters,
                perturb_scale=config.perturb_scale,
                seed=mix_seed(config.seed, KEY_STREAM),
            ),
        )
    if keys.n != config.n_adapters:
        raise ConfigError(f"key set has {keys.n} keys but config wants {config.n_adapters}")
    if keys.dim != dataset.dim:
        raise DimensionError(f"key dim {keys.dim} does not match data dim {dataset.dim}")

    rows_per_adapter = route(keys, dataset, config.k_active)
    adapters, records = _train_all(dataset, config, rows_per_adapter, jobs=jobs)
    return LegoModel(
        config=config,
        keys=keys,
        adapters=adapters,
        records=records,
        retained_ids=np.array(dataset.ids, dtype=np.uint64),
        num_classes=dataset.num_classes,
        dataset_digest=dataset.digest(),
    )


def predict_proba(model: LegoModel, encoding: np.ndarray) -> np.ndarray:
    """Ensemble class distribution over the k activated adapters.

    "prob" mode averages the adapters' softmax outputs (a mixture, the
    default); "logit" averages raw linear outputs and applies softmax once.
    """
    act = activate(encoding, model.keys, model.config.k_active)
    if model.config.ensemble == "logit":
        stack = np.stack(
            [predict_logits(model.adapters[j], encoding) for j in act.adapter_ids]
        )
        return softmax(stack.mean(axis=0))
    stack = np.stack([adapter_predict(model.adapters[j], encoding) for j in act.adapter_ids])
    return stack.mean(axis=0)


def predict_label(model: LegoModel, encoding: np.ndarray) -> int:
    """argmax of the ensemble distribution; ties break to the lowest class."""
    return int(np.argmax(predict_proba(model, encoding)))


def predict_batch(model: LegoModel, encodings: np.ndarray, jobs: int = 1) -> np.ndarray:
    """Labels for a batch of encodings. jobs only parallelizes; the labels
    are identical for any thread count."""
    encodings = np.asarray(encodings)
    if encodings.ndim != 2:
        raise DimensionError("encodings must be a (m, d) matrix")
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(lambda e: predict_label(model, e), encodings))
    else:
        out = [predict_label(model, e) for e in encodings]
    return np.asarray(out, dtype=np.int64)


def with_adapters(
    model: LegoModel,
    new_adapters: dict[int, AdapterModel],
    new_records: dict[int, np.ndarray],
    retained_ids: np.ndarray,
    dataset_digest: bytes,
) -> LegoModel:
    """Copy of the model with some adapters (and their records) replaced."""
    adapters = list(model.adapters)
    records = list(model.records)
    for j, a in new_adapters.items():
        adapters[j] = a
    for j, r in new_records.items():
        records[j] = np.asarray(r, dtype=np.uint64)
    return replace(
        model,
        adapters=tuple(adapters),
        records=tuple(records),
        retained_ids=np.asarray(retained_ids, dtype=np.uint64),
        dataset_digest=dataset_digest,
    )
