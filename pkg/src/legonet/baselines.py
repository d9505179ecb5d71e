"""Comparison systems sharing the fixed-encoder setting.

Three families:
  * a single linear head over the full dataset, with exact removal by
    scratch retraining plus two approximate shortcuts (fine-tuning on the
    retained data; gradient ascent on the removed data),
  * a sharded ensemble: ids are hashed into s disjoint shards, one head per
    shard, predictions averaged over all shards; removal retrains only the
    shard that held the id.

The single head and the sharded system reuse the adapter trainer verbatim,
so their scratch-equivalence behaves exactly like the main model's. Shard
assignment hashes the id, not the row position, so it is stable under
dataset reordering and under deletion of other ids.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .adapter import (
    AdapterModel,
    TrainerConfig,
    continue_training,
    ids_digest,
    predict as adapter_predict,
    train_adapter,
)
from .data import EmbeddingDataset
from .errors import ConfigError, DigestMismatchError, DimensionError, UnknownIdError, ValidationError
from .seeding import SHARD_ASSIGN_STREAM, mix_seed


@dataclass(frozen=True)
class SingleHeadModel:
    head: AdapterModel
    trained_ids: np.ndarray  # ascending u64; the ids whose influence the head carries
    trainer: TrainerConfig
    num_classes: int
    dataset_digest: bytes
    seed: int
    exact: bool = True  # False once tune/ngrad has touched the parameters

    def __post_init__(self):
        if self.exact and self.head.trained_on_hash != ids_digest(self.trained_ids):
            raise DimensionError("head was not trained on its id list")
        self.trained_ids.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.head.dim


@dataclass(frozen=True)
class FixSisaModel:
    num_shards: int
    shards: tuple[AdapterModel, ...]
    shard_ids: tuple[np.ndarray, ...]  # ascending u64 per shard; disjoint union = retained
    trainer: TrainerConfig
    num_classes: int
    dataset_digest: bytes
    seed: int

    def __post_init__(self):
        if len(self.shards) != self.num_shards or len(self.shard_ids) != self.num_shards:
            raise DimensionError("shard count mismatch")
        for j, (rec, a) in enumerate(zip(self.shard_ids, self.shards)):
            if a.trained_on_hash != ids_digest(rec):
                raise DimensionError(f"shard {j} was not trained on its id list")
            rec.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.shards[0].dim

    def retained(self) -> np.ndarray:
        if not self.shard_ids:
            return np.zeros(0, dtype=np.uint64)
        return np.sort(np.concatenate(self.shard_ids))


def _check_digest(digest: bytes, dataset: EmbeddingDataset, ids: np.ndarray) -> None:
    try:
        subset = dataset.subset(ids)
    except ValidationError as e:
        raise DigestMismatchError(f"dataset does not cover the trained ids: {e}") from e
    if subset.digest() != digest:
        raise DigestMismatchError(
            "dataset digest mismatch: the provided data does not match "
            "what the model was trained on"
        )


def split_forget(ids_all: np.ndarray, forget) -> tuple[np.ndarray, np.ndarray]:
    """(retained, forget-as-array); raises if a forget id is not present."""
    arr = np.unique(np.asarray(list(forget), dtype=np.uint64))
    if arr.size == 0:
        raise ValidationError("removal request must name at least one id")
    present = np.isin(arr, ids_all)
    if not present.all():
        raise UnknownIdError(f"id {int(arr[~present][0])} is not in the retained set")
    return ids_all[~np.isin(ids_all, arr)], arr


def check_dataset(model, train: EmbeddingDataset) -> None:
    """Verify train matches what the model was fitted on (digest check)."""
    ids = model.retained() if isinstance(model, FixSisaModel) else model.trained_ids
    _check_digest(model.dataset_digest, train, ids)


# --- single head -----------------------------------------------------------


def single_fit(train: EmbeddingDataset, config: TrainerConfig, seed: int) -> SingleHeadModel:
    """One linear head over the whole dataset. The head's seed is mixed with
    stream 0, which makes the 1-shard sharded system bit-identical to this."""
    if len(train) == 0:
        raise ConfigError("cannot fit on an empty dataset")
    head = train_adapter(
        train.ids,
        train.labels,
        train.encodings,
        train.num_classes,
        train.dim,
        config,
        mix_seed(seed, 0),
    )
    return SingleHeadModel(
        head=head,
        trained_ids=np.array(train.ids, dtype=np.uint64),
        trainer=config,
        num_classes=train.num_classes,
        dataset_digest=train.digest(),
        seed=int(seed),
    )


def single_retrain(
    model: SingleHeadModel, forget, train: EmbeddingDataset
) -> SingleHeadModel:
    """Exact removal: scratch-retrain the head on the retained ids with the
    original seed and trainer config. An empty retained set leaves the zero
    model."""
    _check_digest(model.dataset_digest, train, model.trained_ids)
    retained, _ = split_forget(model.trained_ids, forget)
    rows = train.rows_for_ids(retained)
    head = train_adapter(
        retained,
        train.labels[rows],
        train.encodings[rows],
        model.num_classes,
        model.dim,
        model.trainer,
        mix_seed(model.seed, 0),
    )
    return SingleHeadModel(
        head=head,
        trained_ids=retained,
        trainer=model.trainer,
        num_classes=model.num_classes,
        dataset_digest=train.subset(retained).digest(),
        seed=model.seed,
    )


def tune(
    model: SingleHeadModel,
    retain: EmbeddingDataset,
    config: TrainerConfig,
    seed: int,
    epochs: int | None = None,
) -> SingleHeadModel:
    """Approximate removal by fine-tuning on the retained data only.

    The removed ids' influence is NOT erased, merely diluted; the resulting
    state never matches a scratch retrain, which is the behavior the exact
    systems are compared against. epochs=0 returns the model unchanged.
    """
    steps = config.epochs if epochs is None else epochs
    if steps == 0 or len(retain) == 0:
        return model
    head = continue_training(
        model.head, retain.encodings, retain.labels, config, seed, steps, sign=-1.0
    )
    return replace(model, head=head, exact=False)


def ngrad(
    model: SingleHeadModel,
    unlearn_set: EmbeddingDataset,
    config: TrainerConfig,
    seed: int,
    epochs: int | None = None,
) -> SingleHeadModel:
    """Approximate removal by gradient ascent on the removed samples' loss."""
    steps = config.epochs if epochs is None else epochs
    if steps == 0 or len(unlearn_set) == 0:
        return model
    head = continue_training(
        model.head, unlearn_set.encodings, unlearn_set.labels, config, seed, steps, sign=+1.0
    )
    return replace(model, head=head, exact=False)


def single_predict_proba(model: SingleHeadModel, encoding: np.ndarray) -> np.ndarray:
    return adapter_predict(model.head, encoding)


def single_predict_label(model: SingleHeadModel, encoding: np.ndarray) -> int:
    return int(np.argmax(single_predict_proba(model, encoding)))


# --- sharded ensemble ------------------------------------------------------


def shard_of(seed: int, num_shards: int, sample_id: int) -> int:
    """Deterministic shard assignment by hashing the id. Independent of every
    other id, so deleting one sample never reshuffles the rest."""
    return mix_seed(mix_seed(seed, SHARD_ASSIGN_STREAM), int(sample_id)) % num_shards


def _assign_shards(seed: int, num_shards: int, ids: np.ndarray) -> list[np.ndarray]:
    assignment = np.asarray([shard_of(seed, num_shards, i) for i in ids], dtype=np.int64)
    return [np.array(ids[assignment == j], dtype=np.uint64) for j in range(num_shards)]


def _train_shards(
    train: EmbeddingDataset,
    per_shard_ids: list[np.ndarray],
    config: TrainerConfig,
    seed: int,
    which: list[int] | None = None,
    old: tuple[AdapterModel, ...] | None = None,
    jobs: int = 1,
) -> tuple[AdapterModel, ...]:
    todo = range(len(per_shard_ids)) if which is None else which

    def one(j: int) -> AdapterModel:
        ids = per_shard_ids[j]
        rows = train.rows_for_ids(ids)
        return train_adapter(
            ids,
            train.labels[rows],
            train.encodings[rows],
            train.num_classes,
            train.dim,
            config,
            mix_seed(seed, j),
        )

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            trained = dict(zip(todo, pool.map(one, todo)))
    else:
        trained = {j: one(j) for j in todo}
    base = list(old) if old is not None else [None] * len(per_shard_ids)
    for j, a in trained.items():
        base[j] = a
    return tuple(base)


def fixsisa_fit(
    train: EmbeddingDataset, num_shards: int, config: TrainerConfig, seed: int, jobs: int = 1
) -> FixSisaModel:
    """Disjoint seeded sharding, one head per shard, seed mix(seed, shard)."""
    if not 1 <= num_shards <= len(train):
        raise ConfigError(f"num_shards must be in [1, N], got {num_shards} with N={len(train)}")
    per_shard = _assign_shards(seed, num_shards, train.ids)
    shards = _train_shards(train, per_shard, config, seed, jobs=jobs)
    return FixSisaModel(
        num_shards=num_shards,
        shards=shards,
        shard_ids=tuple(per_shard),
        trainer=config,
        num_classes=train.num_classes,
        dataset_digest=train.digest(),
        seed=int(seed),
    )


def fixsisa_unlearn(
    model: FixSisaModel, forget, train: EmbeddingDataset, jobs: int = 1
) -> tuple[FixSisaModel, list[int]]:
    """Exact removal: drop the ids from their shards and retrain only those
    shards. Returns the new model and the retrained shard indices."""
    retained_before = model.retained()
    _check_digest(model.dataset_digest, train, retained_before)
    retained, arr = split_forget(retained_before, forget)

    impacted = sorted({shard_of(model.seed, model.num_shards, int(i)) for i in arr})
    per_shard = list(model.shard_ids)
    for j in impacted:
        per_shard[j] = per_shard[j][~np.isin(per_shard[j], arr)]
    shards = _train_shards(
        train, per_shard, model.trainer, model.seed, which=impacted, old=model.shards, jobs=jobs
    )
    return (
        FixSisaModel(
            num_shards=model.num_shards,
            shards=shards,
            shard_ids=tuple(per_shard),
            trainer=model.trainer,
            num_classes=model.num_classes,
            dataset_digest=train.subset(retained).digest(),
            seed=model.seed,
        ),
        impacted,
    )


def fixsisa_predict_proba(model: FixSisaModel, encoding: np.ndarray) -> np.ndarray:
    """Mean of every shard's class distribution (all shards vote, always)."""
    stack = np.stack([adapter_predict(a, encoding) for a in model.shards])
    return stack.mean(axis=0)


def fixsisa_predict_label(model: FixSisaModel, encoding: np.ndarray) -> int:
    return int(np.argmax(fixsisa_predict_proba(model, encoding)))
