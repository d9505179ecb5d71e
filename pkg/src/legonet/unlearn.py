"""Exact removal of training samples from a fitted model.

The procedure: find the adapters whose record lists contain the doomed ids,
delete the ids from those records and from the retained set, and retrain
just those adapters from fresh initialization under their original seeds.
Because an adapter is a pure function of (records, trainer config, seed),
the result is byte-identical to a scratch build on the retained data with
the same keys; that equivalence is the package's central guarantee and the
tests enforce it on serialized state.

Removal requests run in one of two modes. Sequential processes ids one at a
time, retraining after every single removal; batched edits all records
first and retrains each impacted adapter once. Both reach the same final
state (seeds do not depend on history) but batched does strictly less work
when deletions overlap, which is the point of offering it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .adapter import train_adapter
from .data import EmbeddingDataset
from .errors import DigestMismatchError, UnknownIdError, ValidationError
from .model import LegoModel, with_adapters
from .seeding import mix_seed


@dataclass(frozen=True)
class UnlearnRequest:
    ids: tuple[int, ...]
    batched: bool = True

    def validate(self) -> None:
        if len(self.ids) == 0:
            raise ValidationError("removal request must name at least one id")
        if len(set(self.ids)) != len(self.ids):
            raise ValidationError("removal request contains duplicate ids")


@dataclass(frozen=True)
class UnlearnReport:
    removed_ids: tuple[int, ...]
    impacted_adapters: tuple[int, ...]  # sorted, unique
    retrained_adapters: int  # == len(impacted_adapters)
    retrain_events: int  # retrainings performed; sequential mode can exceed retrained_adapters
    retrained_samples_total: int  # sample count summed over retrain events
    wall_time_per_adapter: dict[int, float]
    wall_time_total: float

    def to_dict(self) -> dict:
        return {
            "removed_ids": [int(i) for i in self.removed_ids],
            "impacted_adapters": [int(j) for j in self.impacted_adapters],
            "retrained_adapters": self.retrained_adapters,
            "retrain_events": self.retrain_events,
            "retrained_samples_total": self.retrained_samples_total,
            "wall_time_per_adapter": {str(j): t for j, t in self.wall_time_per_adapter.items()},
            "wall_time_total": self.wall_time_total,
        }


def _require_retained(model: LegoModel, ids: np.ndarray) -> None:
    retained = model.retained_ids
    if len(retained) == 0:
        raise UnknownIdError(f"id {int(ids[0])} is not in the retained set")
    pos = np.minimum(np.searchsorted(retained, ids), len(retained) - 1)
    ok = retained[pos] == ids
    if not ok.all():
        missing = ids[~ok][0]
        raise UnknownIdError(f"id {int(missing)} is not in the retained set")


def impacted_adapters(model: LegoModel, ids) -> list[int]:
    """Sorted adapter indices whose records contain any of the ids."""
    arr = np.unique(np.asarray(list(ids), dtype=np.uint64))
    if arr.size == 0:
        return []
    _require_retained(model, arr)
    hit = []
    for j, rec in enumerate(model.records):
        if rec.size and np.isin(arr, rec).any():
            hit.append(j)
    return hit


def verify_erasure(model: LegoModel, ids) -> bool:
    """True iff none of the ids appear in the retained set or any record."""
    arr = np.asarray(list(ids), dtype=np.uint64)
    if arr.size == 0:
        return True
    if np.isin(arr, model.retained_ids).any():
        return False
    return not any(rec.size and np.isin(arr, rec).any() for rec in model.records)


def check_dataset(model: LegoModel, train: EmbeddingDataset) -> None:
    """Verify the dataset is the one the model's retained state came from:
    the retained subset's canonical bytes must digest to the stored value."""
    try:
        subset = train.subset(model.retained_ids)
    except ValidationError as e:
        raise DigestMismatchError(f"dataset does not cover the retained ids: {e}") from e
    got = subset.digest()
    if got != model.dataset_digest:
        raise DigestMismatchError(
            "dataset digest mismatch: the retained subset of the provided data "
            "does not match what the model was trained on"
        )


def _remove_and_retrain(
    model: LegoModel,
    forget: np.ndarray,
    train: EmbeddingDataset,
    jobs: int = 1,
) -> tuple[LegoModel, list[int], int, dict[int, float]]:
    """One batched removal pass. Returns (new model, impacted adapter list,
    samples retrained, per-adapter seconds)."""
    impacted = impacted_adapters(model, forget)
    new_records = {j: model.records[j][~np.isin(model.records[j], forget)] for j in impacted}
    retained = model.retained_ids[~np.isin(model.retained_ids, forget)]
    digest = train.subset(retained).digest()

    timings: dict[int, float] = {}
    samples = 0

    def retrain(j: int):
        rec = new_records[j]
        rows = train.rows_for_ids(rec)
        t0 = time.perf_counter()
        a = train_adapter(
            rec,
            train.labels[rows],
            train.encodings[rows],
            model.num_classes,
            model.dim,
            model.config.trainer,
            mix_seed(model.config.seed, j),
        )
        return j, a, time.perf_counter() - t0, len(rec)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(retrain, impacted))
    else:
        results = [retrain(j) for j in impacted]

    new_adapters = {}
    for j, a, dt, m in results:
        new_adapters[j] = a
        timings[j] = dt
        samples += m

    out = with_adapters(model, new_adapters, new_records, retained, digest)
    return out, impacted, samples, timings


def unlearn(
    model: LegoModel,
    request: UnlearnRequest,
    train: EmbeddingDataset,
    jobs: int = 1,
) -> tuple[LegoModel, UnlearnReport]:
    """Remove the requested ids and retrain the impacted adapters.

    train must be the dataset the model was fitted on (or any superset whose
    retained subset matches the stored digest); retraining needs the retained
    samples' encodings, which checkpoints deliberately do not carry. Removing
    an id that is not currently retained raises UnknownIdError rather than
    passing silently: a duplicate deletion request means some bookkeeping is
    wrong, and this path exists to make deletions auditable.
    """
    request.validate()
    check_dataset(model, train)
    ids = np.asarray(request.ids, dtype=np.uint64)
    _require_retained(model, np.unique(ids))

    t_start = time.perf_counter()
    impacted_union: set[int] = set()
    events = 0
    samples_total = 0
    per_adapter: dict[int, float] = {}

    if request.batched:
        model, impacted, samples_total, per_adapter = _remove_and_retrain(
            model, np.unique(ids), train, jobs=jobs
        )
        impacted_union = set(impacted)
        events = len(impacted)
    else:
        for raw in request.ids:
            one = np.asarray([raw], dtype=np.uint64)
            model, impacted, samples, timings = _remove_and_retrain(model, one, train, jobs=jobs)
            impacted_union.update(impacted)
            events += len(impacted)
            samples_total += samples
            for j, dt in timings.items():
                per_adapter[j] = per_adapter.get(j, 0.0) + dt

    report = UnlearnReport(
        removed_ids=tuple(int(i) for i in request.ids),
        impacted_adapters=tuple(sorted(impacted_union)),
        retrained_adapters=len(impacted_union),
        retrain_events=events,
        retrained_samples_total=samples_total,
        wall_time_per_adapter=per_adapter,
        wall_time_total=time.perf_counter() - t_start,
    )
    return model, report
