"""Benchmark harness: accuracy under deletion, removal wall time, grid
sweeps over (n, k), and the closed-form cost model.

Protocol for a scenario run: every configured system trains on the same
data with the same trainer and seed, the deletion list is drawn once and
shared, each system executes the deletions as a sequence of removal events,
and metrics are reported before ("origin") and after. Timing is the only
nondeterministic output: event wall times use a monotonic clock, the whole
unlearning phase runs once extra as a discarded warm-up, and the reported
figure is the median event time over the kept repetitions.

Bookkeeping columns count honest work: retrained_params sums the parameter
count of every sub-model (re)trained during the events, retrained_samples
the sizes of the sample sets fed to those (re)trainings.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .adapter import TrainerConfig
from .baselines import (
    FixSisaModel,
    SingleHeadModel,
    fixsisa_fit,
    fixsisa_predict_label,
    fixsisa_unlearn,
    ngrad,
    single_fit,
    single_predict_label,
    single_retrain,
    tune,
)
from .data import EmbeddingDataset
from .errors import ConfigError, EmptySetError
from .model import LegoConfig, LegoModel, fit as lego_fit, predict_batch, predict_label
from .seeding import DELETION_STREAM, NGRAD_STREAM, TUNE_STREAM, mix_seed, rng_from
from .unlearn import UnlearnRequest, unlearn

SYSTEM_KINDS = ("lego", "retrain", "tune", "ngrad", "fixsisa")

CSV_HEADER = (
    "system,task,n,k,s,seed,acc_retain,acc_unlearn,acc_test,"
    "unlearn_ms,retrained_params,retrained_samples"
)


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    n_adapters: int = 0
    k_active: int = 0
    num_shards: int = 0
    update_epochs: int | None = None  # tune/ngrad step budget; None -> trainer epochs

    def validate(self) -> None:
        if self.kind not in SYSTEM_KINDS:
            raise ConfigError(f"unknown system kind {self.kind!r}")
        if self.kind == "lego" and not (1 <= self.k_active <= self.n_adapters):
            raise ConfigError("lego spec needs 1 <= k_active <= n_adapters")
        if self.kind == "fixsisa" and self.num_shards < 1:
            raise ConfigError("fixsisa spec needs num_shards >= 1")
        if self.update_epochs is not None and self.update_epochs < 0:
            raise ConfigError("update_epochs must be >= 0")

    def label(self) -> str:
        # No commas: the label is a CSV cell.
        if self.kind == "lego":
            return f"lego(n={self.n_adapters};k={self.k_active})"
        if self.kind == "fixsisa":
            return f"fixsisa(s={self.num_shards})"
        return self.kind


@dataclass(frozen=True)
class Scenario:
    task: str  # "random" | "unclass"
    m: int = 1  # deletions for the random task
    repetitions: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.task not in ("random", "unclass"):
            raise ConfigError(f"task must be 'random' or 'unclass', got {self.task!r}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")

    def task_label(self) -> str:
        return f"random{self.m}" if self.task == "random" else "unclass"


@dataclass(frozen=True)
class MetricsRow:
    system: str
    task: str
    n: int
    k: int
    s: int
    seed: int
    acc_retain: float
    acc_unlearn: float
    acc_test: float
    unlearn_ms: float
    retrained_params: int
    retrained_samples: int

    def to_csv_line(self) -> str:
        return ",".join(
            [
                self.system,
                self.task,
                str(self.n),
                str(self.k),
                str(self.s),
                str(self.seed),
                str(self.acc_retain),
                str(self.acc_unlearn),
                str(self.acc_test),
                f"{self.unlearn_ms:.3f}",
                str(self.retrained_params),
                str(self.retrained_samples),
            ]
        )


def rows_to_csv(rows: list[MetricsRow]) -> str:
    return "\n".join([CSV_HEADER] + [r.to_csv_line() for r in rows]) + "\n"


def classify(model, encoding: np.ndarray) -> int:
    if isinstance(model, LegoModel):
        return predict_label(model, encoding)
    if isinstance(model, SingleHeadModel):
        return single_predict_label(model, encoding)
    if isinstance(model, FixSisaModel):
        return fixsisa_predict_label(model, encoding)
    raise ConfigError(f"cannot classify with object of type {type(model).__name__}")


def evaluate(model, dataset: EmbeddingDataset, jobs: int = 1) -> float:
    """Percentage of samples whose predicted class equals the label."""
    if len(dataset) == 0:
        raise EmptySetError("cannot evaluate on an empty dataset")
    if isinstance(model, LegoModel):
        preds = predict_batch(model, dataset.encodings, jobs=jobs)
    else:
        preds = np.asarray([classify(model, e) for e in dataset.encodings], dtype=np.int64)
    return float(np.mean(preds == dataset.labels.astype(np.int64)) * 100.0)


def pick_unlearn_ids(train: EmbeddingDataset, scenario: Scenario) -> np.ndarray:
    """The deletion list, drawn once per scenario and shared by all systems."""
    rng = rng_from(mix_seed(scenario.seed, DELETION_STREAM))
    if scenario.task == "random":
        if scenario.m > len(train):
            raise ConfigError(f"cannot delete {scenario.m} of {len(train)} samples")
        picks = rng.permutation(len(train))[: scenario.m]
        return np.array(train.ids[picks], dtype=np.uint64)
    victim = int(rng.integers(train.num_classes))
    ids = train.ids[train.labels == victim]
    if ids.size == 0:
        raise ConfigError(f"class {victim} has no training samples to delete")
    return np.array(ids, dtype=np.uint64)


def head_params(num_classes: int, dim: int, use_bias: bool) -> int:
    return num_classes * dim + (num_classes if use_bias else 0)


def _fit_system(spec: SystemSpec, train: EmbeddingDataset, trainer: TrainerConfig, seed: int, jobs: int):
    if spec.kind == "lego":
        cfg = LegoConfig(
            n_adapters=spec.n_adapters, k_active=spec.k_active, seed=seed, trainer=trainer
        )
        return lego_fit(train, cfg, jobs=jobs)
    if spec.kind == "fixsisa":
        return fixsisa_fit(train, spec.num_shards, trainer, seed, jobs=jobs)
    return single_fit(train, trainer, seed)


def _events(scenario: Scenario, forget_ids: np.ndarray) -> list[np.ndarray]:
    """Removal events: one per id for the random task (sequential requests),
    a single batched event for class removal."""
    if scenario.task == "random":
        return [forget_ids[i : i + 1] for i in range(len(forget_ids))]
    return [forget_ids]


def _apply_event(
    spec: SystemSpec,
    state,
    event_ids: np.ndarray,
    event_index: int,
    train: EmbeddingDataset,
    retained_after: np.ndarray,
    trainer: TrainerConfig,
    seed: int,
    jobs: int,
):
    """Returns (new state, seconds, params retrained, samples retrained)."""
    hp = head_params(train.num_classes, train.dim, trainer.use_bias)
    t0 = time.perf_counter()
    if spec.kind == "lego":
        state, report = unlearn(
            state, UnlearnRequest(tuple(int(i) for i in event_ids), batched=True), train, jobs=jobs
        )
        dt = time.perf_counter() - t0
        return state, dt, report.retrain_events * hp, report.retrained_samples_total
    if spec.kind == "retrain":
        state = single_retrain(state, event_ids, train)
        dt = time.perf_counter() - t0
        return state, dt, hp, len(retained_after)
    if spec.kind == "tune":
        retain = train.subset(retained_after)
        state = tune(
            state, retain, trainer, mix_seed(mix_seed(seed, TUNE_STREAM), event_index),
            epochs=spec.update_epochs,
        )
        dt = time.perf_counter() - t0
        return state, dt, hp, len(retain)
    if spec.kind == "ngrad":
        removed = train.subset(event_ids)
        state = ngrad(
            state, removed, trainer, mix_seed(mix_seed(seed, NGRAD_STREAM), event_index),
            epochs=spec.update_epochs,
        )
        dt = time.perf_counter() - t0
        return state, dt, hp, len(removed)
    state, impacted = fixsisa_unlearn(state, event_ids, train, jobs=jobs)
    dt = time.perf_counter() - t0
    samples = int(sum(len(state.shard_ids[j]) for j in impacted))
    return state, dt, len(impacted) * hp, samples


def _unlearn_phase(
    spec: SystemSpec,
    origin,
    scenario: Scenario,
    events: list[np.ndarray],
    train: EmbeddingDataset,
    trainer: TrainerConfig,
    jobs: int,
):
    """Run all events from the origin state; returns (final state, event
    seconds, params total, samples total)."""
    state = origin
    retained = np.array(train.ids, dtype=np.uint64)
    times, params, samples = [], 0, 0
    for i, ev in enumerate(events):
        retained = retained[~np.isin(retained, ev)]
        state, dt, p, m = _apply_event(
            spec, state, ev, i, train, retained, trainer, scenario.seed, jobs
        )
        times.append(dt)
        params += p
        samples += m
    return state, times, params, samples


def run_scenario(
    train: EmbeddingDataset,
    test: EmbeddingDataset,
    scenario: Scenario,
    systems: list[SystemSpec],
    trainer: TrainerConfig = TrainerConfig(),
    jobs: int = 1,
) -> list[MetricsRow]:
    """Origin and post-deletion metrics for each system; two rows apiece."""
    scenario.validate()
    for spec in systems:
        spec.validate()
    forget = pick_unlearn_ids(train, scenario)
    events = _events(scenario, forget)
    retained = train.ids[~np.isin(train.ids, forget)]
    retain_set = train.subset(retained)
    unlearn_set = train.subset(np.sort(forget))

    rows: list[MetricsRow] = []
    for spec in systems:
        origin = _fit_system(spec, train, trainer, scenario.seed, jobs)
        dims = dict(
            n=spec.n_adapters if spec.kind == "lego" else 0,
            k=spec.k_active if spec.kind == "lego" else 0,
            s=spec.num_shards if spec.kind == "fixsisa" else 0,
        )
        rows.append(
            MetricsRow(
                system=spec.label(),
                task="origin",
                seed=scenario.seed,
                acc_retain=evaluate(origin, retain_set, jobs=jobs),
                acc_unlearn=evaluate(origin, unlearn_set, jobs=jobs),
                acc_test=evaluate(origin, test, jobs=jobs),
                unlearn_ms=0.0,
                retrained_params=0,
                retrained_samples=0,
                **dims,
            )
        )

        # Warm-up phase discarded, then `repetitions` timed phases; the
        # final states are identical across phases, so the last one serves.
        _unlearn_phase(spec, origin, scenario, events, train, trainer, jobs)
        all_times: list[float] = []
        final = params = samples = None
        for _ in range(scenario.repetitions):
            final, times, params, samples = _unlearn_phase(
                spec, origin, scenario, events, train, trainer, jobs
            )
            all_times.extend(times)
        rows.append(
            MetricsRow(
                system=spec.label(),
                task=scenario.task_label(),
                seed=scenario.seed,
                acc_retain=evaluate(final, retain_set, jobs=jobs),
                acc_unlearn=evaluate(final, unlearn_set, jobs=jobs),
                acc_test=evaluate(final, test, jobs=jobs),
                unlearn_ms=float(np.median(all_times) * 1000.0),
                retrained_params=params,
                retrained_samples=samples,
                **dims,
            )
        )
    return rows


def sweep(
    train: EmbeddingDataset,
    test: EmbeddingDataset,
    pairs: list[tuple[int, int]],
    trainer: TrainerConfig = TrainerConfig(),
    seed: int = 0,
    jobs: int = 1,
) -> list[MetricsRow]:
    """One row per (n, k) grid point: fit, delete one shared random sample,
    report post-deletion metrics. Callers build the grid for whichever axis
    they hold fixed (k, n, or the ratio n/k)."""
    if not pairs:
        raise ConfigError("sweep grid is empty")
    scenario = Scenario(task="random", m=1, repetitions=1, seed=seed)
    forget = pick_unlearn_ids(train, scenario)
    retained = train.ids[~np.isin(train.ids, forget)]
    retain_set = train.subset(retained)
    unlearn_set = train.subset(np.sort(forget))

    rows = []
    for n, k in pairs:
        spec = SystemSpec(kind="lego", n_adapters=n, k_active=k)
        spec.validate()
        origin = _fit_system(spec, train, trainer, seed, jobs)
        final, times, params, samples = _unlearn_phase(
            spec, origin, scenario, [forget], train, trainer, jobs
        )
        rows.append(
            MetricsRow(
                system=spec.label(),
                task="sweep",
                n=n,
                k=k,
                s=0,
                seed=seed,
                acc_retain=evaluate(final, retain_set, jobs=jobs),
                acc_unlearn=evaluate(final, unlearn_set, jobs=jobs),
                acc_test=evaluate(final, test, jobs=jobs),
                unlearn_ms=float(np.median(times) * 1000.0),
                retrained_params=params,
                retrained_samples=samples,
            )
        )
    return rows


@dataclass(frozen=True)
class CostReport:
    """Closed-form workload arithmetic, exact (ints and rationals).

    Conventions, chosen for auditability and stated in every emitted report:
    a multiply-add counts as 2 FLOPs; one key distance costs 3d (subtract,
    square, accumulate per coordinate); selecting k of n costs n*ceil(log2 n)
    comparisons at 1 FLOP each; evaluating one linear sub-model costs 2*d*C.
    Encoder parameters and FLOPs are caller-supplied constants, since the
    encoder is external to this package.
    """

    adapter_params: int
    retrain_params_lego: int  # k sub-models touched per deletion
    retrain_params_sisa: int  # encoder + one head, the shard system's unit
    expected_samples_lego: Fraction  # mean record size kN/n
    expected_retrain_samples_lego: Fraction  # k impacted records: k^2 N / n
    expected_retrain_samples_sisa: Fraction  # one shard: N/s
    activation_flops: int
    adapter_eval_flops: int
    encoder_params: int
    encoder_flops: int

    @property
    def inference_flops(self) -> int:
        return self.encoder_flops + self.activation_flops + self.adapter_eval_flops

    def to_dict(self) -> dict:
        def frac(f: Fraction):
            return int(f) if f.denominator == 1 else str(f)

        return {
            "conventions": "mul-add=2 flops; distance=3d; selection=n*ceil(log2 n); head eval=2dC",
            "adapter_params": self.adapter_params,
            "retrain_params_lego": self.retrain_params_lego,
            "retrain_params_sisa": self.retrain_params_sisa,
            "expected_samples_lego": frac(self.expected_samples_lego),
            "expected_retrain_samples_lego": frac(self.expected_retrain_samples_lego),
            "expected_retrain_samples_sisa": frac(self.expected_retrain_samples_sisa),
            "activation_flops": self.activation_flops,
            "adapter_eval_flops": self.adapter_eval_flops,
            "encoder_params": self.encoder_params,
            "encoder_flops": self.encoder_flops,
            "inference_flops": self.inference_flops,
        }


def cost_report(
    d: int,
    C: int,
    n: int,
    k: int,
    s: int,
    N: int,
    encoder_params: int = 0,
    encoder_flops: int = 0,
    use_bias: bool = False,
) -> CostReport:
    for name, v in [("d", d), ("C", C), ("n", n), ("k", k), ("s", s), ("N", N)]:
        if v < 1:
            raise ConfigError(f"{name} must be >= 1, got {v}")
    if k > n:
        raise ConfigError(f"k={k} exceeds n={n}")
    if encoder_params < 0 or encoder_flops < 0:
        raise ConfigError("encoder constants must be >= 0")
    ap = head_params(C, d, use_bias)
    selection = n * max(n - 1, 0).bit_length()  # n * ceil(log2 n)
    return CostReport(
        adapter_params=ap,
        retrain_params_lego=k * ap,
        retrain_params_sisa=encoder_params + ap,
        expected_samples_lego=Fraction(k * N, n),
        expected_retrain_samples_lego=Fraction(k * k * N, n),
        expected_retrain_samples_sisa=Fraction(N, s),
        activation_flops=n * 3 * d + selection,
        adapter_eval_flops=k * 2 * d * C,
        encoder_params=encoder_params,
        encoder_flops=encoder_flops,
    )
