"""Exact machine unlearning over fixed embeddings.

A fixed pretrained encoder (external to this package) maps samples into a
d-dimensional space. Here, n small linear adapters each own a key vector in
that space; a sample is routed to its k nearest keys for both training and
ensemble inference. Because every adapter records exactly which sample ids
it trained on, and trains as a pure function of (records, config, seed),
deleting samples means retraining only the few impacted adapters — and the
result is byte-identical to never having trained on them at all.
"""

from .adapter import AdapterModel, TrainerConfig, loss_and_grad, train_adapter
from .baselines import (
    FixSisaModel,
    SingleHeadModel,
    fixsisa_fit,
    fixsisa_predict_proba,
    fixsisa_unlearn,
    ngrad,
    single_fit,
    single_predict_proba,
    single_retrain,
    tune,
)
from .bench import (
    CostReport,
    MetricsRow,
    Scenario,
    SystemSpec,
    cost_report,
    evaluate,
    rows_to_csv,
    run_scenario,
    sweep,
)
from .data import (
    EmbeddingDataset,
    Sample,
    SynthConfig,
    load_dataset,
    save_dataset,
    save_dataset_csv,
    split,
    synth_generate,
)
from .errors import (
    ConfigError,
    DigestMismatchError,
    DimensionError,
    EmptySetError,
    FormatError,
    IoError,
    LegoError,
    UnknownIdError,
    ValidationError,
)
from .keys import Activation, KeyInitConfig, KeySet, activate, distance, init_keys
from .model import (
    LegoConfig,
    LegoModel,
    fit,
    predict_batch,
    predict_label,
    predict_proba,
    records_of,
    reverse_index,
)
from .persist import load, save, states_equal
from .seeding import mix_seed, rng_from, splitmix64
from .unlearn import (
    UnlearnReport,
    UnlearnRequest,
    impacted_adapters,
    unlearn,
    verify_erasure,
)

__version__ = "0.1.0"

__all__ = [
    "Activation",
    "AdapterModel",
    "ConfigError",
    "CostReport",
    "DigestMismatchError",
    "DimensionError",
    "EmbeddingDataset",
    "EmptySetError",
    "FixSisaModel",
    "FormatError",
    "IoError",
    "KeyInitConfig",
    "KeySet",
    "LegoConfig",
    "LegoError",
    "LegoModel",
    "MetricsRow",
    "Sample",
    "Scenario",
    "SingleHeadModel",
    "SynthConfig",
    "SystemSpec",
    "TrainerConfig",
    "UnknownIdError",
    "UnlearnReport",
    "UnlearnRequest",
    "ValidationError",
    "activate",
    "cost_report",
    "distance",
    "evaluate",
    "fit",
    "fixsisa_fit",
    "fixsisa_predict_proba",
    "fixsisa_unlearn",
    "impacted_adapters",
    "init_keys",
    "load",
    "load_dataset",
    "loss_and_grad",
    "mix_seed",
    "ngrad",
    "predict_batch",
    "predict_label",
    "predict_proba",
    "records_of",
    "reverse_index",
    "rng_from",
    "rows_to_csv",
    "run_scenario",
    "save",
    "save_dataset",
    "save_dataset_csv",
    "single_fit",
    "single_predict_proba",
    "single_retrain",
    "split",
    "splitmix64",
    "states_equal",
    "sweep",
    "synth_generate",
    "train_adapter",
    "tune",
    "unlearn",
    "verify_erasure",
]
