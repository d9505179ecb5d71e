"""Shared fixtures: small synthetic datasets and a fast trainer profile.

Session-scoped fixtures are treated as immutable by every test; the
dataset arrays are read-only so accidental mutation fails loudly.
"""

import numpy as np
import pytest

from legonet import SynthConfig, TrainerConfig, split, synth_generate


@pytest.fixture(scope="session")
def fast_trainer():
    # Few epochs: exactness and determinism properties do not depend on
    # training length, so keep trials cheap.
    return TrainerConfig(epochs=3, batch_size=16, learning_rate=0.1)


@pytest.fixture(scope="session")
def blobs():
    cfg = SynthConfig(
        num_classes=4,
        dim=8,
        samples_per_class=60,
        cluster_separation=6.0,
        noise_std=1.0,
        seed=11,
    )
    return synth_generate(cfg)


@pytest.fixture(scope="session")
def blobs_split(blobs):
    return split(blobs, test_fraction=0.25, seed=3)


@pytest.fixture(scope="session")
def tiny():
    cfg = SynthConfig(
        num_classes=3,
        dim=4,
        samples_per_class=20,
        cluster_separation=8.0,
        noise_std=0.5,
        seed=7,
    )
    return synth_generate(cfg)
