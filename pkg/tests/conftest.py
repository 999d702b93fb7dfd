"""Shared fixtures: one trained reference CNN per session plus a held-out
image pool that no training run has seen.

Training takes about 90 seconds; everything downstream (explainer, metrics,
CLI, acceptance) reuses the same weights, so the cost is paid once.
"""

import numpy as np
import pytest

from undesir import models
from undesir.metrics import evaluate_batch


TRAIN_N = 4000
TRAIN_SEED = 11
HELD_SEED = 1001


@pytest.fixture(scope="session")
def reference_model():
    dataset = models.generate_synthetic_dataset(TRAIN_N, seed=TRAIN_SEED)
    result = models.train_reference(dataset, epochs=20, lr=6e-3, seed=0,
                                    label_smooth=0.12)
    assert result.accuracy >= 0.9, f"reference fixture trained to {result.accuracy}"
    return result.spec


@pytest.fixture(scope="session")
def held_out():
    # disjoint seed from the training pool; confuser boxes recorded per image
    return models.generate_synthetic_dataset(120, seed=HELD_SEED)


@pytest.fixture(scope="session")
def toy():
    return models.make_toy_model()


@pytest.fixture(scope="session")
def reference_weight_file(reference_model, tmp_path_factory):
    path = tmp_path_factory.mktemp("weights") / "reference.undw"
    path.write_bytes(models.save_weights(reference_model))
    return str(path)


@pytest.fixture(scope="session")
def ftc_report(reference_model, held_out):
    images = [item.image for item in held_out[:100]]
    return evaluate_batch(reference_model, images, "ftc", base_seed=0)


@pytest.fixture(scope="session")
def fntc_report(reference_model, held_out):
    images = [item.image for item in held_out[:100]]
    return evaluate_batch(reference_model, images, "fntc", base_seed=0)
