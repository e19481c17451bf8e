"""Global fixtures for catsd tests."""

import asyncio

import numpy as np
import pytest

from catsd.harness.config import ExperimentConfig
from catsd.harness.experiment import experiment_config_for
from catsd.model.segnet import init_weights
from catsd.model.taxonomy import ClassTaxonomy
from catsd.synth.dataset import SuiteConfig, synth_suite_async

from .const import FAST_EXPERIMENT, SEED, SMALL_SUITE


@pytest.fixture(name="taxonomy")
def taxonomy_fixture():
    """The reference 5 regular / 2 old / 2 new taxonomy."""
    return ClassTaxonomy()


@pytest.fixture(name="rng")
def rng_fixture():
    return np.random.default_rng(SEED)


@pytest.fixture(name="teacher_weights")
def teacher_weights_fixture(taxonomy):
    """Untrained weights over the t=0 class set."""
    classes = taxonomy.old_model_classes
    return init_weights(SEED, len(classes), classes)


# Generating data is the slowest part of most tests, so one small suite is
# shared by the whole session. Tests must treat it as read-only.
@pytest.fixture(scope="session", name="small_suite")
def small_suite_fixture(tmp_path_factory):
    """Every split of a tiny 32x32 experiment, written to a temporary directory."""
    out = tmp_path_factory.mktemp("suite")
    manifests = asyncio.run(synth_suite_async(SuiteConfig(**SMALL_SUITE), SEED, out, threads=2))
    return out, manifests


@pytest.fixture(name="experiment")
def experiment_fixture(small_suite):
    """Experiment settings pointing at the small suite, with a one-epoch schedule."""
    _, manifests = small_suite
    return experiment_config_for(manifests, ExperimentConfig(seed=SEED, **FAST_EXPERIMENT))
