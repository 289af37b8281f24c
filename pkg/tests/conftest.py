"""Shared fixtures: small synthetic datasets reused across test modules."""

from __future__ import annotations

import pytest

from driftnet.forest import ForestParams
from driftnet.synth import DriftEvent, DriftScope, SynthConfig, dataset_flows

SMALL_CATALOG = (
    "amazon_echo",
    "atom_camera",
    "google_chromecast",
    "google_nest",
    "qrio_hub",
    "tp_link_camera",
)


@pytest.fixture(scope="session")
def small_config() -> SynthConfig:
    return SynthConfig(
        n_homes=4,
        n_days=12,
        train_days=8,
        class_catalog=SMALL_CATALOG,
        spatial_sigma=0.15,
        drift_events=(
            DriftEvent(
                day=10,
                affected_classes=("atom_camera", "google_nest"),
                magnitude=0.8,
                scope=DriftScope.ALL_HOMES,
            ),
        ),
        master_seed=4242,
        flows_per_home_per_day=60.0,
    )


@pytest.fixture(scope="session")
def small_dataset(small_config):
    return dataset_flows(small_config)


@pytest.fixture(scope="session")
def small_forest_params() -> ForestParams:
    return ForestParams(n_trees=12, max_depth=12)
