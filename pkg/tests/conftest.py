import time

import numpy as np
import pytest

from flexarm.dataset import CampaignSpec, collect_campaign, forward_arrays, inverse_arrays
from flexarm.model import BIDIRECTIONAL, UNIDIRECTIONAL, build_model
from flexarm.plant import PlantConfig
from flexarm.profiles import desk_profile
from flexarm.training import train

ROOT_SEED = 0


@pytest.fixture(scope="session")
def plant_config():
    return PlantConfig()


@pytest.fixture(scope="session")
def profile():
    return desk_profile(ROOT_SEED)


@pytest.fixture(scope="session")
def campaign(plant_config, profile):
    return collect_campaign(plant_config, profile.campaign)


@pytest.fixture(scope="session")
def trained_forward(campaign, profile, plant_config):
    """Desk-scale forward-dynamics model; trained once per test session."""
    inputs, targets = forward_arrays(campaign, profile.window_len)
    model = build_model(
        UNIDIRECTIONAL, plant_config.n_joints, profile.window_len,
        hidden_size=profile.hidden_size, depth=profile.forward_depth, seed=ROOT_SEED,
    )
    t0 = time.perf_counter()
    trained, history = train(model, inputs, targets, profile.train_forward)
    seconds = time.perf_counter() - t0
    return {"model": trained, "history": history, "data": (inputs, targets),
            "train_seconds": seconds}


@pytest.fixture(scope="session")
def trained_inverse(campaign, profile, plant_config):
    inputs, targets = inverse_arrays(campaign, profile.window_len)
    model = build_model(
        BIDIRECTIONAL, plant_config.n_joints, profile.window_len,
        hidden_size=profile.hidden_size, depth=profile.inverse_depth, seed=ROOT_SEED,
    )
    t0 = time.perf_counter()
    trained, history = train(model, inputs, targets, profile.train_inverse)
    seconds = time.perf_counter() - t0
    return {"model": trained, "history": history, "data": (inputs, targets),
            "train_seconds": seconds}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
